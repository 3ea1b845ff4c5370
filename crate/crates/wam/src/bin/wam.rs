fn main() {
    std::process::exit(wam::harness::cli(std::env::args().collect()));
}
