//! Print the blockwise causal attention rules for a few configurations.
//!
//! ```bash
//! cargo run -p wam --example inspect_mask
//! ```

use wam::harness::commands::mask_table;

fn main() {
    for (p, delta) in [(8, 4), (48, 12), (8, 0)] {
        println!("p = {p}, stride = {delta}");
        println!("{}", mask_table(p, delta, true));
    }
    println!("action tokens isolated from each other (intra-block attention off):");
    println!("{}", mask_table(8, 4, false));
}
