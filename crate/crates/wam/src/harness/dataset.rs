//! `.wamd` dataset files.
//!
//! Little-endian layout: magic `57 41 4D 44` ("WAMD"), u32 version = 1,
//! u32 n_traj, u16 views = 3, u16 H, u16 W, u16 channels = 3,
//! u16 state_dim, u16 action_dim, u16 vocab_size, then the vocabulary
//! (u16 length-prefixed UTF-8 words), then per trajectory: u32 T,
//! u8 success, u16 instr_len + that many u16 ids, frames
//! (T×3×H×W×3 f32 in [0,1]), states (T×state_dim f32), actions
//! (T×action_dim f32). Reads stream one trajectory at a time.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::toyworld::{Image, Trajectory, ACTION_DIM, STATE_DIM};
use crate::{Error, Result};

pub const DATASET_MAGIC: [u8; 4] = *b"WAMD";
pub const DATASET_VERSION: u32 = 1;
const VIEWS: usize = 3;
const CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetHeader {
    pub n_traj: u32,
    pub h: u16,
    pub w: u16,
    pub state_dim: u16,
    pub action_dim: u16,
    pub vocab: Vec<String>,
}

impl DatasetHeader {
    /// Bytes one trajectory of length `t` with `instr_len` tokens occupies.
    pub fn trajectory_bytes(&self, t: usize, instr_len: usize) -> u64 {
        let frame = VIEWS * self.h as usize * self.w as usize * CHANNELS * 4;
        let per_step = frame + self.state_dim as usize * 4 + self.action_dim as usize * 4;
        (4 + 1 + 2 + 2 * instr_len + t * per_step) as u64
    }

    /// Header size on disk, including the vocabulary table: magic, version,
    /// trajectory count, seven u16 geometry fields, then the vocabulary.
    pub fn header_bytes(&self) -> u64 {
        let vocab: usize = self.vocab.iter().map(|w| 2 + w.len()).sum();
        (4 + 4 + 4 + 2 * 7 + vocab) as u64
    }
}

struct Counted<W> {
    inner: W,
    offset: u64,
}

impl<W: Write> Counted<W> {
    fn put(&mut self, bytes: &[u8]) -> Result<()> {
        self.inner.write_all(bytes)?;
        self.offset += bytes.len() as u64;
        Ok(())
    }
}

/// Writes trajectories with the shared vocabulary into `path`.
pub fn write_dataset(
    trajectories: &[Trajectory],
    h: usize,
    w: usize,
    vocab: &[&str],
    path: impl AsRef<Path>,
) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut out = Counted {
        inner: BufWriter::new(file),
        offset: 0,
    };
    out.put(&DATASET_MAGIC)?;
    out.put(&DATASET_VERSION.to_le_bytes())?;
    out.put(&(trajectories.len() as u32).to_le_bytes())?;
    for v in [
        VIEWS as u16,
        h as u16,
        w as u16,
        CHANNELS as u16,
        STATE_DIM as u16,
        ACTION_DIM as u16,
        vocab.len() as u16,
    ] {
        out.put(&v.to_le_bytes())?;
    }
    for word in vocab {
        out.put(&(word.len() as u16).to_le_bytes())?;
        out.put(word.as_bytes())?;
    }
    for traj in trajectories {
        let t = traj.len();
        assert_eq!(traj.frames.len(), t, "frame/state stream length mismatch");
        out.put(&(t as u32).to_le_bytes())?;
        out.put(&[u8::from(traj.success)])?;
        out.put(&(traj.instruction.len() as u16).to_le_bytes())?;
        for &id in &traj.instruction {
            out.put(&id.to_le_bytes())?;
        }
        for frame in &traj.frames {
            for view in frame {
                assert_eq!((view.h, view.w), (h, w), "frame extents mismatch");
                for &px in &view.data {
                    out.put(&px.to_le_bytes())?;
                }
            }
        }
        for s in &traj.states {
            for &v in s {
                out.put(&v.to_le_bytes())?;
            }
        }
        for a in &traj.actions {
            for &v in a {
                out.put(&v.to_le_bytes())?;
            }
        }
    }
    out.inner.flush()?;
    Ok(())
}

#[derive(Debug)]
struct Src<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Src<R> {
    fn take(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let at = self.offset;
        self.inner.read_exact(buf).map_err(|e| {
            Error::Format(format!("truncated while reading {what} at offset {at}: {e}"))
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        let mut b = [0u8; 1];
        self.take(&mut b, what)?;
        Ok(b[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let mut b = [0u8; 2];
        self.take(&mut b, what)?;
        Ok(u16::from_le_bytes(b))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.take(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let mut bytes = vec![0u8; n * 4];
        self.take(&mut bytes, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

/// Streaming reader: yields one trajectory at a time without loading the
/// whole file.
#[derive(Debug)]
pub struct DatasetReader {
    src: Src<BufReader<File>>,
    pub header: DatasetHeader,
    remaining: u32,
}

impl DatasetReader {
    pub fn open(path: impl AsRef<Path>) -> Result<DatasetReader> {
        let file = File::open(path.as_ref())?;
        let mut src = Src {
            inner: BufReader::new(file),
            offset: 0,
        };
        let mut magic = [0u8; 4];
        src.take(&mut magic, "magic")?;
        if magic != DATASET_MAGIC {
            return Err(Error::Format(format!(
                "bad magic {magic:02X?} at offset 0 (expected {DATASET_MAGIC:02X?})"
            )));
        }
        let version = src.u32("version")?;
        if version != DATASET_VERSION {
            return Err(Error::Format(format!(
                "unsupported dataset version {version} at offset 4 (expected {DATASET_VERSION})"
            )));
        }
        let n_traj = src.u32("trajectory count")?;
        let views = src.u16("view count")?;
        let h = src.u16("image height")?;
        let w = src.u16("image width")?;
        let channels = src.u16("channel count")?;
        let state_dim = src.u16("state dim")?;
        let action_dim = src.u16("action dim")?;
        if views as usize != VIEWS || channels as usize != CHANNELS {
            return Err(Error::Format(format!(
                "expected {VIEWS} views x {CHANNELS} channels, file has {views}x{channels}"
            )));
        }
        if state_dim as usize != STATE_DIM || action_dim as usize != ACTION_DIM {
            return Err(Error::Format(format!(
                "state/action dims {state_dim}/{action_dim} differ from {STATE_DIM}/{ACTION_DIM}"
            )));
        }
        let vocab_size = src.u16("vocab size")?;
        let mut vocab = Vec::with_capacity(vocab_size as usize);
        for i in 0..vocab_size {
            let len = src.u16("vocab word length")? as usize;
            let mut bytes = vec![0u8; len];
            src.take(&mut bytes, "vocab word")?;
            vocab.push(String::from_utf8(bytes).map_err(|_| {
                Error::Format(format!("vocab word {i} is not valid UTF-8"))
            })?);
        }
        Ok(DatasetReader {
            src,
            header: DatasetHeader {
                n_traj,
                h,
                w,
                state_dim,
                action_dim,
                vocab,
            },
            remaining: n_traj,
        })
    }

    fn read_one(&mut self) -> Result<Trajectory> {
        let h = self.header.h as usize;
        let w = self.header.w as usize;
        let t = self.src.u32("trajectory length")? as usize;
        let success = self.src.u8("success flag")? != 0;
        let instr_len = self.src.u16("instruction length")? as usize;
        let mut instruction = Vec::with_capacity(instr_len);
        for _ in 0..instr_len {
            instruction.push(self.src.u16("instruction id")?);
        }
        let mut frames = Vec::with_capacity(t);
        for _ in 0..t {
            let mut views = Vec::with_capacity(VIEWS);
            for _ in 0..VIEWS {
                let data = self.src.f32s(h * w * CHANNELS, "frame pixels")?;
                views.push(Image { h, w, data });
            }
            let [l, f, r]: [Image; 3] = views.try_into().expect("three views");
            frames.push([l, f, r]);
        }
        let mut states = Vec::with_capacity(t);
        for _ in 0..t {
            let v = self.src.f32s(STATE_DIM, "state vector")?;
            states.push([v[0], v[1], v[2], v[3], v[4]]);
        }
        let mut actions = Vec::with_capacity(t);
        for _ in 0..t {
            let v = self.src.f32s(ACTION_DIM, "action vector")?;
            actions.push([v[0], v[1], v[2]]);
        }
        Ok(Trajectory {
            instruction,
            frames,
            states,
            actions,
            success,
        })
    }
}

impl Iterator for DatasetReader {
    type Item = Result<Trajectory>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        Some(self.read_one())
    }
}

/// Loads the whole file through the streaming reader.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<(DatasetHeader, Vec<Trajectory>)> {
    let mut reader = DatasetReader::open(path)?;
    let header = reader.header.clone();
    let mut out = Vec::with_capacity(header.n_traj as usize);
    for t in reader.by_ref() {
        out.push(t?);
    }
    Ok((header, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toyworld::{generate_demo, VOCAB};

    fn demos(n: u64) -> Vec<Trajectory> {
        (0..n)
            .map(|i| generate_demo(500 + i, (i % 16) as usize, 8, 8, 300, 16))
            .collect()
    }

    #[test]
    fn roundtrip_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wamd");
        let trajs = demos(3);
        write_dataset(&trajs, 8, 8, &VOCAB, &path).unwrap();
        let (header, back) = read_dataset(&path).unwrap();
        assert_eq!(header.n_traj, 3);
        assert_eq!(header.vocab, VOCAB.iter().map(|s| s.to_string()).collect::<Vec<_>>());
        assert_eq!(trajs, back);
    }

    #[test]
    fn file_size_matches_header_formula() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sized.wamd");
        let trajs = demos(5);
        write_dataset(&trajs, 8, 8, &VOCAB, &path).unwrap();
        let (header, back) = read_dataset(&path).unwrap();
        let expected: u64 = header.header_bytes()
            + back
                .iter()
                .map(|t| header.trajectory_bytes(t.len(), t.instruction.len()))
                .sum::<u64>();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), expected);
    }

    #[test]
    fn corrupt_magic_names_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.wamd");
        std::fs::write(&path, b"NOPE____rest").unwrap();
        let err = DatasetReader::open(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("offset 0"), "message was: {msg}");
    }

    #[test]
    fn truncation_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.wamd");
        let trajs = demos(2);
        write_dataset(&trajs, 8, 8, &VOCAB, &path).unwrap();
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() / 2]).unwrap();
        let result: Result<Vec<_>> = DatasetReader::open(&path).unwrap().collect();
        let msg = result.unwrap_err().to_string();
        assert!(msg.contains("truncated"), "message was: {msg}");
    }

    #[test]
    fn version_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ver.wamd");
        let trajs = demos(1);
        write_dataset(&trajs, 8, 8, &VOCAB, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9; // bump the version field
        std::fs::write(&path, &bytes).unwrap();
        let err = DatasetReader::open(&path).unwrap_err();
        assert!(err.to_string().contains("version"));
    }
}
