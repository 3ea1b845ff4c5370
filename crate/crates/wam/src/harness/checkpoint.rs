//! `.wamc` checkpoint files.
//!
//! Little-endian layout: magic `57 41 4D 43` ("WAMC"), u32 version = 1,
//! u64 step, u32-length-prefixed config text blob, u32 n_params, then per
//! entry: u16-length-prefixed name, u8 rank, rank×u32 dims, f32 data.
//! Optimizer moments ride along as ordinary entries under `optim.m.*` /
//! `optim.v.*`, which is what makes an interrupted run resumable with a
//! bit-identical loss trace.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::config::RunConfig;
use crate::diffcore::{AdamState, Scalar, Tensor};
use crate::model::Parameters;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"WAMC";
pub const CHECKPOINT_VERSION: u32 = 1;

fn write_entry<E: Scalar>(out: &mut impl Write, name: &str, t: &Tensor<E>) -> Result<()> {
    out.write_all(&(name.len() as u16).to_le_bytes())?;
    out.write_all(name.as_bytes())?;
    out.write_all(&[t.shape().len() as u8])?;
    for &d in t.shape() {
        out.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in t.data() {
        out.write_all(&(v.to_f64().unwrap() as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Saves parameters (and optionally the optimizer state) with the config
/// embedded, so the checkpoint is self-describing.
pub fn save_checkpoint<E: Scalar>(
    params: &Parameters<E>,
    opt: Option<&AdamState<E>>,
    config: &RunConfig,
    step: u64,
    path: impl AsRef<Path>,
) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut out = BufWriter::new(file);
    out.write_all(&CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&step.to_le_bytes())?;
    let blob = config.to_text();
    out.write_all(&(blob.len() as u32).to_le_bytes())?;
    out.write_all(blob.as_bytes())?;

    let n_extra = opt.map_or(0, |_| 2 * params.len());
    out.write_all(&((params.len() + n_extra) as u32).to_le_bytes())?;
    for (name, t) in params.iter() {
        write_entry(&mut out, name, t)?;
    }
    if let Some(opt) = opt {
        assert_eq!(opt.m.len(), params.len(), "optimizer state misaligned");
        for (i, (name, _)) in params.iter().enumerate() {
            write_entry(&mut out, &format!("optim.m.{name}"), &opt.m[i])?;
            write_entry(&mut out, &format!("optim.v.{name}"), &opt.v[i])?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug)]
pub struct Checkpoint {
    pub params: Parameters<f32>,
    pub opt: Option<AdamState<f32>>,
    pub config: RunConfig,
    pub step: u64,
}

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
}

/// Loads a checkpoint. Parameter entries are returned in file order; the
/// optimizer state is reconstructed when its entries are present.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let file = File::open(path.as_ref())?;
    let mut src = Src {
        inner: BufReader::new(file),
        offset: 0,
    };
    let mut magic = [0u8; 4];
    src.take(&mut magic, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {magic:02X?} at offset 0 (expected {CHECKPOINT_MAGIC:02X?})"
        )));
    }
    let mut b4 = [0u8; 4];
    src.take(&mut b4, "version")?;
    let version = u32::from_le_bytes(b4);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let mut b8 = [0u8; 8];
    src.take(&mut b8, "step")?;
    let step = u64::from_le_bytes(b8);
    src.take(&mut b4, "config length")?;
    let blob_len = u32::from_le_bytes(b4) as usize;
    let mut blob = vec![0u8; blob_len];
    src.take(&mut blob, "config blob")?;
    let config = RunConfig::parse(
        std::str::from_utf8(&blob)
            .map_err(|_| Error::Format("config blob is not UTF-8".into()))?,
    )?;
    src.take(&mut b4, "entry count")?;
    let n_entries = u32::from_le_bytes(b4) as usize;

    let mut params = Parameters::<f32>::new();
    let mut moments: Vec<(String, Tensor<f32>)> = Vec::new();
    for _ in 0..n_entries {
        let mut b2 = [0u8; 2];
        src.take(&mut b2, "entry name length")?;
        let name_len = u16::from_le_bytes(b2) as usize;
        let mut name = vec![0u8; name_len];
        src.take(&mut name, "entry name")?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format("entry name is not UTF-8".into()))?;
        let mut b1 = [0u8; 1];
        src.take(&mut b1, "entry rank")?;
        let rank = b1[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            src.take(&mut b4, "entry dim")?;
            shape.push(u32::from_le_bytes(b4) as usize);
        }
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        src.take(&mut bytes, &format!("data of {name}"))?;
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let tensor = Tensor::new(shape, data);
        if name.starts_with("optim.") {
            moments.push((name, tensor));
        } else {
            params.insert(name, tensor);
        }
    }

    let opt = if moments.is_empty() {
        None
    } else {
        let mut m = Vec::with_capacity(params.len());
        let mut v = Vec::with_capacity(params.len());
        for (name, _) in params.iter() {
            let find = |prefix: &str| -> Result<Tensor<f32>> {
                let full = format!("{prefix}{name}");
                moments
                    .iter()
                    .find(|(n, _)| n == &full)
                    .map(|(_, t)| t.clone())
                    .ok_or_else(|| Error::Format(format!("missing optimizer entry {full}")))
            };
            m.push(find("optim.m.")?);
            v.push(find("optim.v.")?);
        }
        Some(AdamState { m, v, step })
    };

    Ok(Checkpoint {
        params,
        opt,
        config,
        step,
    })
}

/// Loads a checkpoint and verifies the embedded model configuration matches
/// the requested one, including parameter table shapes.
pub fn load_checkpoint_for(path: impl AsRef<Path>, expected: &RunConfig) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path.as_ref())?;
    expected.ensure_model_compatible(&ckpt.config)?;
    let reference: Parameters<f32> = crate::model::init_model(&expected.model(), 0);
    if reference.names() != ckpt.params.names() {
        return Err(Error::Checkpoint(format!(
            "parameter table mismatch: checkpoint has {} entries, configuration expects {}",
            ckpt.params.len(),
            reference.len()
        )));
    }
    for (name, t) in reference.iter() {
        if ckpt.params.get(name).shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "shape mismatch for {name}: checkpoint {:?}, expected {:?}",
                ckpt.params.get(name).shape(),
                t.shape()
            )));
        }
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Rng;
    use crate::model::init_model;

    #[test]
    fn roundtrip_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.wamc");
        let cfg = RunConfig::default();
        let mut params: Parameters<f32> = init_model(&cfg.model(), 9);
        // Perturb so the data is not mostly zeros.
        let mut rng = Rng::seed_from(1);
        for t in params.tensors_mut() {
            for v in t.data_mut() {
                *v += rng.normal_pair().0 as f32 * 0.01;
            }
        }
        let opt = AdamState::zeros_like(params.tensors());
        save_checkpoint(&params, Some(&opt), &cfg, 123, &path).unwrap();
        let back = load_checkpoint_for(&path, &cfg).unwrap();
        assert_eq!(back.step, 123);
        assert_eq!(back.config, cfg);
        for ((na, ta), (nb, tb)) in params.iter().zip(back.params.iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.data(), tb.data(), "parameter {na} changed");
        }
        assert!(back.opt.is_some());
    }

    #[test]
    fn mismatched_config_is_explicit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.wamc");
        let cfg = RunConfig::default();
        let params: Parameters<f32> = init_model(&cfg.model(), 9);
        save_checkpoint(&params, None, &cfg, 0, &path).unwrap();
        let other = RunConfig {
            layers: 2,
            ..RunConfig::default()
        };
        let err = load_checkpoint_for(&path, &other).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)));
    }

    #[test]
    fn corrupt_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.wamc");
        std::fs::write(&path, b"XXXXjunk").unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("offset 0"));
    }
}
