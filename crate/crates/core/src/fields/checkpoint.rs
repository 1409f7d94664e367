//! Binary checkpoints for the field parameters and optimizer state.
//!
//! Layout (all integers little-endian):
//! - magic `MVPSCKPT` (8 bytes), format version `u32`
//! - config JSON: `u32` byte length + UTF-8 payload
//! - `u32` parameter count, then per parameter: `u16` name length + UTF-8
//!   name, `u32` rows, `u32` cols, row-major `f64` values
//! - optimizer flag `u8`; if 1: `u64` step count, then per parameter the
//!   first and second moment matrices in the same order and shape
//!
//! Values are stored as `f64` regardless of the in-memory scalar, so `f64`
//! round trips are bitwise exact.

use crate::autodiff::ParamSet;
use crate::error::{Error, Result};
use crate::fields::config::FieldConfig;
use crate::fields::net::FieldPair;
use crate::mat::Mat;
use crate::scalar::{real, Real};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"MVPSCKPT";
const VERSION: u32 = 1;

struct Reader<'a, R: Read> {
    inner: R,
    path: &'a Path,
}

impl<'a, R: Read> Reader<'a, R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::format(self.path, "unexpected end of checkpoint"))?;
        Ok(buf)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.bytes(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.bytes(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.bytes(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn mat<T: Real>(&mut self, rows: usize, cols: usize) -> Result<Mat<T>> {
        let b = self.bytes(rows * cols * 8)?;
        let data = b
            .chunks_exact(8)
            .map(|c| real::<T>(f64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        Ok(Mat::from_vec(rows, cols, data))
    }
}

fn write_mat<T: Real, W: Write>(w: &mut W, m: &Mat<T>) -> std::io::Result<()> {
    for v in m.as_slice() {
        w.write_all(&v.to_f64_lossy().to_le_bytes())?;
    }
    Ok(())
}

/// Writes config, parameters, and optimizer state to `path`.
pub fn save_checkpoint<T: Real>(
    path: &Path,
    cfg: &FieldConfig,
    set: &ParamSet<T>,
) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path, e);

    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    let cfg_json = serde_json::to_vec(cfg)
        .map_err(|e| Error::format(path, format!("config encode: {e}")))?;
    w.write_all(&(cfg_json.len() as u32).to_le_bytes())
        .map_err(io_err)?;
    w.write_all(&cfg_json).map_err(io_err)?;

    let entries = set.entries();
    w.write_all(&(entries.len() as u32).to_le_bytes())
        .map_err(io_err)?;
    for e in entries {
        let name = e.name.as_bytes();
        w.write_all(&(name.len() as u16).to_le_bytes()).map_err(io_err)?;
        w.write_all(name).map_err(io_err)?;
        w.write_all(&(e.value.rows() as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(&(e.value.cols() as u32).to_le_bytes()).map_err(io_err)?;
        write_mat(&mut w, &e.value).map_err(io_err)?;
    }

    w.write_all(&[1u8]).map_err(io_err)?;
    w.write_all(&set.adam_step_count().to_le_bytes()).map_err(io_err)?;
    for e in entries {
        write_mat(&mut w, &e.adam_m).map_err(io_err)?;
        write_mat(&mut w, &e.adam_v).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint<T: Real>(path: &Path) -> Result<(FieldConfig, ParamSet<T>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        inner: BufReader::new(file),
        path,
    };

    let magic = r.bytes(8)?;
    if magic != MAGIC {
        return Err(Error::format(path, "bad magic, not a checkpoint file"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(
            path,
            format!("unsupported checkpoint version {version}, expected {VERSION}"),
        ));
    }
    let cfg_len = r.u32()? as usize;
    let cfg_json = r.bytes(cfg_len)?;
    let cfg: FieldConfig = serde_json::from_slice(&cfg_json)
        .map_err(|e| Error::format(path, format!("config decode: {e}")))?;

    let count = r.u32()? as usize;
    let mut set = ParamSet::new();
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.bytes(name_len)?)
            .map_err(|_| Error::format(path, "parameter name is not UTF-8"))?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        if rows == 0 || cols == 0 || rows.saturating_mul(cols) > (1 << 28) {
            return Err(Error::format(
                path,
                format!("parameter {name} has implausible shape {rows}x{cols}"),
            ));
        }
        let value = r.mat::<T>(rows, cols)?;
        set.add(name, value);
    }

    let flag = r.bytes(1)?[0];
    if flag == 1 {
        let step = r.u64()?;
        set.set_adam_step_count(step);
        for i in 0..count {
            let (rows, cols) = set.entries()[i].value.shape();
            let m = r.mat::<T>(rows, cols)?;
            let v = r.mat::<T>(rows, cols)?;
            let e = &mut set.entries_mut()[i];
            e.adam_m = m;
            e.adam_v = v;
        }
    }
    Ok((cfg, set))
}

/// Rebuilds the network structure for a loaded parameter set, verifying that
/// the stored parameters match the architecture the config describes.
pub fn rebuild_pair<T: Real>(cfg: &FieldConfig, set: &ParamSet<T>) -> Result<FieldPair> {
    use rand::SeedableRng;
    let mut scratch = ParamSet::<T>::new();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let pair = FieldPair::init(cfg.clone(), &mut scratch, &mut rng)?;
    let a = scratch.entries();
    let b = set.entries();
    if a.len() != b.len() {
        return Err(Error::Config(format!(
            "checkpoint has {} parameters, architecture expects {}",
            b.len(),
            a.len()
        )));
    }
    for (ea, eb) in a.iter().zip(b) {
        if ea.name != eb.name || ea.value.shape() != eb.value.shape() {
            return Err(Error::Config(format!(
                "checkpoint parameter {} {:?} does not match expected {} {:?}",
                eb.name,
                eb.value.shape(),
                ea.name,
                ea.value.shape()
            )));
        }
    }
    Ok(pair)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::net::FieldPair;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_pair(seed: u64) -> (FieldConfig, ParamSet<f64>, FieldPair) {
        let cfg = FieldConfig {
            pos_octaves: 1,
            dir_octaves: 1,
            sdf_layers: 2,
            sdf_width: 8,
            feature_dim: 4,
            skip_layer: 2,
            radiance_layers: 1,
            radiance_width: 6,
            ..FieldConfig::default()
        };
        let mut set = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pair = FieldPair::init(cfg.clone(), &mut set, &mut rng).unwrap();
        (cfg, set, pair)
    }

    #[test]
    fn round_trip_is_bitwise_exact() {
        let (cfg, mut set, _) = small_pair(11);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        set.set_adam_step_count(1234);
        for e in set.entries_mut() {
            let (r, c) = e.value.shape();
            e.adam_m = Mat::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0));
            e.adam_v = Mat::from_fn(r, c, |_, _| rng.gen_range(0.0..1.0));
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        save_checkpoint(&path, &cfg, &set).unwrap();
        let (cfg2, set2) = load_checkpoint::<f64>(&path).unwrap();
        assert_eq!(cfg, cfg2);
        assert_eq!(set2.adam_step_count(), 1234);
        assert_eq!(set.entries().len(), set2.entries().len());
        for (a, b) in set.entries().iter().zip(set2.entries()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value.shape(), b.value.shape());
            for (x, y) in a.value.as_slice().iter().zip(b.value.as_slice()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            for (x, y) in a.adam_m.as_slice().iter().zip(b.adam_m.as_slice()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            for (x, y) in a.adam_v.as_slice().iter().zip(b.adam_v.as_slice()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        let pair = rebuild_pair(&cfg2, &set2).unwrap();
        assert_eq!(pair.cfg, cfg);
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"NOTCKPT!katesttrailingdata").unwrap();
        let err = load_checkpoint::<f64>(&path).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn rejects_truncated_file() {
        let (cfg, set, _) = small_pair(5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        save_checkpoint(&path, &cfg, &set).unwrap();
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() / 2]).unwrap();
        let err = load_checkpoint::<f64>(&path).unwrap_err();
        assert!(err.to_string().contains("unexpected end"), "{err}");
    }

    #[test]
    fn rebuild_rejects_mismatched_architecture() {
        let (cfg, set, _) = small_pair(3);
        let wider = FieldConfig {
            sdf_width: 16,
            ..cfg
        };
        let err = rebuild_pair(&wider, &set).unwrap_err();
        assert!(err.to_string().contains("does not match"), "{err}");
    }
}
