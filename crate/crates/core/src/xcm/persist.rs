//! Binary model file.
//!
//! ```text
//! "XCM1"                      4 bytes magic
//! version                     u8 (= 1)
//! config                      10 x u32: n_variables, window_len, kernel_samples,
//!                             filters_2d, filters_1d, filters_final, n_classes,
//!                             batch_size, epochs, folds
//!                             u64 seed, f64 lr, u8 class_weighting
//! tensor count                u32
//! per tensor                  u32 rank, rank x u32 dims, prod(dims) x f32
//! ```
//!
//! All integers and reals are little-endian. Tensors are the learnables in
//! canonical order followed by the BN running mean/variance pairs.

use std::fs;
use std::path::Path;

use super::{XcmConfig, XcmError, XcmModel};

pub const MODEL_MAGIC: &[u8; 4] = b"XCM1";
pub const MODEL_VERSION: u8 = 1;

pub fn model_to_bytes(model: &XcmModel) -> Vec<u8> {
    let c = &model.config;
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.push(MODEL_VERSION);
    for v in [
        c.n_variables,
        c.window_len,
        c.kernel_samples,
        c.filters_2d,
        c.filters_1d,
        c.filters_final,
        c.n_classes,
        c.batch_size,
        c.epochs,
        c.folds,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&c.seed.to_le_bytes());
    out.extend_from_slice(&c.lr.to_le_bytes());
    out.push(u8::from(c.class_weighting));

    let tensors = model.all_tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], XcmError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(XcmError::TruncatedFile(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, XcmError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, XcmError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, XcmError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &'static str) -> Result<f64, XcmError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<XcmModel, XcmError> {
    let mut r = Reader { bytes, pos: 0 };
    if bytes.len() < MODEL_MAGIC.len() {
        return Err(if MODEL_MAGIC.starts_with(bytes) {
            XcmError::TruncatedFile("magic")
        } else {
            XcmError::BadMagic
        });
    }
    if r.take(4, "magic")? != MODEL_MAGIC {
        return Err(XcmError::BadMagic);
    }
    let version = r.u8("version")?;
    if version != MODEL_VERSION {
        return Err(XcmError::VersionMismatch {
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let mut dims = [0usize; 10];
    for d in &mut dims {
        *d = r.u32("config")? as usize;
    }
    let config = XcmConfig {
        n_variables: dims[0],
        window_len: dims[1],
        kernel_samples: dims[2],
        filters_2d: dims[3],
        filters_1d: dims[4],
        filters_final: dims[5],
        n_classes: dims[6],
        batch_size: dims[7],
        epochs: dims[8],
        folds: dims[9],
        seed: r.u64("config")?,
        lr: r.f64("config")?,
        class_weighting: r.u8("config")? != 0,
    };
    let mut model = XcmModel::build(&config, 0)?;
    let count = r.u32("tensor count")? as usize;
    let mut targets = model.all_tensors_mut();
    if count != targets.len() {
        return Err(XcmError::InvalidConfig(format!(
            "model file holds {count} tensors, architecture needs {}",
            targets.len()
        )));
    }
    for (index, target) in targets.iter_mut().enumerate() {
        let rank = r.u32("tensor header")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32("tensor header")? as usize);
        }
        if shape != target.shape() {
            return Err(XcmError::TensorShape {
                index,
                expected: target.shape().to_vec(),
                found: shape,
            });
        }
        let raw = r.take(target.len() * 4, "tensor data")?;
        for (dst, chunk) in target.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        }
    }
    Ok(model)
}

pub fn save_model(model: &XcmModel, path: &Path) -> Result<(), XcmError> {
    fs::write(path, model_to_bytes(model)).map_err(|source| XcmError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<XcmModel, XcmError> {
    let bytes = fs::read(path).map_err(|source| XcmError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    model_from_bytes(&bytes)
}
