//! Model file layout (all little-endian):
//!
//! ```text
//! magic        8 bytes  "MSWPCCA\0"
//! version      u32      1
//! d            u32
//! text_dim     u32
//! image_dim    u32
//! cross_map    u32      0 = identity, 1 = diag(rho)
//! lambda       f64
//! rho          d × f64
//! text_means   text_dim × f64
//! text_stds    text_dim × f64
//! image_means  image_dim × f64
//! image_stds   image_dim × f64
//! text_proj    text_dim × d f64, row-major
//! image_proj   image_dim × d f64, row-major
//! cross        d × d f64, row-major
//! meta_len     u32
//! meta         meta_len bytes of UTF-8 JSON (provenance, may be empty)
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CcaModel, CrossMap};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::features::Standardizer;

pub const MODEL_MAGIC: &[u8; 8] = b"MSWPCCA\0";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub d: usize,
    pub lambda: f64,
    pub text_dim: usize,
    pub image_dim: usize,
    pub cross_map: CrossMap,
    pub rho: Vec<f64>,
    pub leading_rho: f64,
    pub mean_rho: f64,
}

impl ModelSummary {
    pub fn of(m: &CcaModel) -> Self {
        ModelSummary {
            d: m.d(),
            lambda: m.lambda,
            text_dim: m.text_dim(),
            image_dim: m.image_dim(),
            cross_map: m.cross_map,
            rho: m.rho.clone(),
            leading_rho: m.leading_rho(),
            mean_rho: m.mean_rho(),
        }
    }
}

impl CcaModel {
    pub fn to_bytes(&self, meta: &str) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MODEL_MAGIC)
            .u32(MODEL_VERSION)
            .u32(self.d() as u32)
            .u32(self.text_dim() as u32)
            .u32(self.image_dim() as u32)
            .u32(match self.cross_map {
                CrossMap::Identity => 0,
                CrossMap::Rho => 1,
            })
            .f64(self.lambda)
            .f64s(&self.rho)
            .f64s(&self.text_stats.means)
            .f64s(&self.text_stats.stds)
            .f64s(&self.image_stats.means)
            .f64s(&self.image_stats.stds)
            .matrix_body(&self.text_proj)
            .matrix_body(&self.image_proj)
            .matrix_body(&self.cross)
            .u32(meta.len() as u32)
            .bytes(meta.as_bytes());
        w.finish()
    }

    /// Decode a model and its provenance JSON.
    pub fn from_bytes(bytes: &[u8], context: &str) -> Result<(Self, String)> {
        let mut r = Reader::new(bytes, context);
        r.magic(MODEL_MAGIC)?;
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(r.err(format!("unsupported version {version}")));
        }
        let d = r.u32()? as usize;
        let pt = r.u32()? as usize;
        let pi = r.u32()? as usize;
        let cross_map = match r.u32()? {
            0 => CrossMap::Identity,
            1 => CrossMap::Rho,
            other => return Err(r.err(format!("unknown cross map {other}"))),
        };
        let lambda = r.f64()?;
        let rho = r.f64s(d)?;
        let text_stats = Standardizer {
            means: r.f64s(pt)?,
            stds: r.f64s(pt)?,
        };
        let image_stats = Standardizer {
            means: r.f64s(pi)?,
            stds: r.f64s(pi)?,
        };
        let text_proj = r.matrix_body(pt, d)?;
        let image_proj = r.matrix_body(pi, d)?;
        let cross = r.matrix_body(d, d)?;
        let meta_len = r.u32()? as usize;
        let meta = std::str::from_utf8(r.take(meta_len)?)
            .map_err(|_| r.err("provenance is not utf-8"))?
            .to_string();
        r.expect_end()?;
        Ok((
            CcaModel {
                lambda,
                cross_map,
                rho,
                text_proj,
                image_proj,
                cross,
                text_stats,
                image_stats,
            },
            meta,
        ))
    }

    pub fn save(&self, path: &Path, meta: &str) -> Result<()> {
        fs::write(path, self.to_bytes(meta)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::load_with_meta(path).map(|(m, _)| m)
    }

    pub fn load_with_meta(path: &Path) -> Result<(Self, String)> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}
