//! Binary model checkpoints.
//!
//! Layout: magic `SPTRJ001`, then little-endian `u32` arch tag, `u32`
//! layer count, per layer (`u32` rank, rank x `u32` extents, raw `f64`
//! weight bytes), then a `u32`-length-prefixed UTF-8 JSON metadata block.
//! Weight round-trips are bit-identical.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::models::{ConvAutoencoder, SmallConvNet};

const MAGIC_PREFIX: &[u8; 5] = b"SPTRJ";
const VERSION: u32 = 1;

pub const ARCH_SMALL_CONVNET: u32 = 1;
pub const ARCH_CONV_AUTOENCODER: u32 = 2;

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct CheckpointMeta {
    pub h: usize,
    pub w: usize,
    pub num_classes: usize,
    pub epochs: usize,
    pub seed: u64,
    pub final_train_accuracy: Option<f64>,
    pub final_val_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub arch: u32,
    pub layers: Vec<(Vec<u32>, Vec<f64>)>,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn of_classifier(model: &SmallConvNet, meta: CheckpointMeta) -> Self {
        let shapes: Vec<Vec<u32>> = vec![
            vec![32, 3, 3, 3],
            vec![32],
            vec![64, 32, 3, 3],
            vec![64],
            vec![model.num_classes as u32, model.fc.in_dim as u32],
            vec![model.num_classes as u32],
        ];
        let layers = shapes
            .into_iter()
            .zip(model.params())
            .map(|(s, p)| (s, p.to_vec()))
            .collect();
        Checkpoint { arch: ARCH_SMALL_CONVNET, layers, meta }
    }

    pub fn of_autoencoder(model: &ConvAutoencoder, meta: CheckpointMeta) -> Self {
        let shapes: Vec<Vec<u32>> = vec![
            vec![16, 3, 3, 3],
            vec![16],
            vec![32, 16, 3, 3],
            vec![32],
            vec![32, 16, 3, 3],
            vec![16],
            vec![16, 3, 3, 3],
            vec![3],
        ];
        let layers = shapes
            .into_iter()
            .zip(model.params())
            .map(|(s, p)| (s, p.to_vec()))
            .collect();
        Checkpoint { arch: ARCH_CONV_AUTOENCODER, layers, meta }
    }

    pub fn into_classifier(self) -> Result<SmallConvNet> {
        if self.arch != ARCH_SMALL_CONVNET {
            return Err(Error::Format(format!(
                "checkpoint arch tag {} is not a classifier",
                self.arch
            )));
        }
        let mut model =
            SmallConvNet::new(self.meta.h, self.meta.w, self.meta.num_classes, 0)?;
        load_params(model.params_mut(), &self.layers)?;
        Ok(model)
    }

    pub fn into_autoencoder(self) -> Result<ConvAutoencoder> {
        if self.arch != ARCH_CONV_AUTOENCODER {
            return Err(Error::Format(format!(
                "checkpoint arch tag {} is not an autoencoder",
                self.arch
            )));
        }
        let mut model = ConvAutoencoder::new(self.meta.h, self.meta.w, 0)?;
        load_params(model.params_mut(), &self.layers)?;
        Ok(model)
    }
}

fn load_params(params: Vec<&mut Vec<f64>>, layers: &[(Vec<u32>, Vec<f64>)]) -> Result<()> {
    if params.len() != layers.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} layers, model expects {}",
            layers.len(),
            params.len()
        )));
    }
    for (p, (shape, values)) in params.into_iter().zip(layers) {
        let n: usize = shape.iter().map(|&e| e as usize).product();
        if n != values.len() || n != p.len() {
            return Err(Error::Format(format!(
                "layer shape {shape:?} does not match stored ({}) or model ({}) size",
                values.len(),
                p.len()
            )));
        }
        p.copy_from_slice(values);
    }
    Ok(())
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC_PREFIX);
    out.extend_from_slice(format!("{VERSION:03}").as_bytes());
    out.extend_from_slice(&ckpt.arch.to_le_bytes());
    out.extend_from_slice(&(ckpt.layers.len() as u32).to_le_bytes());
    for (shape, values) in &ckpt.layers {
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &e in shape {
            out.extend_from_slice(&e.to_le_bytes());
        }
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let meta = serde_json::to_vec(&ckpt.meta)?;
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    fs::write(path, out)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!(
                "checkpoint truncated at byte {} (wanted {} more)",
                self.pos, n
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let buf = fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    let magic = r.take(8)?;
    if &magic[..5] != MAGIC_PREFIX {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version: u32 = std::str::from_utf8(&magic[5..])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format("unreadable checkpoint version digits".into()))?;
    if version != VERSION {
        return Err(Error::Version(format!(
            "checkpoint version {version} not supported by reader version {VERSION}"
        )));
    }
    let arch = r.u32()?;
    if arch != ARCH_SMALL_CONVNET && arch != ARCH_CONV_AUTOENCODER {
        return Err(Error::Format(format!("unknown architecture tag {arch}")));
    }
    let layer_count = r.u32()? as usize;
    if layer_count > 64 {
        return Err(Error::Format(format!("implausible layer count {layer_count}")));
    }
    let mut layers = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(Error::Format(format!("implausible tensor rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()?);
        }
        let n: usize = shape.iter().map(|&e| e as usize).product();
        let raw = r.take(n * 8)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        layers.push((shape, values));
    }
    let meta_len = r.u32()? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)?;
    Ok(Checkpoint { arch, layers, meta })
}
