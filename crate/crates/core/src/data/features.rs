//! `FEAT` binary feature files: magic "FEAT", u32 T, u32 D, then T·D
//! little-endian f32 values, row-major.

use std::fs;
use std::path::Path;

use crate::error::{format_err, shape_err, Result};
use crate::numerics::Tensor;

/// Frame shift used for every ms ↔ frame conversion.
pub const HOP_MS: u32 = 10;

pub fn ms_to_frames(ms: u32) -> usize {
    (ms / HOP_MS) as usize
}

pub fn frames_to_ms(frames: usize) -> f64 {
    frames as f64 * HOP_MS as f64
}

/// T×D matrix of frames at a fixed hop.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    frames: Tensor<f32>,
    hop_ms: u32,
}

impl FeatureSequence {
    pub fn new(frames: Tensor<f32>) -> Result<Self> {
        if frames.dims().len() != 2 {
            return Err(shape_err!("features must be T×D, got {:?}", frames.dims()));
        }
        if !frames.is_finite() {
            return Err(crate::Error::Numeric("non-finite feature value".into()));
        }
        Ok(FeatureSequence { frames, hop_ms: HOP_MS })
    }

    pub fn from_rows(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(Tensor::matrix(rows, dim, data)?)
    }

    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    pub fn hop_ms(&self) -> u32 {
        self.hop_ms
    }

    pub fn duration_ms(&self) -> f64 {
        self.num_frames() as f64 * self.hop_ms as f64
    }

    pub fn frames(&self) -> &Tensor<f32> {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        self.frames.row(t)
    }

    /// Frames [start, end) as a flat row-major slice.
    pub fn rows(&self, start: usize, end: usize) -> &[f32] {
        let d = self.dim();
        &self.frames.data()[start * d..end * d]
    }

    pub fn slice(&self, start: usize, end: usize) -> Result<FeatureSequence> {
        Ok(FeatureSequence { frames: self.frames.slice_rows(start, end)?, hop_ms: self.hop_ms })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.frames.numel());
        out.extend_from_slice(b"FEAT");
        out.extend_from_slice(&(self.num_frames() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        for v in self.frames.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != b"FEAT" {
            return Err(format_err!("missing FEAT header"));
        }
        let t = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if t == 0 || d == 0 {
            return Err(format_err!("empty feature matrix {t}×{d}"));
        }
        let need = t
            .checked_mul(d)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| format_err!("feature dims {t}×{d} overflow"))?;
        let payload = &bytes[12..];
        if payload.len() != need {
            return Err(format_err!("payload has {} bytes, expected {need}", payload.len()));
        }
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Self::from_rows(t, d, data).map_err(|e| format_err!("{e}"))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}
