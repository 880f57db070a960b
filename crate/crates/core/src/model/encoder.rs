use rand::Rng;

use crate::chunking::SplicedChunk;
use crate::error::{shape_err, usage_err, Result};
use crate::numerics::{AttentionBlock, Graph, LayerNorm, Linear, ParamStore, Real, Tensor, Var};

/// Frame-pairing subsampler, fixed sinusoidal positions, then pre-norm
/// self-attention blocks.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub input: Linear,
    pub blocks: Vec<AttentionBlock>,
    pub norm: LayerNorm,
    pub subsample: usize,
    pub feat_dim: usize,
    pub dim: usize,
}

/// Encoder rows produced by `frames` input frames.
pub fn subsampled_len(frames: usize, subsample: usize) -> usize {
    frames.div_ceil(subsample)
}

/// `[rows × dim]` sinusoidal table; positions count from the first row of
/// whatever window is being encoded. Without it, attention cannot tell two
/// repetitions of the same label apart.
pub fn sinusoid_table<S: Real>(rows: usize, dim: usize) -> Result<Tensor<S>> {
    let mut data = Vec::with_capacity(rows * dim);
    for p in 0..rows {
        for i in 0..dim {
            let freq = 10000f64.powf(-((i / 2 * 2) as f64) / dim as f64);
            let a = p as f64 * freq;
            data.push(S::of(if i % 2 == 0 { a.sin() } else { a.cos() }));
        }
    }
    Tensor::matrix(rows, dim, data)
}

impl Encoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Real, R: Rng>(
        store: &mut ParamStore<S>,
        name: &str,
        feat_dim: usize,
        dim: usize,
        layers: usize,
        heads: usize,
        ffn: usize,
        subsample: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if ![1, 2, 4].contains(&subsample) {
            return Err(usage_err!("subsample factor must be 1, 2 or 4, got {subsample}"));
        }
        let input = Linear::new(store, &format!("{name}.input"), feat_dim * subsample, dim, true, rng)?;
        let blocks = (0..layers)
            .map(|l| AttentionBlock::new(store, &format!("{name}.block{l}"), dim, heads, ffn, rng))
            .collect::<Result<_>>()?;
        let norm = LayerNorm::new(store, &format!("{name}.norm"), dim)?;
        Ok(Encoder { input, blocks, norm, subsample, feat_dim, dim })
    }

    /// Stacks `subsample` consecutive frames into one row, zero-padding the tail.
    fn stack_frames<S: Real>(&self, g: &mut Graph<S>, rows: Var) -> Result<Var> {
        let (n, d) = g.shape2(rows)?;
        if self.subsample == 1 {
            return Ok(rows);
        }
        let padded_len = subsampled_len(n, self.subsample) * self.subsample;
        let padded = if padded_len == n {
            rows
        } else {
            let pad = g.zeros(&[padded_len - n, d])?;
            g.concat_rows(&[rows, pad])?
        };
        g.reshape(padded, &[padded_len / self.subsample, d * self.subsample])
    }

    /// Encodes rows made of consecutive segments (e.g. left | core | right).
    /// Each segment is subsampled on its own, so segment boundaries never
    /// share an encoder row. Returns the encoded matrix and per-segment row counts.
    pub fn forward_segments<S: Real>(&self, g: &mut Graph<S>, input: Var, segments: &[usize]) -> Result<(Var, Vec<usize>)> {
        let (n, d) = g.shape2(input)?;
        if d != self.feat_dim {
            return Err(shape_err!("encoder input width {d} != {}", self.feat_dim));
        }
        if segments.iter().sum::<usize>() != n {
            return Err(shape_err!("segments {segments:?} do not cover {n} rows"));
        }
        let mut parts = Vec::new();
        let mut out_rows = Vec::with_capacity(segments.len());
        let mut off = 0;
        for &len in segments {
            if len == 0 {
                out_rows.push(0);
                continue;
            }
            let seg = if off == 0 && len == n { input } else { g.slice_rows(input, off, off + len)? };
            parts.push(self.stack_frames(g, seg)?);
            out_rows.push(subsampled_len(len, self.subsample));
            off += len;
        }
        let stacked = match parts.len() {
            0 => return Err(shape_err!("encoder input has no rows")),
            1 => parts[0],
            _ => g.concat_rows(&parts)?,
        };
        let projected = self.input.forward(g, stacked)?;
        let (rows, _) = g.shape2(projected)?;
        let pos = g.input(sinusoid_table(rows, self.dim)?)?;
        let mut x = g.add(projected, pos)?;
        for block in &self.blocks {
            x = block.forward(g, x)?;
        }
        Ok((self.norm.forward(g, x)?, out_rows))
    }

    /// Encodes a spliced chunk and keeps only the rows derived from its core.
    pub fn encode_chunk_graph<S: Real>(&self, g: &mut Graph<S>, input: Var, segments: [usize; 3]) -> Result<Var> {
        if segments[1] == 0 {
            return Err(usage_err!("chunk has no core frames; nothing would remain after context elimination"));
        }
        let (enc, rows) = self.forward_segments(g, input, &segments)?;
        let (total, _) = g.shape2(enc)?;
        if rows[1] == total {
            return Ok(enc);
        }
        g.slice_rows(enc, rows[0], rows[0] + rows[1])
    }

    /// Full-context encoding with no chunking.
    pub fn encode_full_graph<S: Real>(&self, g: &mut Graph<S>, features: Var) -> Result<Var> {
        let (n, _) = g.shape2(features)?;
        Ok(self.forward_segments(g, features, &[n])?.0)
    }

    pub fn encode_chunk(&self, store: &ParamStore<f32>, chunk: &SplicedChunk) -> Result<Tensor<f32>> {
        let mut g = Graph::new(store);
        let x = g.input(chunk.input.clone())?;
        let out = self.encode_chunk_graph(&mut g, x, chunk.segments())?;
        Ok(g.tensor(out))
    }

    pub fn encode_full(&self, store: &ParamStore<f32>, features: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = Graph::new(store);
        let x = g.input(features.clone())?;
        let out = self.encode_full_graph(&mut g, x)?;
        Ok(g.tensor(out))
    }
}
