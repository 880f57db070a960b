//! Context-sensitive chunking: cut an utterance into chunk cores, resolve
//! the left (history) and right (future) context around each core, and
//! splice the rows fed to the encoder.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::Rng;

use crate::data::{ms_to_frames, FeatureSequence};
use crate::error::{shape_err, usage_err, Error, Result};
use crate::numerics::Tensor;

/// Where the right context of a chunk comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RightMode {
    None,
    Real,
    Simulated,
}

impl fmt::Display for RightMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RightMode::None => "none",
            RightMode::Real => "real",
            RightMode::Simulated => "simulated",
        })
    }
}

impl FromStr for RightMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(RightMode::None),
            "real" => Ok(RightMode::Real),
            "simulated" => Ok(RightMode::Simulated),
            other => Err(usage_err!("right_mode must be none|real|simulated, got {other:?}")),
        }
    }
}

/// Chunking parameters, all in frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChunkPolicy {
    pub chunk: usize,
    pub jitter: usize,
    pub left: usize,
    pub right: usize,
    pub mode: RightMode,
}

impl ChunkPolicy {
    pub fn new(chunk: usize, jitter: usize, left: usize, right: usize, mode: RightMode) -> Result<Self> {
        let p = ChunkPolicy { chunk, jitter, left, right, mode };
        p.validate()?;
        Ok(p)
    }

    /// Policy from millisecond settings at the fixed 10 ms hop.
    pub fn from_ms(chunk_ms: u32, jitter_ms: u32, left_ms: u32, right_ms: u32, mode: RightMode) -> Result<Self> {
        Self::new(
            ms_to_frames(chunk_ms),
            ms_to_frames(jitter_ms),
            ms_to_frames(left_ms),
            ms_to_frames(right_ms),
            mode,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.chunk <= self.jitter {
            return Err(usage_err!("chunk size {} must exceed jitter {}", self.chunk, self.jitter));
        }
        if self.mode == RightMode::Simulated && self.right == 0 {
            return Err(usage_err!("simulated right context needs a positive right context size"));
        }
        Ok(())
    }

    pub fn with_mode(self, mode: RightMode) -> Result<Self> {
        Self::new(self.chunk, self.jitter, self.left, self.right, mode)
    }
}

/// Integer drawn uniformly from `[C − A, C + A]`.
pub fn sample_chunk_size<R: Rng>(policy: &ChunkPolicy, rng: &mut R) -> usize {
    if policy.jitter == 0 {
        return policy.chunk;
    }
    rng.random_range(policy.chunk - policy.jitter..=policy.chunk + policy.jitter)
}

/// Rounds a chunk size down to a multiple of `multiple`, never below `multiple`.
pub fn align_chunk_size(size: usize, multiple: usize) -> usize {
    ((size / multiple) * multiple).max(multiple)
}

/// Probabilities of each right-context mode during training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RightModeMix {
    pub simulated: f64,
    pub real: f64,
    pub none: f64,
}

impl Default for RightModeMix {
    fn default() -> Self {
        RightModeMix { simulated: 0.5, real: 0.25, none: 0.25 }
    }
}

impl RightModeMix {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.simulated, self.real, self.none];
        if parts.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || parts.iter().sum::<f64>() <= 0.0 {
            return Err(usage_err!("right-mode probabilities must be ≥ 0 with a positive sum"));
        }
        Ok(())
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> RightMode {
        let total = self.simulated + self.real + self.none;
        let u = rng.random::<f64>() * total;
        if u < self.simulated {
            RightMode::Simulated
        } else if u < self.simulated + self.real {
            RightMode::Real
        } else {
            RightMode::None
        }
    }
}

/// One chunk core with its resolved context ranges, all inside `[0, T)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChunkView {
    pub index: usize,
    pub core: Range<usize>,
    pub left: Range<usize>,
    pub right: Range<usize>,
    /// The requested left context was cut at frame 0.
    pub left_clipped: bool,
    /// The requested right context was cut at frame T.
    pub right_clipped: bool,
}

impl ChunkView {
    pub fn core_len(&self) -> usize {
        self.core.len()
    }

    /// Rows of a real-context splice.
    pub fn spliced_len(&self) -> usize {
        self.left.len() + self.core.len() + self.right.len()
    }
}

/// `ceil(T / chunk_size)` views whose cores tile `[0, T)`.
pub fn plan_chunks(total: usize, chunk_size: usize, left: usize, right: usize) -> Result<Vec<ChunkView>> {
    if total == 0 || chunk_size == 0 {
        return Err(usage_err!("plan_chunks needs T ≥ 1 and chunk_size ≥ 1"));
    }
    Ok((0..total.div_ceil(chunk_size))
        .map(|index| {
            let s = index * chunk_size;
            let e = (s + chunk_size).min(total);
            ChunkView {
                index,
                core: s..e,
                left: s.saturating_sub(left)..s,
                right: e..(e + right).min(total),
                left_clipped: left > s,
                right_clipped: e + right > total,
            }
        })
        .collect())
}

/// Encoder input for one chunk: `[left | core | right]` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct SplicedChunk {
    pub input: Tensor<f32>,
    pub left_rows: usize,
    pub core_rows: usize,
    pub right_rows: usize,
}

impl SplicedChunk {
    /// True for rows that are context and get dropped after encoding.
    pub fn context_mask(&self) -> Vec<bool> {
        let mut m = vec![true; self.left_rows];
        m.extend(std::iter::repeat_n(false, self.core_rows));
        m.extend(std::iter::repeat_n(true, self.right_rows));
        m
    }

    pub fn segments(&self) -> [usize; 3] {
        [self.left_rows, self.core_rows, self.right_rows]
    }
}

/// Splices a chunk. `simulated` must be given exactly when `mode` is
/// [`RightMode::Simulated`]; every simulated row is used, even past T.
pub fn splice(
    features: &FeatureSequence,
    view: &ChunkView,
    mode: RightMode,
    simulated: Option<&Tensor<f32>>,
) -> Result<SplicedChunk> {
    if view.core.end > features.num_frames() || view.core.is_empty() {
        return Err(shape_err!("chunk core {:?} outside {} frames", view.core, features.num_frames()));
    }
    let d = features.dim();
    let mut data = Vec::with_capacity((view.spliced_len() + simulated.map_or(0, |s| s.rows())) * d);
    data.extend_from_slice(features.rows(view.left.start, view.left.end));
    data.extend_from_slice(features.rows(view.core.start, view.core.end));
    let right_rows = match (mode, simulated) {
        (RightMode::Simulated, Some(sim)) => {
            if sim.cols() != d {
                return Err(shape_err!("simulated frames have width {}, features {d}", sim.cols()));
            }
            data.extend_from_slice(sim.data());
            sim.rows()
        }
        (RightMode::Real, None) => {
            data.extend_from_slice(features.rows(view.right.start, view.right.end));
            view.right.len()
        }
        (RightMode::None, None) => 0,
        (RightMode::Simulated, None) => return Err(usage_err!("simulated right context requires simulated frames")),
        (_, Some(_)) => return Err(usage_err!("simulated frames given for right_mode={mode}")),
    };
    let rows = view.left.len() + view.core.len() + right_rows;
    Ok(SplicedChunk {
        input: Tensor::matrix(rows, d, data)?,
        left_rows: view.left.len(),
        core_rows: view.core.len(),
        right_rows,
    })
}
