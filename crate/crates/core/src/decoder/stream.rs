use std::fmt;
use std::time::Instant;

use super::{Beam, DecodeOptions, Hypothesis, ModelScorer, ModelState};
use crate::chunking::{splice, ChunkPolicy, ChunkView, RightMode};
use crate::data::{frames_to_ms, FeatureSequence, LabelSequence};
use crate::error::{format_err, shape_err, usage_err, Result};
use crate::model::TransducerModel;
use crate::numerics::{ParamStore, Tensor};
use crate::simunet::SimuState;

/// Per-utterance latency: nominal chunk wait plus measured extra compute.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LatencyLedger {
    pub chunk_wait_ms: f64,
    /// Mean SimuNet wall time per chunk.
    pub simulation_ms: f64,
    /// Second-pass rescoring wall time for the utterance (Δ).
    pub rescoring_ms: f64,
}

impl LatencyLedger {
    pub fn total_ms(&self) -> f64 {
        self.chunk_wait_ms + self.simulation_ms + self.rescoring_ms
    }

    pub fn is_valid(&self) -> bool {
        [self.chunk_wait_ms, self.simulation_ms, self.rescoring_ms].iter().all(|v| v.is_finite() && *v >= 0.0)
    }
}

impl fmt::Display for LatencyLedger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} + {:.3} + {:.3} = {:.3} ms",
            self.chunk_wait_ms,
            self.simulation_ms,
            self.rescoring_ms,
            self.total_ms()
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartialResult {
    pub chunk_index: usize,
    /// Input frames covered by the cores decoded so far.
    pub frames_decoded: usize,
    pub best: LabelSequence,
}

#[derive(Clone, Debug)]
pub struct StreamResult {
    pub nbest: Vec<Hypothesis>,
    pub chunks: usize,
    /// Rescoring is not part of the session, so `rescoring_ms` is 0 here.
    pub ledger: LatencyLedger,
    /// Mean wall time per chunk for simulation, encoding and search together.
    pub chunk_compute_ms: f64,
}

/// Incremental decoder for one stream. Chunk cores are fixed at the policy
/// size; each core is decoded once it and, in real mode, its right context
/// have arrived. Context at the stream end is clipped exactly as
/// [`crate::chunking::plan_chunks`] clips it.
pub struct StreamSession<'a> {
    scorer: ModelScorer<'a>,
    policy: ChunkPolicy,
    opts: DecodeOptions,
    dim: usize,
    buffer: Vec<f32>,
    next_core: usize,
    chunk_index: usize,
    simu: SimuState<f32>,
    beam: Beam<ModelState>,
    ended: bool,
    simulation_s: f64,
    compute_s: f64,
}

impl<'a> StreamSession<'a> {
    pub fn new(model: &'a TransducerModel, store: &'a ParamStore<f32>, policy: ChunkPolicy, opts: DecodeOptions) -> Result<Self> {
        policy.validate()?;
        opts.validate()?;
        if policy.mode == RightMode::Simulated && policy.right != model.config.simu_frames {
            return Err(format_err!(
                "right context of {} frames but the model simulates {}",
                policy.right,
                model.config.simu_frames
            ));
        }
        let scorer = ModelScorer::new(model, store);
        Ok(StreamSession {
            beam: Beam::new(&scorer, opts.beam)?,
            scorer,
            policy,
            opts,
            dim: model.config.feat_dim,
            buffer: Vec::new(),
            next_core: 0,
            chunk_index: 0,
            simu: model.simunet.zero_state(),
            ended: false,
            simulation_s: 0.0,
            compute_s: 0.0,
        })
    }

    fn delivered(&self) -> usize {
        self.buffer.len() / self.dim
    }

    /// Appends whole frames (row-major) and decodes every chunk that became ready.
    pub fn push(&mut self, frames: &[f32]) -> Result<Vec<PartialResult>> {
        if self.ended {
            return Err(usage_err!("frames delivered after end of stream"));
        }
        if !frames.len().is_multiple_of(self.dim) {
            return Err(shape_err!("{} values is not a whole number of {}-dim frames", frames.len(), self.dim));
        }
        self.buffer.extend_from_slice(frames);
        self.drain()
    }

    /// Marks end of stream, decodes the remainder and returns the n-best.
    pub fn finish(mut self) -> Result<StreamResult> {
        if self.delivered() == 0 {
            return Err(usage_err!("stream ended with no frames"));
        }
        self.ended = true;
        self.drain()?;
        let chunks = self.chunk_index;
        Ok(StreamResult {
            nbest: self.beam.nbest(self.opts.nbest),
            chunks,
            ledger: LatencyLedger {
                chunk_wait_ms: frames_to_ms(self.policy.chunk),
                simulation_ms: self.simulation_s * 1e3 / chunks as f64,
                rescoring_ms: 0.0,
            },
            chunk_compute_ms: self.compute_s * 1e3 / chunks as f64,
        })
    }

    fn drain(&mut self) -> Result<Vec<PartialResult>> {
        let mut out = Vec::new();
        loop {
            let n = self.delivered();
            let s = self.next_core;
            let e = s + self.policy.chunk;
            let need = if self.policy.mode == RightMode::Real { e + self.policy.right } else { e };
            let ready = if self.ended { s < n } else { need <= n };
            if !ready {
                return Ok(out);
            }
            out.push(self.process(s, e.min(n))?);
        }
    }

    fn process(&mut self, s: usize, e: usize) -> Result<PartialResult> {
        let started = Instant::now();
        let (left, right) = (self.policy.left, self.policy.right);
        let n = self.delivered();
        let lo = s.saturating_sub(left);
        let hi = if self.policy.mode == RightMode::Real { (e + right).min(n) } else { e };
        let window = FeatureSequence::from_rows(hi - lo, self.dim, self.buffer[lo * self.dim..hi * self.dim].to_vec())?;
        let view = ChunkView {
            index: self.chunk_index,
            core: s - lo..e - lo,
            left: 0..s - lo,
            right: e - lo..hi - lo,
            left_clipped: left > s,
            right_clipped: e + right > n,
        };
        let model = self.scorer.model;
        let simulated = if self.policy.mode == RightMode::Simulated {
            let t = Instant::now();
            let core = Tensor::matrix(e - s, self.dim, self.buffer[s * self.dim..e * self.dim].to_vec())?;
            let (sim, next) = model.simunet.simulate(self.scorer.store, &self.simu, &core)?;
            self.simu = next;
            self.simulation_s += t.elapsed().as_secs_f64();
            Some(sim)
        } else {
            None
        };
        let spliced = splice(&window, &view, self.policy.mode, simulated.as_ref())?;
        let encoded = model.encode_chunk(self.scorer.store, &spliced)?;
        let frames = self.scorer.project(&encoded)?;
        self.beam.step_all(&self.scorer, &frames)?;
        self.compute_s += started.elapsed().as_secs_f64();
        self.next_core = e;
        self.chunk_index += 1;
        Ok(PartialResult { chunk_index: self.chunk_index - 1, frames_decoded: e, best: self.beam.best().labels })
    }
}

/// Streams a whole utterance through a session in `delivery`-frame pieces.
pub fn stream_decode(
    model: &TransducerModel,
    store: &ParamStore<f32>,
    features: &FeatureSequence,
    policy: ChunkPolicy,
    opts: DecodeOptions,
    delivery: usize,
) -> Result<StreamResult> {
    let mut session = StreamSession::new(model, store, policy, opts)?;
    let d = features.dim();
    for piece in features.frames().data().chunks(delivery.max(1).saturating_mul(d)) {
        session.push(piece)?;
    }
    session.finish()
}
