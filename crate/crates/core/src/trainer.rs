//! Multi-objective training: a streaming pass over spliced chunks, a
//! full-context pass, and the SimuNet L1 loss, summed into one backward.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::chunking::{align_chunk_size, plan_chunks, sample_chunk_size, ChunkPolicy, RightMode, RightModeMix};
use crate::data::{BatchIter, Utterance};
use crate::error::{usage_err, Error, Result};
use crate::model::TransducerModel;
use crate::numerics::{checkpoint, Graph, ParamStore, Real, Tensor, Var};
use crate::rnnt_loss::rnnt_loss_node;
use crate::simunet::simulation_loss_graph;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Weight of the simulation loss.
    pub alpha: f64,
    pub peak_lr: f64,
    pub warmup: usize,
    pub total_steps: usize,
    pub batch_size: usize,
    pub clip: f64,
    /// Micro-batches per optimizer step.
    pub accum: usize,
    pub seed: u64,
    /// Number of best dev snapshots averaged at the end.
    pub average: usize,
    /// Steps between dev evaluations.
    pub eval_every: usize,
    pub policy: ChunkPolicy,
    pub mode_mix: RightModeMix,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 1.0,
            peak_lr: 3e-3,
            warmup: 500,
            total_steps: 5000,
            batch_size: 8,
            clip: 5.0,
            accum: 1,
            seed: 1,
            average: 10,
            eval_every: 250,
            policy: ChunkPolicy { chunk: 16, jitter: 4, left: 16, right: 8, mode: RightMode::Simulated },
            mode_mix: RightModeMix::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        self.mode_mix.validate()?;
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(usage_err!("alpha must be ≥ 0"));
        }
        if !(self.peak_lr.is_finite() && self.peak_lr > 0.0) {
            return Err(usage_err!("learning rate must be positive"));
        }
        if self.warmup == 0 || self.warmup > self.total_steps {
            return Err(usage_err!("need 1 ≤ warmup ≤ total steps"));
        }
        if !(self.clip.is_finite() && self.clip > 0.0) {
            return Err(usage_err!("clip threshold must be positive"));
        }
        if self.batch_size == 0 || self.accum == 0 || !self.batch_size.is_multiple_of(self.accum) {
            return Err(usage_err!("batch size must be a positive multiple of the accumulation factor"));
        }
        if self.average == 0 || self.eval_every == 0 {
            return Err(usage_err!("average and eval_every must be positive"));
        }
        Ok(())
    }
}

/// `peak · min(step / warmup, sqrt(warmup / step))`.
pub fn lr_schedule(step: usize, warmup: usize, peak_lr: f64) -> f64 {
    let (s, w) = (step.max(1) as f64, warmup.max(1) as f64);
    peak_lr * (s / w).min((w / s).sqrt())
}

/// Chunk size and right-context mode used for one utterance's streaming pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamPlan {
    pub chunk_size: usize,
    pub mode: RightMode,
}

pub fn sample_stream_plan<R: rand::Rng>(policy: &ChunkPolicy, mix: &RightModeMix, subsample: usize, rng: &mut R) -> StreamPlan {
    let chunk_size = align_chunk_size(sample_chunk_size(policy, rng), subsample);
    StreamPlan { chunk_size, mode: mix.sample(rng) }
}

/// Loss nodes of one utterance.
#[derive(Clone, Copy, Debug)]
pub struct MotLosses {
    pub total: Var,
    pub streaming: Var,
    pub nonstreaming: Var,
    pub simulation: Var,
}

/// Streaming RNN-T loss and mean simulation loss over chunks with real future.
pub fn streaming_loss_graph<S: Real>(
    g: &mut Graph<S>,
    model: &TransducerModel,
    features: Var,
    targets: &[u32],
    policy: &ChunkPolicy,
    plan: StreamPlan,
) -> Result<(Var, Var)> {
    let (t, _) = g.shape2(features)?;
    let views = plan_chunks(t, plan.chunk_size, policy.left, policy.right)?;
    let simu = &model.simunet;
    let mut state = simu.state_vars(g, &simu.zero_state())?;
    let mut encoded = Vec::with_capacity(views.len());
    let mut simu_losses = Vec::new();
    for view in &views {
        let core = g.slice_rows(features, view.core.start, view.core.end)?;
        let (sim, next) = simu.simulate_graph(g, &state, core)?;
        state = next;
        let real = if view.right.is_empty() {
            None
        } else {
            Some(g.slice_rows(features, view.right.start, view.right.end)?)
        };
        if let Some(l) = simulation_loss_graph(g, sim, real)? {
            simu_losses.push(l);
        }
        let mut parts = Vec::with_capacity(3);
        if !view.left.is_empty() {
            parts.push(g.slice_rows(features, view.left.start, view.left.end)?);
        }
        parts.push(core);
        let right_rows = match plan.mode {
            RightMode::None => 0,
            RightMode::Real => {
                if let Some(r) = real {
                    parts.push(r);
                }
                view.right.len()
            }
            RightMode::Simulated => {
                parts.push(sim);
                simu.frames
            }
        };
        let input = if parts.len() == 1 { parts[0] } else { g.concat_rows(&parts)? };
        encoded.push(model.encoder.encode_chunk_graph(g, input, [view.left.len(), view.core_len(), right_rows])?);
    }
    let enc = if encoded.len() == 1 { encoded[0] } else { g.concat_rows(&encoded)? };
    let rnnt = transducer_loss(g, model, enc, targets)?;
    let simulation = if simu_losses.is_empty() {
        g.input(Tensor::scalar(S::zero()))?
    } else {
        let n = simu_losses.len();
        let mut sum = simu_losses[0];
        for &l in &simu_losses[1..] {
            sum = g.add(sum, l)?;
        }
        g.scale(sum, S::of(1.0 / n as f64))?
    };
    Ok((rnnt, simulation))
}

fn transducer_loss<S: Real>(g: &mut Graph<S>, model: &TransducerModel, enc: Var, targets: &[u32]) -> Result<Var> {
    let (frames, _) = g.shape2(enc)?;
    let pred = model.predictor.forward_sequence(g, targets)?;
    let lattice = model.joiner.lattice(g, enc, pred)?;
    rnnt_loss_node(g, lattice, frames, targets)
}

/// Full-context RNN-T loss; SimuNet is not involved.
pub fn nonstreaming_loss_graph<S: Real>(g: &mut Graph<S>, model: &TransducerModel, features: Var, targets: &[u32]) -> Result<Var> {
    let enc = model.encoder.encode_full_graph(g, features)?;
    transducer_loss(g, model, enc, targets)
}

/// `L_streaming + L_non-streaming + α · L_simu` for one utterance.
pub fn mot_loss_graph<S: Real>(
    g: &mut Graph<S>,
    model: &TransducerModel,
    features: &Tensor<S>,
    targets: &[u32],
    policy: &ChunkPolicy,
    plan: StreamPlan,
    alpha: S,
) -> Result<MotLosses> {
    let x = g.input(features.clone())?;
    let (streaming, simulation) = streaming_loss_graph(g, model, x, targets, policy, plan)?;
    let nonstreaming = nonstreaming_loss_graph(g, model, x, targets)?;
    let pair = g.add(streaming, nonstreaming)?;
    let weighted = g.scale(simulation, alpha)?;
    let total = g.add(pair, weighted)?;
    Ok(MotLosses { total, streaming, nonstreaming, simulation })
}

/// Mean per-utterance loss values.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValues {
    pub total: f64,
    pub streaming: f64,
    pub nonstreaming: f64,
    pub simulation: f64,
}

impl LossValues {
    fn add_scaled(&mut self, other: &LossValues, scale: f64) {
        self.total += scale * other.total;
        self.streaming += scale * other.streaming;
        self.nonstreaming += scale * other.nonstreaming;
        self.simulation += scale * other.simulation;
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub losses: LossValues,
    pub lr: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

impl fmt::Display for StepMetrics {
    /// `step loss_stream loss_nonstream loss_simu lr`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:.6} {:.6} {:.6} {:.6e}",
            self.step, self.losses.streaming, self.losses.nonstreaming, self.losses.simulation, self.lr
        )
    }
}

/// Adam with decoupled per-parameter moment buffers.
#[derive(Clone, Debug)]
pub struct Adam<S> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    t: i32,
}

impl<S: Real> Adam<S> {
    pub fn new(store: &ParamStore<S>) -> Self {
        let zeros = || store.ids().map(|id| vec![S::zero(); store.value(id).numel()]).collect();
        Adam { beta1: 0.9, beta2: 0.98, eps: 1e-9, m: zeros(), v: zeros(), t: 0 }
    }

    pub fn step(&mut self, store: &mut ParamStore<S>, lr: f64) {
        self.t += 1;
        let (b1, b2) = (S::of(self.beta1), S::of(self.beta2));
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let step = S::of(lr * c2.sqrt() / c1);
        let eps = S::of(self.eps * c2.sqrt());
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let grad = store.grad(id).data().to_vec();
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            let value = store.value_mut(id).data_mut();
            for i in 0..grad.len() {
                m[i] = b1 * m[i] + (S::one() - b1) * grad[i];
                v[i] = b2 * v[i] + (S::one() - b2) * grad[i] * grad[i];
                value[i] -= step * m[i] / (v[i].sqrt() + eps);
            }
        }
    }
}

pub struct Trainer<S: Real = f32> {
    pub model: TransducerModel,
    pub store: ParamStore<S>,
    pub config: TrainConfig,
    adam: Adam<S>,
    step: usize,
    rng: ChaCha8Rng,
}

impl<S: Real> Trainer<S> {
    pub fn new(model: TransducerModel, store: ParamStore<S>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if config.policy.right != model.config.simu_frames && config.mode_mix.simulated > 0.0 {
            return Err(usage_err!(
                "right context of {} frames but SimuNet emits {}",
                config.policy.right,
                model.config.simu_frames
            ));
        }
        let adam = Adam::new(&store);
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Trainer { model, store, config, adam, step: 0, rng })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// Forward and backward for one utterance; gradients scaled by `scale` into the store.
    fn accumulate_utterance(&mut self, utt: &Utterance, plan: StreamPlan, scale: f64) -> Result<LossValues> {
        let feats: Tensor<S> = utt.features.frames().cast();
        let (values, grads) = {
            let mut g = Graph::new(&self.store);
            let l = mot_loss_graph(&mut g, &self.model, &feats, utt.labels.as_slice(), &self.config.policy, plan, S::of(self.config.alpha))?;
            let values = LossValues {
                total: g.scalar(l.total).f64(),
                streaming: g.scalar(l.streaming).f64(),
                nonstreaming: g.scalar(l.nonstreaming).f64(),
                simulation: g.scalar(l.simulation).f64(),
            };
            if !values.total.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss {values:?}")));
            }
            (values, g.backward(l.total)?)
        };
        self.store.accumulate(&grads, S::of(scale));
        Ok(values)
    }

    /// Accumulates gradients of the batch mean without touching parameters.
    pub fn accumulate_batch(&mut self, batch: &[&Utterance], scale: f64) -> Result<LossValues> {
        let mut mean = LossValues::default();
        for utt in batch {
            let plan = sample_stream_plan(&self.config.policy, &self.config.mode_mix, self.model.config.subsample, &mut self.rng);
            let v = self.accumulate_utterance(utt, plan, scale).map_err(|e| self.diagnose(e, utt, plan))?;
            mean.add_scaled(&v, 1.0 / batch.len() as f64);
        }
        Ok(mean)
    }

    fn diagnose(&self, e: Error, utt: &Utterance, plan: StreamPlan) -> Error {
        match e {
            Error::Numeric(msg) => Error::Numeric(format!(
                "step {} aborted on utterance {} ({} frames, {} labels, chunk {}, right mode {}): {msg}",
                self.step + 1,
                utt.id,
                utt.features.num_frames(),
                utt.labels.len(),
                plan.chunk_size,
                plan.mode
            )),
            other => other,
        }
    }

    /// One optimizer step over `batch`, split into `accum` micro-batches.
    /// On error the parameters are left unchanged.
    pub fn train_step(&mut self, batch: &[&Utterance]) -> Result<StepMetrics> {
        if batch.is_empty() {
            return Err(usage_err!("empty batch"));
        }
        self.store.zero_grad();
        let scale = 1.0 / batch.len() as f64;
        let micro = batch.len().div_ceil(self.config.accum);
        let mut losses = LossValues::default();
        for part in batch.chunks(micro) {
            let v = self.accumulate_batch(part, scale)?;
            losses.add_scaled(&v, part.len() as f64 / batch.len() as f64);
        }
        let grad_norm = self.store.clip_grad_norm(S::of(self.config.clip)).f64();
        if !grad_norm.is_finite() {
            return Err(Error::Numeric(format!("step {}: non-finite gradient norm", self.step + 1)));
        }
        self.step += 1;
        let lr = lr_schedule(self.step, self.config.warmup, self.config.peak_lr);
        self.adam.step(&mut self.store, lr);
        Ok(StepMetrics { step: self.step, losses, lr, grad_norm })
    }

    /// Mean losses over `utts` with a fixed plan sequence; no gradients kept.
    pub fn evaluate(&self, utts: &[Utterance]) -> Result<LossValues> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x05ee_dde7);
        let mut mean = LossValues::default();
        for utt in utts {
            let plan = sample_stream_plan(&self.config.policy, &self.config.mode_mix, self.model.config.subsample, &mut rng);
            let feats: Tensor<S> = utt.features.frames().cast();
            let mut g = Graph::new(&self.store);
            let l = mot_loss_graph(&mut g, &self.model, &feats, utt.labels.as_slice(), &self.config.policy, plan, S::of(self.config.alpha))?;
            let v = LossValues {
                total: g.scalar(l.total).f64(),
                streaming: g.scalar(l.streaming).f64(),
                nonstreaming: g.scalar(l.nonstreaming).f64(),
                simulation: g.scalar(l.simulation).f64(),
            };
            mean.add_scaled(&v, 1.0 / utts.len() as f64);
        }
        Ok(mean)
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub history: Vec<StepMetrics>,
    /// (step, dev L_MoT) at each evaluation.
    pub dev: Vec<(usize, f64)>,
    /// Steps whose snapshots were averaged into the final parameters.
    pub averaged: Vec<usize>,
}

/// Runs `config.total_steps` steps, evaluates on `dev` every `eval_every`
/// steps, and returns the mean of the best `average` snapshots.
pub fn train<S: Real>(
    trainer: &mut Trainer<S>,
    train_set: &[Utterance],
    dev: &[Utterance],
    mut on_step: impl FnMut(&StepMetrics),
) -> Result<(ParamStore<S>, TrainReport)> {
    if train_set.is_empty() || dev.is_empty() {
        return Err(usage_err!("training needs non-empty train and dev sets"));
    }
    let cfg = trainer.config.clone();
    let mut batches = BatchIter::new(train_set.len(), cfg.batch_size, cfg.seed);
    let mut report = TrainReport::default();
    let mut best: Vec<(f64, usize, ParamStore<S>)> = Vec::new();
    while trainer.step() < cfg.total_steps {
        let idx = batches.next_batch();
        let batch: Vec<&Utterance> = idx.iter().map(|&i| &train_set[i]).collect();
        let m = trainer.train_step(&batch)?;
        on_step(&m);
        report.history.push(m);
        if m.step % cfg.eval_every == 0 || m.step == cfg.total_steps {
            let loss = trainer.evaluate(dev)?.total;
            report.dev.push((m.step, loss));
            best.push((loss, m.step, trainer.store.clone()));
            best.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            best.truncate(cfg.average);
        }
    }
    report.averaged = best.iter().map(|b| b.1).collect();
    let stores: Vec<ParamStore<S>> = best.into_iter().map(|b| b.2).collect();
    Ok((ParamStore::average(&stores)?, report))
}

/// Elementwise mean of checkpoint files.
pub fn average_checkpoints<P: AsRef<std::path::Path>>(paths: &[P]) -> Result<ParamStore<f32>> {
    let stores = paths.iter().map(checkpoint::load).collect::<Result<Vec<_>>>()?;
    if stores.is_empty() {
        return Err(usage_err!("no checkpoints to average"));
    }
    ParamStore::average(&stores).map_err(|e| match e {
        Error::Format(m) => Error::Format(m),
        other => Error::Format(other.to_string()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{SyntheticTask, SyntheticTaskSpec};
    use crate::model::ModelConfig;

    #[test]
    fn schedule_shape() {
        assert_eq!(lr_schedule(500, 500, 3e-3), 3e-3);
        assert_eq!(lr_schedule(250, 500, 3e-3), 1.5e-3);
        assert_eq!(lr_schedule(2000, 500, 3e-3), 1.5e-3);
        assert!(lr_schedule(499, 500, 1.0) < 1.0 && lr_schedule(501, 500, 1.0) < 1.0);
    }

    fn tiny() -> (TransducerModel, ParamStore<f64>, Vec<Utterance>) {
        let cfg = ModelConfig { enc_layers: 1, enc_dim: 8, enc_heads: 2, enc_ffn: 8, pred_hidden: 6, join_hidden: 6, feat_dim: 4, vocab_size: 3, simu_hidden: 4, simu_frames: 2, ..Default::default() };
        let (m, store) = TransducerModel::new::<f64>(cfg, 3).unwrap();
        let spec = SyntheticTaskSpec { vocab_size: 3, frames_per_label: 3, feat_dim: 4, noise: 0.05, seed: 2 };
        let utts = SyntheticTask::new(spec).unwrap().generate(4, 1, 3, 5, "t").unwrap();
        (m, store, utts)
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            policy: ChunkPolicy::new(4, 1, 2, 2, RightMode::Simulated).unwrap(),
            batch_size: 4,
            warmup: 2,
            total_steps: 4,
            eval_every: 2,
            average: 2,
            ..Default::default()
        }
    }

    #[test]
    fn alpha_zero_is_two_term_sum() {
        let (m, store, utts) = tiny();
        let p = tiny_config().policy;
        let plan = StreamPlan { chunk_size: 4, mode: RightMode::Simulated };
        let mut g = Graph::new(&store);
        let l = mot_loss_graph(&mut g, &m, &utts[0].features.frames().cast(), utts[0].labels.as_slice(), &p, plan, 0.0).unwrap();
        assert_eq!(g.scalar(l.total), g.scalar(l.streaming) + g.scalar(l.nonstreaming));
        assert!(g.scalar(l.simulation) >= 0.0);
    }

    #[test]
    fn accumulation_matches_full_batch() {
        let (m, store, utts) = tiny();
        let batch: Vec<&Utterance> = utts.iter().collect();
        let mut a = Trainer::new(m.clone(), store.clone(), tiny_config()).unwrap();
        let mut b = Trainer::new(m, store, TrainConfig { accum: 2, ..tiny_config() }).unwrap();
        a.store.zero_grad();
        b.store.zero_grad();
        a.accumulate_batch(&batch, 0.25).unwrap();
        b.accumulate_batch(&batch[..2], 0.25).unwrap();
        b.accumulate_batch(&batch[2..], 0.25).unwrap();
        for id in a.store.ids() {
            for (x, y) in a.store.grad(id).data().iter().zip(b.store.grad(id).data()) {
                assert!((x - y).abs() < 1e-6);
            }
        }
        let ma = a.train_step(&batch).unwrap();
        let mb = b.train_step(&batch).unwrap();
        assert!((ma.grad_norm - mb.grad_norm).abs() < 1e-6);
    }

    #[test]
    fn clipping_bounds_norm() {
        let (m, store, utts) = tiny();
        let mut t = Trainer::new(m, store, TrainConfig { clip: 1e-3, ..tiny_config() }).unwrap();
        let batch: Vec<&Utterance> = utts.iter().collect();
        t.store.zero_grad();
        t.accumulate_batch(&batch, 0.25).unwrap();
        let before = t.store.clip_grad_norm(1e-3);
        assert!(before > 1e-3);
        assert!(t.store.grad_norm() <= 1e-3 + 1e-6);
    }

    #[test]
    fn train_loop_runs_and_averages() {
        let (m, store, utts) = tiny();
        let mut t = Trainer::new(m, store, tiny_config()).unwrap();
        let mut lines = Vec::new();
        let (avg, report) = train(&mut t, &utts, &utts[..2], |s| lines.push(s.to_string())).unwrap();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0].split(' ').count(), 5);
        assert_eq!(report.dev.len(), 2);
        assert_eq!(report.averaged.len(), 2);
        assert!(avg.check_compatible(&t.store).is_ok());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { warmup: 10, total_steps: 5, ..tiny_config() }.validate().is_err());
        assert!(TrainConfig { batch_size: 3, accum: 2, ..tiny_config() }.validate().is_err());
        assert!(TrainConfig { alpha: -1.0, ..tiny_config() }.validate().is_err());
        let (m, store, _) = tiny();
        let bad = TrainConfig { policy: ChunkPolicy::new(4, 0, 0, 3, RightMode::Simulated).unwrap(), ..tiny_config() };
        assert!(Trainer::new(m, store, bad).is_err());
    }
}
