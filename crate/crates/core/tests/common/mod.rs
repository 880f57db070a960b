//! Oracles shared by the integration tests and the acceptance suite. Each
//! one recomputes its quantity by brute force, without the library's DP.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simctx::chunking::{plan_chunks, splice, ChunkPolicy, RightMode};
use simctx::data::Utterance;
use simctx::decoder::{Beam, DecodeOptions, Hypothesis, ModelScorer, Scorer};
use simctx::model::TransducerModel;
use simctx::numerics::{ParamStore, Tensor};
use simctx::rnnt_loss::JointLattice;
use simctx::simunet::SimuState;
use simctx::Result;

pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let z = logsumexp(logits);
    logits.iter().map(|l| l - z).collect()
}

pub struct Instance {
    pub lattice: JointLattice<f64>,
    pub targets: Vec<u32>,
}

/// T' ≤ 4, U ≤ 3, V ≤ 3 with normalized random output distributions.
pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let frames = rng.random_range(1..=4);
    let u = rng.random_range(0..=3);
    let v = rng.random_range(1..=3);
    let targets: Vec<u32> = (0..u).map(|_| rng.random_range(1..=v as u32)).collect();
    let mut logp = Vec::with_capacity(frames * (u + 1) * (v + 1));
    for _ in 0..frames * (u + 1) {
        let logits: Vec<f64> = (0..=v).map(|_| rng.random_range(-3.0..3.0)).collect();
        logp.extend(log_softmax(&logits));
    }
    Instance { lattice: JointLattice::new(frames, u + 1, v + 1, logp).unwrap(), targets }
}

/// Path log-probabilities by walking every interleaving explicitly: from
/// (t, u) either emit the next label (stay on frame t) or emit blank (next
/// frame); the final blank leaves the last frame.
pub fn walk(lat: &JointLattice<f64>, targets: &[u32], t: usize, u: usize, logp: f64, out: &mut Vec<f64>) {
    let last = lat.frames() - 1;
    if u < targets.len() {
        walk(lat, targets, t, u + 1, logp + lat.get(t, u, targets[u] as usize), out);
    }
    let blank = logp + lat.get(t, u, 0);
    if t < last {
        walk(lat, targets, t + 1, u, blank, out);
    } else if u == targets.len() {
        out.push(blank);
    }
}

pub fn brute_force_nll(inst: &Instance) -> f64 {
    let mut paths = Vec::new();
    walk(&inst.lattice, &inst.targets, 0, 0, 0.0, &mut paths);
    -logsumexp(&paths)
}

/// Random but deterministic output distributions keyed on (instance, frame,
/// full label history), so merged prefixes share one state.
pub struct HistoryScorer {
    pub seed: u64,
    pub v: usize,
}

impl HistoryScorer {
    pub fn dist(&self, t: usize, history: &[u32]) -> Vec<f32> {
        let mut h = self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (t as u64 + 1);
        for &l in history {
            h = h.wrapping_mul(31).wrapping_add(l as u64 + 7);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        let logits: Vec<f32> = (0..=self.v).map(|_| rng.random_range(-2.5f32..2.5)).collect();
        let m = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let z = m + logits.iter().map(|l| (l - m).exp()).sum::<f32>().ln();
        logits.iter().map(|l| l - z).collect()
    }

    /// Frame t carries its own index so `log_probs` can look it up.
    pub fn frames(t: usize) -> Tensor<f32> {
        Tensor::matrix(t, 1, (0..t).map(|i| i as f32).collect()).unwrap()
    }
}

impl Scorer for HistoryScorer {
    type State = Vec<u32>;

    fn initial(&self) -> Result<Vec<u32>> {
        Ok(Vec::new())
    }

    fn advance(&self, state: &Vec<u32>, label: u32) -> Result<Vec<u32>> {
        let mut s = state.clone();
        s.push(label);
        Ok(s)
    }

    fn log_probs(&self, frame: &[f32], states: &[&Vec<u32>]) -> Result<Vec<Vec<f32>>> {
        Ok(states.iter().map(|s| self.dist(frame[0] as usize, s)).collect())
    }
}

/// Every one of the (V+1)^T emission sequences, grouped by label sequence.
pub fn exhaustive(sc: &HistoryScorer, t: usize) -> BTreeMap<Vec<u32>, f64> {
    let mut groups: BTreeMap<Vec<u32>, Vec<f64>> = BTreeMap::new();
    let total = (sc.v + 1).pow(t as u32);
    for code in 0..total {
        let mut c = code;
        let mut labels = Vec::new();
        let mut score = 0.0f64;
        for frame in 0..t {
            let k = c % (sc.v + 1);
            c /= sc.v + 1;
            score += sc.dist(frame, &labels)[k] as f64;
            if k != 0 {
                labels.push(k as u32);
            }
        }
        groups.entry(labels).or_default().push(score);
    }
    groups.into_iter().map(|(k, v)| (k, logsumexp(&v))).collect()
}

/// V ≤ 3 and T ≤ 4 drawn from the seed.
pub fn decoder_instance(seed: u64) -> (HistoryScorer, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (HistoryScorer { seed, v: rng.random_range(1..=3) }, rng.random_range(1..=4))
}

/// Whole-utterance reference: plan every chunk up front, splice from the
/// complete feature sequence, encode, and run one beam over all cores.
pub fn batch_decode(model: &TransducerModel, store: &ParamStore<f32>, utt: &Utterance, p: ChunkPolicy, opts: DecodeOptions) -> Vec<Hypothesis> {
    let scorer = ModelScorer::new(model, store);
    let mut beam = Beam::new(&scorer, opts.beam).unwrap();
    let mut simu: SimuState<f32> = model.simunet.zero_state();
    let d = utt.features.dim();
    for view in plan_chunks(utt.features.num_frames(), p.chunk, p.left, p.right).unwrap() {
        let sim = if p.mode == RightMode::Simulated {
            let core = Tensor::matrix(view.core_len(), d, utt.features.rows(view.core.start, view.core.end).to_vec()).unwrap();
            let (sim, next) = model.simunet.simulate(store, &simu, &core).unwrap();
            simu = next;
            Some(sim)
        } else {
            None
        };
        let spliced = splice(&utt.features, &view, p.mode, sim.as_ref()).unwrap();
        let enc = model.encode_chunk(store, &spliced).unwrap();
        beam.step_all(&scorer, &scorer.project(&enc).unwrap()).unwrap();
    }
    beam.nbest(opts.nbest)
}
