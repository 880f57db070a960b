//! Seeded synthetic transcription task: every label owns a fixed random
//! prototype of `frames_per_label` frames; an utterance is the concatenation
//! of its labels' prototypes plus i.i.d. Gaussian noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::features::FeatureSequence;
use super::vocab::LabelSequence;
use super::Utterance;
use crate::error::{usage_err, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTaskSpec {
    pub vocab_size: usize,
    pub frames_per_label: usize,
    pub feat_dim: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        SyntheticTaskSpec { vocab_size: 8, frames_per_label: 8, feat_dim: 16, noise: 0.05, seed: 1 }
    }
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 || self.frames_per_label < 2 || self.feat_dim < 1 {
            return Err(usage_err!("synthetic task needs V ≥ 2, L ≥ 2, D ≥ 1: {self:?}"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(usage_err!("noise stddev must be finite and ≥ 0"));
        }
        Ok(())
    }
}

/// Prototype table for one task spec.
#[derive(Clone, Debug)]
pub struct SyntheticTask {
    spec: SyntheticTaskSpec,
    /// `prototypes[label - 1]` is an L×D row-major block.
    prototypes: Vec<Vec<f32>>,
}

impl SyntheticTask {
    pub fn new(spec: SyntheticTaskSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let n = spec.frames_per_label * spec.feat_dim;
        let prototypes = (0..spec.vocab_size)
            .map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        Ok(SyntheticTask { spec, prototypes })
    }

    pub fn spec(&self) -> &SyntheticTaskSpec {
        &self.spec
    }

    pub fn prototype(&self, label: u32) -> &[f32] {
        &self.prototypes[label as usize - 1]
    }

    /// Renders a label sequence to frames, drawing noise from `rng`.
    pub fn render<R: Rng>(&self, labels: &LabelSequence, rng: &mut R) -> Result<FeatureSequence> {
        if labels.is_empty() {
            return Err(usage_err!("cannot render an empty label sequence"));
        }
        if let Some(&bad) = labels.as_slice().iter().find(|&&l| l as usize > self.spec.vocab_size) {
            return Err(usage_err!("label {bad} outside vocabulary of {}", self.spec.vocab_size));
        }
        let mut data = Vec::with_capacity(labels.len() * self.prototypes[0].len());
        for &l in labels.as_slice() {
            data.extend_from_slice(self.prototype(l));
        }
        if self.spec.noise > 0.0 {
            let normal = Normal::new(0.0f32, self.spec.noise as f32).expect("valid stddev");
            for v in &mut data {
                *v += normal.sample(rng);
            }
        }
        FeatureSequence::from_rows(labels.len() * self.spec.frames_per_label, self.spec.feat_dim, data)
    }

    /// `num_utts` utterances with uniformly drawn lengths in `[min_len, max_len]`.
    pub fn generate(&self, num_utts: usize, min_len: usize, max_len: usize, seed: u64, prefix: &str) -> Result<Vec<Utterance>> {
        if min_len < 1 || min_len > max_len {
            return Err(usage_err!("need 1 ≤ min_len ≤ max_len, got {min_len}..{max_len}"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = self.spec.vocab_size as u32;
        (0..num_utts)
            .map(|i| {
                let len = rng.random_range(min_len..=max_len);
                let labels = LabelSequence::new((0..len).map(|_| rng.random_range(1..=v)).collect())?;
                let features = self.render(&labels, &mut rng)?;
                Ok(Utterance { id: format!("{prefix}{i:06}"), features, labels })
            })
            .collect()
    }
}

/// One-shot corpus generation: prototypes and utterances from `spec.seed`.
pub fn generate_synthetic(spec: &SyntheticTaskSpec, num_utts: usize, min_len: usize, max_len: usize) -> Result<Vec<Utterance>> {
    let task = SyntheticTask::new(spec.clone())?;
    task.generate(num_utts, min_len, max_len, spec.seed.wrapping_add(0x5eed), "utt")
}
