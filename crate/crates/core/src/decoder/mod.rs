//! Monotonic frame-synchronous search: every encoder frame emits either
//! blank or exactly one label.

pub mod nbest;
pub mod stream;

use std::cmp::Ordering;
use std::collections::HashMap;

pub use nbest::{group_by_utterance, read_nbest, write_nbest, NBestEntry};
pub use stream::{stream_decode, LatencyLedger, PartialResult, StreamResult, StreamSession};

use crate::data::{LabelSequence, BLANK};
use crate::error::{usage_err, Error, Result};
use crate::model::{PredictorInput, PredictorState, TransducerModel};
use crate::numerics::{log_add, ParamStore, Tensor};

/// Source of per-frame output distributions conditioned on a label history.
pub trait Scorer {
    type State: Clone;

    fn initial(&self) -> Result<Self::State>;

    /// State after consuming a non-blank label.
    fn advance(&self, state: &Self::State, label: u32) -> Result<Self::State>;

    /// One log-distribution over blank + labels per state, for one frame.
    fn log_probs(&self, frame: &[f32], states: &[&Self::State]) -> Result<Vec<Vec<f32>>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub labels: LabelSequence,
    /// Transducer log-score, merged over alignments.
    pub score: f64,
    pub lm_score: Option<f64>,
}

#[derive(Clone, Debug)]
struct Entry<St> {
    labels: Vec<u32>,
    score: f64,
    state: St,
}

fn rank(a_score: f64, a_labels: &[u32], b_score: f64, b_labels: &[u32]) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_labels.cmp(b_labels))
}

/// Resumable beam over a growing sequence of frames.
#[derive(Clone, Debug)]
pub struct Beam<St> {
    entries: Vec<Entry<St>>,
    width: usize,
    frames: usize,
}

impl<St: Clone> Beam<St> {
    pub fn new<Sc: Scorer<State = St>>(scorer: &Sc, width: usize) -> Result<Self> {
        if width == 0 {
            return Err(usage_err!("beam width must be ≥ 1"));
        }
        let state = scorer.initial()?;
        Ok(Beam { entries: vec![Entry { labels: Vec::new(), score: 0.0, state }], width, frames: 0 })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn step<Sc: Scorer<State = St>>(&mut self, scorer: &Sc, frame: &[f32]) -> Result<()> {
        let states: Vec<&St> = self.entries.iter().map(|e| &e.state).collect();
        let lps = scorer.log_probs(frame, &states)?;
        // (labels, score, parent, emitted label)
        let mut cands: Vec<(Vec<u32>, f64, usize, u32)> = Vec::new();
        let mut index: HashMap<Vec<u32>, usize> = HashMap::new();
        for (parent, (entry, lp)) in self.entries.iter().zip(&lps).enumerate() {
            for (k, &v) in lp.iter().enumerate() {
                let score = entry.score + v as f64;
                let mut labels = entry.labels.clone();
                if k != BLANK as usize {
                    labels.push(k as u32);
                }
                match index.get(&labels) {
                    Some(&j) => cands[j].1 = log_add(cands[j].1, score),
                    None => {
                        index.insert(labels.clone(), cands.len());
                        cands.push((labels, score, parent, k as u32));
                    }
                }
            }
        }
        cands.sort_by(|a, b| rank(a.1, &a.0, b.1, &b.0));
        cands.truncate(self.width);
        let mut next = Vec::with_capacity(cands.len());
        for (labels, score, parent, k) in cands {
            if !score.is_finite() {
                return Err(Error::Numeric(format!("non-finite beam score at frame {}", self.frames)));
            }
            let state = if k == BLANK {
                self.entries[parent].state.clone()
            } else {
                scorer.advance(&self.entries[parent].state, k)?
            };
            next.push(Entry { labels, score, state });
        }
        self.entries = next;
        self.frames += 1;
        Ok(())
    }

    pub fn step_all<Sc: Scorer<State = St>>(&mut self, scorer: &Sc, frames: &Tensor<f32>) -> Result<()> {
        for t in 0..frames.rows() {
            self.step(scorer, frames.row(t))?;
        }
        Ok(())
    }

    pub fn best(&self) -> Hypothesis {
        self.hypothesis(0)
    }

    fn hypothesis(&self, i: usize) -> Hypothesis {
        let e = &self.entries[i];
        Hypothesis { labels: LabelSequence::new(e.labels.clone()).expect("beam labels are blank-free"), score: e.score, lm_score: None }
    }

    pub fn nbest(&self, n: usize) -> Vec<Hypothesis> {
        (0..n.min(self.entries.len())).map(|i| self.hypothesis(i)).collect()
    }
}

/// Per frame, argmax over blank + labels; a label advances the predictor.
pub fn greedy_decode<Sc: Scorer>(scorer: &Sc, frames: &Tensor<f32>) -> Result<Hypothesis> {
    let mut state = scorer.initial()?;
    let mut labels = Vec::new();
    let mut score = 0.0f64;
    for t in 0..frames.rows() {
        let lp = scorer.log_probs(frames.row(t), &[&state])?.remove(0);
        let (k, &v) = lp
            .iter()
            .enumerate()
            .fold(None, |best: Option<(usize, &f32)>, (k, v)| match best {
                Some((_, bv)) if *v <= *bv => best,
                _ => Some((k, v)),
            })
            .ok_or_else(|| usage_err!("empty output distribution"))?;
        score += v as f64;
        if k != BLANK as usize {
            labels.push(k as u32);
            state = scorer.advance(&state, k as u32)?;
        }
    }
    Ok(Hypothesis { labels: LabelSequence::new(labels)?, score, lm_score: None })
}

/// Top-`nbest` hypotheses of a width-`width` monotonic beam search.
pub fn beam_search<Sc: Scorer>(scorer: &Sc, frames: &Tensor<f32>, width: usize, nbest: usize) -> Result<Vec<Hypothesis>> {
    if nbest == 0 || nbest > width {
        return Err(usage_err!("need 1 ≤ nbest ≤ beam width, got nbest {nbest}, width {width}"));
    }
    let mut beam = Beam::new(scorer, width)?;
    beam.step_all(scorer, frames)?;
    Ok(beam.nbest(nbest))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecodeOptions {
    pub beam: usize,
    pub nbest: usize,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions { beam: 16, nbest: 16 }
    }
}

impl DecodeOptions {
    pub fn validate(&self) -> Result<()> {
        if self.beam == 0 || self.nbest == 0 || self.nbest > self.beam {
            return Err(usage_err!("need 1 ≤ nbest ≤ beam, got nbest {}, beam {}", self.nbest, self.beam));
        }
        Ok(())
    }
}

/// Predictor state plus its joiner projection.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub predictor: PredictorState,
    pub projection: Vec<f32>,
}

/// [`Scorer`] over a trained model. Frames are joiner-projected encoder rows.
#[derive(Clone, Copy, Debug)]
pub struct ModelScorer<'a> {
    pub model: &'a TransducerModel,
    pub store: &'a ParamStore<f32>,
}

impl<'a> ModelScorer<'a> {
    pub fn new(model: &'a TransducerModel, store: &'a ParamStore<f32>) -> Self {
        ModelScorer { model, store }
    }

    /// Encoder output → decoder frames.
    pub fn project(&self, encoded: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.model.joiner.project_encoder(self.store, encoded)
    }

    fn state(&self, prev: &PredictorState, input: PredictorInput) -> Result<ModelState> {
        let (g, predictor) = self.model.predict(self.store, prev, input)?;
        let projection = self.model.joiner.project_predictor(self.store, &g)?;
        Ok(ModelState { predictor, projection })
    }
}

impl Scorer for ModelScorer<'_> {
    type State = ModelState;

    fn initial(&self) -> Result<ModelState> {
        self.state(&self.model.predictor.zero_state(), PredictorInput::Start)
    }

    fn advance(&self, state: &ModelState, label: u32) -> Result<ModelState> {
        self.state(&state.predictor, PredictorInput::Label(label))
    }

    fn log_probs(&self, frame: &[f32], states: &[&ModelState]) -> Result<Vec<Vec<f32>>> {
        let preds: Vec<&[f32]> = states.iter().map(|s| s.projection.as_slice()).collect();
        self.model.joiner.log_probs(self.store, frame, &preds)
    }
}

/// Full-context decode of one utterance.
pub fn decode_offline(
    model: &TransducerModel,
    store: &ParamStore<f32>,
    features: &Tensor<f32>,
    opts: DecodeOptions,
) -> Result<Vec<Hypothesis>> {
    opts.validate()?;
    let scorer = ModelScorer::new(model, store);
    let frames = scorer.project(&model.encode_full(store, features)?)?;
    beam_search(&scorer, &frames, opts.beam, opts.nbest)
}
