//! Feature and label I/O, vocabulary, synthetic corpora, batching and CER.

pub mod cer;
pub mod features;
pub mod synth;
pub mod vocab;

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use cer::{cer, edit_distance, CerTally};
pub use features::{frames_to_ms, ms_to_frames, FeatureSequence, HOP_MS};
pub use synth::{generate_synthetic, SyntheticTask, SyntheticTaskSpec};
pub use vocab::{LabelSequence, Vocabulary, BLANK};

use crate::error::{format_err, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub features: FeatureSequence,
    pub labels: LabelSequence,
}

/// Writes `utt_id<TAB>tok tok …` lines, one per utterance.
pub fn labels_to_text(vocab: &Vocabulary, utts: &[Utterance]) -> String {
    utts.iter().map(|u| format!("{}\t{}\n", u.id, vocab.decode(&u.labels).join(" "))).collect()
}

pub fn labels_from_text(vocab: &Vocabulary, text: &str) -> Result<Vec<(String, LabelSequence)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let (id, toks) = line.split_once('\t').unwrap_or((line.trim(), ""));
            if id.is_empty() {
                return Err(format_err!("labels line {}: missing utterance id", n + 1));
            }
            let labels = vocab.encode(toks).map_err(|e| format_err!("labels line {}: {e}", n + 1))?;
            Ok((id.to_string(), labels))
        })
        .collect()
}

/// Stores a split as `<dir>/<split>/labels.txt` plus `<dir>/<split>/feats/<id>.feat`.
pub fn write_split(dir: &Path, split: &str, vocab: &Vocabulary, utts: &[Utterance]) -> Result<()> {
    let feats = dir.join(split).join("feats");
    fs::create_dir_all(&feats)?;
    fs::write(dir.join(split).join("labels.txt"), labels_to_text(vocab, utts))?;
    for u in utts {
        u.features.write(feats.join(format!("{}.feat", u.id)))?;
    }
    Ok(())
}

pub fn read_split(dir: &Path, split: &str, vocab: &Vocabulary) -> Result<Vec<Utterance>> {
    let text = fs::read_to_string(dir.join(split).join("labels.txt"))?;
    labels_from_text(vocab, &text)?
        .into_iter()
        .map(|(id, labels)| {
            let features = FeatureSequence::read(dir.join(split).join("feats").join(format!("{id}.feat")))?;
            Ok(Utterance { id, features, labels })
        })
        .collect()
}

/// Deterministic shuffled mini-batches over `0..len`, reshuffled every epoch.
#[derive(Clone, Debug)]
pub struct BatchIter {
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl BatchIter {
    pub fn new(len: usize, batch_size: usize, seed: u64) -> Self {
        assert!(len > 0 && batch_size > 0, "batching needs data and a positive batch size");
        let mut it = BatchIter {
            order: (0..len).collect(),
            pos: 0,
            batch_size,
            rng: ChaCha8Rng::seed_from_u64(seed),
            epoch: 0,
        };
        it.order.shuffle(&mut it.rng);
        it
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Next batch of indices; batches never straddle an epoch boundary.
    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.pos >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
            self.epoch += 1;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        batch
    }
}
