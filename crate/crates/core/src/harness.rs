//! End-to-end plumbing shared by the CLI and the acceptance suite: corpus
//! layout on disk, evaluation in every decode mode, optional rescoring, and
//! the streaming latency benchmark.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use crate::chunking::{ChunkPolicy, RightMode};
use crate::config::Settings;
use crate::data::{read_split, write_split, CerTally, SyntheticTask, Utterance, Vocabulary};
use crate::decoder::{decode_offline, stream_decode, DecodeOptions, Hypothesis, LatencyLedger, NBestEntry};
use crate::error::{usage_err, Error, Result};
use crate::lm::{fuse_nbest, rescore_nbest, FusionWeights, NGramModel};
pub use crate::lm::RescoreMethod;
use crate::model::TransducerModel;
use crate::numerics::ParamStore;

pub const SPLITS: [&str; 3] = ["train", "dev", "test"];

pub struct Corpus {
    pub vocab: Vocabulary,
    pub train: Vec<Utterance>,
    pub dev: Vec<Utterance>,
    pub test: Vec<Utterance>,
}

/// Synthetic train/dev/test splits; each split draws from its own seed.
pub fn generate_corpus(s: &Settings) -> Result<Corpus> {
    let task = SyntheticTask::new(s.task.clone())?;
    let seed = s.task.seed;
    Ok(Corpus {
        vocab: Vocabulary::synthetic(s.task.vocab_size),
        train: task.generate(s.num_train, s.min_len, s.max_len, seed.wrapping_mul(3).wrapping_add(1), "train")?,
        dev: task.generate(s.num_dev, s.min_len, s.max_len, seed.wrapping_mul(3).wrapping_add(2), "dev")?,
        test: task.generate(s.num_test, s.min_len, s.max_len, seed.wrapping_mul(3).wrapping_add(3), "test")?,
    })
}

/// `DIR/vocab.txt` and `DIR/<split>/{labels.txt,feats/}`.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    corpus.vocab.write(dir.join("vocab.txt"))?;
    for (name, utts) in SPLITS.iter().zip([&corpus.train, &corpus.dev, &corpus.test]) {
        write_split(dir, name, &corpus.vocab, utts)?;
    }
    Ok(())
}

pub fn read_corpus_split(dir: &Path, split: &str) -> Result<(Vocabulary, Vec<Utterance>)> {
    let vocab = Vocabulary::read(dir.join("vocab.txt"))?;
    let utts = read_split(dir, split, &vocab)?;
    Ok((vocab, utts))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    Offline,
    Streaming(RightMode),
}

impl FromStr for DecodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "offline" => Ok(DecodeMode::Offline),
            other => other
                .parse()
                .map(DecodeMode::Streaming)
                .map_err(|_| usage_err!("decode mode must be offline|none|real|simulated, got {other:?}")),
        }
    }
}

impl fmt::Display for DecodeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecodeMode::Offline => f.write_str("offline"),
            DecodeMode::Streaming(m) => write!(f, "{m}"),
        }
    }
}

/// Second-pass n-best rescoring with an n-gram LM.
#[derive(Clone, Copy)]
pub struct Rescorer<'a> {
    pub lm: &'a NGramModel,
    pub vocab: &'a Vocabulary,
    pub method: RescoreMethod,
    pub weights: FusionWeights,
}

impl Rescorer<'_> {
    pub fn rescore(&self, hyps: Vec<Hypothesis>) -> Result<Vec<Hypothesis>> {
        let lm = |h: &Hypothesis| self.lm.score(&self.vocab.decode(&h.labels));
        match self.method {
            RescoreMethod::TwoPass => rescore_nbest(hyps, lm, self.weights.lambda1, self.weights.lambda2),
            RescoreMethod::Shallow => fuse_nbest(hyps, lm, &self.weights),
        }
    }
}

#[derive(Clone, Debug)]
pub struct UttResult {
    pub id: String,
    pub nbest: Vec<Hypothesis>,
    /// Streaming modes only.
    pub ledger: Option<LatencyLedger>,
    pub chunk_compute_ms: f64,
    pub chunks: usize,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub mode: DecodeMode,
    pub results: Vec<UttResult>,
    pub tally: CerTally,
}

impl EvalReport {
    pub fn cer(&self) -> Result<f64> {
        self.tally.rate()
    }

    /// `utt_id<TAB>tokens` of each 1-best, in input order.
    pub fn hypotheses_text(&self, vocab: &Vocabulary) -> String {
        self.results
            .iter()
            .map(|r| format!("{}\t{}\n", r.id, vocab.decode(&r.nbest[0].labels).join(" ")))
            .collect()
    }

    pub fn nbest_entries(&self) -> Vec<NBestEntry> {
        self.results
            .iter()
            .flat_map(|r| {
                r.nbest.iter().enumerate().map(|(i, h)| NBestEntry { utt_id: r.id.clone(), rank: i + 1, hypothesis: h.clone() })
            })
            .collect()
    }
}

/// Decodes every utterance in `mode`, rescoring when a [`Rescorer`] is given.
/// Streaming modes feed frames one chunk at a time with inference chunking
/// taken from `policy` (its `mode` is overridden by `mode`).
pub fn evaluate(
    model: &TransducerModel,
    store: &ParamStore<f32>,
    utts: &[Utterance],
    mode: DecodeMode,
    policy: &ChunkPolicy,
    opts: DecodeOptions,
    rescorer: Option<&Rescorer>,
) -> Result<EvalReport> {
    let mut results = Vec::with_capacity(utts.len());
    let mut tally = CerTally::default();
    for utt in utts {
        let (nbest, mut ledger, chunk_compute_ms, chunks) = match mode {
            DecodeMode::Offline => (decode_offline(model, store, utt.features.frames(), opts)?, None, 0.0, 0),
            DecodeMode::Streaming(m) => {
                let p = ChunkPolicy { jitter: 0, mode: m, ..*policy };
                let r = stream_decode(model, store, &utt.features, p, opts, p.chunk)?;
                (r.nbest, Some(r.ledger), r.chunk_compute_ms, r.chunks)
            }
        };
        let nbest = match rescorer {
            Some(rs) => {
                let started = Instant::now();
                let out = rs.rescore(nbest)?;
                if let Some(l) = ledger.as_mut() {
                    l.rescoring_ms = started.elapsed().as_secs_f64() * 1e3;
                }
                out
            }
            None => nbest,
        };
        tally.add(&utt.labels, &nbest[0].labels);
        results.push(UttResult { id: utt.id.clone(), nbest, ledger, chunk_compute_ms, chunks });
    }
    Ok(EvalReport { mode, results, tally })
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub eval: EvalReport,
    /// Per-utterance means of each ledger component.
    pub mean: LatencyLedger,
    /// Total SimuNet time over total chunk compute time.
    pub simulation_fraction: f64,
}

pub fn run_stream_benchmark(
    model: &TransducerModel,
    store: &ParamStore<f32>,
    utts: &[Utterance],
    policy: &ChunkPolicy,
    opts: DecodeOptions,
    rescorer: Option<&Rescorer>,
) -> Result<BenchReport> {
    if utts.is_empty() {
        return Err(usage_err!("benchmark needs at least one utterance"));
    }
    let eval = evaluate(model, store, utts, DecodeMode::Streaming(policy.mode), policy, opts, rescorer)?;
    let n = eval.results.len() as f64;
    let mut mean = LatencyLedger::default();
    let (mut sim_total, mut compute_total) = (0.0, 0.0);
    for r in &eval.results {
        let l = r.ledger.expect("streaming results carry a ledger");
        mean.chunk_wait_ms = l.chunk_wait_ms;
        mean.simulation_ms += l.simulation_ms / n;
        mean.rescoring_ms += l.rescoring_ms / n;
        sim_total += l.simulation_ms * r.chunks as f64;
        compute_total += r.chunk_compute_ms * r.chunks as f64;
    }
    let simulation_fraction = if compute_total > 0.0 { sim_total / compute_total } else { 0.0 };
    Ok(BenchReport { eval, mean, simulation_fraction })
}

pub fn machine_info() -> String {
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!("{} {} {} cpus", std::env::consts::OS, std::env::consts::ARCH, cpus)
}

impl BenchReport {
    /// Header with machine info, one ledger line per utterance, then the aggregate.
    pub fn to_text(&self) -> String {
        let mut out = format!("# machine: {}\n# mode: {}\n", machine_info(), self.eval.mode);
        for r in &self.eval.results {
            let l = r.ledger.expect("streaming results carry a ledger");
            writeln!(out, "{}\t{}", r.id, l).expect("string write");
        }
        writeln!(out, "mean\t{}", self.mean).expect("string write");
        writeln!(out, "simulation_fraction\t{:.4}", self.simulation_fraction).expect("string write");
        if let Ok(cer) = self.eval.cer() {
            writeln!(out, "cer\t{cer:.6}").expect("string write");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use crate::lm::{train_ngram, tokenize};

    fn small() -> (Settings, Corpus) {
        let mut c = Config::default();
        for kv in ["num_train=3", "num_dev=2", "num_test=4", "enc_dim=16", "enc_heads=2", "beam=4", "nbest=4"] {
            c.apply_override(kv).unwrap();
        }
        let s = c.resolve().unwrap();
        let corpus = generate_corpus(&s).unwrap();
        (s, corpus)
    }

    #[test]
    fn corpus_roundtrip() {
        let (_, corpus) = small();
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), &corpus).unwrap();
        let (vocab, test) = read_corpus_split(dir.path(), "test").unwrap();
        assert_eq!(vocab, corpus.vocab);
        assert_eq!(test, corpus.test);
        assert!(read_corpus_split(dir.path(), "missing").is_err());
    }

    #[test]
    fn mode_matrix_runs() {
        let (s, corpus) = small();
        let (model, store) = TransducerModel::new::<f32>(s.model.clone(), 1).unwrap();
        let text: String = corpus.train.iter().map(|u| corpus.vocab.decode(&u.labels).join(" ") + "\n").collect();
        let lm = train_ngram(&tokenize(&text), &s.lm).unwrap();
        let rs = Rescorer { lm: &lm, vocab: &corpus.vocab, method: RescoreMethod::TwoPass, weights: FusionWeights { lambda1: 1.0, lambda2: 0.0, ..Default::default() } };
        for mode in ["offline", "none", "real", "simulated"] {
            let mode: DecodeMode = mode.parse().unwrap();
            let plain = evaluate(&model, &store, &corpus.test, mode, &s.policy, s.decode, None).unwrap();
            let rescored = evaluate(&model, &store, &corpus.test, mode, &s.policy, s.decode, Some(&rs)).unwrap();
            assert_eq!(plain.hypotheses_text(&corpus.vocab), rescored.hypotheses_text(&corpus.vocab));
            assert!(plain.cer().unwrap() >= 0.0);
        }
        let bench = run_stream_benchmark(&model, &store, &corpus.test, &s.policy, s.decode, Some(&rs)).unwrap();
        assert_eq!(bench.mean.chunk_wait_ms, 160.0);
        for r in &bench.eval.results {
            let l = r.ledger.unwrap();
            assert!(l.is_valid());
            assert!(l.rescoring_ms > 0.0);
        }
        assert!(bench.to_text().contains("# machine:"));
    }
}
