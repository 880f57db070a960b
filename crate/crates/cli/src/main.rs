use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use simctx::config::{Config, Settings};
use simctx::data::{edit_distance, Vocabulary};
use simctx::decoder::{group_by_utterance, read_nbest, write_nbest, NBestEntry};
use simctx::harness::{evaluate, generate_corpus, read_corpus_split, run_stream_benchmark, write_corpus, DecodeMode, Rescorer};
use simctx::lm::{tokenize, train_ngram, FusionWeights, NGramModel, NGramOptions};
use simctx::model::TransducerModel;
use simctx::numerics::{checkpoint, grad_check, Tensor};
use simctx::trainer::{mot_loss_graph, train, StreamPlan, Trainer};

#[derive(Parser)]
#[command(name = "simctx", version, about = "Streaming transducer toolkit with simulated future context")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Text config of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Config override `key=value`; may repeat, later wins.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic train/dev/test corpus.
    GenSynth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Multi-objective training; writes model.ckpt, last.ckpt, model.conf and metrics.txt.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode a split and report CER.
    Decode {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// offline | none | real | simulated
        #[arg(long, default_value = "simulated")]
        mode: String,
        /// 1-best hypotheses, `utt_id<TAB>tokens`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        nbest_out: Option<PathBuf>,
        /// LM for second-pass rescoring.
        #[arg(long)]
        lm: Option<PathBuf>,
    },
    /// Re-rank an n-best file with an n-gram LM.
    Rescore {
        #[arg(long)]
        nbest: PathBuf,
        #[arg(long)]
        lm: PathBuf,
        #[arg(long)]
        lambda1: Option<f64>,
        #[arg(long)]
        lambda2: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate an add-k n-gram LM from text (one sentence per line; a
    /// leading `id<TAB>` is ignored).
    LmTrain {
        #[arg(long)]
        text: PathBuf,
        #[arg(long, default_value_t = 2)]
        order: usize,
        #[arg(long, default_value_t = 1.0)]
        addk: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Streaming decode with the latency ledger per utterance.
    StreamBench {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        lm: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// CER of a hypothesis file against a reference file.
    ScoreCer {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
    },
    /// Finite-difference check of the full training loss in double precision.
    GradCheck {
        #[arg(long, default_value_t = 50)]
        samples: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.chain().find_map(|c| c.downcast_ref::<simctx::Error>()).map_or(1, simctx::Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}

/// Defaults, then `model_dir/model.conf`, then `--config`, then `--set`.
fn settings(common: &Common, model_dir: Option<&Path>) -> Result<(Config, Settings)> {
    let mut cfg = Config::default();
    let mut layers = Vec::new();
    if let Some(dir) = model_dir {
        let conf = dir.join("model.conf");
        if conf.exists() {
            layers.push(conf);
        }
    }
    layers.extend(common.config.clone());
    for path in layers {
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        cfg.merge(&Config::parse(&text).with_context(|| format!("parsing {}", path.display()))?);
    }
    for kv in &common.overrides {
        cfg.apply_override(kv)?;
    }
    let s = cfg.resolve()?;
    Ok((cfg, s))
}

fn load_model(dir: &Path, s: &Settings) -> Result<(TransducerModel, simctx::numerics::ParamStore<f32>)> {
    let path = dir.join("model.ckpt");
    let store = checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
    let model = TransducerModel::for_store(s.model.clone(), &store)?;
    Ok((model, store))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    match &cli.command {
        Command::GenSynth { out } => {
            let (_, s) = settings(common, None)?;
            let corpus = generate_corpus(&s)?;
            write_corpus(out, &corpus)?;
            println!("wrote {} train, {} dev, {} test utterances to {}", corpus.train.len(), corpus.dev.len(), corpus.test.len(), out.display());
        }
        Command::Train { data, out } => {
            let (cfg, s) = settings(common, None)?;
            let (_, train_set) = read_corpus_split(data, "train")?;
            let (_, dev) = read_corpus_split(data, "dev")?;
            let (model, store) = TransducerModel::new::<f32>(s.model.clone(), s.model_seed)?;
            fs::create_dir_all(out)?;
            write_file(&out.join("model.conf"), &cfg.to_text())?;
            let mut metrics = fs::File::create(out.join("metrics.txt"))?;
            let mut trainer = Trainer::new(model, store, s.train.clone())?;
            let mut io_err = None;
            let (averaged, report) = train(&mut trainer, &train_set, &dev, |m| {
                println!("{m}");
                if let Err(e) = writeln!(metrics, "{m}") {
                    io_err.get_or_insert(e);
                }
            })?;
            if let Some(e) = io_err {
                return Err(e).context("writing metrics");
            }
            checkpoint::save(&trainer.store, out.join("last.ckpt"))?;
            checkpoint::save(&averaged, out.join("model.ckpt"))?;
            eprintln!("averaged snapshots from steps {:?}", report.averaged);
        }
        Command::Decode { data, model, split, mode, out, nbest_out, lm } => {
            let (_, s) = settings(common, Some(model))?;
            let mode: DecodeMode = mode.parse()?;
            let (vocab, utts) = read_corpus_split(data, split)?;
            let (m, store) = load_model(model, &s)?;
            let lm = lm.as_ref().map(NGramModel::read).transpose()?;
            let rescorer = lm.as_ref().map(|lm| Rescorer { lm, vocab: &vocab, method: s.rescore, weights: s.fusion });
            let report = evaluate(&m, &store, &utts, mode, &s.policy, s.decode, rescorer.as_ref())?;
            write_file(out, &report.hypotheses_text(&vocab))?;
            if let Some(path) = nbest_out {
                write_file(path, &write_nbest(&vocab, &report.nbest_entries()))?;
            }
            println!("cer\t{:.6}", report.cer()?);
        }
        Command::Rescore { nbest, lm, lambda1, lambda2, out } => {
            let (_, s) = settings(common, None)?;
            let text = fs::read_to_string(nbest).with_context(|| format!("reading {}", nbest.display()))?;
            let tokens: BTreeSet<&str> = text.lines().filter_map(|l| l.split('\t').nth(3)).flat_map(str::split_whitespace).collect();
            let vocab = Vocabulary::new(tokens)?;
            let lm = NGramModel::read(lm)?;
            let rescorer = Rescorer {
                lm: &lm,
                vocab: &vocab,
                method: s.rescore,
                weights: FusionWeights {
                    lambda1: lambda1.unwrap_or(s.fusion.lambda1),
                    lambda2: lambda2.unwrap_or(s.fusion.lambda2),
                    ..s.fusion
                },
            };
            let mut entries = Vec::new();
            for (utt_id, group) in group_by_utterance(read_nbest(&vocab, &text)?) {
                let hyps = group.into_iter().map(|e| e.hypothesis).collect();
                for (i, h) in rescorer.rescore(hyps)?.into_iter().enumerate() {
                    entries.push(NBestEntry { utt_id: utt_id.clone(), rank: i + 1, hypothesis: h });
                }
            }
            write_file(out, &write_nbest(&vocab, &entries))?;
        }
        Command::LmTrain { text, order, addk, out } => {
            let raw = fs::read_to_string(text).with_context(|| format!("reading {}", text.display()))?;
            let body: String = raw.lines().map(|l| l.split_once('\t').map_or(l, |(_, t)| t).to_string() + "\n").collect();
            let lm = train_ngram(&tokenize(&body), &NGramOptions { order: *order, addk: *addk, ..Default::default() })?;
            lm.write(out)?;
            println!("{} contexts, vocabulary {}", lm.contexts().count(), lm.vocab().len());
        }
        Command::StreamBench { data, model, split, lm, out } => {
            let (_, s) = settings(common, Some(model))?;
            let (vocab, utts) = read_corpus_split(data, split)?;
            let (m, store) = load_model(model, &s)?;
            let lm = lm.as_ref().map(NGramModel::read).transpose()?;
            let rescorer = lm.as_ref().map(|lm| Rescorer { lm, vocab: &vocab, method: s.rescore, weights: s.fusion });
            let report = run_stream_benchmark(&m, &store, &utts, &s.policy, s.decode, rescorer.as_ref())?;
            match out {
                Some(path) => write_file(path, &report.to_text())?,
                None => print!("{}", report.to_text()),
            }
            eprintln!("mean latency {}", report.mean);
        }
        Command::ScoreCer { reference, hyp } => {
            let read = |p: &Path| -> Result<Vec<(String, Vec<String>)>> {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                Ok(text
                    .lines()
                    .filter(|l| !l.trim().is_empty())
                    .map(|l| {
                        let (id, toks) = l.split_once('\t').unwrap_or((l.trim(), ""));
                        (id.to_string(), toks.split_whitespace().map(str::to_string).collect())
                    })
                    .collect())
            };
            let refs = read(reference)?;
            let hyps: std::collections::HashMap<_, _> = read(hyp)?.into_iter().collect();
            let (mut edits, mut total) = (0usize, 0usize);
            for (id, r) in &refs {
                let h = hyps.get(id).ok_or_else(|| simctx::Error::Format(format!("no hypothesis for {id}")))?;
                edits += edit_distance(r, h);
                total += r.len();
            }
            if total == 0 {
                bail!(simctx::Error::Usage("reference has no tokens".into()));
            }
            println!("cer\t{:.6}\t{edits}/{total}", edits as f64 / total as f64);
        }
        Command::GradCheck { samples, tolerance } => {
            let (_, s) = settings(common, None)?;
            let (model, store) = TransducerModel::new::<f64>(s.model.clone(), s.model_seed)?;
            // three encoder frames and two labels
            let frames = 3 * s.model.subsample;
            let d = s.model.feat_dim;
            let feats = Tensor::matrix(frames, d, (0..frames * d).map(|i| (i as f64 * 0.37).sin()).collect())?;
            let targets = [1u32, s.model.vocab_size as u32];
            let plan = StreamPlan { chunk_size: s.model.subsample, mode: simctx::chunking::RightMode::Simulated };
            let policy = s.train.policy;
            let report = grad_check(
                &store,
                |g| Ok(mot_loss_graph(g, &model, &feats, &targets, &policy, plan, s.train.alpha)?.total),
                1e-3,
                *samples,
                s.train.seed,
            )?;
            println!("max_rel_error\t{:.3e}\ncoords\t{}\nworst\t{:?}", report.max_rel_error, report.coords_checked, report.worst);
            if !report.passed(*tolerance) {
                bail!(simctx::Error::Numeric(format!("gradient check failed: {:.3e} ≥ {tolerance:.1e}", report.max_rel_error)));
            }
        }
    }
    Ok(())
}
