//! Shared text configuration: UTF-8 `key = value` lines, `#` comments,
//! later assignments win. Resolved into the typed settings of each module.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::chunking::{ChunkPolicy, RightMode, RightModeMix};
use crate::data::{ms_to_frames, SyntheticTaskSpec};
use crate::decoder::DecodeOptions;
use crate::error::{format_err, usage_err, Result};
use crate::lm::{FusionWeights, NGramOptions, RescoreMethod};
use crate::model::ModelConfig;
use crate::trainer::TrainConfig;

/// Every recognized key with its default value.
pub const DEFAULTS: &[(&str, &str)] = &[
    // synthetic corpus
    ("vocab_size", "8"),
    ("frames_per_label", "8"),
    ("feat_dim", "16"),
    ("noise", "0.05"),
    ("data_seed", "1"),
    ("num_train", "4000"),
    ("num_dev", "100"),
    ("num_test", "500"),
    ("min_len", "2"),
    ("max_len", "8"),
    // chunking
    ("chunk_ms", "160"),
    ("jitter_ms", "40"),
    ("left_ctx_ms", "160"),
    ("right_ctx_ms", "80"),
    ("right_mode", "simulated"),
    ("mix_simulated", "0.5"),
    ("mix_real", "0.25"),
    ("mix_none", "0.25"),
    // model
    ("enc_layers", "2"),
    ("enc_dim", "64"),
    ("enc_heads", "4"),
    ("enc_ffn", "128"),
    ("subsample", "2"),
    ("pred_hidden", "64"),
    ("join_hidden", "64"),
    ("simu_layers", "1"),
    ("simu_hidden", "32"),
    ("model_seed", "1"),
    // training
    ("simu_loss_weight", "1.0"),
    ("lr", "0.003"),
    ("warmup", "500"),
    ("total_steps", "5000"),
    ("batch_size", "8"),
    ("grad_clip", "5.0"),
    ("grad_accum", "1"),
    ("seed", "1"),
    ("average", "10"),
    ("eval_every", "250"),
    // decoding and language model
    ("beam", "16"),
    ("nbest", "16"),
    ("rescore", "two_pass"),
    ("lm_order", "2"),
    ("lm_addk", "1.0"),
    ("lm_weight", "0.3"),
    ("length_reward", "0.6"),
    ("lambda1", "1.0"),
    ("lambda2", "0.3"),
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format_err!("config line {}: expected \"key = value\"", i + 1))?;
            cfg.set(k.trim(), v.trim()).map_err(|e| format_err!("config line {}: {e}", i + 1))?;
        }
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !DEFAULTS.iter().any(|(k, _)| *k == key) {
            return Err(usage_err!("unknown config key {key:?}"));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Copies every key explicitly set in `other`; `other` wins.
    pub fn merge(&mut self, other: &Config) {
        for (k, v) in &other.values {
            self.values.insert(k.clone(), v.clone());
        }
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| usage_err!("override {assignment:?} is not key=value"))?;
        self.set(k.trim(), v.trim())
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .or_else(|| DEFAULTS.iter().find(|(k, _)| *k == key).map(|(_, v)| *v))
            .unwrap_or_else(|| panic!("{key} is not a known config key"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.raw(key);
        raw.parse().map_err(|_| usage_err!("config {key} = {raw:?} is not a valid value"))
    }

    /// Every key with its effective value, in `key = value` form.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, _) in DEFAULTS {
            writeln!(out, "{k} = {}", self.raw(k)).expect("string write");
        }
        out
    }

    pub fn resolve(&self) -> Result<Settings> {
        let task = SyntheticTaskSpec {
            vocab_size: self.get("vocab_size")?,
            frames_per_label: self.get("frames_per_label")?,
            feat_dim: self.get("feat_dim")?,
            noise: self.get("noise")?,
            seed: self.get("data_seed")?,
        };
        let mode: RightMode = self.get("right_mode")?;
        let policy = ChunkPolicy::from_ms(
            self.get("chunk_ms")?,
            self.get("jitter_ms")?,
            self.get("left_ctx_ms")?,
            self.get("right_ctx_ms")?,
            mode,
        )?;
        let simu_frames = ms_to_frames(self.get("right_ctx_ms")?).max(1);
        let model = ModelConfig {
            feat_dim: task.feat_dim,
            vocab_size: task.vocab_size,
            enc_layers: self.get("enc_layers")?,
            enc_dim: self.get("enc_dim")?,
            enc_heads: self.get("enc_heads")?,
            enc_ffn: self.get("enc_ffn")?,
            subsample: self.get("subsample")?,
            pred_hidden: self.get("pred_hidden")?,
            join_hidden: self.get("join_hidden")?,
            simu_layers: self.get("simu_layers")?,
            simu_hidden: self.get("simu_hidden")?,
            simu_frames,
        };
        model.validate()?;
        let train = TrainConfig {
            alpha: self.get("simu_loss_weight")?,
            peak_lr: self.get("lr")?,
            warmup: self.get("warmup")?,
            total_steps: self.get("total_steps")?,
            batch_size: self.get("batch_size")?,
            clip: self.get("grad_clip")?,
            accum: self.get("grad_accum")?,
            seed: self.get("seed")?,
            average: self.get("average")?,
            eval_every: self.get("eval_every")?,
            // the per-utterance mode comes from the mix, not from right_mode
            policy: ChunkPolicy { mode: RightMode::None, ..policy },
            mode_mix: RightModeMix {
                simulated: self.get("mix_simulated")?,
                real: self.get("mix_real")?,
                none: self.get("mix_none")?,
            },
        };
        let decode = DecodeOptions { beam: self.get("beam")?, nbest: self.get("nbest")? };
        decode.validate()?;
        let fusion = FusionWeights {
            lambda: self.get("lm_weight")?,
            beta: self.get("length_reward")?,
            lambda1: self.get("lambda1")?,
            lambda2: self.get("lambda2")?,
        };
        if [fusion.lambda, fusion.beta, fusion.lambda1, fusion.lambda2].iter().any(|w| !w.is_finite()) {
            return Err(usage_err!("fusion weights must be finite"));
        }
        let lm = NGramOptions { order: self.get("lm_order")?, addk: self.get("lm_addk")?, ..Default::default() };
        Ok(Settings {
            task,
            num_train: self.get("num_train")?,
            num_dev: self.get("num_dev")?,
            num_test: self.get("num_test")?,
            min_len: self.get("min_len")?,
            max_len: self.get("max_len")?,
            model_seed: self.get("model_seed")?,
            // inference uses the nominal chunk size, no jitter
            policy: ChunkPolicy { jitter: 0, ..policy },
            model,
            train,
            decode,
            rescore: self.get("rescore")?,
            fusion,
            lm,
        })
    }
}

/// Typed view of a [`Config`].
#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub task: SyntheticTaskSpec,
    pub num_train: usize,
    pub num_dev: usize,
    pub num_test: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub model_seed: u64,
    /// Inference chunking.
    pub policy: ChunkPolicy,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeOptions,
    /// Applied when an LM is supplied.
    pub rescore: RescoreMethod,
    pub fusion: FusionWeights,
    pub lm: NGramOptions,
}
