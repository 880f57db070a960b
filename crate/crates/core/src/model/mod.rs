//! Transducer networks (encoder, predictor, joiner) and the SimuNet that
//! shares their parameter store.

pub mod encoder;
pub mod joiner;
pub mod predictor;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use encoder::{subsampled_len, Encoder};
pub use joiner::Joiner;
pub use predictor::{Predictor, PredictorInput, PredictorState};

use crate::chunking::SplicedChunk;
use crate::error::{format_err, usage_err, Result};
use crate::numerics::{ParamStore, Real, Tensor};
use crate::simunet::SimuNet;

/// Architecture hyperparameters. Defaults are the desk-scale configuration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub feat_dim: usize,
    pub vocab_size: usize,
    pub enc_layers: usize,
    pub enc_dim: usize,
    pub enc_heads: usize,
    pub enc_ffn: usize,
    pub subsample: usize,
    pub pred_hidden: usize,
    pub join_hidden: usize,
    pub simu_layers: usize,
    pub simu_hidden: usize,
    /// N_r: simulated right-context frames per chunk.
    pub simu_frames: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feat_dim: 16,
            vocab_size: 8,
            enc_layers: 2,
            enc_dim: 64,
            enc_heads: 4,
            enc_ffn: 128,
            subsample: 2,
            pred_hidden: 64,
            join_hidden: 64,
            simu_layers: 1,
            simu_hidden: 32,
            simu_frames: 8,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("feat_dim", self.feat_dim),
            ("vocab_size", self.vocab_size),
            ("enc_dim", self.enc_dim),
            ("enc_heads", self.enc_heads),
            ("enc_ffn", self.enc_ffn),
            ("pred_hidden", self.pred_hidden),
            ("join_hidden", self.join_hidden),
            ("simu_layers", self.simu_layers),
            ("simu_hidden", self.simu_hidden),
            ("simu_frames", self.simu_frames),
        ];
        if let Some((k, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(usage_err!("{k} must be positive"));
        }
        if !self.enc_dim.is_multiple_of(self.enc_heads) {
            return Err(usage_err!("enc_dim {} not divisible by enc_heads {}", self.enc_dim, self.enc_heads));
        }
        if ![1, 2, 4].contains(&self.subsample) {
            return Err(usage_err!("subsample must be 1, 2 or 4"));
        }
        Ok(())
    }
}

/// Network structure; parameter values live in a separate [`ParamStore`].
#[derive(Clone, Debug)]
pub struct TransducerModel {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub predictor: Predictor,
    pub joiner: Joiner,
    pub simunet: SimuNet,
}

impl TransducerModel {
    /// Registers every parameter in a fresh store, initialized from `seed`.
    pub fn new<S: Real>(config: ModelConfig, seed: u64) -> Result<(Self, ParamStore<S>)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = &config;
        let encoder = Encoder::new(
            &mut store, "encoder", c.feat_dim, c.enc_dim, c.enc_layers, c.enc_heads, c.enc_ffn, c.subsample, &mut rng,
        )?;
        let predictor = Predictor::new(&mut store, "predictor", c.vocab_size, c.pred_hidden, &mut rng)?;
        let joiner = Joiner::new(&mut store, "joiner", c.enc_dim, c.pred_hidden, c.join_hidden, c.vocab_size, &mut rng)?;
        let simunet = SimuNet::new(&mut store, "simunet", c.feat_dim, c.simu_hidden, c.simu_layers, c.simu_frames, &mut rng)?;
        Ok((TransducerModel { config, encoder, predictor, joiner, simunet }, store))
    }

    /// Rebuilds the structure for `config` and checks `store` matches it.
    pub fn for_store<S: Real>(config: ModelConfig, store: &ParamStore<S>) -> Result<Self> {
        let (model, reference) = Self::new::<S>(config, 0)?;
        reference
            .check_compatible(store)
            .map_err(|e| format_err!("checkpoint does not match model config: {e}"))?;
        Ok(model)
    }

    pub fn symbols(&self) -> usize {
        self.config.vocab_size + 1
    }

    /// Fraction of all parameters that belong to SimuNet.
    pub fn simunet_share<S: Real>(store: &ParamStore<S>) -> f64 {
        store.num_params_with_prefix("simunet.") as f64 / store.num_params() as f64
    }

    pub fn encode_chunk(&self, store: &ParamStore<f32>, chunk: &SplicedChunk) -> Result<Tensor<f32>> {
        self.encoder.encode_chunk(store, chunk)
    }

    pub fn encode_full(&self, store: &ParamStore<f32>, features: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.encoder.encode_full(store, features)
    }

    pub fn predict(&self, store: &ParamStore<f32>, state: &PredictorState, input: PredictorInput) -> Result<(Vec<f32>, PredictorState)> {
        self.predictor.predict(store, state, input)
    }

    pub fn join(&self, store: &ParamStore<f32>, h: &[f32], g: &[f32]) -> Result<Vec<f32>> {
        self.joiner.join(store, h, g)
    }
}
