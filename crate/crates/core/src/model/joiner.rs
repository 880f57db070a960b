use rand::Rng;

use crate::error::{shape_err, Result};
use crate::numerics::{Graph, Linear, ParamStore, Real, Tensor, Var};

/// `log_softmax(W_out · tanh(W_enc h_t + b + W_pred g_u) + b_out)` over V+1 symbols.
#[derive(Clone, Debug)]
pub struct Joiner {
    pub enc_proj: Linear,
    pub pred_proj: Linear,
    pub out: Linear,
    pub symbols: usize,
}

impl Joiner {
    pub fn new<S: Real, R: Rng>(
        store: &mut ParamStore<S>,
        name: &str,
        enc_dim: usize,
        pred_dim: usize,
        hidden: usize,
        vocab_size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Joiner {
            enc_proj: Linear::new(store, &format!("{name}.enc"), enc_dim, hidden, true, rng)?,
            pred_proj: Linear::new(store, &format!("{name}.pred"), pred_dim, hidden, false, rng)?,
            out: Linear::new(store, &format!("{name}.out"), hidden, vocab_size + 1, true, rng)?,
            symbols: vocab_size + 1,
        })
    }

    /// Full lattice: rows ordered t·(U+1) + u, columns the V+1 symbols.
    pub fn lattice<S: Real>(&self, g: &mut Graph<S>, enc: Var, pred: Var) -> Result<Var> {
        let ep = self.enc_proj.forward(g, enc)?;
        let pp = self.pred_proj.forward(g, pred)?;
        let z = g.outer_add(ep, pp)?;
        self.finish(g, z)
    }

    fn finish<S: Real>(&self, g: &mut Graph<S>, z: Var) -> Result<Var> {
        let z = g.tanh(z)?;
        let logits = self.out.forward(g, z)?;
        g.log_softmax(logits)
    }

    /// Encoder-side projections for every frame, [T' × J].
    pub fn project_encoder(&self, store: &ParamStore<f32>, enc: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = Graph::new(store);
        let x = g.input(enc.clone())?;
        let y = self.enc_proj.forward(&mut g, x)?;
        Ok(g.tensor(y))
    }

    /// Predictor-side projection of one predictor output, length J.
    pub fn project_predictor(&self, store: &ParamStore<f32>, pred: &[f32]) -> Result<Vec<f32>> {
        let mut g = Graph::new(store);
        let x = g.input(Tensor::matrix(1, pred.len(), pred.to_vec())?)?;
        let y = self.pred_proj.forward(&mut g, x)?;
        Ok(g.value(y).to_vec())
    }

    /// Log-distributions for one encoder projection row against several
    /// predictor projections. Row results do not depend on batch composition.
    pub fn log_probs(&self, store: &ParamStore<f32>, enc_row: &[f32], preds: &[&[f32]]) -> Result<Vec<Vec<f32>>> {
        let j = enc_row.len();
        if preds.is_empty() {
            return Ok(Vec::new());
        }
        if preds.iter().any(|p| p.len() != j) {
            return Err(shape_err!("joiner projections differ in width"));
        }
        let mut g = Graph::new(store);
        let e = g.input(Tensor::matrix(1, j, enc_row.to_vec())?)?;
        let p = g.input(Tensor::matrix(preds.len(), j, preds.concat())?)?;
        let z = g.outer_add(e, p)?;
        let out = self.finish(&mut g, z)?;
        Ok(g.value(out).chunks(self.symbols).map(<[f32]>::to_vec).collect())
    }

    /// Single (h_t, g_u) pair from raw encoder and predictor outputs.
    pub fn join(&self, store: &ParamStore<f32>, h: &[f32], pred: &[f32]) -> Result<Vec<f32>> {
        let ep = self.project_encoder(store, &Tensor::matrix(1, h.len(), h.to_vec())?)?;
        let pp = self.project_predictor(store, pred)?;
        Ok(self.log_probs(store, ep.data(), &[&pp])?.remove(0))
    }
}
