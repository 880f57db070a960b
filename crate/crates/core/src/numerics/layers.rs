//! Neural layers recorded on a [`Graph`]. Each layer holds only parameter
//! handles; values live in the [`ParamStore`].

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::{Real, Tensor};
use crate::error::{shape_err, Result};

/// Uniform Glorot initialisation.
pub fn glorot<S: Real, R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Result<Tensor<S>> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| S::of(rng.random_range(-a..a))).collect();
    Tensor::matrix(fan_in, fan_out, data)
}

fn filled<S: Real>(n: usize, v: f64) -> Result<Tensor<S>> {
    Tensor::new(vec![n], vec![S::of(v); n])
}

/// `y = x W + b`, with `W` stored as [in × out].
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Linear {
    pub fn new<S: Real, R: Rng>(
        store: &mut ParamStore<S>,
        name: &str,
        input_dim: usize,
        output_dim: usize,
        with_bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.add(&format!("{name}.weight"), glorot(rng, input_dim, output_dim)?)?;
        let bias = if with_bias {
            Some(store.add(&format!("{name}.bias"), filled(output_dim, 0.0)?)?)
        } else {
            None
        };
        Ok(Linear { weight, bias, input_dim, output_dim })
    }

    pub fn forward<S: Real>(&self, g: &mut Graph<S>, x: Var) -> Result<Var> {
        let w = g.param(self.weight)?;
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(b)?;
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<S: Real>(store: &mut ParamStore<S>, name: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gain: store.add(&format!("{name}.gain"), filled(dim, 1.0)?)?,
            bias: store.add(&format!("{name}.bias"), filled(dim, 0.0)?)?,
        })
    }

    pub fn forward<S: Real>(&self, g: &mut Graph<S>, x: Var) -> Result<Var> {
        let gain = g.param(self.gain)?;
        let bias = g.param(self.bias)?;
        g.layer_norm(x, gain, bias)
    }
}

/// Gated recurrent cell with update, reset and candidate gates:
///
/// ```text
/// r  = σ(x Wxr + bxr + h Whr + bhr)
/// z  = σ(x Wxz + bxz + h Whz + bhz)
/// n  = tanh(x Wxn + bxn + r ⊙ (h Whn + bhn))
/// h' = (1 - z) ⊙ n + z ⊙ h
/// ```
#[derive(Clone, Debug)]
pub struct GruCell {
    pub input: Linear,
    pub hidden: Linear,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl GruCell {
    pub fn new<S: Real, R: Rng>(
        store: &mut ParamStore<S>,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(GruCell {
            input: Linear::new(store, &format!("{name}.ih"), input_dim, 3 * hidden_dim, true, rng)?,
            hidden: Linear::new(store, &format!("{name}.hh"), hidden_dim, 3 * hidden_dim, true, rng)?,
            input_dim,
            hidden_dim,
        })
    }

    /// Input projections for a whole sequence, [T × 3H]; rows feed [`Self::step_projected`].
    pub fn project_inputs<S: Real>(&self, g: &mut Graph<S>, xs: Var) -> Result<Var> {
        let (_, d) = g.shape2(xs)?;
        if d != self.input_dim {
            return Err(shape_err!("gru input width {d} != {}", self.input_dim));
        }
        self.input.forward(g, xs)
    }

    /// One step from a precomputed input projection row [1 × 3H] and state [1 × H].
    pub fn step_projected<S: Real>(&self, g: &mut Graph<S>, xproj: Var, h: Var) -> Result<Var> {
        let hd = self.hidden_dim;
        if g.shape2(h)? != (1, hd) {
            return Err(shape_err!("gru state {:?} != [1, {hd}]", g.dims(h)));
        }
        let hproj = self.hidden.forward(g, h)?;
        let xr = g.slice_cols(xproj, 0, hd)?;
        let xz = g.slice_cols(xproj, hd, 2 * hd)?;
        let xn = g.slice_cols(xproj, 2 * hd, 3 * hd)?;
        let hr = g.slice_cols(hproj, 0, hd)?;
        let hz = g.slice_cols(hproj, hd, 2 * hd)?;
        let hn = g.slice_cols(hproj, 2 * hd, 3 * hd)?;
        let r = g.add(xr, hr)?;
        let r = g.sigmoid(r)?;
        let z = g.add(xz, hz)?;
        let z = g.sigmoid(z)?;
        let rn = g.mul(r, hn)?;
        let n = g.add(xn, rn)?;
        let n = g.tanh(n)?;
        let keep = g.affine(z, -S::one(), S::one())?;
        let a = g.mul(keep, n)?;
        let b = g.mul(z, h)?;
        g.add(a, b)
    }

    pub fn step<S: Real>(&self, g: &mut Graph<S>, x: Var, h: Var) -> Result<Var> {
        let xp = self.project_inputs(g, x)?;
        self.step_projected(g, xp, h)
    }
}

/// Multi-head scaled dot-product self-attention over the rows of its input.
#[derive(Clone, Debug)]
pub struct SelfAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl SelfAttention {
    pub fn new<S: Real, R: Rng>(
        store: &mut ParamStore<S>,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(shape_err!("model dim {dim} not divisible by {heads} heads"));
        }
        Ok(SelfAttention {
            query: Linear::new(store, &format!("{name}.q"), dim, dim, true, rng)?,
            // a key bias only shifts each query's scores uniformly, so it is omitted
            key: Linear::new(store, &format!("{name}.k"), dim, dim, false, rng)?,
            value: Linear::new(store, &format!("{name}.v"), dim, dim, true, rng)?,
            output: Linear::new(store, &format!("{name}.o"), dim, dim, true, rng)?,
            heads,
            dim,
        })
    }

    pub fn forward<S: Real>(&self, g: &mut Graph<S>, x: Var) -> Result<Var> {
        let q = self.query.forward(g, x)?;
        let k = self.key.forward(g, x)?;
        let v = self.value.forward(g, x)?;
        let dh = self.dim / self.heads;
        let scale = S::of(1.0 / (dh as f64).sqrt());
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dh, (h + 1) * dh)?;
            let kh = g.slice_cols(k, h * dh, (h + 1) * dh)?;
            let vh = g.slice_cols(v, h * dh, (h + 1) * dh)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale)?;
            let attn = g.softmax(scores)?;
            outs.push(g.matmul(attn, vh)?);
        }
        let cat = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs)? };
        self.output.forward(g, cat)
    }
}

/// Position-wise feed-forward: Linear → SiLU → Linear.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<S: Real, R: Rng>(
        store: &mut ParamStore<S>,
        name: &str,
        dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(FeedForward {
            up: Linear::new(store, &format!("{name}.up"), dim, hidden, true, rng)?,
            down: Linear::new(store, &format!("{name}.down"), hidden, dim, true, rng)?,
        })
    }

    pub fn forward<S: Real>(&self, g: &mut Graph<S>, x: Var) -> Result<Var> {
        let h = self.up.forward(g, x)?;
        let h = g.silu(h)?;
        self.down.forward(g, h)
    }
}

/// Pre-norm residual block: `x + Attn(LN(x))`, then `x + FFN(LN(x))`.
#[derive(Clone, Debug)]
pub struct AttentionBlock {
    pub attn_norm: LayerNorm,
    pub attn: SelfAttention,
    pub ffn_norm: LayerNorm,
    pub ffn: FeedForward,
}

impl AttentionBlock {
    pub fn new<S: Real, R: Rng>(
        store: &mut ParamStore<S>,
        name: &str,
        dim: usize,
        heads: usize,
        ffn_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(AttentionBlock {
            attn_norm: LayerNorm::new(store, &format!("{name}.attn_norm"), dim)?,
            attn: SelfAttention::new(store, &format!("{name}.attn"), dim, heads, rng)?,
            ffn_norm: LayerNorm::new(store, &format!("{name}.ffn_norm"), dim)?,
            ffn: FeedForward::new(store, &format!("{name}.ffn"), dim, ffn_dim, rng)?,
        })
    }

    pub fn forward<S: Real>(&self, g: &mut Graph<S>, x: Var) -> Result<Var> {
        let h = self.attn_norm.forward(g, x)?;
        let h = self.attn.forward(g, h)?;
        let x = g.add(x, h)?;
        let h = self.ffn_norm.forward(g, x)?;
        let h = self.ffn.forward(g, h)?;
        g.add(x, h)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn linear_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::<f32>::new();
        let lin = Linear::new(&mut store, "l", 2, 3, true, &mut rng).unwrap();
        store
            .value_mut(lin.bias.unwrap())
            .data_mut()
            .copy_from_slice(&[0.5, -0.25, 1.0]);
        let x = Tensor::matrix(2, 2, vec![0.3, -1.2, 2.0, 0.7]).unwrap();
        let mut g = Graph::new(&store);
        let xv = g.input(x.clone()).unwrap();
        let y = lin.forward(&mut g, xv).unwrap();
        let w = store.value(lin.weight).data();
        let b = store.value(lin.bias.unwrap()).data();
        for i in 0..2 {
            for j in 0..3 {
                let mut acc = b[j] as f64;
                for k in 0..2 {
                    acc += x.data()[i * 2 + k] as f64 * w[k * 3 + j] as f64;
                }
                assert!((g.value(y)[i * 3 + j] as f64 - acc).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_weight_linear_gives_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f32>::new();
        let lin = Linear::new(&mut store, "l", 4, 1, true, &mut rng).unwrap();
        store.value_mut(lin.weight).data_mut().fill(0.0);
        store.value_mut(lin.bias.unwrap()).data_mut().fill(3.0);
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::matrix(1, 4, vec![1.0, -2.0, 5.0, 0.1]).unwrap()).unwrap();
        let y = lin.forward(&mut g, x).unwrap();
        assert_eq!(g.value(y), &[3.0]);
    }

    #[test]
    fn gru_is_pure_and_shaped() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::<f32>::new();
        let cell = GruCell::new(&mut store, "gru", 3, 5, &mut rng).unwrap();
        let run = || {
            let mut g = Graph::new(&store);
            let x = g.input(Tensor::matrix(1, 3, vec![0.1, 0.2, -0.3]).unwrap()).unwrap();
            let h = g.input(Tensor::matrix(1, 5, vec![0.5, 0.0, -0.5, 0.2, 0.1]).unwrap()).unwrap();
            let out = cell.step(&mut g, x, h).unwrap();
            g.tensor(out)
        };
        let a = run();
        assert_eq!(a.dims(), &[1, 5]);
        assert_eq!(a, run());
    }
}
