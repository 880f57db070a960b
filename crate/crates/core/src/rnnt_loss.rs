//! Transducer negative log-likelihood over the alignment lattice.
//!
//! The lattice holds `log P(k | t, u)` for every encoder frame `t < T'`,
//! label position `u ≤ U` and symbol `k ≤ V` (0 = blank). A path starts at
//! (0, 0); blank moves (t, u) → (t+1, u), emitting `y_{u+1}` moves
//! (t, u) → (t, u+1) without consuming the frame. Every path ends with the
//! blank that leaves the last frame, so alignments hold exactly T' blanks
//! and U labels.

use crate::error::{shape_err, usage_err, Error, Result};
use crate::numerics::{log_add, Graph, Real, Var};

/// Log-probabilities laid out as [T'][U+1][V+1].
#[derive(Clone, Debug, PartialEq)]
pub struct JointLattice<S = f32> {
    frames: usize,
    label_states: usize,
    symbols: usize,
    logp: Vec<S>,
}

impl<S: Real> JointLattice<S> {
    pub fn new(frames: usize, label_states: usize, symbols: usize, logp: Vec<S>) -> Result<Self> {
        if frames == 0 || label_states == 0 || symbols < 2 {
            return Err(shape_err!("lattice dims T'={frames}, U+1={label_states}, V+1={symbols}"));
        }
        if logp.len() != frames * label_states * symbols {
            return Err(shape_err!("lattice needs {} values, got {}", frames * label_states * symbols, logp.len()));
        }
        if logp.iter().any(|v| v.is_nan() || *v == S::infinity()) {
            return Err(Error::Numeric("lattice contains NaN or +inf".into()));
        }
        Ok(JointLattice { frames, label_states, symbols, logp })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn label_states(&self) -> usize {
        self.label_states
    }

    pub fn symbols(&self) -> usize {
        self.symbols
    }

    pub fn values(&self) -> &[S] {
        &self.logp
    }

    #[inline]
    fn idx(&self, t: usize, u: usize, k: usize) -> usize {
        (t * self.label_states + u) * self.symbols + k
    }

    #[inline]
    pub fn get(&self, t: usize, u: usize, k: usize) -> S {
        self.logp[self.idx(t, u, k)]
    }

    fn check_targets(&self, targets: &[u32]) -> Result<()> {
        if targets.len() + 1 > self.label_states {
            return Err(shape_err!("U={} exceeds lattice label dim {}", targets.len(), self.label_states - 1));
        }
        if targets.len() + 1 != self.label_states {
            return Err(shape_err!("lattice has {} label states for U={}", self.label_states, targets.len()));
        }
        if let Some(&bad) = targets.iter().find(|&&y| y == 0 || y as usize >= self.symbols) {
            return Err(usage_err!("target {bad} outside labels 1..{}", self.symbols - 1));
        }
        Ok(())
    }
}

/// Forward (α) and backward (β) log-variables on the (T'+1)×(U+1) grid.
#[derive(Clone, Debug)]
pub struct LatticeAlphas<S = f32> {
    pub alphas: Vec<S>,
    pub betas: Vec<S>,
    pub frames: usize,
    pub label_states: usize,
}

impl<S: Real> LatticeAlphas<S> {
    #[inline]
    pub fn alpha(&self, t: usize, u: usize) -> S {
        self.alphas[t * self.label_states + u]
    }

    #[inline]
    pub fn beta(&self, t: usize, u: usize) -> S {
        self.betas[t * self.label_states + u]
    }

    /// log P(y|x) read from the terminal α.
    pub fn log_prob_forward(&self) -> S {
        self.alpha(self.frames, self.label_states - 1)
    }

    /// log P(y|x) read from the initial β.
    pub fn log_prob_backward(&self) -> S {
        self.beta(0, 0)
    }
}

pub fn forward_backward<S: Real>(lattice: &JointLattice<S>, targets: &[u32]) -> Result<LatticeAlphas<S>> {
    lattice.check_targets(targets)?;
    let (tn, un) = (lattice.frames, lattice.label_states);
    let w = un;
    let ninf = S::neg_infinity();
    let mut alphas = vec![ninf; (tn + 1) * un];
    alphas[0] = S::zero();
    for t in 0..=tn {
        for u in 0..un {
            if t == 0 && u == 0 {
                continue;
            }
            let mut a = ninf;
            if t > 0 {
                a = alphas[(t - 1) * w + u] + lattice.get(t - 1, u, 0);
            }
            if u > 0 && t < tn {
                a = log_add(a, alphas[t * w + u - 1] + lattice.get(t, u - 1, targets[u - 1] as usize));
            }
            alphas[t * w + u] = a;
        }
    }
    let mut betas = vec![ninf; (tn + 1) * un];
    betas[tn * w + un - 1] = S::zero();
    for t in (0..tn).rev() {
        for u in (0..un).rev() {
            let mut b = lattice.get(t, u, 0) + betas[(t + 1) * w + u];
            if u + 1 < un {
                b = log_add(b, lattice.get(t, u, targets[u] as usize) + betas[t * w + u + 1]);
            }
            betas[t * w + u] = b;
        }
    }
    Ok(LatticeAlphas { alphas, betas, frames: tn, label_states: un })
}

/// −log P(y|x), summed over all alignments in log space.
pub fn rnnt_nll<S: Real>(lattice: &JointLattice<S>, targets: &[u32]) -> Result<S> {
    let fb = forward_backward(lattice, targets)?;
    let lp = fb.log_prob_forward();
    if !lp.is_finite() {
        return Err(Error::Numeric("target sequence has zero probability".into()));
    }
    Ok(-lp)
}

/// Loss and its gradient with respect to every lattice entry.
///
/// Only blank and the next target symbol on each cell carry gradient:
/// `∂L/∂log P(k|t,u) = −exp(α(t,u) + log P(k|t,u) + β(next) − log P(y|x))`.
pub fn rnnt_nll_grad<S: Real>(lattice: &JointLattice<S>, targets: &[u32]) -> Result<(S, Vec<S>)> {
    let fb = forward_backward(lattice, targets)?;
    let log_p = fb.log_prob_forward();
    if !log_p.is_finite() {
        return Err(Error::Numeric("target sequence has zero probability".into()));
    }
    let (tn, un) = (lattice.frames, lattice.label_states);
    let mut grad = vec![S::zero(); lattice.logp.len()];
    for t in 0..tn {
        for u in 0..un {
            let a = fb.alpha(t, u);
            if a == S::neg_infinity() {
                continue;
            }
            let bi = lattice.idx(t, u, 0);
            grad[bi] = -(a + lattice.logp[bi] + fb.beta(t + 1, u) - log_p).exp();
            if u + 1 < un {
                let li = lattice.idx(t, u, targets[u] as usize);
                grad[li] = -(a + lattice.logp[li] + fb.beta(t, u + 1) - log_p).exp();
            }
        }
    }
    Ok((-log_p, grad))
}

/// Largest T'+U the enumeration oracle accepts.
pub const ORACLE_MAX_STEPS: usize = 12;

/// P(y|x) by explicitly walking every alignment. Reference only.
pub fn enumerate_alignments_oracle<S: Real>(lattice: &JointLattice<S>, targets: &[u32]) -> Result<f64> {
    Ok(enumerate_alignments(lattice, targets)?.iter().sum())
}

/// Probability of each individual alignment, in enumeration order.
pub fn enumerate_alignments<S: Real>(lattice: &JointLattice<S>, targets: &[u32]) -> Result<Vec<f64>> {
    lattice.check_targets(targets)?;
    if lattice.frames + targets.len() > ORACLE_MAX_STEPS {
        return Err(usage_err!(
            "enumeration limited to T'+U ≤ {ORACLE_MAX_STEPS}, got {}",
            lattice.frames + targets.len()
        ));
    }
    fn walk<S: Real>(l: &JointLattice<S>, y: &[u32], t: usize, u: usize, acc: f64, out: &mut Vec<f64>) {
        if t == l.frames {
            if u == y.len() {
                out.push(acc.exp());
            }
            return;
        }
        walk(l, y, t + 1, u, acc + l.get(t, u, 0).f64(), out);
        if u < y.len() {
            walk(l, y, t, u + 1, acc + l.get(t, u, y[u] as usize).f64(), out);
        }
    }
    let mut out = Vec::new();
    walk(lattice, targets, 0, 0, 0.0, &mut out);
    Ok(out)
}

/// Records the loss on a graph whose node `lattice` is the [T'(U+1) × (V+1)]
/// log-probability matrix, so gradients flow back into the joiner. The DP
/// itself always runs in f64.
pub fn rnnt_loss_node<S: Real>(g: &mut Graph<S>, lattice: Var, frames: usize, targets: &[u32]) -> Result<Var> {
    let (rows, symbols) = g.shape2(lattice)?;
    if frames == 0 || rows % frames != 0 {
        return Err(shape_err!("{rows} lattice rows not divisible by {frames} frames"));
    }
    let values = g.value(lattice).iter().map(|v| v.f64()).collect();
    let lat = JointLattice::new(frames, rows / frames, symbols, values)?;
    let (loss, grad) = rnnt_nll_grad(&lat, targets)?;
    g.custom_scalar(lattice, S::of(loss), grad.into_iter().map(S::of).collect())
}
