use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::tensor::Real;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max |analytic − numeric| / max(|analytic|, |numeric|, 1e-8) over checked coordinates.
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// False when two evaluations at the same point disagreed.
    pub deterministic: bool,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.deterministic && self.max_rel_error < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn eval<S: Real, F>(store: &ParamStore<S>, loss_fn: &F) -> Result<f64>
where
    F: Fn(&mut Graph<S>) -> Result<Var>,
{
    let mut g = Graph::new(store);
    let loss = loss_fn(&mut g)?;
    Ok(g.scalar(loss).f64())
}

/// Compares tape gradients against five-point central finite differences.
///
/// Up to `samples_per_tensor` coordinates are drawn per parameter tensor
/// (all of them when the tensor is smaller). The closure must build the same
/// computation on every call.
pub fn grad_check<S: Real, F>(
    store: &ParamStore<S>,
    loss_fn: F,
    epsilon: f64,
    samples_per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<S>) -> Result<Var>,
{
    let mut report =
        GradCheckReport { max_rel_error: 0.0, coords_checked: 0, deterministic: true, worst: None };
    let analytic = {
        let mut g = Graph::new(store);
        let loss = loss_fn(&mut g)?;
        let first = g.scalar(loss).f64();
        let grads = g.backward(loss)?;
        if eval(store, &loss_fn)?.to_bits() != first.to_bits() {
            report.deterministic = false;
            report.max_rel_error = f64::INFINITY;
            return Ok(report);
        }
        let mut per_param = Vec::with_capacity(store.len());
        for id in store.ids() {
            per_param.push(grads.param(id).map(<[S]>::to_vec));
        }
        per_param
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = store.clone();
    for id in store.ids() {
        let n = store.value(id).numel();
        let coords: Vec<usize> = if n <= samples_per_tensor {
            (0..n).collect()
        } else {
            sample(&mut rng, n, samples_per_tensor).into_vec()
        };
        for c in coords {
            let orig = store.value(id).data()[c];
            let mut at = |offset: f64| -> Result<f64> {
                probe.value_mut(id).data_mut()[c] = S::of(orig.f64() + offset);
                eval(&probe, &loss_fn)
            };
            let (p1, m1) = (at(epsilon)?, at(-epsilon)?);
            let (p2, m2) = (at(2.0 * epsilon)?, at(-2.0 * epsilon)?);
            probe.value_mut(id).data_mut()[c] = orig;
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * epsilon);
            let a = analytic[id.index()].as_ref().map_or(0.0, |g| g[c].f64());
            let err = relative_error(a, numeric);
            report.coords_checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((store.name(id).to_string(), c));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::layers::Linear;
    use crate::numerics::tensor::Tensor;
    use rand::SeedableRng;

    #[test]
    fn linear_regression_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::<f64>::new();
        let lin = Linear::new(&mut store, "reg", 3, 1, true, &mut rng).unwrap();
        let x = Tensor::matrix(4, 3, (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let y = Tensor::matrix(4, 1, vec![0.5, -1.0, 0.25, 2.0]).unwrap();
        let report = grad_check(
            &store,
            |g| {
                let xv = g.input(x.clone())?;
                let yv = g.input(y.clone())?;
                let p = lin.forward(g, xv)?;
                let d = g.sub(p, yv)?;
                let sq = g.mul(d, d)?;
                g.mean(sq)
            },
            1e-4,
            50,
            0,
        )
        .unwrap();
        assert!(report.passed(1e-4), "{report:?}");
        assert_eq!(report.coords_checked, 4);
    }

    #[test]
    fn zero_parameter_closure_reports_zero() {
        let store = ParamStore::<f64>::new();
        let report = grad_check(
            &store,
            |g| {
                let x = g.input(Tensor::scalar(2.0))?;
                g.sum(x)
            },
            1e-4,
            10,
            0,
        )
        .unwrap();
        assert_eq!(report.max_rel_error, 0.0);
        assert_eq!(report.coords_checked, 0);
    }

    #[test]
    fn nondeterministic_closure_fails() {
        use std::cell::Cell;
        let mut store = ParamStore::<f64>::new();
        store.add("w", Tensor::scalar(1.0)).unwrap();
        let counter = Cell::new(0.0);
        let report = grad_check(
            &store,
            |g| {
                counter.set(counter.get() + 1.0);
                let w = g.param(store.id("w").unwrap())?;
                g.scale(w, counter.get())
            },
            1e-4,
            10,
            0,
        )
        .unwrap();
        assert!(!report.deterministic);
        assert!(!report.passed(1e-4));
    }
}
