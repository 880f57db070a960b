//! Future-context simulator. A stack of gated recurrent cells reads the
//! chunk cores as they arrive; from the final hidden state, one linear head
//! per future offset emits the simulated right-context frames in one shot.

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::numerics::{Graph, GruCell, Linear, ParamStore, Real, Tensor, Var};

#[derive(Clone, Debug)]
pub struct SimuNet {
    pub layers: Vec<GruCell>,
    /// Bias-free projection hidden → frames·dim; row block `k` is the head for offset `k`.
    pub heads: Linear,
    pub frames: usize,
    pub dim: usize,
    pub hidden: usize,
}

/// Per-stream recurrent state, one hidden vector per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct SimuState<S = f32> {
    pub hidden: Vec<Vec<S>>,
}

impl SimuNet {
    pub fn new<S: Real, R: Rng>(
        store: &mut ParamStore<S>,
        name: &str,
        dim: usize,
        hidden: usize,
        layers: usize,
        frames: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if layers == 0 || hidden == 0 || frames == 0 || dim == 0 {
            return Err(shape_err!("SimuNet needs positive dims (layers {layers}, hidden {hidden}, frames {frames})"));
        }
        let cells = (0..layers)
            .map(|l| {
                let input = if l == 0 { dim } else { hidden };
                GruCell::new(store, &format!("{name}.gru{l}"), input, hidden, rng)
            })
            .collect::<Result<_>>()?;
        let heads = Linear::new(store, &format!("{name}.heads"), hidden, frames * dim, false, rng)?;
        Ok(SimuNet { layers: cells, heads, frames, dim, hidden })
    }

    pub fn zero_state<S: Real>(&self) -> SimuState<S> {
        SimuState { hidden: vec![vec![S::zero(); self.hidden]; self.layers.len()] }
    }

    /// State variables for a graph, one [1 × H] node per layer.
    pub fn state_vars<S: Real>(&self, g: &mut Graph<S>, state: &SimuState<S>) -> Result<Vec<Var>> {
        state
            .hidden
            .iter()
            .map(|h| g.input(Tensor::matrix(1, h.len(), h.clone())?))
            .collect()
    }

    /// Consumes `history` ([n × D], n ≥ 1) and returns the simulated
    /// [frames × D] block plus the advanced state.
    pub fn simulate_graph<S: Real>(&self, g: &mut Graph<S>, state: &[Var], history: Var) -> Result<(Var, Vec<Var>)> {
        let (n, d) = g.shape2(history)?;
        if d != self.dim {
            return Err(shape_err!("SimuNet input width {d} != {}", self.dim));
        }
        if state.len() != self.layers.len() {
            return Err(shape_err!("SimuNet state has {} layers, expected {}", state.len(), self.layers.len()));
        }
        let mut seq = history;
        let mut next = Vec::with_capacity(self.layers.len());
        for (cell, &h0) in self.layers.iter().zip(state) {
            let proj = cell.project_inputs(g, seq)?;
            let mut h = h0;
            let mut outs = Vec::with_capacity(n);
            for t in 0..n {
                let xp = g.slice_rows(proj, t, t + 1)?;
                h = cell.step_projected(g, xp, h)?;
                outs.push(h);
            }
            next.push(h);
            seq = if outs.len() == 1 { outs[0] } else { g.concat_rows(&outs)? };
        }
        let last = *next.last().expect("at least one layer");
        let flat = self.heads.forward(g, last)?;
        let sim = g.reshape(flat, &[self.frames, self.dim])?;
        Ok((sim, next))
    }

    /// Inference wrapper around [`Self::simulate_graph`].
    pub fn simulate<S: Real>(
        &self,
        store: &ParamStore<S>,
        state: &SimuState<S>,
        history: &Tensor<S>,
    ) -> Result<(Tensor<S>, SimuState<S>)> {
        let mut g = Graph::new(store);
        let vars = self.state_vars(&mut g, state)?;
        let h = g.input(history.clone())?;
        let (sim, next) = self.simulate_graph(&mut g, &vars, h)?;
        let hidden = next.iter().map(|&v| g.value(v).to_vec()).collect();
        Ok((g.tensor(sim), SimuState { hidden }))
    }
}

/// Mean absolute error between the first `M` simulated rows and the `M`
/// real future rows. `None` when no real future exists (M = 0).
pub fn simulation_loss_graph<S: Real>(g: &mut Graph<S>, simulated: Var, real: Option<Var>) -> Result<Option<Var>> {
    let Some(real) = real else { return Ok(None) };
    let (n, d) = g.shape2(simulated)?;
    let (m, d2) = g.shape2(real)?;
    if d != d2 {
        return Err(shape_err!("simulation loss widths {d} vs {d2}"));
    }
    if m > n {
        return Err(shape_err!("{m} real frames but only {n} simulated"));
    }
    let head = if m == n { simulated } else { g.slice_rows(simulated, 0, m)? };
    let diff = g.sub(head, real)?;
    let abs = g.abs(diff)?;
    Ok(Some(g.mean(abs)?))
}

/// Plain-tensor form of the simulation loss; `real` may have zero rows.
pub fn simulation_loss<S: Real>(simulated: &Tensor<S>, real: &[S], dim: usize) -> Result<S> {
    if simulated.cols() != dim || !real.len().is_multiple_of(dim) {
        return Err(shape_err!("simulation loss width mismatch"));
    }
    let m = real.len() / dim;
    if m > simulated.rows() {
        return Err(shape_err!("{m} real frames but only {} simulated", simulated.rows()));
    }
    if m == 0 {
        return Ok(S::zero());
    }
    let sum: S = simulated.data()[..real.len()].iter().zip(real).map(|(&a, &b)| (a - b).abs()).sum();
    Ok(sum / S::of(real.len() as f64))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn net(store: &mut ParamStore<f32>) -> SimuNet {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        SimuNet::new(store, "simu", 3, 8, 2, 4, &mut rng).unwrap()
    }

    fn history(rows: usize, offset: f32) -> Tensor<f32> {
        Tensor::matrix(rows, 3, (0..rows * 3).map(|i| ((i as f32 + offset) * 0.31).sin()).collect()).unwrap()
    }

    #[test]
    fn output_shape_is_fixed() {
        let mut store = ParamStore::new();
        let s = net(&mut store);
        for n in [1, 2, 7] {
            let (sim, _) = s.simulate(&store, &s.zero_state(), &history(n, 0.0)).unwrap();
            assert_eq!(sim.dims(), &[4, 3]);
        }
    }

    #[test]
    fn zero_params_give_zero_output() {
        let mut store = ParamStore::new();
        let s = net(&mut store);
        for id in store.ids().collect::<Vec<_>>() {
            store.value_mut(id).data_mut().fill(0.0);
        }
        let (sim, _) = s.simulate(&store, &s.zero_state(), &history(5, 1.0)).unwrap();
        assert!(sim.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn carried_state_equals_one_shot() {
        let mut store = ParamStore::new();
        let s = net(&mut store);
        let full = history(9, 0.5);
        let mut state = s.zero_state();
        let mut last = None;
        for (a, b) in [(0, 4), (4, 6), (6, 9)] {
            let (sim, next) = s.simulate(&store, &state, &full.slice_rows(a, b).unwrap()).unwrap();
            state = next;
            let (one_shot, _) = s.simulate(&store, &s.zero_state(), &full.slice_rows(0, b).unwrap()).unwrap();
            assert_eq!(sim, one_shot);
            last = Some(sim);
        }
        assert!(last.is_some());
    }

    #[test]
    fn loss_values() {
        let sim = Tensor::matrix(2, 2, vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(simulation_loss(&sim, &[1.0, 2.0, 3.0, 4.0], 2).unwrap(), 0.0);
        assert_eq!(simulation_loss(&sim, &[0.0, 1.0, 2.0, 3.0], 2).unwrap(), 1.0);
        assert_eq!(simulation_loss(&sim, &[0.0, 1.0], 2).unwrap(), 1.0);
        assert_eq!(simulation_loss(&sim, &[], 2).unwrap(), 0.0);
        assert!(simulation_loss(&sim, &[0.0; 3], 3).is_err());
    }
}
