use rand::Rng;

use crate::data::BLANK;
use crate::error::{usage_err, Result};
use crate::numerics::{layers::glorot, Graph, GruCell, ParamId, ParamStore, Real, Tensor, Var};

/// Input to one predictor step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PredictorInput {
    /// Start of sequence; shares embedding row 0 with blank, which is never fed otherwise.
    Start,
    Label(u32),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictorState {
    pub hidden: Vec<f32>,
    pub last: Option<u32>,
}

/// Label embedding followed by a single gated recurrent cell.
#[derive(Clone, Debug)]
pub struct Predictor {
    pub embedding: ParamId,
    pub cell: GruCell,
    pub vocab_size: usize,
    pub hidden: usize,
}

impl Predictor {
    pub fn new<S: Real, R: Rng>(store: &mut ParamStore<S>, name: &str, vocab_size: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        let embedding = store.add(&format!("{name}.embedding"), glorot(rng, vocab_size + 1, hidden)?)?;
        let cell = GruCell::new(store, &format!("{name}.gru"), hidden, hidden, rng)?;
        Ok(Predictor { embedding, cell, vocab_size, hidden })
    }

    fn row(&self, input: PredictorInput) -> Result<usize> {
        match input {
            PredictorInput::Start => Ok(0),
            PredictorInput::Label(BLANK) => Err(usage_err!("blank cannot be fed to the predictor")),
            PredictorInput::Label(l) if l as usize > self.vocab_size => {
                Err(usage_err!("label {l} outside vocabulary of {}", self.vocab_size))
            }
            PredictorInput::Label(l) => Ok(l as usize),
        }
    }

    pub fn zero_state(&self) -> PredictorState {
        PredictorState { hidden: vec![0.0; self.hidden], last: None }
    }

    /// Outputs g_1 … g_{U+1} as a [(U+1) × H] matrix: row 0 comes from the
    /// start marker, row u from the prefix y_1 … y_u.
    pub fn forward_sequence<S: Real>(&self, g: &mut Graph<S>, targets: &[u32]) -> Result<Var> {
        let mut rows = vec![self.row(PredictorInput::Start)?];
        for &y in targets {
            rows.push(self.row(PredictorInput::Label(y))?);
        }
        let table = g.param(self.embedding)?;
        let emb = g.gather_rows(table, &rows)?;
        let proj = self.cell.project_inputs(g, emb)?;
        let mut h = g.zeros(&[1, self.hidden])?;
        let mut outs = Vec::with_capacity(rows.len());
        for i in 0..rows.len() {
            let xp = g.slice_rows(proj, i, i + 1)?;
            h = self.cell.step_projected(g, xp, h)?;
            outs.push(h);
        }
        if outs.len() == 1 {
            Ok(outs[0])
        } else {
            g.concat_rows(&outs)
        }
    }

    /// One step. Returns the predictor output and the advanced state.
    pub fn predict(&self, store: &ParamStore<f32>, state: &PredictorState, input: PredictorInput) -> Result<(Vec<f32>, PredictorState)> {
        let row = self.row(input)?;
        let mut g = Graph::new(store);
        let table = g.param(self.embedding)?;
        let emb = g.gather_rows(table, &[row])?;
        let h = g.input(Tensor::matrix(1, self.hidden, state.hidden.clone())?)?;
        let out = self.cell.step(&mut g, emb, h)?;
        let hidden = g.value(out).to_vec();
        let last = match input {
            PredictorInput::Start => None,
            PredictorInput::Label(l) => Some(l),
        };
        Ok((hidden.clone(), PredictorState { hidden, last }))
    }
}
