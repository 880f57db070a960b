use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use simctx::chunking::{ChunkPolicy, RightMode};
use simctx::model::{ModelConfig, TransducerModel};
use simctx::numerics::{grad_check, AttentionBlock, GruCell, LayerNorm, Linear, ParamStore, Tensor};
use simctx::trainer::{mot_loss_graph, StreamPlan};

fn input(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|i| ((i as u64 * 31 + seed) as f64 * 0.173).sin()).collect()).unwrap()
}

fn weights(rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|i| ((i * 17 + 3) as f64 * 0.61).cos()).collect()).unwrap()
}

#[test]
fn linear_and_layer_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::<f64>::new();
    let lin = Linear::new(&mut store, "lin", 5, 4, true, &mut rng).unwrap();
    let ln = LayerNorm::new(&mut store, "ln", 4).unwrap();
    let report = grad_check(
        &store,
        |g| {
            let x = g.input(input(3, 5, 1))?;
            let y = lin.forward(g, x)?;
            let y = ln.forward(g, y)?;
            let w = g.input(weights(3, 4))?;
            let y = g.mul(y, w)?;
            g.sum(y)
        },
        1e-3,
        50,
        7,
    )
    .unwrap();
    assert!(report.passed(1e-5), "{report:?}");
}

#[test]
fn gru_sequence() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::<f64>::new();
    let cell = GruCell::new(&mut store, "gru", 3, 4, &mut rng).unwrap();
    let report = grad_check(
        &store,
        |g| {
            let mut h = g.zeros(&[1, 4])?;
            let xs = g.input(input(4, 3, 2))?;
            for t in 0..4 {
                let x = g.slice_rows(xs, t, t + 1)?;
                h = cell.step(g, x, h)?;
            }
            let w = g.input(weights(1, 4))?;
            let y = g.mul(h, w)?;
            g.sum(y)
        },
        1e-3,
        50,
        3,
    )
    .unwrap();
    assert!(report.passed(1e-5), "{report:?}");
}

#[test]
fn attention_block() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::<f64>::new();
    let block = AttentionBlock::new(&mut store, "blk", 8, 2, 12, &mut rng).unwrap();
    let report = grad_check(
        &store,
        |g| {
            let x = g.input(input(5, 8, 3))?;
            let y = block.forward(g, x)?;
            let w = g.input(weights(5, 8))?;
            let y = g.mul(y, w)?;
            g.sum(y)
        },
        1e-3,
        50,
        4,
    )
    .unwrap();
    assert!(report.passed(1e-5), "{report:?}");
}

fn full_model_check(mode: RightMode) -> f64 {
    let cfg = ModelConfig { simu_frames: 2, ..ModelConfig::default() };
    let (model, store) = TransducerModel::new::<f64>(cfg, 21).unwrap();
    let policy = ChunkPolicy::new(2, 0, 2, 2, mode).unwrap();
    let plan = StreamPlan { chunk_size: 2, mode };
    let feats = input(6, 16, 9);
    let targets = [3u32, 7];
    let report = grad_check(
        &store,
        |g| Ok(mot_loss_graph(g, &model, &feats, &targets, &policy, plan, 1.0)?.total),
        1e-3,
        50,
        11,
    )
    .unwrap();
    assert!(report.coords_checked >= 50 * store.len() / 2);
    assert!(report.deterministic);
    report.max_rel_error
}

#[test]
fn full_model_all_modes() {
    for mode in [RightMode::Simulated, RightMode::Real, RightMode::None] {
        let err = full_model_check(mode);
        assert!(err < 1e-4, "{mode}: {err}");
    }
}
