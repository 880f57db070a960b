mod common;

use common::batch_decode;
use simctx::chunking::{plan_chunks, ChunkPolicy, RightMode};
use simctx::data::{generate_synthetic, SyntheticTaskSpec, Utterance};
use simctx::decoder::{decode_offline, stream_decode, DecodeOptions, StreamSession};
use simctx::model::{ModelConfig, TransducerModel};
use simctx::numerics::{ParamStore, Tensor};

const MODES: [RightMode; 3] = [RightMode::None, RightMode::Real, RightMode::Simulated];

fn setup() -> (TransducerModel, ParamStore<f32>, Vec<Utterance>) {
    let (model, store) = TransducerModel::new::<f32>(ModelConfig::default(), 3).unwrap();
    let utts = generate_synthetic(&SyntheticTaskSpec { seed: 4, ..Default::default() }, 50, 1, 8).unwrap();
    (model, store, utts)
}

fn policy(mode: RightMode) -> ChunkPolicy {
    ChunkPolicy::new(16, 0, 16, 8, mode).unwrap()
}

fn opts() -> DecodeOptions {
    DecodeOptions { beam: 4, nbest: 4 }
}

#[test]
fn chunked_delivery_matches_batch_delivery() {
    let (model, store, utts) = setup();
    for utt in &utts {
        for mode in MODES {
            let reference = batch_decode(&model, &store, utt, policy(mode), opts());
            for delivery in [1, 7, 16, 40, 10_000] {
                let r = stream_decode(&model, &store, &utt.features, policy(mode), opts(), delivery).unwrap();
                assert_eq!(r.nbest, reference, "{} mode {mode} delivery {delivery}", utt.id);
            }
        }
    }
}

#[test]
fn one_chunk_covering_everything_is_offline_decoding() {
    let (model, store, utts) = setup();
    for utt in utts.iter().take(10) {
        let t = utt.features.num_frames();
        let p = ChunkPolicy::new(t, 0, 0, 0, RightMode::None).unwrap();
        let r = stream_decode(&model, &store, &utt.features, p, opts(), 5).unwrap();
        assert_eq!(r.nbest, decode_offline(&model, &store, utt.features.frames(), opts()).unwrap());
        assert_eq!(r.chunks, 1);
    }
}

#[test]
fn partial_results_only_see_delivered_cores() {
    let (model, store, utts) = setup();
    let utt = utts.iter().max_by_key(|u| u.features.num_frames()).unwrap();
    let t = utt.features.num_frames();
    let mut session = StreamSession::new(&model, &store, policy(RightMode::Simulated), opts()).unwrap();
    let mut partials = Vec::new();
    for f in 0..t {
        partials.extend(session.push(utt.features.frame(f)).unwrap());
    }
    for p in &partials {
        // the same prefix delivered as a complete (shorter) stream decodes identically
        let prefix = utt.features.slice(0, p.frames_decoded).unwrap();
        let r = stream_decode(&model, &store, &prefix, policy(RightMode::Simulated), opts(), 16).unwrap();
        assert_eq!(r.nbest[0].labels, p.best);
    }
    assert_eq!(partials.len(), t / 16);
}

#[test]
fn simunet_state_carries_exactly() {
    let (model, store, utts) = setup();
    for utt in utts.iter().take(20) {
        let t = utt.features.num_frames();
        let d = utt.features.dim();
        let mut state = model.simunet.zero_state();
        for view in plan_chunks(t, 6, 0, 0).unwrap() {
            let core = Tensor::matrix(view.core_len(), d, utt.features.rows(view.core.start, view.core.end).to_vec()).unwrap();
            let (carried, next) = model.simunet.simulate(&store, &state, &core).unwrap();
            state = next;
            let history = Tensor::matrix(view.core.end, d, utt.features.rows(0, view.core.end).to_vec()).unwrap();
            let (one_shot, _) = model.simunet.simulate(&store, &model.simunet.zero_state(), &history).unwrap();
            assert_eq!(carried, one_shot);
        }
    }
}

#[test]
fn simulation_ignores_future_frames() {
    let (model, store, utts) = setup();
    let utt = utts.iter().max_by_key(|u| u.features.num_frames()).unwrap();
    let t = utt.features.num_frames();
    let d = utt.features.dim();
    let cut = t / 2;
    let mut perturbed = utt.features.frames().data().to_vec();
    for v in &mut perturbed[cut * d..] {
        *v = -*v * 3.0 + 1.0;
    }
    let history = |data: &[f32]| Tensor::matrix(cut, d, data[..cut * d].to_vec()).unwrap();
    let a = model.simunet.simulate(&store, &model.simunet.zero_state(), &history(utt.features.frames().data())).unwrap();
    let b = model.simunet.simulate(&store, &model.simunet.zero_state(), &history(&perturbed)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn chunk_rows_add_up_to_offline_rows() {
    let (model, store, _) = setup();
    let sub = model.config.subsample;
    for t in 1..=200usize {
        for chunk in [2usize, 4, 16, 40] {
            let views = plan_chunks(t, chunk, 16, 8).unwrap();
            let cores: Vec<usize> = views.iter().flat_map(|v| v.core.clone()).collect();
            assert_eq!(cores, (0..t).collect::<Vec<_>>());
            assert!(views.iter().all(|v| v.right.end <= t && v.left.start <= v.core.start));
            let rows: usize = views.iter().map(|v| v.core_len().div_ceil(sub)).sum();
            assert_eq!(rows, t.div_ceil(sub), "t {t} chunk {chunk}");
        }
    }
    // and the encoder agrees on a few lengths
    for t in [1usize, 5, 33] {
        let x = Tensor::matrix(t, 16, (0..t * 16).map(|i| (i as f32 * 0.37).sin()).collect()).unwrap();
        assert_eq!(model.encode_full(&store, &x).unwrap().rows(), t.div_ceil(sub));
    }
}
