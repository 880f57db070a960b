mod common;

use common::{decoder_instance as instance, exhaustive, HistoryScorer};
use simctx::decoder::{beam_search, greedy_decode};

#[test]
fn saturating_beam_equals_exhaustive_enumeration() {
    for seed in 0..150 {
        let (sc, t) = instance(seed);
        let width = (sc.v + 1).pow(t as u32);
        let oracle = exhaustive(&sc, t);
        let hyps = beam_search(&sc, &HistoryScorer::frames(t), width, width).unwrap();
        assert_eq!(hyps.len(), oracle.len(), "seed {seed}");
        for h in &hyps {
            let o = oracle[h.labels.as_slice()];
            assert!((h.score - o).abs() < 1e-6, "seed {seed} {:?}: {} vs {o}", h.labels, h.score);
        }
        let (best, best_score) = oracle.iter().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        assert!(hyps[0].labels.as_slice() == best.as_slice() || (hyps[0].score - best_score).abs() < 1e-9, "seed {seed}");
        assert!(hyps.windows(2).all(|w| w[0].score >= w[1].score));
    }
}

#[test]
fn top_score_never_drops_as_the_beam_widens() {
    for seed in 0..100 {
        let (sc, t) = instance(1000 + seed);
        let frames = HistoryScorer::frames(t);
        let mut prev = f64::NEG_INFINITY;
        for width in 1..=(sc.v + 1).pow(t as u32) {
            let s = beam_search(&sc, &frames, width, 1).unwrap()[0].score;
            assert!(s >= prev - 1e-9, "seed {seed} width {width}: {s} < {prev}");
            prev = s;
        }
    }
}

#[test]
fn width_one_is_greedy() {
    for seed in 0..100 {
        let (sc, t) = instance(5000 + seed);
        let frames = HistoryScorer::frames(t);
        assert_eq!(beam_search(&sc, &frames, 1, 1).unwrap()[0], greedy_decode(&sc, &frames).unwrap());
    }
}

#[test]
fn beam_holds_unique_sequences_within_width() {
    for seed in 0..50 {
        let (sc, t) = instance(9000 + seed);
        for width in [1, 2, 3, 5, 16] {
            let hyps = beam_search(&sc, &HistoryScorer::frames(t), width, width).unwrap();
            assert!(hyps.len() <= width);
            let mut seen: Vec<_> = hyps.iter().map(|h| h.labels.clone()).collect();
            seen.sort_by(|a, b| a.as_slice().cmp(b.as_slice()));
            seen.dedup();
            assert_eq!(seen.len(), hyps.len());
            assert!(hyps.iter().all(|h| h.labels.len() <= t && h.score.is_finite()));
        }
    }
}
