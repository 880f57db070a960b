use std::fmt::Write as _;

use super::Hypothesis;
use crate::data::{LabelSequence, Vocabulary};
use crate::error::{format_err, Result};

/// One line of an n-best file: `utt_id<TAB>rank<TAB>score<TAB>tokens`.
#[derive(Clone, Debug, PartialEq)]
pub struct NBestEntry {
    pub utt_id: String,
    /// 1-based.
    pub rank: usize,
    pub hypothesis: Hypothesis,
}

pub fn write_nbest(vocab: &Vocabulary, entries: &[NBestEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        let tokens = vocab.decode(&e.hypothesis.labels).join(" ");
        writeln!(out, "{}\t{}\t{}\t{}", e.utt_id, e.rank, e.hypothesis.score, tokens).expect("string write");
    }
    out
}

pub fn read_nbest(vocab: &Vocabulary, text: &str) -> Result<Vec<NBestEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(format_err!("n-best line {}: expected 4 tab-separated fields", i + 1));
        }
        let rank = fields[1].parse().map_err(|_| format_err!("n-best line {}: bad rank {:?}", i + 1, fields[1]))?;
        let score: f64 = fields[2].parse().map_err(|_| format_err!("n-best line {}: bad score {:?}", i + 1, fields[2]))?;
        if !score.is_finite() {
            return Err(format_err!("n-best line {}: non-finite score", i + 1));
        }
        let labels: LabelSequence = vocab.encode(fields[3]).map_err(|e| format_err!("n-best line {}: {e}", i + 1))?;
        out.push(NBestEntry {
            utt_id: fields[0].to_string(),
            rank,
            hypothesis: Hypothesis { labels, score, lm_score: None },
        });
    }
    Ok(out)
}

/// Groups consecutive entries by utterance id, preserving order.
pub fn group_by_utterance(entries: Vec<NBestEntry>) -> Vec<(String, Vec<NBestEntry>)> {
    let mut groups: Vec<(String, Vec<NBestEntry>)> = Vec::new();
    for e in entries {
        match groups.last_mut() {
            Some((id, list)) if *id == e.utt_id => list.push(e),
            _ => groups.push((e.utt_id.clone(), vec![e])),
        }
    }
    groups
}
