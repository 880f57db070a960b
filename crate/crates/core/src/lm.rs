//! Add-k n-gram language model, shallow fusion and two-pass n-best rescoring.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::decoder::Hypothesis;
use crate::error::{format_err, usage_err, Error, Result};

pub const SENTENCE_START: &str = "<s>";
pub const SENTENCE_END: &str = "</s>";
pub const UNKNOWN: &str = "<unk>";

#[derive(Clone, Debug, PartialEq)]
pub struct NGramOptions {
    pub order: usize,
    pub addk: f64,
    /// Reserve `<unk>` in the normalization vocabulary.
    pub include_unk: bool,
    /// Extra tokens to include even if absent from the corpus.
    pub extra_tokens: Vec<String>,
}

impl Default for NGramOptions {
    fn default() -> Self {
        NGramOptions { order: 2, addk: 1.0, include_unk: true, extra_tokens: Vec::new() }
    }
}

/// Conditional distributions for every context seen in training; any other
/// context is uniform over the vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct NGramModel {
    order: usize,
    /// Predictable tokens, sorted; includes `</s>`.
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    /// Context (n−1 tokens, `<s>`-padded) → log-probabilities aligned with `vocab`.
    table: BTreeMap<Vec<String>, Vec<f64>>,
}

/// Whitespace-tokenized sentences, one per non-empty line.
pub fn tokenize(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect::<Vec<_>>())
        .filter(|s| !s.is_empty())
        .collect()
}

pub fn train_ngram(corpus: &[Vec<String>], opts: &NGramOptions) -> Result<NGramModel> {
    if !(1..=4).contains(&opts.order) {
        return Err(usage_err!("n-gram order must be in 1..=4, got {}", opts.order));
    }
    if !(opts.addk.is_finite() && opts.addk > 0.0) {
        return Err(usage_err!("add-k constant must be positive, got {}", opts.addk));
    }
    if corpus.is_empty() {
        return Err(usage_err!("empty LM training corpus"));
    }
    let mut words: Vec<String> = corpus.iter().flatten().chain(&opts.extra_tokens).cloned().collect();
    if words.iter().any(|w| w == SENTENCE_START) {
        return Err(usage_err!("{SENTENCE_START} may not appear in LM text"));
    }
    words.push(SENTENCE_END.to_string());
    if opts.include_unk {
        words.push(UNKNOWN.to_string());
    }
    words.sort();
    words.dedup();
    let index: HashMap<String, usize> = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();

    let mut counts: BTreeMap<Vec<String>, Vec<f64>> = BTreeMap::new();
    for sentence in corpus {
        let padded = pad(sentence, opts.order);
        for window in padded.windows(opts.order) {
            let (ctx, w) = window.split_at(opts.order - 1);
            counts.entry(ctx.to_vec()).or_insert_with(|| vec![0.0; words.len()])[index[&w[0]]] += 1.0;
        }
    }
    let v = words.len() as f64;
    let table = counts
        .into_iter()
        .map(|(ctx, c)| {
            let total: f64 = c.iter().sum();
            let denom = total + opts.addk * v;
            (ctx, c.iter().map(|&n| ((n + opts.addk) / denom).ln()).collect())
        })
        .collect();
    Ok(NGramModel { order: opts.order, vocab: words, index, table })
}

fn pad(sentence: &[String], order: usize) -> Vec<String> {
    let mut out = vec![SENTENCE_START.to_string(); order - 1];
    out.extend(sentence.iter().cloned());
    out.push(SENTENCE_END.to_string());
    out
}

impl NGramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn contexts(&self) -> impl Iterator<Item = &[String]> {
        self.table.keys().map(Vec::as_slice)
    }

    /// log P(w | context). The context is the last n−1 tokens, `<s>`-padded.
    /// Out-of-vocabulary words score as `<unk>` when reserved, otherwise at
    /// the smoothing floor of the context.
    pub fn log_prob(&self, context: &[String], word: &str) -> f64 {
        let uniform = -(self.vocab.len() as f64).ln();
        let Some(dist) = self.table.get(context) else { return uniform };
        match self.index.get(word).or_else(|| self.index.get(UNKNOWN)) {
            Some(&i) => dist[i],
            None => dist.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }

    /// Σ_u log P(y_u | history) + log P(</s> | history).
    pub fn score<S: AsRef<str>>(&self, tokens: &[S]) -> f64 {
        let owned: Vec<String> = tokens.iter().map(|t| self.normalize(t.as_ref())).collect();
        let padded = pad(&owned, self.order);
        padded
            .windows(self.order)
            .map(|w| {
                let (ctx, word) = w.split_at(self.order - 1);
                self.log_prob(ctx, &word[0])
            })
            .sum()
    }

    fn normalize(&self, token: &str) -> String {
        if self.index.contains_key(token) || !self.index.contains_key(UNKNOWN) {
            token.to_string()
        } else {
            UNKNOWN.to_string()
        }
    }

    /// Σ_w P(w | context) for each stored context.
    pub fn context_sums(&self) -> Vec<(Vec<String>, f64)> {
        self.table.iter().map(|(c, d)| (c.clone(), d.iter().map(|l| l.exp()).sum())).collect()
    }

    /// `order <n>` header; then the conditional of every stored n-gram;
    /// for n ≥ 2, unigram lines give the uniform distribution used for
    /// unseen contexts. Backoff fields are empty (zero).
    pub fn to_text(&self) -> String {
        let mut out = format!("order {}\n", self.order);
        for (ctx, dist) in &self.table {
            for (w, lp) in self.vocab.iter().zip(dist) {
                let gram: Vec<&str> = ctx.iter().map(String::as_str).chain([w.as_str()]).collect();
                writeln!(out, "{lp}\t{}\t", gram.join(" ")).expect("string write");
            }
        }
        if self.order > 1 {
            let lp = -(self.vocab.len() as f64).ln();
            for w in &self.vocab {
                writeln!(out, "{lp}\t{w}\t").expect("string write");
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let order: usize = lines
            .next()
            .and_then(|(_, l)| l.strip_prefix("order "))
            .and_then(|n| n.trim().parse().ok())
            .filter(|n| (1..=4).contains(n))
            .ok_or_else(|| format_err!("LM file must start with \"order <1-4>\""))?;
        let mut grams: BTreeMap<Vec<String>, BTreeMap<String, f64>> = BTreeMap::new();
        let mut unigrams = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(format_err!("LM line {}: expected 3 tab-separated fields", i + 1));
            }
            let lp: f64 = fields[0].parse().map_err(|_| format_err!("LM line {}: bad log-prob", i + 1))?;
            if !(lp.is_finite() && lp <= 0.0) {
                return Err(format_err!("LM line {}: log-prob must be finite and ≤ 0", i + 1));
            }
            if !fields[2].trim().is_empty() && fields[2].trim().parse::<f64>().ok() != Some(0.0) {
                return Err(format_err!("LM line {}: non-zero backoff weights are not supported", i + 1));
            }
            let mut gram: Vec<String> = fields[1].split(' ').map(str::to_string).collect();
            if gram.len() == order {
                let w = gram.pop().expect("non-empty");
                grams.entry(gram).or_default().insert(w, lp);
            } else if gram.len() == 1 && order > 1 {
                unigrams.push(gram.remove(0));
            } else {
                return Err(format_err!("LM line {}: {}-gram in an order-{order} model", i + 1, gram.len()));
            }
        }
        let mut vocab: Vec<String> = if order > 1 {
            unigrams
        } else {
            grams.values().flat_map(|d| d.keys().cloned()).collect()
        };
        vocab.sort();
        vocab.dedup();
        if !vocab.iter().any(|w| w == SENTENCE_END) {
            return Err(format_err!("LM vocabulary lacks {SENTENCE_END}"));
        }
        let index: HashMap<String, usize> = vocab.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        let mut table = BTreeMap::new();
        for (ctx, dist) in grams {
            if dist.len() != vocab.len() || dist.keys().any(|w| !index.contains_key(w)) {
                return Err(format_err!("LM context {:?} does not cover the vocabulary", ctx.join(" ")));
            }
            table.insert(ctx, dist.into_values().collect());
        }
        Ok(NGramModel { order, vocab, index, table })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path, self.to_text())?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionWeights {
    /// Shallow-fusion LM weight.
    pub lambda: f64,
    /// Length reward.
    pub beta: f64,
    /// Rescoring weight of the first-pass score.
    pub lambda1: f64,
    /// Rescoring weight of the LM score.
    pub lambda2: f64,
}

impl Default for FusionWeights {
    fn default() -> Self {
        FusionWeights { lambda: 0.3, beta: 0.6, lambda1: 1.0, lambda2: 0.3 }
    }
}

/// How the LM score is combined with the first-pass score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RescoreMethod {
    /// `λ1·score + λ2·lm`.
    #[default]
    TwoPass,
    /// `score + λ·lm + β·|y|` over the final n-best.
    Shallow,
}

impl FromStr for RescoreMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_pass" => Ok(RescoreMethod::TwoPass),
            "shallow" => Ok(RescoreMethod::Shallow),
            _ => Err(usage_err!("unknown rescore method {s:?} (expected two_pass or shallow)")),
        }
    }
}

/// `transducer + λ·lm + β·len`.
pub fn shallow_fuse(transducer: f64, lm: f64, len: usize, w: &FusionWeights) -> f64 {
    transducer + w.lambda * lm + w.beta * len as f64
}

/// Reorders by `λ1·score + λ2·lm_score`, descending; ties keep input order.
/// Each hypothesis gets its LM score attached.
pub fn rescore_nbest<F>(hyps: Vec<Hypothesis>, lm_score: F, lambda1: f64, lambda2: f64) -> Result<Vec<Hypothesis>>
where
    F: Fn(&Hypothesis) -> f64,
{
    if hyps.is_empty() {
        return Err(usage_err!("cannot rescore an empty n-best list"));
    }
    let mut scored: Vec<(f64, Hypothesis)> = hyps
        .into_iter()
        .map(|mut h| {
            let lm = lm_score(&h);
            h.lm_score = Some(lm);
            (lambda1 * h.score + lambda2 * lm, h)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok(scored.into_iter().map(|(_, h)| h).collect())
}

/// Reorders by [`shallow_fuse`] of each hypothesis' score, descending; ties
/// keep input order. Applied to a finished n-best list, not inside the beam.
pub fn fuse_nbest<F>(hyps: Vec<Hypothesis>, lm_score: F, weights: &FusionWeights) -> Result<Vec<Hypothesis>>
where
    F: Fn(&Hypothesis) -> f64,
{
    if hyps.is_empty() {
        return Err(usage_err!("cannot fuse an empty n-best list"));
    }
    let mut scored: Vec<(f64, Hypothesis)> = hyps
        .into_iter()
        .map(|mut h| {
            let lm = lm_score(&h);
            h.lm_score = Some(lm);
            (shallow_fuse(h.score, lm, h.labels.len(), weights), h)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok(scored.into_iter().map(|(_, h)| h).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabelSequence;

    fn corpus(lines: &str) -> Vec<Vec<String>> {
        tokenize(lines)
    }

    fn closed(order: usize) -> NGramOptions {
        NGramOptions { order, addk: 1.0, include_unk: false, extra_tokens: vec![] }
    }

    #[test]
    fn hand_counts() {
        let m = train_ngram(&corpus("a b\na b\na b\na c\n"), &closed(2)).unwrap();
        assert_eq!(m.vocab(), &["</s>", "a", "b", "c"]);
        let a = vec!["a".to_string()];
        assert_eq!(m.log_prob(&a, "b").exp(), 0.5);
        let u = train_ngram(&corpus("a"), &closed(1)).unwrap();
        assert_eq!(u.log_prob(&[], "a").exp(), 0.5);
    }

    #[test]
    fn score_matches_hand_computation() {
        let m = train_ngram(&corpus("a b\na b\na b\na c\n"), &closed(2)).unwrap();
        // <s>→a: (4+1)/(4+4); a→b: 4/8; b→</s>: (3+1)/(3+4)
        let want = (5.0f64 / 8.0).ln() + 0.5f64.ln() + (4.0f64 / 7.0).ln();
        assert!((m.score(&["a", "b"]) - want).abs() < 1e-12);
        let s = vec![SENTENCE_START.to_string()];
        assert_eq!(m.score::<&str>(&[]), m.log_prob(&s, SENTENCE_END));
    }

    #[test]
    fn unseen_contexts_are_uniform() {
        let m = train_ngram(&corpus("a b\nb b"), &NGramOptions { order: 3, ..Default::default() }).unwrap();
        let ctx = vec!["b".to_string(), "a".to_string()];
        let v = m.vocab().len() as f64;
        assert!((m.log_prob(&ctx, "a") + v.ln()).abs() < 1e-12);
        assert_eq!(m.score(&["zzz"]), m.score(&[UNKNOWN]));
        assert!(m.score(&["a", "zzz", "b"]) <= 0.0);
    }

    #[test]
    fn normalized_for_every_context() {
        for order in 1..=4 {
            let m = train_ngram(&corpus("x y z\nz z y x\ny\nx x x x"), &NGramOptions { order, addk: 0.25, ..Default::default() }).unwrap();
            for (ctx, sum) in m.context_sums() {
                assert!((sum - 1.0).abs() < 1e-6, "{ctx:?} {sum}");
            }
        }
    }

    #[test]
    fn file_roundtrip() {
        for order in 1..=3 {
            let m = train_ngram(&corpus("a b\nb c a\nc"), &NGramOptions { order, ..Default::default() }).unwrap();
            let back = NGramModel::from_text(&m.to_text()).unwrap();
            assert_eq!(back, m);
        }
        assert!(NGramModel::from_text("order 9\n").is_err());
        assert!(NGramModel::from_text("order 1\n-0.5\ta b\t\n").is_err());
        assert!(NGramModel::from_text("order 1\n0.5\ta\t\n").is_err());
    }

    #[test]
    fn training_errors() {
        assert!(train_ngram(&[], &closed(2)).is_err());
        assert!(train_ngram(&corpus("a"), &closed(5)).is_err());
        assert!(train_ngram(&corpus("a"), &NGramOptions { addk: 0.0, ..closed(1) }).is_err());
    }

    #[test]
    fn fusion_arithmetic() {
        let w = FusionWeights { lambda: 0.3, beta: 0.1, ..Default::default() };
        assert!((shallow_fuse(-2.0, -1.0, 4, &w) - -1.9).abs() < 1e-12);
        let off = FusionWeights { lambda: 0.0, beta: 0.0, ..Default::default() };
        assert_eq!(shallow_fuse(-2.5, -7.0, 3, &off), -2.5);
    }

    fn hyp(labels: &[u32], score: f64) -> Hypothesis {
        Hypothesis { labels: LabelSequence::new(labels.to_vec()).unwrap(), score, lm_score: None }
    }

    #[test]
    fn rescoring_reorders() {
        let hyps = vec![hyp(&[1], -1.0), hyp(&[2], -1.5), hyp(&[3], -2.0)];
        let lm = |h: &Hypothesis| [0.0, -4.0, -1.0, -0.5][h.labels.as_slice()[0] as usize];
        // combined: -1 + 0.5·-4 = -3.0; -1.5 + 0.5·-1 = -2.0; -2 + 0.5·-0.5 = -2.25
        let out = rescore_nbest(hyps.clone(), lm, 1.0, 0.5).unwrap();
        let order: Vec<u32> = out.iter().map(|h| h.labels.as_slice()[0]).collect();
        assert_eq!(order, vec![2, 3, 1]);
        assert_eq!(out[0].lm_score, Some(-1.0));
        let same = rescore_nbest(hyps.clone(), lm, 1.0, 0.0).unwrap();
        assert!(same.iter().zip(&hyps).all(|(a, b)| a.labels == b.labels));
        let lm_only = rescore_nbest(hyps.clone(), lm, 0.0, 1.0).unwrap();
        assert_eq!(lm_only[0].labels.as_slice(), &[3]);
        assert!(rescore_nbest(vec![], lm, 1.0, 1.0).is_err());
    }

    #[test]
    fn fusion_rewards_length() {
        let hyps = vec![hyp(&[1], -1.0), hyp(&[1, 2], -1.2)];
        let lm = |_: &Hypothesis| -1.0;
        let w = FusionWeights { lambda: 0.3, beta: 0.6, ..Default::default() };
        // -1.0 - 0.3 + 0.6 = -0.7; -1.2 - 0.3 + 1.2 = -0.3
        let out = fuse_nbest(hyps.clone(), lm, &w).unwrap();
        assert_eq!(out[0].labels.as_slice(), &[1, 2]);
        let plain = fuse_nbest(hyps, lm, &FusionWeights { lambda: 0.0, beta: 0.0, ..w }).unwrap();
        assert_eq!(plain[0].labels.as_slice(), &[1]);
        assert!(fuse_nbest(vec![], lm, &w).is_err());
    }
}
