use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{format_err, usage_err, Result};

pub const BLANK: u32 = 0;
pub const BLANK_TOKEN: &str = "<blank>";

/// Blank-free label ids in `[1, V]`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabelSequence(Vec<u32>);

impl LabelSequence {
    pub fn new(labels: Vec<u32>) -> Result<Self> {
        if labels.contains(&BLANK) {
            return Err(usage_err!("blank (0) inside a label sequence"));
        }
        Ok(LabelSequence(labels))
    }

    pub fn empty() -> Self {
        LabelSequence(Vec::new())
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<u32> {
        self.0
    }
}

impl fmt::Display for LabelSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(u32::to_string).collect();
        f.write_str(&parts.join(" "))
    }
}

/// Bijective token ↔ id table with contiguous ids `0..=V`; id 0 is blank.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary from non-blank tokens, assigned ids 1..=V in order.
    pub fn new<I, T>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = T>,
        T: Into<String>,
    {
        let mut all = vec![BLANK_TOKEN.to_string()];
        all.extend(tokens.into_iter().map(Into::into));
        Self::from_table(all)
    }

    fn from_table(tokens: Vec<String>) -> Result<Self> {
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(usage_err!("invalid token {t:?}"));
            }
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(usage_err!("duplicate token {t:?}"));
            }
        }
        Ok(Vocabulary { tokens, ids })
    }

    /// Synthetic vocabulary `s1 … sV`.
    pub fn synthetic(size: usize) -> Self {
        Self::new((1..=size).map(|i| format!("s{i}"))).expect("synthetic tokens are unique")
    }

    /// Number of non-blank labels V.
    pub fn num_labels(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn encode(&self, text: &str) -> Result<LabelSequence> {
        let labels = text
            .split_whitespace()
            .map(|t| match self.id(t) {
                Some(BLANK) | None => Err(format_err!("unknown token {t:?}")),
                Some(id) => Ok(id),
            })
            .collect::<Result<Vec<_>>>()?;
        LabelSequence::new(labels)
    }

    pub fn decode(&self, labels: &LabelSequence) -> Vec<&str> {
        labels.as_slice().iter().map(|&id| self.token(id).unwrap_or("<unk>")).collect()
    }

    /// One `token<TAB>id` line per entry.
    pub fn to_text(&self) -> String {
        self.tokens.iter().enumerate().map(|(i, t)| format!("{t}\t{i}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (tok, id) = line
                .split_once('\t')
                .ok_or_else(|| format_err!("vocab line {}: expected token<TAB>id", n + 1))?;
            let id: usize = id.trim().parse().map_err(|_| format_err!("vocab line {}: bad id", n + 1))?;
            pairs.push((id, tok.to_string()));
        }
        pairs.sort();
        if pairs.iter().enumerate().any(|(i, (id, _))| *id != i) {
            return Err(format_err!("vocabulary ids must be contiguous from 0"));
        }
        if pairs.first().map(|(_, t)| t.as_str()) != Some(BLANK_TOKEN) {
            return Err(format_err!("id 0 must be {BLANK_TOKEN}"));
        }
        Self::from_table(pairs.into_iter().map(|(_, t)| t).collect()).map_err(|e| format_err!("{e}"))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}
