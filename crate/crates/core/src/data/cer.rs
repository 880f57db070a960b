use super::vocab::LabelSequence;
use crate::error::{usage_err, Result};

/// Levenshtein distance with unit substitution, insertion and deletion costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance normalised by the reference length.
pub fn cer(reference: &LabelSequence, hypothesis: &LabelSequence) -> Result<f64> {
    if reference.is_empty() {
        return Err(usage_err!("CER undefined for an empty reference"));
    }
    Ok(edit_distance(reference.as_slice(), hypothesis.as_slice()) as f64 / reference.len() as f64)
}

/// Corpus-level accumulator: total edits over total reference labels.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CerTally {
    pub edits: usize,
    pub reference_len: usize,
}

impl CerTally {
    pub fn add(&mut self, reference: &LabelSequence, hypothesis: &LabelSequence) {
        self.edits += edit_distance(reference.as_slice(), hypothesis.as_slice());
        self.reference_len += reference.len();
    }

    pub fn rate(&self) -> Result<f64> {
        if self.reference_len == 0 {
            return Err(usage_err!("CER undefined for empty references"));
        }
        Ok(self.edits as f64 / self.reference_len as f64)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn seq(v: &[u32]) -> LabelSequence {
        LabelSequence::new(v.to_vec()).unwrap()
    }

    #[test]
    fn worked_cases() {
        assert_eq!(cer(&seq(&[1, 2, 3]), &seq(&[1, 2, 3])).unwrap(), 0.0);
        assert!((cer(&seq(&[1, 2, 3]), &seq(&[1, 9, 3])).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(cer(&seq(&[1, 2]), &seq(&[])).unwrap(), 1.0);
        assert!(cer(&seq(&[]), &seq(&[1])).is_err());
    }

    proptest! {
        #[test]
        fn edit_distance_is_a_metric(
            a in prop::collection::vec(1u32..4, 0..8),
            b in prop::collection::vec(1u32..4, 0..8),
            c in prop::collection::vec(1u32..4, 0..8),
        ) {
            prop_assert_eq!(edit_distance(&a, &a), 0);
            prop_assert_eq!(edit_distance(&a, &b), edit_distance(&b, &a));
            prop_assert!(edit_distance(&a, &c) <= edit_distance(&a, &b) + edit_distance(&b, &c));
        }
    }
}
