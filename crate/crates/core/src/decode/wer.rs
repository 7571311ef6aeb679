//! Word error rate via Levenshtein alignment.

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EditCounts {
    pub subs: usize,
    pub ins: usize,
    pub dels: usize,
    pub ref_len: usize,
}

impl EditCounts {
    pub fn errors(&self) -> usize {
        self.subs + self.ins + self.dels
    }

    pub fn wer(&self) -> Result<f64> {
        if self.ref_len == 0 {
            return Err(Error::Scoring("empty reference".into()));
        }
        Ok(self.errors() as f64 / self.ref_len as f64)
    }
}

/// Unit-cost alignment. On the backtrace a diagonal step is preferred over
/// a deletion, and a deletion over an insertion.
pub fn edit_counts<W: PartialEq>(reference: &[W], hyp: &[W]) -> EditCounts {
    let (n, m) = (reference.len(), hyp.len());
    let mut d = vec![0usize; (n + 1) * (m + 1)];
    let at = |i: usize, j: usize| i * (m + 1) + j;
    for i in 0..=n {
        d[at(i, 0)] = i;
    }
    for j in 0..=m {
        d[at(0, j)] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[at(i - 1, j - 1)] + usize::from(reference[i - 1] != hyp[j - 1]);
            d[at(i, j)] = sub.min(d[at(i - 1, j)] + 1).min(d[at(i, j - 1)] + 1);
        }
    }
    let mut c = EditCounts {
        ref_len: n,
        ..Default::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let diff = usize::from(reference[i - 1] != hyp[j - 1]);
            if d[at(i, j)] == d[at(i - 1, j - 1)] + diff {
                c.subs += diff;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[at(i, j)] == d[at(i - 1, j)] + 1 {
            c.dels += 1;
            i -= 1;
        } else {
            c.ins += 1;
            j -= 1;
        }
    }
    c
}

/// WER between whitespace-separated word strings.
pub fn word_error_rate(reference: &str, hyp: &str) -> Result<(f64, EditCounts)> {
    let r: Vec<&str> = reference.split_whitespace().collect();
    let h: Vec<&str> = hyp.split_whitespace().collect();
    let c = edit_counts(&r, &h);
    Ok((c.wer()?, c))
}

/// Corpus-level totals; WER is total errors over total reference words.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WerAccumulator {
    pub counts: EditCounts,
    pub utterances: usize,
}

impl WerAccumulator {
    pub fn add(&mut self, reference: &str, hyp: &str) {
        let r: Vec<&str> = reference.split_whitespace().collect();
        let h: Vec<&str> = hyp.split_whitespace().collect();
        let c = edit_counts(&r, &h);
        self.counts.subs += c.subs;
        self.counts.ins += c.ins;
        self.counts.dels += c.dels;
        self.counts.ref_len += c.ref_len;
        self.utterances += 1;
    }

    pub fn wer(&self) -> Result<f64> {
        self.counts.wer()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical() {
        let (w, c) = word_error_rate("a b c", "a b c").unwrap();
        assert_eq!(w, 0.0);
        assert_eq!(c.errors(), 0);
    }

    #[test]
    fn one_substitution() {
        let (w, c) = word_error_rate("a b c", "a x c").unwrap();
        assert!((w - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!((c.subs, c.ins, c.dels), (1, 0, 0));
    }

    #[test]
    fn all_deleted() {
        let (w, c) = word_error_rate("a b", "").unwrap();
        assert_eq!(w, 1.0);
        assert_eq!(c.dels, 2);
    }

    #[test]
    fn empty_reference_is_error() {
        assert!(word_error_rate("", "a").is_err());
        assert!(WerAccumulator::default().wer().is_err());
    }

    #[test]
    fn substitution_preferred_over_ins_del() {
        let c = edit_counts(&["a"], &["b"]);
        assert_eq!((c.subs, c.ins, c.dels), (1, 0, 0));
    }

    #[test]
    fn accumulator_pools_words() {
        let mut acc = WerAccumulator::default();
        acc.add("a b c d", "a b c d");
        acc.add("a b", "x");
        assert_eq!(acc.counts.ref_len, 6);
        assert!((acc.wer().unwrap() - 2.0 / 6.0).abs() < 1e-15);
    }
}
