//! Best-path and prefix beam search for CTC posteriors.

use super::{rank, Hypothesis, NGramLM};
use crate::nn::Matrix;
use crate::scalar::log_add;
use crate::{Error, Result, Scalar};
use std::collections::HashMap;

/// Collapse a frame path: merge repeats, then drop blanks.
pub fn collapse(path: &[u32], blank: u32) -> Vec<u32> {
    let mut out = Vec::new();
    let mut prev = None;
    for &p in path {
        if Some(p) != prev && p != blank {
            out.push(p);
        }
        prev = Some(p);
    }
    out
}

fn argmax<T: Scalar>(row: &[T]) -> u32 {
    let mut best = 0;
    for (k, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = k;
        }
    }
    best as u32
}

/// Greedy best-path decoding; the blank is the last column.
pub fn ctc_greedy<T: Scalar>(logprobs: &Matrix<T>) -> Result<Vec<u32>> {
    if logprobs.rows() == 0 || logprobs.cols() == 0 {
        return Err(Error::Input("empty logprobs".into()));
    }
    let path: Vec<u32> = logprobs.iter_rows().map(argmax).collect();
    Ok(collapse(&path, logprobs.cols() as u32 - 1))
}

#[derive(Clone, Copy)]
struct Entry {
    blank: f64,
    non_blank: f64,
    lm: f64,
}

impl Entry {
    fn total(&self) -> f64 {
        log_add(self.blank, self.non_blank)
    }
}

/// Prefix beam search with optional shallow fusion. The blank is the last
/// column of `logprobs`. Returns surviving hypotheses, best first.
pub fn ctc_beam_search<T: Scalar>(
    logprobs: &Matrix<T>,
    beam: usize,
    lm: Option<&NGramLM>,
    lm_weight: f64,
) -> Result<Vec<Hypothesis>> {
    if logprobs.rows() == 0 || logprobs.cols() == 0 {
        return Err(Error::Input("empty logprobs".into()));
    }
    if beam == 0 {
        return Err(Error::Config("beam must be >= 1".into()));
    }
    if !(lm_weight >= 0.0) {
        return Err(Error::Config("lm_weight must be >= 0".into()));
    }
    let ninf = f64::NEG_INFINITY;
    let blank = logprobs.cols() - 1;
    let lm = lm.filter(|_| lm_weight > 0.0);
    let lm_term = |prefix: &[u32], w: u32| lm.map_or(0.0, |m| lm_weight * m.log_score(prefix, w));

    let mut beams: Vec<(Vec<u32>, Entry)> = vec![(
        Vec::new(),
        Entry {
            blank: 0.0,
            non_blank: ninf,
            lm: 0.0,
        },
    )];
    for row in logprobs.iter_rows() {
        let lp: Vec<f64> = row.iter().map(|v| v.f64()).collect();
        let mut next: HashMap<Vec<u32>, Entry> = HashMap::with_capacity(beams.len() * lp.len());
        for (prefix, e) in &beams {
            let total = e.total();
            let slot = next.entry(prefix.clone()).or_insert(Entry {
                blank: ninf,
                non_blank: ninf,
                lm: e.lm,
            });
            slot.blank = log_add(slot.blank, total + lp[blank]);
            if let Some(&last) = prefix.last() {
                slot.non_blank = log_add(slot.non_blank, e.non_blank + lp[last as usize]);
            }
            for (c, &p) in lp.iter().enumerate().take(blank) {
                let c = c as u32;
                let mut ext = prefix.clone();
                ext.push(c);
                let from = if prefix.last() == Some(&c) { e.blank } else { total };
                let slot = next.entry(ext).or_insert_with(|| Entry {
                    blank: ninf,
                    non_blank: ninf,
                    lm: e.lm + lm_term(prefix, c),
                });
                slot.non_blank = log_add(slot.non_blank, from + p);
            }
        }
        let mut ranked: Vec<(Vec<u32>, Entry)> = next.into_iter().filter(|(_, e)| e.total() > ninf).collect();
        ranked.sort_by(|a, b| rank(a.1.total() + a.1.lm, &a.0, b.1.total() + b.1.lm, &b.0));
        ranked.truncate(beam);
        beams = ranked;
    }
    let mut hyps: Vec<Hypothesis> = beams
        .into_iter()
        .map(|(tokens, e)| {
            let end = lm.map_or(0.0, |m| lm_weight * m.log_score(&tokens, m.eos()));
            Hypothesis {
                score: e.total() + e.lm + end,
                tokens,
                per_token_scores: None,
            }
        })
        .collect();
    hyps.sort_by(|a, b| rank(a.score, &a.tokens, b.score, &b.tokens));
    Ok(hyps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn onehot(path: &[usize], classes: usize) -> Matrix<f64> {
        let rows: Vec<Vec<f64>> = path
            .iter()
            .map(|&c| (0..classes).map(|k| if k == c { 0.0 } else { f64::NEG_INFINITY }).collect())
            .collect();
        Matrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn blank_separates_repeats() {
        let lp = onehot(&[0, 2, 0], 3);
        let h = ctc_beam_search(&lp, 4, None, 0.0).unwrap();
        assert_eq!(h[0].tokens, vec![0, 0]);
        assert_eq!(h[0].score, 0.0);
    }

    #[test]
    fn adjacent_repeats_merge() {
        let lp = onehot(&[0, 0], 3);
        let h = ctc_beam_search(&lp, 4, None, 0.0).unwrap();
        assert_eq!(h[0].tokens, vec![0]);
        assert_eq!(ctc_greedy(&lp).unwrap(), vec![0]);
    }

    #[test]
    fn collapse_rules() {
        assert_eq!(collapse(&[3, 0, 0, 3, 1, 1, 3, 1], 3), vec![0, 1, 1]);
        assert!(collapse(&[2, 2], 2).is_empty());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ctc_beam_search(&Matrix::<f64>::zeros(0, 3), 4, None, 0.0).is_err());
        assert!(ctc_beam_search(&onehot(&[0], 2), 0, None, 0.0).is_err());
        assert!(ctc_greedy(&Matrix::<f32>::zeros(0, 3)).is_err());
    }

    #[test]
    fn lm_shifts_preference() {
        // two frames, each split evenly between 'a' and 'b'
        let half = 0.5f64.ln();
        let lp = Matrix::from_rows(&[vec![half, half, f64::NEG_INFINITY]]).unwrap();
        let lm = crate::decode::train_ngram(&[vec![1], vec![1], vec![1]], 2).unwrap();
        let none = ctc_beam_search(&lp, 4, None, 0.0).unwrap();
        assert_eq!(none[0].tokens, vec![0]);
        let fused = ctc_beam_search(&lp, 4, Some(&lm), 1.0).unwrap();
        assert_eq!(fused[0].tokens, vec![1]);
    }
}
