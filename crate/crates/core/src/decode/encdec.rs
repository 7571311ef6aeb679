//! Length-bounded beam search for the attention decoder.

use super::{rank, Hypothesis};
use crate::nn::{Decoder, DecoderConfig, DecoderState, Matrix, ParamStore};
use crate::{Error, Result, Scalar};

struct Active<T> {
    tokens: Vec<u32>,
    scores: Vec<f64>,
    score: f64,
    state: DecoderState<T>,
}

fn ordering_score(score: f64, len: usize, length_norm: bool) -> f64 {
    if length_norm {
        score / (len.max(1)) as f64
    } else {
        score
    }
}

/// Beam search over decoder outputs. A hypothesis finishes when it emits
/// the end token or reaches `max_len` tokens. Scores are total log-probs;
/// with `length_norm` the ranking divides by the number of scored outputs.
pub fn encdec_beam_search<T: Scalar>(
    encoded: &Matrix<T>,
    params: &ParamStore<T>,
    cfg: &DecoderConfig,
    beam: usize,
    max_len: usize,
    length_norm: bool,
) -> Result<Vec<Hypothesis>> {
    if beam == 0 || max_len == 0 {
        return Err(Error::Config("beam and max_len must be >= 1".into()));
    }
    let dec = Decoder::new(cfg, params, encoded)?;
    let eos = cfg.eos();
    let mut finished: Vec<Hypothesis> = Vec::new();
    let mut active = vec![Active {
        tokens: Vec::new(),
        scores: Vec::new(),
        score: 0.0,
        state: dec.initial_state(),
    }];
    while !active.is_empty() {
        // (parent, token, score, per-token score)
        let mut cands: Vec<(usize, u32, f64, f64, Vec<u32>)> = Vec::new();
        let mut outs = Vec::with_capacity(active.len());
        for (i, a) in active.iter().enumerate() {
            let prev = a.tokens.last().copied().unwrap_or(cfg.bos());
            let out = dec.step(&a.state, prev)?;
            for (k, lp) in out.log_probs.iter().enumerate() {
                let lp = lp.f64();
                if lp == f64::NEG_INFINITY {
                    continue;
                }
                let mut toks = a.tokens.clone();
                if k as u32 != eos {
                    toks.push(k as u32);
                }
                cands.push((i, k as u32, a.score + lp, lp, toks));
            }
            outs.push(out.state);
        }
        let key = |c: &(usize, u32, f64, f64, Vec<u32>)| {
            let n = c.4.len() + usize::from(c.1 == eos);
            ordering_score(c.2, n, length_norm)
        };
        cands.sort_by(|a, b| rank(key(a), &a.4, key(b), &b.4).then(a.1.cmp(&b.1)));
        cands.truncate(beam);
        let mut next = Vec::new();
        for (parent, tok, score, lp, toks) in cands {
            let mut scores = active[parent].scores.clone();
            scores.push(lp);
            if tok == eos || toks.len() >= max_len {
                finished.push(Hypothesis {
                    tokens: toks,
                    score,
                    per_token_scores: Some(scores),
                });
            } else {
                next.push(Active {
                    tokens: toks,
                    scores,
                    score,
                    state: outs[parent].clone(),
                });
            }
        }
        active = next;
        if !length_norm {
            let best_done = finished.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
            let best_open = active.iter().map(|a| a.score).fold(f64::NEG_INFINITY, f64::max);
            if best_done >= best_open {
                break;
            }
        }
    }
    let key = |h: &Hypothesis| {
        let n = h.per_token_scores.as_ref().map_or(h.tokens.len(), Vec::len);
        ordering_score(h.score, n, length_norm)
    };
    finished.sort_by(|a, b| rank(key(a), &a.tokens, key(b), &b.tokens));
    Ok(finished)
}

/// Greedy decoding: the arg-max output at every step.
pub fn encdec_greedy<T: Scalar>(
    encoded: &Matrix<T>,
    params: &ParamStore<T>,
    cfg: &DecoderConfig,
    max_len: usize,
) -> Result<Hypothesis> {
    let dec = Decoder::new(cfg, params, encoded)?;
    let mut state = dec.initial_state();
    let mut tokens = Vec::new();
    let mut scores = Vec::new();
    let mut prev = cfg.bos();
    loop {
        let out = dec.step(&state, prev)?;
        let mut best = 0;
        for k in 1..out.log_probs.len() {
            if out.log_probs[k] > out.log_probs[best] {
                best = k;
            }
        }
        scores.push(out.log_probs[best].f64());
        if best as u32 == cfg.eos() {
            break;
        }
        tokens.push(best as u32);
        if tokens.len() >= max_len {
            break;
        }
        state = out.state;
        prev = best as u32;
    }
    Ok(Hypothesis {
        score: scores.iter().sum(),
        tokens,
        per_token_scores: Some(scores),
    })
}
