//! Token n-gram model with stupid-backoff scoring.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

pub const BACKOFF: f64 = 0.4;

#[derive(Debug, Clone, PartialEq)]
pub struct NGramLM {
    order: usize,
    backoff: f64,
    /// Regular token count; `vocab_size` is the end id and `vocab_size + 1` the begin id.
    vocab_size: usize,
    counts: HashMap<Vec<u32>, u64>,
    context_counts: HashMap<Vec<u32>, u64>,
    total: u64,
}

#[derive(Serialize, Deserialize)]
struct LmFile {
    order: usize,
    backoff: f64,
    vocab_size: usize,
    total: u64,
    counts: Vec<(Vec<u32>, u64)>,
    context_counts: Vec<(Vec<u32>, u64)>,
}

/// Train with the vocabulary size inferred from the largest token id.
pub fn train_ngram(transcripts: &[Vec<u32>], order: usize) -> Result<NGramLM> {
    let vocab = transcripts.iter().flatten().copied().max().map_or(0, |m| m as usize + 1);
    NGramLM::train(transcripts, order, vocab)
}

impl NGramLM {
    /// Maximum-likelihood counts of every n-gram up to `order`, with
    /// sentences padded by begin markers and closed by an end marker.
    pub fn train(transcripts: &[Vec<u32>], order: usize, vocab_size: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::Training("n-gram order must be >= 1".into()));
        }
        if transcripts.is_empty() {
            return Err(Error::Training("empty LM training corpus".into()));
        }
        let vocab_size = vocab_size.max(transcripts.iter().flatten().copied().max().map_or(0, |m| m as usize + 1));
        let (eos, bos) = (vocab_size as u32, vocab_size as u32 + 1);
        let mut counts = HashMap::new();
        let mut context_counts = HashMap::new();
        let mut total = 0;
        for s in transcripts {
            let mut padded = vec![bos; order - 1];
            padded.extend_from_slice(s);
            padded.push(eos);
            for i in order - 1..padded.len() {
                total += 1;
                for n in 1..=order {
                    let ctx = &padded[i + 1 - n..i];
                    *context_counts.entry(ctx.to_vec()).or_insert(0) += 1;
                    *counts.entry(padded[i + 1 - n..=i].to_vec()).or_insert(0) += 1;
                }
            }
        }
        Ok(NGramLM {
            order,
            backoff: BACKOFF,
            vocab_size,
            counts,
            context_counts,
            total,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn eos(&self) -> u32 {
        self.vocab_size as u32
    }

    pub fn bos(&self) -> u32 {
        self.vocab_size as u32 + 1
    }

    /// The last `order - 1` tokens of the begin-padded history.
    pub fn context(&self, history: &[u32]) -> Vec<u32> {
        let n = self.order - 1;
        let mut ctx = vec![self.bos(); n.saturating_sub(history.len())];
        ctx.extend_from_slice(&history[history.len().saturating_sub(n)..]);
        ctx
    }

    fn unigram(&self, w: u32) -> f64 {
        let c = self.counts.get(&[w][..]).copied().unwrap_or(0);
        (c as f64 + 1.0) / (self.total as f64 + self.vocab_size as f64 + 1.0)
    }

    /// Stupid-backoff score of `w` after the context `ctx` (at most
    /// `order - 1` tokens, begin-padded).
    pub fn score(&self, ctx: &[u32], w: u32) -> f64 {
        let mut penalty = 1.0;
        let mut key = Vec::with_capacity(ctx.len() + 1);
        for start in 0..ctx.len() {
            let c = &ctx[start..];
            key.clear();
            key.extend_from_slice(c);
            key.push(w);
            if let Some(&n) = self.counts.get(&key) {
                let d = self.context_counts[c];
                return penalty * n as f64 / d as f64;
            }
            penalty *= self.backoff;
        }
        penalty * self.unigram(w)
    }

    /// Natural-log score of `w` following the full token `history`.
    pub fn log_score(&self, history: &[u32], w: u32) -> f64 {
        self.score(&self.context(history), w).ln()
    }

    /// Log score of a whole sentence including the end marker.
    pub fn sentence_log_score(&self, tokens: &[u32]) -> f64 {
        (0..=tokens.len())
            .map(|i| {
                let w = if i == tokens.len() { self.eos() } else { tokens[i] };
                self.log_score(&tokens[..i], w)
            })
            .sum()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut counts: Vec<_> = self.counts.iter().map(|(k, v)| (k.clone(), *v)).collect();
        counts.sort();
        let mut context_counts: Vec<_> = self.context_counts.iter().map(|(k, v)| (k.clone(), *v)).collect();
        context_counts.sort();
        let f = LmFile {
            order: self.order,
            backoff: self.backoff,
            vocab_size: self.vocab_size,
            total: self.total,
            counts,
            context_counts,
        };
        let path = path.as_ref();
        let s = serde_json::to_string(&f).map_err(|e| Error::Input(e.to_string()))?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let f: LmFile = serde_json::from_str(&s).map_err(|e| Error::Parse { line: e.line(), msg: e.to_string() })?;
        Ok(NGramLM {
            order: f.order,
            backoff: f.backoff,
            vocab_size: f.vocab_size,
            counts: f.counts.into_iter().collect(),
            context_counts: f.context_counts.into_iter().collect(),
            total: f.total,
        })
    }
}
