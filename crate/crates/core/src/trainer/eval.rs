//! Decoding a model and scoring it against transcripts.

use crate::corpus::{Utterance, Vocab};
use crate::decode::{ctc_beam_search, encdec_beam_search, Hypothesis, NGramLM, WerAccumulator};
use crate::nn::{Matrix, ModelBundle, ModelKind};
use crate::{Result, Scalar};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    /// Beam for frame-level models (prefix search).
    pub ctc_beam: usize,
    /// Beam for encoder-decoder models.
    pub encdec_beam: usize,
    pub lm_weight: f64,
    pub max_len: usize,
    pub length_norm: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            ctc_beam: 8,
            encdec_beam: 20,
            lm_weight: 0.5,
            max_len: 200,
            length_norm: false,
        }
    }
}

/// Top hypothesis for one utterance. Frame-level models use prefix beam
/// search with `lm` fused; encoder-decoders never use the LM. An empty
/// result yields an empty hypothesis.
pub fn decode_utterance<T: Scalar>(
    model: &ModelBundle<T>,
    features: &Matrix<T>,
    lm: Option<&NGramLM>,
    cfg: &DecodeConfig,
) -> Result<Hypothesis> {
    let hyps = match model.config.kind {
        ModelKind::Ctc | ModelKind::FrameClassifier => {
            let lp = model.frame_logprobs(features)?;
            ctc_beam_search(&lp, cfg.ctc_beam, lm, cfg.lm_weight)?
        }
        ModelKind::EncDec => {
            let enc = model.encode(features)?;
            let max_len = cfg.max_len.min(features.rows()).max(1);
            encdec_beam_search(&enc, &model.params, &model.config.decoder(), cfg.encdec_beam, max_len, cfg.length_norm)?
        }
    };
    Ok(hyps.into_iter().next().unwrap_or(Hypothesis {
        tokens: Vec::new(),
        score: f64::NEG_INFINITY,
        per_token_scores: None,
    }))
}

/// WER of one test set; `wer` is in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WerRow {
    pub set: String,
    pub wer: f64,
    pub subs: usize,
    pub ins: usize,
    pub dels: usize,
    pub ref_words: usize,
    pub utterances: usize,
    /// Utterances skipped for lack of a transcript.
    pub excluded: usize,
}

impl WerRow {
    pub const CSV_HEADER: &'static str = "set,wer,subs,ins,dels";

    pub fn from_accumulator(set: &str, acc: &WerAccumulator, excluded: usize) -> Self {
        WerRow {
            set: set.to_string(),
            wer: acc.wer().map_or(0.0, |w| 100.0 * w),
            subs: acc.counts.subs,
            ins: acc.counts.ins,
            dels: acc.counts.dels,
            ref_words: acc.counts.ref_len,
            utterances: acc.utterances,
            excluded,
        }
    }

    pub fn csv_row(&self) -> String {
        format!("{},{:.4},{},{},{}", self.set, self.wer, self.subs, self.ins, self.dels)
    }
}

/// Decode and score every set, one row per set in the given order.
pub fn evaluate<T: Scalar>(
    model: &ModelBundle<T>,
    sets: &[(&str, &[Utterance])],
    lm: Option<&NGramLM>,
    cfg: &DecodeConfig,
) -> Result<Vec<WerRow>> {
    let vocab = Vocab::with_size(model.config.vocab_size)?;
    sets.iter()
        .map(|(name, utts)| {
            let mut acc = WerAccumulator::default();
            let mut excluded = 0;
            for u in utts.iter() {
                let Some(reference) = u.transcript.as_deref() else {
                    excluded += 1;
                    continue;
                };
                if reference.split_whitespace().next().is_none() {
                    excluded += 1;
                    continue;
                }
                let feats: Matrix<T> = u.features.frames.cast();
                let hyp = decode_utterance(model, &feats, lm, cfg)?;
                acc.add(reference, &vocab.decode(&hyp.tokens));
            }
            Ok(WerRow::from_accumulator(name, &acc, excluded))
        })
        .collect()
}
