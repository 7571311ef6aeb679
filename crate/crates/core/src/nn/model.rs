//! Model bundles: an encoder plus one of three heads.

use super::checkpoint::{Checkpoint, Phase};
use super::decoder::DecoderConfig;
use super::encoder::{encode_with_trace, EncoderConfig};
use super::params::ParamStore;
use super::tensor::{Matrix, Tensor};
use crate::losses::{ctc_loss, frame_ce_loss, frame_distill_loss, seq_ce_loss, SparsePosterior, Teacher};
use crate::scalar::{axpy, dot, log_softmax_inplace, Scalar};
use crate::seed;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Encoder with a CTC output layer (blank is the last class).
    Ctc,
    /// Attention encoder-decoder.
    EncDec,
    /// Encoder with a per-frame softmax trained against fixed alignments.
    FrameClassifier,
}

impl ModelKind {
    pub fn code(self) -> u32 {
        match self {
            ModelKind::Ctc => 0,
            ModelKind::EncDec => 1,
            ModelKind::FrameClassifier => 2,
        }
    }

    pub fn from_code(c: u32) -> Result<Self> {
        match c {
            0 => Ok(ModelKind::Ctc),
            1 => Ok(ModelKind::EncDec),
            2 => Ok(ModelKind::FrameClassifier),
            _ => Err(Error::Checkpoint(format!("unknown model kind {c}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Ctc => "ctc",
            ModelKind::EncDec => "encdec",
            ModelKind::FrameClassifier => "frame",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ctc" => Ok(ModelKind::Ctc),
            "encdec" | "enc-dec" => Ok(ModelKind::EncDec),
            "frame" | "frame-classifier" | "hybrid" => Ok(ModelKind::FrameClassifier),
            _ => Err(Error::Config(format!("unknown model kind {s:?}"))),
        }
    }

    /// Whether the model emits per-frame distributions decodable with CTC search.
    pub fn is_framewise(self) -> bool {
        !matches!(self, ModelKind::EncDec)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub encoder: EncoderConfig,
    /// Number of output tokens, excluding blank / end markers.
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub dec_hidden: usize,
}

impl ModelConfig {
    pub fn new(kind: ModelKind, encoder: EncoderConfig, vocab_size: usize) -> Self {
        ModelConfig {
            kind,
            encoder,
            vocab_size,
            embed_dim: 16,
            dec_hidden: 32,
        }
    }

    pub fn decoder(&self) -> DecoderConfig {
        DecoderConfig {
            vocab_size: self.vocab_size,
            embed_dim: self.embed_dim,
            hidden_units: self.dec_hidden,
            enc_dim: self.encoder.output_dim(),
        }
    }

    /// Blank class of the frame-level heads.
    pub fn blank(&self) -> u32 {
        self.vocab_size as u32
    }

    pub fn num_frame_classes(&self) -> usize {
        self.vocab_size + 1
    }
}

/// What an utterance is trained towards.
#[derive(Debug, Clone)]
pub enum Target {
    Tokens(Vec<u32>),
    FrameLabels(Vec<u32>),
    Posterior(SparsePosterior),
}

#[derive(Debug, Clone, Copy)]
pub struct LossOptions {
    pub renormalize_sparse: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        LossOptions {
            renormalize_sparse: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
}

const META_KEYS: [&str; 10] = [
    "meta.kind",
    "meta.input_dim",
    "meta.num_layers",
    "meta.hidden",
    "meta.subsample",
    "meta.bidirectional",
    "meta.vocab_size",
    "meta.blank_id",
    "meta.embed_dim",
    "meta.dec_hidden",
];

impl<T: Scalar> ModelBundle<T> {
    /// Fresh parameters: uniform `[-0.1, 0.1]` weights, zero biases.
    pub fn init(config: ModelConfig, seed_value: u64) -> Result<Self> {
        if config.vocab_size == 0 {
            return Err(Error::Config("vocab_size must be positive".into()));
        }
        let mut rng = seed::rng(seed_value);
        let mut params = ParamStore::new();
        config.encoder.init_params(&mut params, &mut rng)?;
        match config.kind {
            ModelKind::EncDec => config.decoder().init_params(&mut params, &mut rng)?,
            _ => {
                let (c, d) = (config.num_frame_classes(), config.encoder.output_dim());
                params.insert_uniform("head.w", vec![c, d], 0.1, &mut rng)?;
                params.insert_zeros("head.b", vec![c])?;
            }
        }
        Ok(ModelBundle { config, params })
    }

    /// Like [`ModelBundle::init`], but copies `warm` when it has the same config.
    pub fn init_or_copy(config: ModelConfig, seed_value: u64, warm: Option<&ModelBundle<T>>) -> Result<Self> {
        match warm {
            Some(w) if w.config == config => Ok(w.clone()),
            _ => Self::init(config, seed_value),
        }
    }

    pub fn num_params(&self) -> usize {
        self.params.num_values()
    }

    pub fn encode(&self, features: &Matrix<T>) -> Result<Matrix<T>> {
        encode_with_trace(features, &self.params, &self.config.encoder).map(|(m, _)| m)
    }

    fn head_logits(&self, encoded: &Matrix<T>) -> Result<Matrix<T>> {
        let w = self.params.get("head.w")?;
        let b = self.params.get("head.b")?;
        let (c, d) = (self.config.num_frame_classes(), encoded.cols());
        if w.shape != [c, d] || b.len() != c {
            return Err(Error::Param("head shape does not match config".into()));
        }
        let mut out = Matrix::zeros(encoded.rows(), c);
        for t in 0..encoded.rows() {
            let h = encoded.row(t);
            for k in 0..c {
                out.set(t, k, b.data[k] + dot(&w.data[k * d..(k + 1) * d], h));
            }
        }
        Ok(out)
    }

    /// Per-frame log-probabilities of a frame-level model.
    pub fn frame_logprobs(&self, features: &Matrix<T>) -> Result<Matrix<T>> {
        if !self.config.kind.is_framewise() {
            return Err(Error::Unsupported("encoder-decoder models have no frame outputs".into()));
        }
        let enc = self.encode(features)?;
        let mut lp = self.head_logits(&enc)?;
        for t in 0..lp.rows() {
            log_softmax_inplace(lp.row_mut(t));
        }
        Ok(lp)
    }

    /// Shared path for frame-level heads: run a loss on the log-probs and
    /// backpropagate its logit gradient.
    fn frame_head_loss(
        &self,
        features: &Matrix<T>,
        grads: &mut ParamStore<T>,
        loss_fn: impl FnOnce(&Matrix<T>) -> Result<(f64, Matrix<T>)>,
    ) -> Result<f64> {
        let cfg = &self.config.encoder;
        let (enc, trace) = encode_with_trace(features, &self.params, cfg)?;
        let mut lp = self.head_logits(&enc)?;
        for t in 0..lp.rows() {
            log_softmax_inplace(lp.row_mut(t));
        }
        let (loss, dlogits) = loss_fn(&lp)?;
        let d = enc.cols();
        let c = lp.cols();
        let w = self.params.get("head.w")?.data.clone();
        let mut dw = vec![T::zero(); c * d];
        let mut db = vec![T::zero(); c];
        let mut d_enc = Matrix::zeros(enc.rows(), d);
        for t in 0..enc.rows() {
            let g = dlogits.row(t);
            for k in 0..c {
                db[k] += g[k];
                axpy(g[k], enc.row(t), &mut dw[k * d..(k + 1) * d]);
                axpy(g[k], &w[k * d..(k + 1) * d], d_enc.row_mut(t));
            }
        }
        for (name, buf) in [("head.w", dw), ("head.b", db)] {
            for (a, b) in grads.get_mut(name)?.data.iter_mut().zip(buf) {
                *a += b;
            }
        }
        trace.backward(&self.params, cfg, &d_enc, grads)?;
        Ok(loss)
    }

    /// Encoder-decoder teacher-forced loss; gradients are added to `grads`.
    pub fn seq_loss_and_grad(&self, features: &Matrix<T>, target: &[u32], grads: &mut ParamStore<T>) -> Result<f64> {
        if self.config.kind != ModelKind::EncDec {
            return Err(Error::Unsupported("sequence cross-entropy needs an encoder-decoder".into()));
        }
        let cfg = &self.config.encoder;
        let (enc, trace) = encode_with_trace(features, &self.params, cfg)?;
        let (loss, d_enc) = seq_ce_loss(&enc, target, &self.params, &self.config.decoder(), grads)?;
        trace.backward(&self.params, cfg, &d_enc, grads)?;
        Ok(loss)
    }

    /// Loss for one utterance, dispatched on model kind and target type.
    /// Gradients are added to `grads`.
    pub fn loss_and_grad(
        &self,
        features: &Matrix<T>,
        target: &Target,
        opts: LossOptions,
        grads: &mut ParamStore<T>,
    ) -> Result<f64> {
        let blank = self.config.blank();
        match (self.config.kind, target) {
            (ModelKind::EncDec, Target::Tokens(y)) => self.seq_loss_and_grad(features, y, grads),
            (ModelKind::Ctc, Target::Tokens(y)) => self.frame_head_loss(features, grads, |lp| {
                ctc_loss(lp, y, blank).map(|r| (r.loss, r.grad))
            }),
            (ModelKind::FrameClassifier, Target::FrameLabels(y)) => {
                self.frame_head_loss(features, grads, |lp| frame_ce_loss(lp, y).map(|r| (r.loss, r.grad)))
            }
            (k, Target::Posterior(p)) if k.is_framewise() => self.frame_head_loss(features, grads, |lp| {
                frame_distill_loss(Teacher::Sparse(p), lp, opts.renormalize_sparse).map(|r| (r.loss, r.grad))
            }),
            (k, _) => Err(Error::Unsupported(format!("target type does not fit a {} model", k.name()))),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ModelBundle<U> {
        ModelBundle {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    /// Checkpoint with the architecture stored as `meta.*` scalar tensors.
    pub fn to_checkpoint(&self, step: u64, phase: Phase) -> Checkpoint {
        let mut params: ParamStore<f32> = self.params.cast();
        let c = &self.config;
        let vals = [
            c.kind.code() as f32,
            c.encoder.input_dim as f32,
            c.encoder.num_layers as f32,
            c.encoder.hidden_units as f32,
            c.encoder.subsample_factor as f32,
            if c.encoder.bidirectional { 1.0 } else { 0.0 },
            c.vocab_size as f32,
            c.blank() as f32,
            c.embed_dim as f32,
            c.dec_hidden as f32,
        ];
        for (k, v) in META_KEYS.iter().zip(vals) {
            params.insert(*k, Tensor::scalar(v)).expect("meta keys are unique");
        }
        Checkpoint::new(params, step, phase)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut params = ck.params.clone();
        let mut vals = [0u32; 10];
        for (k, slot) in META_KEYS.iter().zip(vals.iter_mut()) {
            let t = params
                .remove(k)
                .ok_or_else(|| Error::Checkpoint(format!("checkpoint lacks {k}")))?;
            *slot = t.data[0] as u32;
        }
        let config = ModelConfig {
            kind: ModelKind::from_code(vals[0])?,
            encoder: EncoderConfig {
                input_dim: vals[1] as usize,
                num_layers: vals[2] as usize,
                hidden_units: vals[3] as usize,
                subsample_factor: vals[4] as usize,
                bidirectional: vals[5] != 0,
            },
            vocab_size: vals[6] as usize,
            embed_dim: vals[8] as usize,
            dec_hidden: vals[9] as usize,
        };
        let reference = ModelBundle::<f32>::init(config.clone(), 0)?;
        if !reference.params.same_layout(&params) {
            return Err(Error::Checkpoint("parameters do not match stored architecture".into()));
        }
        Ok(ModelBundle {
            config,
            params: params.cast(),
        })
    }
}
