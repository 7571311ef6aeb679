//! Synthetic corpora, augmentation and manifests.

pub mod augment;
pub mod generate;
pub mod manifest;
pub mod vocab;

pub use augment::{expand_with_augmentation, mask_time_freq, speed_perturb, superpose_noise, AugmentPolicy};
pub use generate::{generate_corpus, generate_noise_clip, noise_bank, shuffled, Corpus, CorpusSpec, World};
pub use manifest::{load_manifest, write_manifest};
pub use vocab::Vocab;

use crate::nn::Matrix;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// `T x d` features of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub utt_id: String,
    pub frames: Matrix<f32>,
    pub frame_shift_ms: f32,
}

impl FeatureSequence {
    pub fn new(utt_id: impl Into<String>, frames: Matrix<f32>) -> Result<Self> {
        let fs = FeatureSequence {
            utt_id: utt_id.into(),
            frames,
            frame_shift_ms: 10.0,
        };
        fs.validate()?;
        Ok(fs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.rows() == 0 {
            return Err(Error::Input(format!("{}: no frames", self.utt_id)));
        }
        if self.frames.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!("{}: non-finite feature", self.utt_id)));
        }
        Ok(())
    }

    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    pub fn duration_s(&self) -> f64 {
        self.num_frames() as f64 * self.frame_shift_ms as f64 / 1000.0
    }
}

/// One utterance: features with an optional transcript and/or metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub features: FeatureSequence,
    pub transcript: Option<String>,
    pub metadata: Option<String>,
    pub duration_s: f64,
    /// Recording this utterance was cut from, when segmented.
    pub parent_id: Option<String>,
    /// Per-token `[start, end)` input-frame spans, known for synthetic data.
    pub alignment: Option<Vec<(usize, usize)>>,
}

impl Utterance {
    pub fn new(features: FeatureSequence) -> Self {
        let duration_s = features.duration_s();
        Utterance {
            features,
            transcript: None,
            metadata: None,
            duration_s,
            parent_id: None,
            alignment: None,
        }
    }

    pub fn utt_id(&self) -> &str {
        &self.features.utt_id
    }

    pub fn is_supervised(&self) -> bool {
        self.transcript.is_some()
    }

    pub fn is_weak(&self) -> bool {
        self.transcript.is_none() && self.metadata.is_some()
    }

    pub fn is_unlabeled(&self) -> bool {
        self.transcript.is_none() && self.metadata.is_none()
    }
}

/// Where a training example's target came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceTag {
    Supervised,
    Weak,
    #[serde(rename = "selflabel")]
    SelfLabel,
    Distill,
}

impl SourceTag {
    pub fn name(self) -> &'static str {
        match self {
            SourceTag::Supervised => "supervised",
            SourceTag::Weak => "weak",
            SourceTag::SelfLabel => "selflabel",
            SourceTag::Distill => "distill",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "supervised" => Ok(SourceTag::Supervised),
            "weak" => Ok(SourceTag::Weak),
            "selflabel" => Ok(SourceTag::SelfLabel),
            "distill" => Ok(SourceTag::Distill),
            _ => Err(Error::Config(format!("unknown source tag {s:?}"))),
        }
    }
}
