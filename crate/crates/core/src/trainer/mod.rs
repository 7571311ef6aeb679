//! Three-phase training (burn-in, train-main, fine-tune), evaluation,
//! configuration files and reports.

pub mod config;
pub mod eval;
pub mod experiments;
pub mod report;

pub use config::Config;
pub use eval::{decode_utterance, evaluate, DecodeConfig, WerRow};
pub use report::{ExperimentReport, LossPoint};

use crate::corpus::{mask_time_freq, AugmentPolicy, FeatureSequence, SourceTag, Utterance, Vocab};
use crate::losses::SparsePosterior;
use crate::nn::{
    adam_step, average_checkpoints, clip_gradients, AdamState, Checkpoint, LossOptions, Matrix, ModelBundle,
    ModelConfig, ModelKind, Phase, Target,
};
use crate::seed;
use crate::weaksup::{MixSpec, MixedBatchSampler};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};

/// One training utterance with its target.
#[derive(Debug, Clone)]
pub struct Example {
    pub utt_id: String,
    pub features: Matrix<f32>,
    pub target: Target,
}

impl Example {
    pub fn tokens(utt_id: &str, features: Matrix<f32>, tokens: Vec<u32>) -> Self {
        Example {
            utt_id: utt_id.to_string(),
            features,
            target: Target::Tokens(tokens),
        }
    }

    pub fn posterior(features: Matrix<f32>, posterior: SparsePosterior) -> Self {
        Example {
            utt_id: posterior.utt_id.clone(),
            features,
            target: Target::Posterior(posterior),
        }
    }
}

/// Training examples keyed by where their targets came from.
pub type TrainingSet = BTreeMap<SourceTag, Vec<Example>>;

/// Frame-level targets for the frame classifier: each token's label sits on
/// the subsampled frame holding its center, every other frame is blank.
/// Positions are pushed right where needed so labels never collide and
/// equal neighbours stay separated by a blank.
pub fn frame_labels(
    alignment: &[(usize, usize)],
    tokens: &[u32],
    input_frames: usize,
    subsample: usize,
    blank: u32,
) -> Result<Vec<u32>> {
    if alignment.len() != tokens.len() {
        return Err(Error::Alignment {
            teacher: alignment.len(),
            student: tokens.len(),
        });
    }
    let out_len = input_frames.div_ceil(subsample);
    let mut labels = vec![blank; out_len];
    let mut prev: Option<(usize, u32)> = None;
    for (&(s, e), &tok) in alignment.iter().zip(tokens) {
        let center = (s + e.max(s + 1) - 1) / 2;
        let mut j = center / subsample;
        if let Some((pj, pt)) = prev {
            let min = pj + if pt == tok { 2 } else { 1 };
            j = j.max(min);
        }
        if j >= out_len {
            return Err(Error::Feasibility {
                frames: out_len,
                labels: tokens.len(),
                repeats: crate::losses::count_repeats(tokens),
            });
        }
        labels[j] = tok;
        prev = Some((j, tok));
    }
    Ok(labels)
}

/// Supervised examples for a model kind: token targets, or frame labels
/// derived from known alignments for the frame classifier.
pub fn supervised_examples(utts: &[Utterance], config: &ModelConfig, vocab: &Vocab) -> Result<Vec<Example>> {
    utts.iter()
        .map(|u| {
            let text = u
                .transcript
                .as_ref()
                .ok_or_else(|| Error::Input(format!("{} has no transcript", u.utt_id())))?;
            let tokens = vocab.encode(text);
            let features = u.features.frames.clone();
            let target = match config.kind {
                ModelKind::FrameClassifier => {
                    let al = u
                        .alignment
                        .as_ref()
                        .ok_or_else(|| Error::Input(format!("{} has no alignment", u.utt_id())))?;
                    Target::FrameLabels(frame_labels(
                        al,
                        &tokens,
                        features.rows(),
                        config.encoder.subsample_factor,
                        config.blank(),
                    )?)
                }
                _ => Target::Tokens(tokens),
            };
            Ok(Example {
                utt_id: u.utt_id().to_string(),
                features,
                target,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub steps: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MainStageSpec {
    pub steps: usize,
    pub lr: f64,
    pub mix: MixSpec,
    pub ckpt_every: usize,
    pub avg_last: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePlan {
    pub burn_in: StageSpec,
    pub train_main: MainStageSpec,
    pub fine_tune: StageSpec,
    pub batch_size: usize,
    pub clip_norm: f64,
    /// Zero the optimizer moments at every phase boundary.
    pub reset_optimizer: bool,
    pub log_every: usize,
    /// On-the-fly time/frequency masking.
    pub masking: Option<AugmentPolicy>,
    pub renormalize_sparse: bool,
}

impl PhasePlan {
    /// Default budgets; the fine-tune rate depends on the model kind.
    pub fn default_for(kind: ModelKind) -> Self {
        PhasePlan {
            burn_in: StageSpec { steps: 2000, lr: 4e-4 },
            train_main: MainStageSpec {
                steps: 10000,
                lr: 4e-4,
                mix: MixSpec::supervised(),
                ckpt_every: 500,
                avg_last: 20,
            },
            fine_tune: StageSpec {
                steps: 1000,
                lr: if kind == ModelKind::EncDec { 4e-5 } else { 5e-5 },
            },
            batch_size: 16,
            clip_norm: 10.0,
            reset_optimizer: true,
            log_every: 10,
            masking: None,
            renormalize_sparse: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [
            ("burn_in", self.burn_in.lr),
            ("train_main", self.train_main.lr),
            ("fine_tune", self.fine_tune.lr),
        ] {
            if !(lr > 0.0) || !lr.is_finite() {
                return Err(Error::Config(format!("{name}.lr must be positive")));
            }
        }
        if self.train_main.avg_last == 0 || self.train_main.ckpt_every == 0 {
            return Err(Error::Config("avg_last and ckpt_every must be >= 1".into()));
        }
        if self.batch_size == 0 || self.log_every == 0 {
            return Err(Error::Config("batch_size and log_every must be >= 1".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        self.train_main.mix.validate()
    }
}

/// Final model, its checkpoint and the loss curves of a training run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub model: ModelBundle<f32>,
    pub checkpoint: Checkpoint,
    pub curves: Vec<LossPoint>,
}

/// Stateful step loop shared by all phases: one batch sampler and one
/// optimizer state live across phases.
pub struct Trainer<'a> {
    data: &'a TrainingSet,
    plan: &'a PhasePlan,
    sampler: MixedBatchSampler,
    adam: Option<AdamState<f32>>,
    step: u64,
    seed: u64,
    pub curves: Vec<LossPoint>,
}

impl<'a> Trainer<'a> {
    pub fn new(data: &'a TrainingSet, plan: &'a PhasePlan, seed_value: u64) -> Result<Self> {
        plan.validate()?;
        let sizes = data.iter().map(|(t, v)| (*t, v.len())).collect();
        Ok(Trainer {
            data,
            plan,
            sampler: MixedBatchSampler::unmixed(&sizes, plan.batch_size, seed::derive(seed_value, "batches"))?,
            adam: None,
            step: 0,
            seed: seed_value,
            curves: Vec::new(),
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn reset_optimizer(&mut self) {
        if let Some(a) = self.adam.as_mut() {
            a.reset();
        }
    }

    fn train_step(&mut self, model: &mut ModelBundle<f32>, lr: f64) -> Result<f64> {
        let (tag, idx) = self.sampler.next_batch()?;
        let examples = &self.data[&tag];
        let opts = LossOptions {
            renormalize_sparse: self.plan.renormalize_sparse,
        };
        let mut grads = model.params.zeros_like();
        let mut total = 0.0;
        for &i in &idx {
            let ex = &examples[i];
            let loss = match &self.plan.masking {
                Some(policy) => {
                    let fs = FeatureSequence {
                        utt_id: ex.utt_id.clone(),
                        frames: ex.features.clone(),
                        frame_shift_ms: 10.0,
                    };
                    let s = seed::derive_index(seed::derive(self.seed, &ex.utt_id), self.step);
                    let masked = mask_time_freq(&fs, policy, s);
                    model.loss_and_grad(&masked.frames, &ex.target, opts, &mut grads)?
                }
                None => model.loss_and_grad(&ex.features, &ex.target, opts, &mut grads)?,
            };
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss on {} ({}) at step {}",
                    ex.utt_id,
                    tag.name(),
                    self.step
                )));
            }
            total += loss;
        }
        clip_gradients(&mut grads, self.plan.clip_norm, idx.len())?;
        let adam = self.adam.get_or_insert_with(|| AdamState::new(&model.params));
        adam_step(&mut model.params, &grads, adam, lr).map_err(|e| {
            Error::Training(format!("update failed at step {}: {e}", self.step))
        })?;
        self.step += 1;
        Ok(total / idx.len() as f64)
    }

    /// Run `steps` updates drawing batches from `mix`. `after_step` sees the
    /// 1-based step index within the stage.
    pub fn run_stage(
        &mut self,
        model: &mut ModelBundle<f32>,
        phase: Phase,
        mix: &MixSpec,
        steps: usize,
        lr: f64,
        mut after_step: impl FnMut(usize, u64, &ModelBundle<f32>),
    ) -> Result<()> {
        if steps == 0 {
            return Ok(());
        }
        self.sampler.set_mix(mix.clone())?;
        let mut window = 0.0;
        let mut count = 0;
        for i in 1..=steps {
            window += self.train_step(model, lr)?;
            count += 1;
            if i % self.plan.log_every == 0 || i == steps {
                self.curves.push(LossPoint {
                    phase,
                    step: self.step,
                    loss: window / count as f64,
                });
                window = 0.0;
                count = 0;
            }
            after_step(i, self.step, model);
        }
        Ok(())
    }

    /// Consecutive stages with no optimizer reset or averaging in between.
    pub fn run_schedule(
        &mut self,
        model: &mut ModelBundle<f32>,
        mix: &MixSpec,
        stages: &[StageSpec],
    ) -> Result<()> {
        for s in stages {
            self.run_stage(model, Phase::BurnIn, mix, s.steps, s.lr, |_, _, _| {})?;
        }
        Ok(())
    }
}

/// Burn-in on supervised data, train-main on the plan's mix with periodic
/// checkpoints, then fine-tune on supervised data starting from the average
/// of the last `avg_last` train-main checkpoints.
pub fn run_three_phase(
    model: ModelBundle<f32>,
    plan: &PhasePlan,
    data: &TrainingSet,
    seed_value: u64,
) -> Result<RunOutput> {
    run_three_phase_observed(model, plan, data, seed_value, |_| {})
}

/// [`run_three_phase`] that also hands every train-main checkpoint to
/// `on_checkpoint` as it is taken.
pub fn run_three_phase_observed(
    mut model: ModelBundle<f32>,
    plan: &PhasePlan,
    data: &TrainingSet,
    seed_value: u64,
    mut on_checkpoint: impl FnMut(&Checkpoint),
) -> Result<RunOutput> {
    let mut t = Trainer::new(data, plan, seed_value)?;
    let sup = MixSpec::supervised();
    t.run_stage(&mut model, Phase::BurnIn, &sup, plan.burn_in.steps, plan.burn_in.lr, |_, _, _| {})?;

    if plan.reset_optimizer {
        t.reset_optimizer();
    }
    let main = &plan.train_main;
    let mut ckpts: VecDeque<Checkpoint> = VecDeque::new();
    t.run_stage(&mut model, Phase::TrainMain, &main.mix, main.steps, main.lr, |i, step, m| {
        if i % main.ckpt_every == 0 || i == main.steps {
            let ck = m.to_checkpoint(step, Phase::TrainMain);
            on_checkpoint(&ck);
            ckpts.push_back(ck);
            if ckpts.len() > main.avg_last {
                ckpts.pop_front();
            }
        }
    })?;
    if !ckpts.is_empty() {
        let ckpts: Vec<Checkpoint> = ckpts.into();
        let avg = average_checkpoints(&ckpts, main.avg_last)?;
        model = ModelBundle::from_checkpoint(&avg)?;
    }

    if plan.reset_optimizer {
        t.reset_optimizer();
    }
    t.run_stage(&mut model, Phase::FineTune, &sup, plan.fine_tune.steps, plan.fine_tune.lr, |_, _, _| {})?;
    let checkpoint = model.to_checkpoint(t.step(), Phase::FineTune);
    Ok(RunOutput {
        model,
        checkpoint,
        curves: t.curves,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_labels_at_centers() {
        // tokens of 4 frames each starting at 2; subsample 2
        let al = [(2, 6), (6, 10), (10, 14)];
        let l = frame_labels(&al, &[3, 4, 5], 16, 2, 9).unwrap();
        assert_eq!(l, vec![9, 3, 9, 4, 9, 5, 9, 9]);
    }

    #[test]
    fn equal_neighbours_keep_a_blank() {
        let al = [(0, 2), (2, 4)];
        let l = frame_labels(&al, &[3, 3], 6, 2, 9).unwrap();
        assert_eq!(l, vec![3, 9, 3]);
        assert_eq!(crate::decode::collapse(&l, 9), vec![3, 3]);
    }

    #[test]
    fn infeasible_labels() {
        assert!(frame_labels(&[(0, 1), (1, 2)], &[3, 3], 2, 2, 9).is_err());
        assert!(frame_labels(&[(0, 1)], &[3, 3], 2, 2, 9).is_err());
    }

    #[test]
    fn plan_validation() {
        let mut p = PhasePlan::default_for(ModelKind::Ctc);
        assert!(p.validate().is_ok());
        assert_eq!(p.fine_tune.lr, 5e-5);
        p.train_main.avg_last = 0;
        assert!(p.validate().is_err());
        let mut p = PhasePlan::default_for(ModelKind::EncDec);
        assert_eq!(p.fine_tune.lr, 4e-5);
        p.burn_in.lr = 0.0;
        assert!(p.validate().is_err());
    }
}
