//! Desk-scale experiment drivers on synthetic data: supervised baselines,
//! self-labeled students, weak supervision and iterative frame-level
//! distillation.

use super::{
    evaluate, run_three_phase, supervised_examples, Config, DecodeConfig, Example, ExperimentReport, MainStageSpec, PhasePlan,
    RunOutput, TrainingSet, WerRow,
};
use crate::corpus::{
    expand_with_augmentation, generate_corpus, noise_bank, AugmentPolicy, CorpusSpec, SourceTag, Utterance, Vocab,
};
use crate::decode::{train_ngram, NGramLM};
use crate::distill::{
    extract_corpus_posteriors, generate_selflabels, run_iterative_distillation, segment_corpus, DistillCorpora,
    DistillSettings, IterationPlan, RoundReport, SegmentConfig, SegmentStats, SelfLabelStats,
};
use crate::nn::{EncoderConfig, ModelBundle, ModelConfig, ModelKind};
use crate::seed;
use crate::weaksup::{filter_metadata, group_videos, weak_examples, FilterStats, MixSpec};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::time::Instant;

pub const TEST_SETS: [&str; 3] = ["test-clean", "test-noisy", "test-extreme"];

/// Corpus sizes and acoustic conditions. All sets share one world
/// (lexicon, prototypes, speakers).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSetup {
    /// Shared generator settings; `num_utts`, `speakers`, `noise_sigma`
    /// and `id_prefix` are set per subset.
    pub world: CorpusSpec,
    pub supervised: usize,
    pub supervised_speakers: (u32, u32),
    pub train_noise: f64,
    /// Unlabeled recordings, each holding `segments_per_recording` sentences.
    pub unlabeled: usize,
    pub segments_per_recording: usize,
    pub speakers: (u32, u32),
    pub test: usize,
    pub test_noise: [f64; 3],
    pub augment: Option<AugmentPolicy>,
    pub noise_clips: usize,
    pub lm_order: usize,
}

impl Default for DataSetup {
    fn default() -> Self {
        DataSetup {
            world: CorpusSpec {
                speaker_sigma: 0.5,
                metadata_noise: 0.7,
                metadata_chars: (40, 80),
                ..CorpusSpec::default()
            },
            supervised: 1000,
            supervised_speakers: (0, 5),
            train_noise: 0.6,
            unlabeled: 10000,
            segments_per_recording: 2,
            speakers: (0, 200),
            test: 300,
            test_noise: [0.0, 0.8, 1.2],
            augment: Some(AugmentPolicy::default().without_masks()),
            noise_clips: 20,
            lm_order: 5,
        }
    }
}

/// Materialized corpora. Unlabeled recordings carry metadata but no
/// transcript.
#[derive(Debug, Clone)]
pub struct Corpora {
    pub vocab: Vocab,
    pub supervised: Vec<Utterance>,
    pub supervised_augmented: Vec<Utterance>,
    pub unlabeled: Vec<Utterance>,
    pub tests: Vec<(String, Vec<Utterance>)>,
    pub lm: NGramLM,
}

impl Corpora {
    pub fn test_refs(&self) -> Vec<(&str, &[Utterance])> {
        self.tests.iter().map(|(n, u)| (n.as_str(), u.as_slice())).collect()
    }
}

pub fn build_corpora(setup: &DataSetup, seed_value: u64) -> Result<Corpora> {
    let subset = |n: usize, speakers: (u32, u32), noise: f64, segs: usize, prefix: &str| CorpusSpec {
        num_utts: n,
        speakers,
        noise_sigma: noise,
        segments_per_video: segs,
        id_prefix: prefix.to_string(),
        ..setup.world.clone()
    };
    let sup = generate_corpus(
        &subset(setup.supervised, setup.supervised_speakers, setup.train_noise, 1, "sup"),
        seed::derive(seed_value, "supervised"),
    )?;
    let vocab = sup.world.vocab.clone();
    let supervised = sup.utterances;
    let supervised_augmented = match &setup.augment {
        Some(policy) => {
            let noise = noise_bank(setup.world.feature_dim, setup.noise_clips, 400, seed::derive(seed_value, "noise"))?;
            expand_with_augmentation(&supervised, policy, &noise, seed::derive(seed_value, "augment"))?
        }
        None => supervised.clone(),
    };
    let unlabeled = if setup.unlabeled > 0 {
        generate_corpus(
            &subset(setup.unlabeled, setup.speakers, setup.train_noise, setup.segments_per_recording, "rec"),
            seed::derive(seed_value, "unlabeled"),
        )?
        .utterances
        .into_iter()
        .map(|mut u| {
            u.transcript = None;
            u.alignment = None;
            u
        })
        .collect()
    } else {
        Vec::new()
    };
    let mut tests = Vec::new();
    for (name, &noise) in TEST_SETS.iter().zip(&setup.test_noise) {
        let c = generate_corpus(
            &subset(setup.test, setup.speakers, noise, 1, name),
            seed::derive(seed_value, "test"),
        )?;
        tests.push((name.to_string(), c.utterances));
    }
    let lm_corpus: Vec<Vec<u32>> = supervised
        .iter()
        .filter_map(|u| u.transcript.as_ref().map(|t| vocab.encode(t)))
        .collect();
    let lm = train_ngram(&lm_corpus, setup.lm_order)?;
    Ok(Corpora {
        vocab,
        supervised,
        supervised_augmented,
        unlabeled,
        tests,
        lm,
    })
}

fn model_config(kind: ModelKind, encoder: &EncoderConfig, hidden: usize, vocab: &Vocab) -> ModelConfig {
    let enc = EncoderConfig {
        hidden_units: hidden,
        ..encoder.clone()
    };
    ModelConfig::new(kind, enc, vocab.size())
}

fn plan_with_mix(plan: &PhasePlan, mix: &MixSpec) -> PhasePlan {
    let mut p = plan.clone();
    p.train_main.mix = mix.clone();
    p
}

fn report_for(name: &str, seed_value: u64, config: &Config, out: &RunOutput, wer: Vec<WerRow>) -> ExperimentReport {
    let mut r = ExperimentReport::new(name, seed_value, config.entries().clone());
    r.curves.insert(name.to_string(), out.curves.clone());
    r.wer = wer;
    r.metrics.insert("num_params".into(), out.model.num_params() as f64);
    r
}

/// Settings for the self-labeling / weak-supervision comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSetup {
    pub data: DataSetup,
    pub encoder: EncoderConfig,
    pub ctc_plan: PhasePlan,
    pub encdec_plan: PhasePlan,
    pub decode: DecodeConfig,
    pub segment: SegmentConfig,
    pub top_k: usize,
    pub min_chars: usize,
    pub max_chars: usize,
    pub selflabel_mix: MixSpec,
    pub weak_mix: MixSpec,
    pub combo_mix: MixSpec,
    /// Train the weak-supervision systems as well.
    pub weak: bool,
}

fn desk_plan(kind: ModelKind) -> PhasePlan {
    let mut p = PhasePlan::default_for(kind);
    p.burn_in.steps = 300;
    p.burn_in.lr = 3e-3;
    p.train_main.steps = 1500;
    p.train_main.lr = 2e-3;
    p.train_main.ckpt_every = 100;
    p.train_main.avg_last = 5;
    p.fine_tune.steps = 200;
    p.fine_tune.lr = 3e-4;
    p
}

impl Default for TableSetup {
    fn default() -> Self {
        use SourceTag::*;
        TableSetup {
            data: DataSetup::default(),
            encoder: EncoderConfig::default(),
            ctc_plan: desk_plan(ModelKind::Ctc),
            encdec_plan: PhasePlan {
                train_main: MainStageSpec {
                    steps: 3000,
                    ckpt_every: 200,
                    ..desk_plan(ModelKind::EncDec).train_main
                },
                ..desk_plan(ModelKind::EncDec)
            },
            decode: DecodeConfig::default(),
            segment: SegmentConfig::default(),
            top_k: 3,
            min_chars: 50,
            max_chars: 700,
            selflabel_mix: MixSpec::new(&[(Supervised, 0.2), (SelfLabel, 0.8)]).expect("valid"),
            weak_mix: MixSpec::new(&[(Supervised, 0.5), (Weak, 0.5)]).expect("valid"),
            combo_mix: MixSpec::new(&[(Supervised, 0.2), (SelfLabel, 0.56), (Weak, 0.24)]).expect("valid"),
            weak: true,
        }
    }
}

/// One report per trained system plus pipeline statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableResults {
    pub systems: Vec<ExperimentReport>,
    /// Mean top-k coverage of the CTC baseline on the segmented unlabeled data.
    pub coverage: f64,
    pub segments: SegmentStats,
    pub selflabels: SelfLabelStats,
    pub filter: Option<FilterStats>,
}

impl TableResults {
    pub fn wer(&self, system: &str, set: &str) -> Option<f64> {
        self.systems.iter().find(|r| r.name == system)?.wer_of(set)
    }

    pub fn summary(&self) -> String {
        let mut s = format!("{:<22}", "system");
        for t in TEST_SETS {
            s.push_str(&format!(" {t:>13}"));
        }
        s.push('\n');
        for r in &self.systems {
            s.push_str(&format!("{:<22}", r.name));
            for t in TEST_SETS {
                s.push_str(&format!(" {:>13.2}", r.wer_of(t).unwrap_or(f64::NAN)));
            }
            s.push('\n');
        }
        s.push_str(&format!("top-k coverage {:.4}\n", self.coverage));
        s
    }
}

/// Baselines on augmented supervised data, sequence-level self-labels from
/// the CTC baseline (with LM) for CTC and encoder-decoder students, and,
/// optionally, weak supervision alone and combined with self-labels.
pub fn run_table_experiment(setup: &TableSetup, seed_value: u64) -> Result<TableResults> {
    let config = Config::from_serialize(setup)?;
    let corpora = build_corpora(&setup.data, seed_value)?;
    let tests = corpora.test_refs();
    let lm = Some(&corpora.lm);
    let hidden = setup.encoder.hidden_units;
    let ctc_cfg = model_config(ModelKind::Ctc, &setup.encoder, hidden, &corpora.vocab);
    let ed_cfg = model_config(ModelKind::EncDec, &setup.encoder, hidden, &corpora.vocab);
    let sup_ctc = supervised_examples(&corpora.supervised_augmented, &ctc_cfg, &corpora.vocab)?;
    let sup_ed = supervised_examples(&corpora.supervised_augmented, &ed_cfg, &corpora.vocab)?;
    let mut systems = Vec::new();

    let train = |name: &str, cfg: &ModelConfig, plan: &PhasePlan, data: &TrainingSet, tag: &str| -> Result<(RunOutput, ExperimentReport)> {
        let t0 = Instant::now();
        let s = seed::derive(seed_value, tag);
        let out = run_three_phase(ModelBundle::init(cfg.clone(), s)?, plan, data, s)?;
        let wer = evaluate(&out.model, &tests, lm, &setup.decode)?;
        let mut rep = report_for(name, seed_value, &config, &out, wer);
        rep.wall_clock_s = t0.elapsed().as_secs_f64();
        Ok((out, rep))
    };

    let sup_only = |ex: &[Example]| TrainingSet::from([(SourceTag::Supervised, ex.to_vec())]);
    let (ctc_base, rep) = train("ctc-baseline", &ctc_cfg, &setup.ctc_plan, &sup_only(&sup_ctc), "ctc")?;
    systems.push(rep);
    let (_, rep) = train("encdec-baseline", &ed_cfg, &setup.encdec_plan, &sup_only(&sup_ed), "encdec")?;
    systems.push(rep);

    let (segments, seg_stats) = segment_corpus(&corpora.unlabeled, &ctc_base.model, &setup.segment);
    let (_, coverage) = extract_corpus_posteriors(&segments, &ctc_base.model, setup.top_k)?;
    let (labeled, sl_stats) = generate_selflabels(&segments, &ctc_base.model, lm, &setup.decode, None)?;
    let sl_examples = |cfg: &ModelConfig| supervised_examples(&labeled, cfg, &corpora.vocab);

    let mut data = sup_only(&sup_ctc);
    data.insert(SourceTag::SelfLabel, sl_examples(&ctc_cfg)?);
    let plan = plan_with_mix(&setup.ctc_plan, &setup.selflabel_mix);
    let (_, rep) = train("ctc-selflabel", &ctc_cfg, &plan, &data, "ctc-sl")?;
    systems.push(rep);

    let mut data = sup_only(&sup_ed);
    data.insert(SourceTag::SelfLabel, sl_examples(&ed_cfg)?);
    let plan = plan_with_mix(&setup.encdec_plan, &setup.selflabel_mix);
    let (_, rep) = train("encdec-selflabel", &ed_cfg, &plan, &data, "encdec-sl")?;
    systems.push(rep);

    let mut filter = None;
    if setup.weak {
        // the overlap rule compares against the self-labeling decode
        let by_id: std::collections::HashMap<&str, &str> = labeled
            .iter()
            .filter_map(|u| Some((u.utt_id(), u.transcript.as_deref()?)))
            .collect();
        let hyps: Vec<String> = segments
            .iter()
            .map(|s| by_id.get(s.utt_id()).copied().unwrap_or("").to_string())
            .collect();
        let vocab = &corpora.vocab;
        let videos = group_videos(&segments, &hyps)?;
        let (pairs, stats) = filter_metadata(&videos, vocab, setup.min_chars, setup.max_chars)?;
        filter = Some(stats);
        let weak = weak_examples(&pairs);
        if weak.is_empty() {
            return Err(Error::Training("metadata filter kept no weak pairs".into()));
        }
        data.insert(SourceTag::Weak, weak);
        let plan = plan_with_mix(&setup.encdec_plan, &setup.weak_mix);
        let (_, rep) = train("encdec-weaksup", &ed_cfg, &plan, &data, "encdec-ws")?;
        systems.push(rep);
        let plan = plan_with_mix(&setup.encdec_plan, &setup.combo_mix);
        let (_, rep) = train("encdec-selflabel+weak", &ed_cfg, &plan, &data, "encdec-combo")?;
        systems.push(rep);
    }

    for r in &mut systems {
        r.metrics.insert("topk_coverage".into(), coverage);
    }
    Ok(TableResults {
        systems,
        coverage,
        segments: seg_stats,
        selflabels: sl_stats,
        filter,
    })
}

/// Settings for iterative frame-level distillation with growing students.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterativeSetup {
    pub data: DataSetup,
    pub kind: ModelKind,
    pub encoder: EncoderConfig,
    pub round_hidden: Vec<usize>,
    pub baseline_plan: PhasePlan,
    pub student_plan: PhasePlan,
    pub decode: DecodeConfig,
    pub top_k: usize,
}

impl Default for IterativeSetup {
    fn default() -> Self {
        let kind = ModelKind::FrameClassifier;
        let mut student = desk_plan(kind);
        student.burn_in.steps = 0;
        student.train_main.mix = MixSpec::new(&[(SourceTag::Distill, 1.0)]).expect("valid");
        IterativeSetup {
            data: DataSetup {
                supervised: 300,
                unlabeled: 3000,
                segments_per_recording: 1,
                test: 200,
                ..DataSetup::default()
            },
            kind,
            encoder: EncoderConfig::default(),
            round_hidden: vec![48, 64],
            baseline_plan: desk_plan(kind),
            student_plan: student,
            decode: DecodeConfig::default(),
            top_k: 3,
        }
    }
}

/// Baseline on supervised data, then one distillation round per entry of
/// `round_hidden`. Reports round 0 (baseline) through the last round.
pub fn run_iterative_experiment(setup: &IterativeSetup, seed_value: u64) -> Result<(Vec<RoundReport>, ExperimentReport)> {
    let t0 = Instant::now();
    let config = Config::from_serialize(setup)?;
    let corpora = build_corpora(&setup.data, seed_value)?;
    let tests = corpora.test_refs();
    let base_cfg = model_config(setup.kind, &setup.encoder, setup.encoder.hidden_units, &corpora.vocab);
    let sup = supervised_examples(&corpora.supervised_augmented, &base_cfg, &corpora.vocab)?;
    let s = seed::derive(seed_value, "baseline");
    let data = TrainingSet::from([(SourceTag::Supervised, sup.clone())]);
    let base = run_three_phase(ModelBundle::init(base_cfg.clone(), s)?, &setup.baseline_plan, &data, s)?;
    let plan = IterationPlan {
        rounds: setup
            .round_hidden
            .iter()
            .map(|&h| model_config(setup.kind, &setup.encoder, h, &corpora.vocab))
            .collect(),
    };
    let outcome = run_iterative_distillation(
        base.model,
        &plan,
        &DistillCorpora {
            supervised: &sup,
            unlabeled: &corpora.unlabeled,
            tests: &tests,
        },
        &DistillSettings {
            plan: setup.student_plan.clone(),
            top_k: setup.top_k,
            decode: setup.decode.clone(),
            lm: Some(&corpora.lm),
            seed: seed_value,
        },
    )?;
    if let Some(e) = outcome.failure {
        return Err(e);
    }
    let mut report = ExperimentReport::new("iterative-distillation", seed_value, config.entries().clone());
    report.curves.insert("baseline".into(), base.curves);
    for r in &outcome.reports {
        for row in &r.wer {
            let mut row = row.clone();
            row.set = format!("round{}/{}", r.round, row.set);
            report.wer.push(row);
        }
        report.metrics.insert(format!("round{}.num_params", r.round), r.num_params as f64);
        if let Some(c) = r.coverage {
            report.metrics.insert(format!("round{}.coverage", r.round), c);
        }
    }
    report.wall_clock_s = t0.elapsed().as_secs_f64();
    Ok((outcome.reports, report))
}
