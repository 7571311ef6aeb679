//! Self-labeling: segmentation of long unlabeled recordings, teacher
//! posterior extraction with top-k sparsification, top-1 transcript
//! generation and iterative frame-level distillation.

use crate::corpus::{SourceTag, Utterance, Vocab};
use crate::decode::{ctc_greedy, NGramLM};
use crate::losses::SparsePosterior;
use crate::nn::{Checkpoint, Matrix, ModelBundle, ModelConfig, ParamStore, Phase, Tensor};
use crate::trainer::{decode_utterance, evaluate, run_three_phase, DecodeConfig, Example, PhasePlan, TrainingSet, WerRow};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentConfig {
    pub max_seconds: f64,
    /// Blank runs at least this many input frames long are non-speech.
    pub nonspeech_frames: usize,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig {
            max_seconds: 10.0,
            nonspeech_frames: 30,
        }
    }
}

/// Half-open `[start_frame, end_frame)` span in input frames.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start_frame: usize,
    pub end_frame: usize,
    pub utt_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentationResult {
    pub parent_utt_id: String,
    pub segments: Vec<Segment>,
}

/// Split an utterance from a frame-level greedy path.
///
/// `path` holds one class per subsampled frame; `subsample` maps it back to
/// the `input_frames` input frames. Blank runs of at least
/// `nonspeech_frames` input frames are removed; the remaining speech runs
/// are cut at token onsets into pieces no longer than `max_frames`.
pub fn segment_path(
    parent: &str,
    path: &[u32],
    blank: u32,
    subsample: usize,
    input_frames: usize,
    max_frames: usize,
    nonspeech_frames: usize,
) -> Result<SegmentationResult> {
    if max_frames == 0 || subsample == 0 {
        return Err(Error::Config("max segment length and subsample factor must be positive".into()));
    }
    let to_in = |j: usize| (j * subsample).min(input_frames);
    // speech runs in subsampled frames, each containing at least one token
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut j = 0;
    let mut run_start: Option<usize> = None;
    while j < path.len() {
        if path[j] == blank {
            let s = j;
            while j < path.len() && path[j] == blank {
                j += 1;
            }
            if to_in(j) - to_in(s) >= nonspeech_frames {
                if let Some(rs) = run_start.take() {
                    runs.push((rs, s));
                }
            } else if run_start.is_none() {
                run_start = Some(s);
            }
        } else {
            if run_start.is_none() {
                run_start = Some(j);
            }
            j += 1;
        }
    }
    if let Some(rs) = run_start {
        runs.push((rs, path.len()));
    }
    runs.retain(|&(s, e)| path[s..e].iter().any(|&c| c != blank));

    let mut segments = Vec::new();
    for (s, e) in runs {
        let (s_in, e_in) = (to_in(s), to_in(e));
        // token onsets inside the run, in input frames
        let onsets: Vec<usize> = (s + 1..e)
            .filter(|&t| path[t] != blank && path[t] != path[t - 1])
            .map(to_in)
            .collect();
        let mut start = s_in;
        while start < e_in {
            let end = if e_in - start <= max_frames {
                e_in
            } else {
                onsets
                    .iter()
                    .copied()
                    .filter(|&b| b > start && b - start <= max_frames)
                    .max()
                    .unwrap_or(start + max_frames)
            };
            segments.push(Segment {
                start_frame: start,
                end_frame: end,
                utt_id: format!("{parent}-seg{:03}", segments.len()),
            });
            start = end;
        }
    }
    Ok(SegmentationResult {
        parent_utt_id: parent.to_string(),
        segments,
    })
}

/// Decode with a frame-level teacher and segment on its greedy path.
pub fn segment_unlabeled(utt: &Utterance, teacher: &ModelBundle<f32>, cfg: &SegmentConfig) -> Result<SegmentationResult> {
    if !(cfg.max_seconds > 0.0) {
        return Err(Error::Config("max_seconds must be positive".into()));
    }
    let lp = teacher.frame_logprobs(&utt.features.frames)?;
    let path: Vec<u32> = lp
        .iter_rows()
        .map(|row| {
            let mut best = 0;
            for k in 1..row.len() {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best as u32
        })
        .collect();
    let max_frames = (cfg.max_seconds * 1000.0 / utt.features.frame_shift_ms as f64).floor() as usize;
    segment_path(
        utt.utt_id(),
        &path,
        teacher.config.blank(),
        teacher.config.encoder.subsample_factor,
        utt.features.num_frames(),
        max_frames,
        cfg.nonspeech_frames,
    )
}

/// Materialize segments as utterances that inherit the parent's metadata.
pub fn cut_segments(utt: &Utterance, seg: &SegmentationResult) -> Result<Vec<Utterance>> {
    seg.segments
        .iter()
        .map(|s| {
            let mut features = utt.features.clone();
            features.frames = utt.features.frames.slice_rows(s.start_frame, s.end_frame);
            features.utt_id = s.utt_id.clone();
            let mut u = Utterance::new(features);
            u.metadata = utt.metadata.clone();
            u.parent_id = Some(utt.utt_id().to_string());
            Ok(u)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentStats {
    pub recordings: usize,
    pub segments: usize,
    pub skipped: usize,
}

/// Segment every recording; recordings the teacher cannot decode are
/// skipped and counted.
pub fn segment_corpus(utts: &[Utterance], teacher: &ModelBundle<f32>, cfg: &SegmentConfig) -> (Vec<Utterance>, SegmentStats) {
    let mut stats = SegmentStats::default();
    let mut out = Vec::new();
    for u in utts {
        stats.recordings += 1;
        match segment_unlabeled(u, teacher, cfg).and_then(|s| cut_segments(u, &s)) {
            Ok(segs) => {
                stats.segments += segs.len();
                out.extend(segs);
            }
            Err(e) => {
                log_skip(u.utt_id(), &e);
                stats.skipped += 1;
            }
        }
    }
    (out, stats)
}

fn log_skip(utt_id: &str, e: &Error) {
    eprintln!("skipping {utt_id}: {e}");
}

/// The `k` largest entries of a probability row, descending; equal
/// probabilities keep the smaller class id first.
pub fn top_k(row: &[f64], k: usize) -> Vec<(u32, f64)> {
    let mut idx: Vec<u32> = (0..row.len() as u32).collect();
    idx.sort_by(|&a, &b| {
        row[b as usize]
            .partial_cmp(&row[a as usize])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx.into_iter().map(|i| (i, row[i as usize])).collect()
}

/// Sparsify one posteriorgram; returns the sparse form and the mean kept mass.
pub fn sparsify(utt_id: &str, probs: &Matrix<f64>, k: usize) -> Result<(SparsePosterior, f64)> {
    if k == 0 {
        return Err(Error::Config("top_k must be >= 1".into()));
    }
    let mut mass = 0.0;
    let frames: Vec<Vec<(u32, f64)>> = probs
        .iter_rows()
        .map(|row| {
            let kept = top_k(row, k);
            mass += kept.iter().map(|(_, p)| p).sum::<f64>();
            kept
        })
        .collect();
    let coverage = if frames.is_empty() { 1.0 } else { mass / frames.len() as f64 };
    Ok((
        SparsePosterior {
            utt_id: utt_id.to_string(),
            k,
            frames,
        },
        coverage.min(1.0),
    ))
}

/// Teacher softmax at the teacher's subsampled rate, sparsified to `top_k`.
pub fn extract_teacher_posteriors(
    segment: &Utterance,
    teacher: &ModelBundle<f32>,
    top_k: usize,
) -> Result<(SparsePosterior, f64)> {
    let lp = teacher.frame_logprobs(&segment.features.frames)?;
    let mut probs = Matrix::zeros(lp.rows(), lp.cols());
    for t in 0..lp.rows() {
        let src = lp.row(t);
        let norm: f64 = src.iter().map(|v| (*v as f64).exp()).sum();
        for (dst, v) in probs.row_mut(t).iter_mut().zip(src) {
            *dst = (*v as f64).exp() / norm;
        }
    }
    sparsify(segment.utt_id(), &probs, top_k)
}

/// Posteriors for a corpus plus the corpus-level mean coverage (mean over
/// all frames).
pub fn extract_corpus_posteriors(
    utts: &[Utterance],
    teacher: &ModelBundle<f32>,
    top_k: usize,
) -> Result<(Vec<SparsePosterior>, f64)> {
    let mut out = Vec::with_capacity(utts.len());
    let (mut mass, mut frames) = (0.0, 0usize);
    for u in utts {
        let (p, cov) = extract_teacher_posteriors(u, teacher, top_k)?;
        mass += cov * p.num_frames() as f64;
        frames += p.num_frames();
        out.push(p);
    }
    Ok((out, if frames == 0 { 1.0 } else { mass / frames as f64 }))
}

/// Store a sparse posterior as tensors `class_ids` and `probs` (both
/// `frames x k`) and scalar `k`, in the checkpoint container.
pub fn write_posterior(path: &Path, p: &SparsePosterior) -> Result<()> {
    p.validate()?;
    let (t, k) = (p.num_frames(), p.k);
    let mut ids = vec![0f32; t * k];
    let mut probs = vec![-1f32; t * k];
    for (f, row) in p.frames.iter().enumerate() {
        for (j, &(c, v)) in row.iter().enumerate() {
            ids[f * k + j] = c as f32;
            probs[f * k + j] = v as f32;
        }
    }
    let mut store = ParamStore::new();
    if t > 0 {
        store.insert("class_ids", Tensor::new(vec![t, k], ids)?)?;
        store.insert("probs", Tensor::new(vec![t, k], probs)?)?;
    }
    store.insert("k", Tensor::scalar(k as f32))?;
    Checkpoint::new(store, t as u64, Phase::BurnIn).save(path)
}

/// Inverse of [`write_posterior`]. Slots with negative probability mark
/// frames that kept fewer than `k` entries.
pub fn read_posterior(path: &Path, utt_id: &str) -> Result<SparsePosterior> {
    let ck = Checkpoint::load(path)?;
    let k = ck.params.get("k")?.data[0] as usize;
    let t = ck.step as usize;
    let mut frames = Vec::with_capacity(t);
    if t > 0 {
        let ids = ck.params.get("class_ids")?;
        let probs = ck.params.get("probs")?;
        if ids.shape != [t, k] || probs.shape != [t, k] {
            return Err(Error::Input(format!("{}: posterior shapes disagree", path.display())));
        }
        for f in 0..t {
            frames.push(
                (0..k)
                    .filter(|&j| probs.data[f * k + j] >= 0.0)
                    .map(|j| (ids.data[f * k + j] as u32, probs.data[f * k + j] as f64))
                    .collect(),
            );
        }
    }
    let p = SparsePosterior {
        utt_id: utt_id.to_string(),
        k,
        frames,
    };
    p.validate()?;
    Ok(p)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelfLabelStats {
    pub labeled: usize,
    pub dropped_empty: usize,
    pub dropped_score: usize,
    pub failed: usize,
}

/// Give each segment the teacher's top-1 hypothesis as transcript.
/// Frame-level teachers decode with `lm` fused; encoder-decoders ignore it.
/// Empty hypotheses, and ones scoring below `min_score` when set, are dropped.
pub fn generate_selflabels(
    segments: &[Utterance],
    teacher: &ModelBundle<f32>,
    lm: Option<&NGramLM>,
    cfg: &DecodeConfig,
    min_score: Option<f64>,
) -> Result<(Vec<Utterance>, SelfLabelStats)> {
    let vocab = Vocab::with_size(teacher.config.vocab_size)?;
    let mut stats = SelfLabelStats::default();
    let mut out = Vec::new();
    for s in segments {
        let hyp = match decode_utterance(teacher, &s.features.frames, lm, cfg) {
            Ok(h) => h,
            Err(e) => {
                log_skip(s.utt_id(), &e);
                stats.failed += 1;
                continue;
            }
        };
        let text = vocab.decode(&hyp.tokens);
        let text = text.split_whitespace().collect::<Vec<_>>().join(" ");
        if text.is_empty() {
            stats.dropped_empty += 1;
            continue;
        }
        if min_score.is_some_and(|m| hyp.score < m) {
            stats.dropped_score += 1;
            continue;
        }
        let mut u = s.clone();
        u.transcript = Some(text);
        out.push(u);
        stats.labeled += 1;
    }
    Ok((out, stats))
}

/// Greedy best-path text of a frame-level model.
pub fn greedy_text(model: &ModelBundle<f32>, utt: &Utterance) -> Result<String> {
    let vocab = Vocab::with_size(model.config.vocab_size)?;
    let lp = model.frame_logprobs(&utt.features.frames)?;
    Ok(vocab.decode(&ctc_greedy(&lp)?))
}

/// Student architectures for successive distillation rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationPlan {
    pub rounds: Vec<ModelConfig>,
}

impl IterationPlan {
    pub fn validate(&self, baseline: &ModelConfig) -> Result<()> {
        if self.rounds.is_empty() {
            return Err(Error::Config("iteration plan needs at least one round".into()));
        }
        let mut prev = ModelBundle::<f32>::init(baseline.clone(), 0)?.num_params();
        for (i, c) in self.rounds.iter().enumerate() {
            if !c.kind.is_framewise() {
                return Err(Error::Unsupported("frame-level distillation needs frame-level students".into()));
            }
            if c.encoder.subsample_factor != baseline.encoder.subsample_factor {
                return Err(Error::Config(format!(
                    "round {} student subsamples by {}, teacher by {}",
                    i + 1,
                    c.encoder.subsample_factor,
                    baseline.encoder.subsample_factor
                )));
            }
            let n = ModelBundle::<f32>::init(c.clone(), 0)?.num_params();
            if n < prev {
                return Err(Error::Config(format!("round {} student is smaller than its teacher", i + 1)));
            }
            prev = n;
        }
        Ok(())
    }
}

/// Data shared by all distillation rounds.
pub struct DistillCorpora<'a> {
    /// Supervised fine-tuning examples for the students' loss.
    pub supervised: &'a [Example],
    pub unlabeled: &'a [Utterance],
    pub tests: &'a [(&'a str, &'a [Utterance])],
}

/// Settings shared by all rounds.
#[derive(Debug, Clone)]
pub struct DistillSettings<'a> {
    pub plan: PhasePlan,
    pub top_k: usize,
    pub decode: DecodeConfig,
    pub lm: Option<&'a NGramLM>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    /// 0 is the baseline teacher.
    pub round: usize,
    pub num_params: usize,
    pub coverage: Option<f64>,
    pub wer: Vec<WerRow>,
}

/// Reports of every finished round and the error that stopped the plan, if any.
#[derive(Debug)]
pub struct DistillOutcome {
    pub reports: Vec<RoundReport>,
    pub final_model: ModelBundle<f32>,
    pub failure: Option<Error>,
}

/// Each round extracts top-k teacher posteriors on the unlabeled set,
/// trains that round's student on them (train-main), fine-tunes it on the
/// supervised examples, evaluates it, and hands it on as the next teacher.
/// A student whose config equals its teacher's starts from the teacher.
pub fn run_iterative_distillation(
    baseline: ModelBundle<f32>,
    plan: &IterationPlan,
    corpora: &DistillCorpora<'_>,
    settings: &DistillSettings<'_>,
) -> Result<DistillOutcome> {
    plan.validate(&baseline.config)?;
    let mut reports = vec![RoundReport {
        round: 0,
        num_params: baseline.num_params(),
        coverage: None,
        wer: evaluate(&baseline, corpora.tests, settings.lm, &settings.decode)?,
    }];
    let mut teacher = baseline;
    for (r, student_cfg) in plan.rounds.iter().enumerate() {
        let round = r + 1;
        let step = || -> Result<(ModelBundle<f32>, RoundReport)> {
            let (posts, coverage) = extract_corpus_posteriors(corpora.unlabeled, &teacher, settings.top_k)?;
            let distill: Vec<Example> = corpora
                .unlabeled
                .iter()
                .zip(posts)
                .map(|(u, p)| Example::posterior(u.features.frames.clone(), p))
                .collect();
            let mut data = TrainingSet::new();
            data.insert(SourceTag::Supervised, corpora.supervised.to_vec());
            data.insert(SourceTag::Distill, distill);
            let round_seed = crate::seed::derive_index(settings.seed, round as u64);
            let student = ModelBundle::init_or_copy(student_cfg.clone(), round_seed, Some(&teacher))?;
            let out = run_three_phase(student, &settings.plan, &data, round_seed)?;
            let wer = evaluate(&out.model, corpora.tests, settings.lm, &settings.decode)?;
            Ok((
                out.model.clone(),
                RoundReport {
                    round,
                    num_params: out.model.num_params(),
                    coverage: Some(coverage),
                    wer,
                },
            ))
        };
        match step() {
            Ok((m, rep)) => {
                reports.push(rep);
                teacher = m;
            }
            Err(e) => {
                return Ok(DistillOutcome {
                    reports,
                    final_model: teacher,
                    failure: Some(e),
                })
            }
        }
    }
    Ok(DistillOutcome {
        reports,
        final_model: teacher,
        failure: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const B: u32 = 9;

    #[test]
    fn all_speech_one_segment() {
        let path = [1, B, 2, 2, B, 3, B, B];
        let r = segment_path("u", &path, B, 2, 16, 1000, 30).unwrap();
        assert_eq!(r.segments.len(), 1);
        assert_eq!((r.segments[0].start_frame, r.segments[0].end_frame), (0, 16));
    }

    #[test]
    fn all_silence_no_segments() {
        let r = segment_path("u", &[B; 40], B, 2, 80, 1000, 30).unwrap();
        assert!(r.segments.is_empty());
        let r = segment_path("u", &[B; 3], B, 2, 6, 1000, 30).unwrap();
        assert!(r.segments.is_empty());
    }

    #[test]
    fn long_silence_removed() {
        let mut path = vec![1, B, 2];
        path.extend([B; 20]);
        path.extend([3, B, 4]);
        let r = segment_path("u", &path, B, 2, 52, 1000, 30).unwrap();
        assert_eq!(r.segments.len(), 2);
        assert_eq!((r.segments[0].start_frame, r.segments[0].end_frame), (0, 6));
        assert_eq!((r.segments[1].start_frame, r.segments[1].end_frame), (46, 52));
    }

    #[test]
    fn cuts_on_token_onsets() {
        // a new token every 5 subsampled frames (10 input frames)
        let path: Vec<u32> = (0..50).map(|j| if j % 5 == 0 { (j / 5 % 3) as u32 } else { B }).collect();
        let r = segment_path("u", &path, B, 2, 100, 25, 30).unwrap();
        for s in &r.segments {
            assert!(s.end_frame - s.start_frame <= 25);
            assert!(s.start_frame % 10 == 0);
        }
        assert_eq!(r.segments.last().unwrap().end_frame, 100);
    }

    #[test]
    fn hard_cut_inside_long_token() {
        let r = segment_path("u", &[1; 30], B, 2, 60, 25, 30).unwrap();
        let spans: Vec<_> = r.segments.iter().map(|s| (s.start_frame, s.end_frame)).collect();
        assert_eq!(spans, vec![(0, 25), (25, 50), (50, 60)]);
    }

    #[test]
    fn top3_coverage_example() {
        let probs = Matrix::from_rows(&[vec![0.7, 0.2, 0.08, 0.02]]).unwrap();
        let (p, cov) = sparsify("u", &probs, 3).unwrap();
        assert_eq!(p.frames[0], vec![(0, 0.7), (1, 0.2), (2, 0.08)]);
        assert!((cov - 0.98).abs() < 1e-12);
        let (_, full) = sparsify("u", &probs, 4).unwrap();
        assert!((full - 1.0).abs() < 1e-12);
        let onehot = Matrix::from_rows(&[vec![0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(sparsify("u", &onehot, 1).unwrap().1, 1.0);
    }

    #[test]
    fn posterior_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let probs = Matrix::from_rows(&[vec![0.5, 0.25, 0.25], vec![0.125, 0.625, 0.25]]).unwrap();
        let (p, _) = sparsify("u", &probs, 2).unwrap();
        let path = dir.path().join("u.post");
        write_posterior(&path, &p).unwrap();
        assert_eq!(read_posterior(&path, "u").unwrap(), p);
    }
}
