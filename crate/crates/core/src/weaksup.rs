//! Weak supervision from recording metadata: filtering, sharing metadata
//! across segments, and mixed-source batch sampling.

use crate::corpus::{SourceTag, Utterance, Vocab};
use crate::nn::{ModelBundle, ModelKind};
use crate::seed;
use crate::trainer::{run_three_phase, Example, PhasePlan, RunOutput, TrainingSet};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// A segment paired with the full metadata of its recording.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakPair {
    pub segment: Utterance,
    pub metadata_tokens: Vec<u32>,
    pub parent_video_id: String,
}

/// A recording offered to the filter.
#[derive(Debug, Clone)]
pub struct Video {
    pub video_id: String,
    pub metadata: String,
    pub segments: Vec<Utterance>,
    pub baseline_hyps: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    pub videos: usize,
    pub too_short: usize,
    pub too_long: usize,
    pub no_overlap: usize,
    pub kept_videos: usize,
    pub kept_segments: usize,
}

impl FilterStats {
    pub const CSV_HEADER: &'static str = "videos,too_short,too_long,no_overlap,kept_videos,kept_segments";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.videos, self.too_short, self.too_long, self.no_overlap, self.kept_videos, self.kept_segments
        )
    }
}

fn word_set(text: &str) -> BTreeSet<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// True when the two texts share at least one lowercased word.
pub fn word_overlap(a: &str, b: &str) -> bool {
    let sa = word_set(a);
    b.split_whitespace().any(|w| sa.contains(&w.to_lowercase()))
}

/// Keep recordings whose metadata length lies in `[min_chars, max_chars]`
/// and shares a word with the baseline hypotheses; every kept segment gets
/// the recording's full metadata.
pub fn filter_metadata(
    videos: &[Video],
    vocab: &Vocab,
    min_chars: usize,
    max_chars: usize,
) -> Result<(Vec<WeakPair>, FilterStats)> {
    if min_chars == 0 || min_chars > max_chars {
        return Err(Error::Config(format!("invalid metadata bounds [{min_chars}, {max_chars}]")));
    }
    let mut stats = FilterStats::default();
    let mut out = Vec::new();
    for v in videos {
        stats.videos += 1;
        let len = v.metadata.chars().count();
        if len < min_chars {
            stats.too_short += 1;
            continue;
        }
        if len > max_chars {
            stats.too_long += 1;
            continue;
        }
        if !word_overlap(&v.metadata, &v.baseline_hyps.join(" ")) {
            stats.no_overlap += 1;
            continue;
        }
        stats.kept_videos += 1;
        let tokens = vocab.encode(&v.metadata);
        for s in &v.segments {
            let mut seg = s.clone();
            seg.metadata = Some(v.metadata.clone());
            out.push(WeakPair {
                segment: seg,
                metadata_tokens: tokens.clone(),
                parent_video_id: v.video_id.clone(),
            });
            stats.kept_segments += 1;
        }
    }
    Ok((out, stats))
}

/// Group segments by recording. Segments without a parent are their own
/// recording; hypotheses are matched to segments by position.
pub fn group_videos(segments: &[Utterance], hyps: &[String]) -> Result<Vec<Video>> {
    if segments.len() != hyps.len() {
        return Err(Error::Input("one baseline hypothesis per segment is required".into()));
    }
    let mut order: Vec<String> = Vec::new();
    let mut map: BTreeMap<String, Video> = BTreeMap::new();
    for (s, h) in segments.iter().zip(hyps) {
        let id = s.parent_id.clone().unwrap_or_else(|| s.utt_id().to_string());
        let meta = s
            .metadata
            .clone()
            .ok_or_else(|| Error::Input(format!("segment {} has no metadata", s.utt_id())))?;
        let v = map.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Video {
                video_id: id,
                metadata: meta,
                segments: Vec::new(),
                baseline_hyps: Vec::new(),
            }
        });
        v.segments.push(s.clone());
        v.baseline_hyps.push(h.clone());
    }
    Ok(order.into_iter().map(|id| map.remove(&id).expect("grouped")).collect())
}

/// Probability of drawing each source per batch. Serialized as the
/// `tag:ratio,...` string accepted by [`MixSpec::parse`].
#[derive(Debug, Clone, PartialEq)]
pub struct MixSpec {
    pub ratios: BTreeMap<SourceTag, f64>,
}

impl MixSpec {
    pub fn new(pairs: &[(SourceTag, f64)]) -> Result<Self> {
        let m = MixSpec {
            ratios: pairs.iter().copied().collect(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn supervised() -> Self {
        MixSpec::new(&[(SourceTag::Supervised, 1.0)]).expect("valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.ratios.values().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(Error::Config("mixing ratios must be finite and non-negative".into()));
        }
        let sum: f64 = self.ratios.values().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("mixing ratios sum to {sum}, expected 1")));
        }
        Ok(())
    }

    pub fn ratio(&self, tag: SourceTag) -> f64 {
        self.ratios.get(&tag).copied().unwrap_or(0.0)
    }

    /// Parse `tag:ratio,tag:ratio`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for part in s.split(',').filter(|p| !p.trim().is_empty()) {
            let (tag, r) = part
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("mix entry {part:?} is not tag:ratio")))?;
            let r: f64 = r
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad ratio in {part:?}")))?;
            pairs.push((SourceTag::parse(tag.trim())?, r));
        }
        MixSpec::new(&pairs)
    }

    pub fn to_spec_string(&self) -> String {
        self.ratios
            .iter()
            .map(|(t, r)| format!("{}:{r}", t.name()))
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl Serialize for MixSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_spec_string())
    }
}

impl<'de> Deserialize<'de> for MixSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        MixSpec::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Without-replacement cursor over one source, reshuffled every epoch.
#[derive(Debug, Clone)]
struct Cursor {
    order: Vec<usize>,
    pos: usize,
    epoch: u64,
    seed: u64,
}

impl Cursor {
    fn new(len: usize, seed_value: u64) -> Self {
        let mut c = Cursor {
            order: (0..len).collect(),
            pos: 0,
            epoch: 0,
            seed: seed_value,
        };
        c.shuffle();
        c
    }

    fn shuffle(&mut self) {
        self.order.sort_unstable();
        self.order.shuffle(&mut seed::rng(seed::derive_index(self.seed, self.epoch)));
    }

    /// Up to `n` indices; a batch never spans an epoch boundary.
    fn take(&mut self, n: usize) -> Vec<usize> {
        if self.pos >= self.order.len() {
            self.epoch += 1;
            self.pos = 0;
            self.shuffle();
        }
        let end = (self.pos + n).min(self.order.len());
        let out = self.order[self.pos..end].to_vec();
        self.pos = end;
        out
    }
}

/// Infinite stream of single-source batches. The source of each batch is
/// drawn i.i.d. from the mix; items within a source are visited without
/// replacement per epoch.
#[derive(Debug, Clone)]
pub struct MixedBatchSampler {
    sizes: BTreeMap<SourceTag, usize>,
    cursors: BTreeMap<SourceTag, Cursor>,
    spec: Option<MixSpec>,
    batch_size: usize,
    rng: seed::Rng,
}

impl MixedBatchSampler {
    pub fn new(sizes: &BTreeMap<SourceTag, usize>, spec: MixSpec, batch_size: usize, seed_value: u64) -> Result<Self> {
        let mut s = Self::unmixed(sizes, batch_size, seed_value)?;
        s.set_mix(spec)?;
        Ok(s)
    }

    /// A sampler with no mix yet; [`MixedBatchSampler::set_mix`] must be
    /// called before drawing.
    pub fn unmixed(sizes: &BTreeMap<SourceTag, usize>, batch_size: usize, seed_value: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        let cursors = sizes
            .iter()
            .map(|(&t, &n)| (t, Cursor::new(n, seed::derive(seed_value, t.name()))))
            .collect();
        Ok(MixedBatchSampler {
            sizes: sizes.clone(),
            cursors,
            spec: None,
            batch_size,
            rng: seed::rng(seed::derive(seed_value, "mix")),
        })
    }

    /// Switch mixing ratios; cursors keep their positions.
    pub fn set_mix(&mut self, spec: MixSpec) -> Result<()> {
        spec.validate()?;
        for (t, &r) in &spec.ratios {
            if r > 0.0 && self.sizes.get(t).copied().unwrap_or(0) == 0 {
                return Err(Error::Config(format!("source {} has ratio {r} but no data", t.name())));
            }
        }
        self.spec = Some(spec);
        Ok(())
    }

    pub fn next_batch(&mut self) -> Result<(SourceTag, Vec<usize>)> {
        let spec = self
            .spec
            .as_ref()
            .ok_or_else(|| Error::Config("sampler has no mixing ratios".into()))?;
        let u: f64 = self.rng.random();
        let mut acc = 0.0;
        let mut chosen = None;
        for (&t, &r) in &spec.ratios {
            if r <= 0.0 {
                continue;
            }
            chosen = Some(t);
            acc += r;
            if u < acc {
                break;
            }
        }
        let tag = chosen.expect("validated mix has a positive ratio");
        let idx = self.cursors.get_mut(&tag).expect("validated source").take(self.batch_size);
        Ok((tag, idx))
    }
}

impl Iterator for MixedBatchSampler {
    type Item = (SourceTag, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        self.next_batch().ok()
    }
}

/// Weak-pair training examples: each segment targets its metadata tokens.
pub fn weak_examples(pairs: &[WeakPair]) -> Vec<Example> {
    pairs
        .iter()
        .map(|p| Example::tokens(p.segment.utt_id(), p.segment.features.frames.clone(), p.metadata_tokens.clone()))
        .collect()
}

/// Three-phase training with weak pairs mixed into the main phase. Only
/// encoder-decoder models can learn from unaligned metadata.
pub fn weaksup_train(
    model: ModelBundle<f32>,
    supervised: Vec<Example>,
    weak: Vec<Example>,
    spec: MixSpec,
    mut plan: PhasePlan,
    seed_value: u64,
) -> Result<RunOutput> {
    if model.config.kind != ModelKind::EncDec {
        return Err(Error::Unsupported(format!(
            "weak supervision needs an encoder-decoder, got {}",
            model.config.kind.name()
        )));
    }
    plan.train_main.mix = spec;
    let mut data = TrainingSet::new();
    data.insert(SourceTag::Supervised, supervised);
    data.insert(SourceTag::Weak, weak);
    run_three_phase(model, &plan, &data, seed_value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::FeatureSequence;
    use crate::nn::Matrix;

    fn seg(id: &str, parent: &str, meta: &str) -> Utterance {
        let mut u = Utterance::new(FeatureSequence::new(id, Matrix::zeros(3, 2)).unwrap());
        u.parent_id = Some(parent.into());
        u.metadata = Some(meta.into());
        u
    }

    fn video(meta: &str, hyp: &str, n: usize) -> Video {
        Video {
            video_id: "v".into(),
            metadata: meta.into(),
            segments: (0..n).map(|i| seg(&format!("v-{i}"), "v", meta)).collect(),
            baseline_hyps: vec![hyp.into(); n],
        }
    }

    #[test]
    fn length_bounds_inclusive() {
        let vocab = Vocab::letters(8).unwrap();
        let m49 = format!("ab {}", "c".repeat(46));
        let m50 = format!("ab {}", "c".repeat(47));
        assert_eq!(m49.len(), 49);
        let (k, s) = filter_metadata(&[video(&m49, "ab", 1)], &vocab, 50, 700).unwrap();
        assert!(k.is_empty());
        assert_eq!(s.too_short, 1);
        let (k, _) = filter_metadata(&[video(&m50, "ab", 1)], &vocab, 50, 700).unwrap();
        assert_eq!(k.len(), 1);
    }

    #[test]
    fn zero_overlap_rejected() {
        let vocab = Vocab::letters(8).unwrap();
        let (k, s) = filter_metadata(&[video("ab cd", "ef", 2)], &vocab, 1, 700).unwrap();
        assert!(k.is_empty());
        assert_eq!(s.no_overlap, 1);
    }

    #[test]
    fn metadata_shared_across_segments() {
        let vocab = Vocab::letters(8).unwrap();
        let (k, s) = filter_metadata(&[video("ab cd", "cd", 3)], &vocab, 1, 700).unwrap();
        assert_eq!(k.len(), 3);
        assert_eq!(s.kept_segments, 3);
        assert!(k.iter().all(|p| p.metadata_tokens == k[0].metadata_tokens));
    }

    #[test]
    fn bad_bounds() {
        let vocab = Vocab::letters(8).unwrap();
        assert!(filter_metadata(&[], &vocab, 0, 5).is_err());
        assert!(filter_metadata(&[], &vocab, 6, 5).is_err());
    }

    #[test]
    fn grouping_by_parent() {
        let segs = vec![seg("a-0", "a", "x y"), seg("b-0", "b", "z"), seg("a-1", "a", "x y")];
        let hyps = vec!["x".to_string(), "q".to_string(), "w".to_string()];
        let v = group_videos(&segs, &hyps).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v[0].video_id, "a");
        assert_eq!(v[0].segments.len(), 2);
        assert_eq!(v[0].baseline_hyps, vec!["x", "w"]);
    }

    #[test]
    fn mix_validation() {
        assert!(MixSpec::new(&[(SourceTag::Weak, 0.5)]).is_err());
        assert!(MixSpec::new(&[(SourceTag::Weak, -0.5), (SourceTag::Supervised, 1.5)]).is_err());
        let m = MixSpec::parse("selflabel:0.7, weak:0.3").unwrap();
        assert_eq!(m.ratio(SourceTag::SelfLabel), 0.7);
        assert_eq!(MixSpec::parse(&m.to_spec_string()).unwrap(), m);
    }

    #[test]
    fn supervised_only_mix() {
        let sizes = BTreeMap::from([(SourceTag::Supervised, 10), (SourceTag::Weak, 10)]);
        let mut s = MixedBatchSampler::new(&sizes, MixSpec::supervised(), 3, 1).unwrap();
        for _ in 0..100 {
            assert_eq!(s.next_batch().unwrap().0, SourceTag::Supervised);
        }
    }

    #[test]
    fn empty_source_with_ratio_rejected() {
        let sizes = BTreeMap::from([(SourceTag::Supervised, 10), (SourceTag::Weak, 0)]);
        let mix = MixSpec::new(&[(SourceTag::Supervised, 0.5), (SourceTag::Weak, 0.5)]).unwrap();
        assert!(MixedBatchSampler::new(&sizes, mix, 3, 1).is_err());
    }

    #[test]
    fn epoch_covers_source_before_repeats() {
        let sizes = BTreeMap::from([(SourceTag::Supervised, 7), (SourceTag::Weak, 7)]);
        let mix = MixSpec::new(&[(SourceTag::Supervised, 0.5), (SourceTag::Weak, 0.5)]).unwrap();
        let mut s = MixedBatchSampler::new(&sizes, mix, 3, 5).unwrap();
        let mut seen: BTreeMap<SourceTag, Vec<usize>> = BTreeMap::new();
        for _ in 0..200 {
            let (t, idx) = s.next_batch().unwrap();
            seen.entry(t).or_default().extend(idx);
        }
        for v in seen.values() {
            for epoch in v.chunks(7).filter(|c| c.len() == 7) {
                let set: BTreeSet<_> = epoch.iter().collect();
                assert_eq!(set.len(), 7);
            }
        }
    }
}
