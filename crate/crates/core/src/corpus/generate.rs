//! Synthetic speech-like corpora.
//!
//! A [`World`] fixes the lexicon, per-token prototype vectors and speaker
//! transforms from a world seed, so supervised, unlabeled and test sets drawn
//! with different sampling seeds share the same acoustics. Each token is
//! rendered as its prototype (after the speaker transform) repeated for a
//! random number of frames, plus Gaussian noise.

use super::vocab::{Vocab, SPACE};
use super::{FeatureSequence, Utterance};
use crate::nn::Matrix;
use crate::seed;
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub num_utts: usize,
    /// Number of letters; the token vocabulary adds a separator and unknown.
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub lexicon_size: usize,
    pub word_len_range: (usize, usize),
    pub words_per_utt: (usize, usize),
    pub frames_per_token_range: (usize, usize),
    pub noise_sigma: f64,
    pub metadata_noise: f64,
    /// Target metadata length range before filtering.
    pub metadata_chars: (usize, usize),
    /// Sentences per recording, separated by silence gaps.
    pub segments_per_video: usize,
    pub gap_frames: (usize, usize),
    pub edge_frames: (usize, usize),
    /// Half-open speaker id range.
    pub speakers: (u32, u32),
    pub speaker_sigma: f64,
    pub world_seed: u64,
    pub id_prefix: String,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            num_utts: 100,
            vocab_size: 8,
            feature_dim: 16,
            lexicon_size: 40,
            word_len_range: (2, 4),
            words_per_utt: (2, 3),
            frames_per_token_range: (3, 5),
            noise_sigma: 0.5,
            metadata_noise: 0.0,
            metadata_chars: (30, 750),
            segments_per_video: 1,
            gap_frames: (40, 60),
            edge_frames: (2, 4),
            speakers: (0, 50),
            speaker_sigma: 0.0,
            world_seed: 0,
            id_prefix: "utt".into(),
        }
    }
}

fn check_range(name: &str, r: (usize, usize)) -> Result<()> {
    if r.0 > r.1 {
        return Err(Error::Spec(format!("{name} range is empty: {r:?}")));
    }
    Ok(())
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_utts == 0 {
            return Err(Error::Spec("num_utts must be positive".into()));
        }
        if self.vocab_size < 2 {
            return Err(Error::Spec("vocabulary needs at least 2 letters".into()));
        }
        if self.feature_dim == 0 || self.lexicon_size == 0 || self.segments_per_video == 0 {
            return Err(Error::Spec("feature_dim, lexicon_size and segments_per_video must be positive".into()));
        }
        check_range("word_len", self.word_len_range)?;
        check_range("words_per_utt", self.words_per_utt)?;
        check_range("frames_per_token", self.frames_per_token_range)?;
        check_range("metadata_chars", self.metadata_chars)?;
        check_range("gap_frames", self.gap_frames)?;
        check_range("edge_frames", self.edge_frames)?;
        if self.word_len_range.0 == 0 || self.words_per_utt.0 == 0 || self.frames_per_token_range.0 == 0 {
            return Err(Error::Spec("word length, words per utterance and frames per token must be >= 1".into()));
        }
        if self.speakers.0 >= self.speakers.1 {
            return Err(Error::Spec("speaker range is empty".into()));
        }
        if !(self.noise_sigma >= 0.0) || !(0.0..=1.0).contains(&self.metadata_noise) || !(self.speaker_sigma >= 0.0) {
            return Err(Error::Spec("noise parameters out of range".into()));
        }
        Ok(())
    }
}

fn gaussian_vec(rng: &mut seed::Rng, n: usize, scale: f64) -> Vec<f32> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            (z * scale) as f32
        })
        .collect()
}

/// Fixed acoustic and linguistic structure shared by every corpus drawn
/// from the same world seed.
#[derive(Debug, Clone)]
pub struct World {
    pub vocab: Vocab,
    pub dim: usize,
    /// Prototype per token id.
    pub prototypes: Vec<Vec<f32>>,
    pub silence: Vec<f32>,
    pub lexicon: Vec<String>,
    /// Preferred successors of each lexicon word.
    pub successors: Vec<Vec<usize>>,
    /// Words that never occur in speech, used to pad metadata.
    pub distractors: Vec<String>,
    world_seed: u64,
}

fn random_word(rng: &mut seed::Rng, letters: &[char], len_range: (usize, usize)) -> String {
    let len = rng.random_range(len_range.0..=len_range.1);
    let mut w = String::with_capacity(len);
    let mut last = None;
    for _ in 0..len {
        // no doubled letters unless the alphabet forces it
        let mut c = letters[rng.random_range(0..letters.len())];
        if letters.len() > 1 {
            while Some(c) == last {
                c = letters[rng.random_range(0..letters.len())];
            }
        }
        w.push(c);
        last = Some(c);
    }
    w
}

impl World {
    pub fn new(spec: &CorpusSpec) -> Result<Self> {
        spec.validate()?;
        let vocab = Vocab::letters(spec.vocab_size)?;
        let mut rng = seed::rng(seed::derive(spec.world_seed, "world"));
        let prototypes = (0..vocab.size()).map(|_| gaussian_vec(&mut rng, spec.feature_dim, 1.0)).collect();
        let silence = gaussian_vec(&mut rng, spec.feature_dim, 0.3);
        let letters: Vec<char> = vocab.letter_ids().filter_map(|i| vocab.symbol(i)).collect();
        let mut seen = BTreeSet::new();
        let mut lexicon = Vec::new();
        let mut attempts = 0;
        while lexicon.len() < spec.lexicon_size && attempts < spec.lexicon_size * 200 {
            attempts += 1;
            let w = random_word(&mut rng, &letters, spec.word_len_range);
            if seen.insert(w.clone()) {
                lexicon.push(w);
            }
        }
        let n = lexicon.len();
        let successors = (0..n)
            .map(|_| (0..3).map(|_| rng.random_range(0..n)).collect())
            .collect();
        let mut distractors = Vec::new();
        attempts = 0;
        let dlen = (spec.word_len_range.0 + 1, spec.word_len_range.1 + 2);
        while distractors.len() < spec.lexicon_size.max(8) && attempts < spec.lexicon_size.max(8) * 200 {
            attempts += 1;
            let w = random_word(&mut rng, &letters, dlen);
            if seen.insert(w.clone()) {
                distractors.push(w);
            }
        }
        if distractors.is_empty() {
            distractors.push(letters.iter().cycle().take(dlen.1 + 1).collect());
        }
        Ok(World {
            vocab,
            dim: spec.feature_dim,
            prototypes,
            silence,
            lexicon,
            successors,
            distractors,
            world_seed: spec.world_seed,
        })
    }

    /// Speaker transform `x -> A x + b` with `A = I + sigma G / sqrt(d)`.
    fn speaker(&self, id: u32, sigma: f64) -> (Vec<f32>, Vec<f32>) {
        let d = self.dim;
        let mut rng = seed::rng(seed::derive(self.world_seed, &format!("speaker{id}")));
        let mut a = gaussian_vec(&mut rng, d * d, sigma / (d as f64).sqrt());
        for i in 0..d {
            a[i * d + i] += 1.0;
        }
        let b = gaussian_vec(&mut rng, d, sigma);
        (a, b)
    }

    fn sentence(&self, rng: &mut seed::Rng, words: (usize, usize)) -> Vec<usize> {
        let n = rng.random_range(words.0..=words.1);
        let mut out = Vec::with_capacity(n);
        let mut cur = rng.random_range(0..self.lexicon.len());
        out.push(cur);
        for _ in 1..n {
            cur = if rng.random::<f64>() < 0.7 {
                self.successors[cur][rng.random_range(0..self.successors[cur].len())]
            } else {
                rng.random_range(0..self.lexicon.len())
            };
            out.push(cur);
        }
        out
    }
}

/// Corpus generated from a [`CorpusSpec`].
#[derive(Debug, Clone)]
pub struct Corpus {
    pub world: World,
    pub utterances: Vec<Utterance>,
}

struct Renderer<'a> {
    world: &'a World,
    spk_a: Vec<f32>,
    spk_b: Vec<f32>,
    noise_sigma: f64,
    rows: Vec<Vec<f32>>,
}

impl Renderer<'_> {
    fn emit(&mut self, rng: &mut seed::Rng, base: &[f32], frames: usize) {
        let d = self.world.dim;
        let mut clean = self.spk_b.clone();
        for i in 0..d {
            clean[i] += self.spk_a[i * d..(i + 1) * d].iter().zip(base).map(|(a, x)| a * x).sum::<f32>();
        }
        for _ in 0..frames {
            let mut row = clean.clone();
            if self.noise_sigma > 0.0 {
                for (v, n) in row.iter_mut().zip(gaussian_vec(rng, d, self.noise_sigma)) {
                    *v += n;
                }
            }
            self.rows.push(row);
        }
    }
}

fn make_metadata(world: &World, rng: &mut seed::Rng, words: &[String], spec: &CorpusSpec) -> String {
    if spec.metadata_noise == 0.0 {
        return words.join(" ");
    }
    let p = spec.metadata_noise;
    let mut out: Vec<String> = Vec::new();
    for w in words {
        if rng.random::<f64>() >= p {
            out.push(w.clone());
        }
        if rng.random::<f64>() < p / 2.0 {
            out.push(world.lexicon[rng.random_range(0..world.lexicon.len())].clone());
        }
    }
    let target = rng.random_range(spec.metadata_chars.0..=spec.metadata_chars.1);
    let mut len = out.iter().map(|w| w.len() + 1).sum::<usize>().saturating_sub(1);
    while len < target {
        let w = world.distractors[rng.random_range(0..world.distractors.len())].clone();
        len += w.len() + usize::from(!out.is_empty());
        let pos = rng.random_range(0..=out.len());
        out.insert(pos, w);
    }
    out.join(" ")
}

fn render_utterance(world: &World, spec: &CorpusSpec, utt_id: String, sample_seed: u64) -> Result<Utterance> {
    let mut rng = seed::rng(seed::derive(sample_seed, &utt_id));
    let speaker = rng.random_range(spec.speakers.0..spec.speakers.1);
    let (spk_a, spk_b) = world.speaker(speaker, spec.speaker_sigma);
    let mut r = Renderer {
        world,
        spk_a,
        spk_b,
        noise_sigma: spec.noise_sigma,
        rows: Vec::new(),
    };
    let mut words: Vec<String> = Vec::new();
    let mut alignment = Vec::new();
    let mut tokens = Vec::new();
    let edge = rng.random_range(spec.edge_frames.0..=spec.edge_frames.1);
    r.emit(&mut rng, &world.silence, edge);
    for seg in 0..spec.segments_per_video {
        if seg > 0 {
            let gap = rng.random_range(spec.gap_frames.0..=spec.gap_frames.1);
            r.emit(&mut rng, &world.silence, gap);
        }
        for wi in world.sentence(&mut rng, spec.words_per_utt) {
            let w = &world.lexicon[wi];
            if !words.is_empty() {
                tokens.push(SPACE);
            }
            tokens.extend(world.vocab.encode(w));
            // render the separator (if any) and the word's letters
            let start_tok = tokens.len() - w.chars().count() - usize::from(!words.is_empty());
            for &tok in &tokens[start_tok..] {
                let n = rng.random_range(spec.frames_per_token_range.0..=spec.frames_per_token_range.1);
                let start = r.rows.len();
                r.emit(&mut rng, &world.prototypes[tok as usize], n);
                alignment.push((start, r.rows.len()));
            }
            words.push(w.clone());
        }
    }
    let edge = rng.random_range(spec.edge_frames.0..=spec.edge_frames.1);
    r.emit(&mut rng, &world.silence, edge);
    let frames = Matrix::from_rows(&r.rows)?;
    let features = FeatureSequence::new(utt_id, frames)?;
    let metadata = make_metadata(world, &mut rng, &words, spec);
    let mut utt = Utterance::new(features);
    utt.transcript = Some(words.join(" "));
    utt.metadata = Some(metadata);
    utt.alignment = Some(alignment);
    Ok(utt)
}

/// Draw `spec.num_utts` utterances. Each utterance's randomness is derived
/// from `(seed, utt_id)`, so any subset renders identically on its own.
pub fn generate_corpus(spec: &CorpusSpec, seed_value: u64) -> Result<Corpus> {
    let world = World::new(spec)?;
    let utterances = (0..spec.num_utts)
        .map(|i| render_utterance(&world, spec, format!("{}{:06}", spec.id_prefix, i), seed_value))
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus { world, utterances })
}

/// Structured noise clip: a run of random "events", each a random vector
/// held for 5 to 20 frames with small per-frame jitter.
pub fn generate_noise_clip(dim: usize, frames: usize, seed_value: u64) -> Result<FeatureSequence> {
    if dim == 0 || frames == 0 {
        return Err(Error::Input("noise clip needs positive size".into()));
    }
    let mut rng = seed::rng(seed_value);
    let mut rows = Vec::with_capacity(frames);
    while rows.len() < frames {
        let len = rng.random_range(5..=20);
        let event = gaussian_vec(&mut rng, dim, 1.0);
        for _ in 0..len.min(frames - rows.len()) {
            let jitter = gaussian_vec(&mut rng, dim, 0.2);
            rows.push(event.iter().zip(jitter).map(|(a, b)| a + b).collect::<Vec<f32>>());
        }
    }
    FeatureSequence::new(format!("noise{seed_value}"), Matrix::from_rows(&rows)?)
}

/// A bank of noise clips for superposition.
pub fn noise_bank(dim: usize, clips: usize, frames: usize, seed_value: u64) -> Result<Vec<FeatureSequence>> {
    (0..clips)
        .map(|i| generate_noise_clip(dim, frames, seed::derive_index(seed_value, i as u64)))
        .collect()
}

/// Shuffle with a seeded generator.
pub fn shuffled<T: Clone>(items: &[T], seed_value: u64) -> Vec<T> {
    let mut v = items.to_vec();
    v.shuffle(&mut seed::rng(seed_value));
    v
}
