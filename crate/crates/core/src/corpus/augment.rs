//! Speed perturbation, noise superposition and time/frequency masking.

use super::{FeatureSequence, Utterance};
use crate::nn::Matrix;
use crate::seed;
use crate::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub speed_factors: Vec<f64>,
    /// Uniform SNR range for noise-superposed copies, in dB.
    pub noise_snr_db: (f64, f64),
    pub time_masks: usize,
    pub time_mask_max: usize,
    pub freq_masks: usize,
    pub freq_mask_max: usize,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            speed_factors: vec![0.9, 1.1],
            noise_snr_db: (5.0, 20.0),
            time_masks: 2,
            time_mask_max: 10,
            freq_masks: 2,
            freq_mask_max: 4,
        }
    }
}

impl AugmentPolicy {
    /// No masking at all.
    pub fn without_masks(mut self) -> Self {
        self.time_masks = 0;
        self.freq_masks = 0;
        self
    }
}

fn speed_len(frames: usize, factor: f64) -> usize {
    ((frames as f64 / factor).round() as usize).max(1)
}

/// Resample to `round(T / factor)` frames; output frame `i` interpolates
/// linearly between the source frames around position `i * factor`.
pub fn speed_perturb(features: &FeatureSequence, factor: f64) -> Result<FeatureSequence> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(Error::Param(format!("speed factor must be positive, got {factor}")));
    }
    let src = &features.frames;
    let (t_in, d) = (src.rows(), src.cols());
    let t_out = speed_len(t_in, factor);
    let mut out = Matrix::zeros(t_out, d);
    for i in 0..t_out {
        let pos = (i as f64 * factor).min((t_in - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(t_in - 1);
        let w = (pos - lo as f64) as f32;
        let (a, b) = (src.row(lo), src.row(hi));
        for (k, v) in out.row_mut(i).iter_mut().enumerate() {
            *v = a[k] * (1.0 - w) + b[k] * w;
        }
    }
    Ok(FeatureSequence {
        utt_id: features.utt_id.clone(),
        frames: out,
        frame_shift_ms: features.frame_shift_ms,
    })
}

fn energy(m: &Matrix<f32>) -> f64 {
    m.as_slice().iter().map(|v| (*v as f64) * (*v as f64)).sum()
}

/// Tile or crop `noise` to the utterance length and add it with a gain that
/// puts the signal-to-noise energy ratio at `snr_db`. A zero-energy signal
/// receives the noise at unit gain.
pub fn superpose_noise(features: &FeatureSequence, noise: &FeatureSequence, snr_db: f64, seed_value: u64) -> Result<FeatureSequence> {
    if noise.dim() != features.dim() {
        return Err(Error::Input(format!(
            "noise dimension {} != feature dimension {}",
            noise.dim(),
            features.dim()
        )));
    }
    if snr_db.is_nan() {
        return Err(Error::Input("snr_db is NaN".into()));
    }
    let t = features.num_frames();
    let d = features.dim();
    let offset = seed::rng(seed_value).random_range(0..noise.num_frames());
    let mut tiled = Matrix::zeros(t, d);
    for i in 0..t {
        tiled.row_mut(i).copy_from_slice(noise.frames.row((offset + i) % noise.num_frames()));
    }
    let es = energy(&features.frames);
    let en = energy(&tiled);
    let gain = if en == 0.0 {
        0.0
    } else if es == 0.0 {
        1.0
    } else if snr_db == f64::INFINITY {
        0.0
    } else {
        (es / (en * 10f64.powf(snr_db / 10.0))).sqrt()
    };
    let mut out = features.frames.clone();
    for (o, n) in out.as_mut_slice().iter_mut().zip(tiled.as_slice()) {
        *o += (gain * *n as f64) as f32;
    }
    Ok(FeatureSequence {
        utt_id: features.utt_id.clone(),
        frames: out,
        frame_shift_ms: features.frame_shift_ms,
    })
}

/// Apply the policy's time and frequency masks, filling with the utterance
/// mean. Widths are drawn in `[0, max]` and clamped to the axis length.
pub fn mask_time_freq(features: &FeatureSequence, policy: &AugmentPolicy, seed_value: u64) -> FeatureSequence {
    let mut out = features.clone();
    if policy.time_masks == 0 && policy.freq_masks == 0 {
        return out;
    }
    let (t, d) = (features.num_frames(), features.dim());
    let mean = (features.frames.as_slice().iter().map(|v| *v as f64).sum::<f64>() / (t * d) as f64) as f32;
    let mut rng = seed::rng(seed_value);
    for _ in 0..policy.time_masks {
        let w = rng.random_range(0..=policy.time_mask_max).min(t);
        let start = rng.random_range(0..=t - w);
        for r in start..start + w {
            out.frames.row_mut(r).iter_mut().for_each(|v| *v = mean);
        }
    }
    for _ in 0..policy.freq_masks {
        let w = rng.random_range(0..=policy.freq_mask_max).min(d);
        let start = rng.random_range(0..=d - w);
        for r in 0..t {
            out.frames.row_mut(r)[start..start + w].iter_mut().for_each(|v| *v = mean);
        }
    }
    out
}

/// Scale token spans to a speed-perturbed length.
fn scale_alignment(al: &[(usize, usize)], factor: f64, frames: usize) -> Vec<(usize, usize)> {
    al.iter()
        .map(|&(s, e)| {
            let s2 = ((s as f64 / factor).round() as usize).min(frames);
            let e2 = ((e as f64 / factor).round() as usize).clamp(s2, frames);
            (s2, e2)
        })
        .collect()
}

/// Materialize the augmented training copies: the originals, one copy per
/// speed factor and one noise-superposed copy per original.
pub fn expand_with_augmentation(
    utts: &[Utterance],
    policy: &AugmentPolicy,
    noise: &[FeatureSequence],
    seed_value: u64,
) -> Result<Vec<Utterance>> {
    let mut out = utts.to_vec();
    for &factor in &policy.speed_factors {
        for u in utts {
            let mut c = u.clone();
            c.features = speed_perturb(&u.features, factor)?;
            c.features.utt_id = format!("{}-sp{factor}", u.utt_id());
            c.duration_s = c.features.duration_s();
            c.alignment = u
                .alignment
                .as_ref()
                .map(|a| scale_alignment(a, factor, c.features.num_frames()));
            out.push(c);
        }
    }
    if !noise.is_empty() {
        for u in utts {
            let s = seed::derive(seed_value, u.utt_id());
            let mut rng = seed::rng(s);
            let clip = &noise[rng.random_range(0..noise.len())];
            let snr = rng.random_range(policy.noise_snr_db.0..=policy.noise_snr_db.1);
            let mut c = u.clone();
            c.features = superpose_noise(&u.features, clip, snr, s)?;
            c.features.utt_id = format!("{}-noise", u.utt_id());
            out.push(c);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(t: usize, d: usize) -> FeatureSequence {
        let data = (0..t * d).map(|i| (i as f32 * 0.37).sin()).collect();
        FeatureSequence::new("u", Matrix::from_vec(t, d, data).unwrap()).unwrap()
    }

    #[test]
    fn speed_lengths() {
        let f = ramp(100, 3);
        assert_eq!(speed_perturb(&f, 0.9).unwrap().num_frames(), 111);
        assert_eq!(speed_perturb(&f, 1.1).unwrap().num_frames(), 91);
        assert_eq!(speed_perturb(&f, 1.0).unwrap(), f);
        assert!(speed_perturb(&f, 0.0).is_err());
        assert!(speed_perturb(&f, -1.0).is_err());
    }

    #[test]
    fn speed_length_law() {
        for t in 1..=200 {
            let f = ramp(t, 2);
            for factor in [0.9, 1.0, 1.1] {
                let o = speed_perturb(&f, factor).unwrap();
                assert_eq!(o.num_frames(), ((t as f64 / factor).round() as usize).max(1));
                assert_eq!(o.dim(), 2);
                assert!(o.frames.as_slice().iter().all(|v| v.is_finite()));
            }
        }
    }

    #[test]
    fn snr_infinite_is_identity() {
        let f = ramp(20, 4);
        let n = ramp(7, 4);
        let o = superpose_noise(&f, &n, f64::INFINITY, 1).unwrap();
        assert_eq!(o, f);
        let o = superpose_noise(&f, &n, 200.0, 1).unwrap();
        for (a, b) in o.frames.as_slice().iter().zip(f.frames.as_slice()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn snr_zero_balances_energies() {
        let f = ramp(30, 4);
        let n = ramp(11, 4);
        let o = superpose_noise(&f, &n, 0.0, 3).unwrap();
        let mut added = o.frames.clone();
        for (a, b) in added.as_mut_slice().iter_mut().zip(f.frames.as_slice()) {
            *a -= *b;
        }
        let ratio_db = 10.0 * (energy(&f.frames) / energy(&added)).log10();
        assert!(ratio_db.abs() < 0.1, "{ratio_db}");
        let o = superpose_noise(&f, &n, 12.5, 3).unwrap();
        let mut added = o.frames.clone();
        for (a, b) in added.as_mut_slice().iter_mut().zip(f.frames.as_slice()) {
            *a -= *b;
        }
        let ratio_db = 10.0 * (energy(&f.frames) / energy(&added)).log10();
        assert!((ratio_db - 12.5).abs() < 0.1);
    }

    #[test]
    fn zero_signal_gets_pure_noise() {
        let z = FeatureSequence::new("z", Matrix::zeros(5, 3)).unwrap();
        let n = ramp(5, 3);
        let o = superpose_noise(&z, &n, 10.0, 0).unwrap();
        assert!(energy(&o.frames) > 0.0);
        let bad = ramp(5, 2);
        assert!(matches!(superpose_noise(&z, &bad, 10.0, 0), Err(Error::Input(_))));
    }

    #[test]
    fn masking_identities() {
        let f = ramp(30, 8);
        let none = AugmentPolicy::default().without_masks();
        assert_eq!(mask_time_freq(&f, &none, 1), f);
        let zero_width = AugmentPolicy {
            time_masks: 1,
            time_mask_max: 0,
            freq_masks: 0,
            ..Default::default()
        };
        assert_eq!(mask_time_freq(&f, &zero_width, 1), f);
        let c = FeatureSequence::new("c", Matrix::from_vec(10, 4, vec![0.75; 40]).unwrap()).unwrap();
        let fm = AugmentPolicy {
            time_masks: 0,
            freq_masks: 1,
            freq_mask_max: 3,
            ..Default::default()
        };
        assert_eq!(mask_time_freq(&c, &fm, 5), c);
    }

    #[test]
    fn oversized_masks_are_clamped() {
        let f = ramp(3, 2);
        let p = AugmentPolicy {
            time_masks: 3,
            time_mask_max: 50,
            freq_masks: 3,
            freq_mask_max: 50,
            ..Default::default()
        };
        let o = mask_time_freq(&f, &p, 9);
        assert_eq!(o.num_frames(), 3);
        assert_eq!(o.dim(), 2);
    }
}
