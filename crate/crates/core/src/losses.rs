//! Training objectives. Frame-level losses take per-frame log-probabilities
//! (log-softmax outputs) and return gradients with respect to the
//! pre-softmax logits.

use crate::corpus::SourceTag;
use crate::nn::{Decoder, DecoderConfig, Matrix, ModelBundle, ParamStore};
use crate::scalar::{log_add, Scalar};
use crate::{Error, Result};

/// Loss value plus gradient w.r.t. the frame logits.
#[derive(Debug, Clone)]
pub struct LossGrad<T> {
    pub loss: f64,
    pub grad: Matrix<T>,
}

/// Dense per-frame teacher distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct Posteriorgram {
    pub utt_id: String,
    pub probs: Matrix<f64>,
}

/// Top-k teacher distribution per frame: `(class, prob)` pairs in descending
/// probability order.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePosterior {
    pub utt_id: String,
    pub k: usize,
    pub frames: Vec<Vec<(u32, f64)>>,
}

impl SparsePosterior {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    /// Checks the per-frame invariants: at most `k` entries, unique class
    /// ids, descending probabilities, total mass at most one.
    pub fn validate(&self) -> Result<()> {
        for (t, f) in self.frames.iter().enumerate() {
            if f.len() > self.k {
                return Err(Error::Input(format!("frame {t} has more than k entries")));
            }
            let mut seen = std::collections::BTreeSet::new();
            if !f.iter().all(|(c, _)| seen.insert(*c)) {
                return Err(Error::Input(format!("frame {t} repeats a class id")));
            }
            if f.windows(2).any(|w| w[0].1 < w[1].1) {
                return Err(Error::Input(format!("frame {t} is not in descending order")));
            }
            let mass: f64 = f.iter().map(|(_, p)| p).sum();
            if mass > 1.0 + 1e-6 || f.iter().any(|(_, p)| *p < 0.0) {
                return Err(Error::Input(format!("frame {t} has invalid mass {mass}")));
            }
        }
        Ok(())
    }

    /// Dense `T' x classes` matrix, optionally renormalizing each frame.
    pub fn to_dense(&self, classes: usize, renormalize: bool) -> Result<Matrix<f64>> {
        let mut m = Matrix::zeros(self.frames.len(), classes);
        for (t, f) in self.frames.iter().enumerate() {
            let mass: f64 = f.iter().map(|(_, p)| p).sum();
            let scale = if renormalize && mass > 0.0 { 1.0 / mass } else { 1.0 };
            for &(c, p) in f {
                if c as usize >= classes {
                    return Err(Error::Label(format!("teacher class {c} outside {classes} classes")));
                }
                m.set(t, c as usize, p * scale);
            }
        }
        Ok(m)
    }
}

/// Teacher target for frame-level distillation.
#[derive(Debug, Clone)]
pub enum Teacher<'a> {
    Dense(&'a Posteriorgram),
    Sparse(&'a SparsePosterior),
}

/// Frame-level distillation result. `loss` is the cross-entropy form that
/// is optimized; `kl` is the same value minus the teacher entropy.
#[derive(Debug, Clone)]
pub struct DistillLoss<T> {
    pub loss: f64,
    pub kl: f64,
    pub teacher_entropy: f64,
    pub grad: Matrix<T>,
}

/// Mean per-frame negative log-likelihood of `labels`.
pub fn frame_ce_loss<T: Scalar>(student_logprobs: &Matrix<T>, labels: &[u32]) -> Result<LossGrad<T>> {
    let (frames, classes) = (student_logprobs.rows(), student_logprobs.cols());
    if labels.len() != frames {
        return Err(Error::Alignment {
            teacher: labels.len(),
            student: frames,
        });
    }
    if frames == 0 {
        return Err(Error::Input("no frames".into()));
    }
    let inv = 1.0 / frames as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(frames, classes);
    for (t, &y) in labels.iter().enumerate() {
        let y = y as usize;
        if y >= classes {
            return Err(Error::Label(format!("label {y} outside {classes} classes")));
        }
        let row = student_logprobs.row(t);
        loss -= row[y].f64();
        let g = grad.row_mut(t);
        for k in 0..classes {
            let onehot = if k == y { 1.0 } else { 0.0 };
            g[k] = T::lit((row[k].f64().exp() - onehot) * inv);
        }
    }
    Ok(LossGrad { loss: loss * inv, grad })
}

/// Frame-level distillation in cross-entropy form,
/// `-(1/T') sum_t sum_k p_t(k) log q_t(k)`. Sparse teachers are
/// renormalized per frame when `renormalize` is set; classes outside the
/// teacher support carry zero teacher probability.
pub fn frame_distill_loss<T: Scalar>(
    teacher: Teacher<'_>,
    student_logprobs: &Matrix<T>,
    renormalize: bool,
) -> Result<DistillLoss<T>> {
    let (frames, classes) = (student_logprobs.rows(), student_logprobs.cols());
    let dense = match teacher {
        Teacher::Dense(p) => p.probs.clone(),
        Teacher::Sparse(s) => s.to_dense(classes, renormalize)?,
    };
    if dense.rows() != frames {
        return Err(Error::Alignment {
            teacher: dense.rows(),
            student: frames,
        });
    }
    if dense.cols() != classes {
        return Err(Error::Input(format!(
            "teacher has {} classes, student {}",
            dense.cols(),
            classes
        )));
    }
    if frames == 0 {
        return Err(Error::Input("no frames".into()));
    }
    let inv = 1.0 / frames as f64;
    let (mut ce, mut ent) = (0.0, 0.0);
    let mut grad = Matrix::zeros(frames, classes);
    for t in 0..frames {
        let p = dense.row(t);
        let q = student_logprobs.row(t);
        let mass: f64 = p.iter().sum();
        let g = grad.row_mut(t);
        for k in 0..classes {
            if p[k] > 0.0 {
                ce -= p[k] * q[k].f64();
                ent -= p[k] * p[k].ln();
            }
            g[k] = T::lit((mass * q[k].f64().exp() - p[k]) * inv);
        }
    }
    Ok(DistillLoss {
        loss: ce * inv,
        kl: (ce - ent) * inv,
        teacher_entropy: ent * inv,
        grad,
    })
}

/// Number of adjacent equal labels; each needs a separating blank.
pub fn count_repeats(labels: &[u32]) -> usize {
    labels.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Whether `frames` CTC outputs can emit `labels`.
pub fn ctc_feasible(frames: usize, labels: &[u32]) -> bool {
    frames >= labels.len() + count_repeats(labels)
}

/// CTC negative log-likelihood by the log-space forward-backward algorithm,
/// with DP in f64. `blank` is the blank class index.
pub fn ctc_loss<T: Scalar>(logprobs: &Matrix<T>, labels: &[u32], blank: u32) -> Result<LossGrad<T>> {
    let (frames, classes) = (logprobs.rows(), logprobs.cols());
    if frames == 0 {
        return Err(Error::Input("no frames".into()));
    }
    if blank as usize >= classes {
        return Err(Error::Label(format!("blank {blank} outside {classes} classes")));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes || l == blank) {
        return Err(Error::Label(format!("label {bad} is blank or outside {classes} classes")));
    }
    if !ctc_feasible(frames, labels) {
        return Err(Error::Feasibility {
            frames,
            labels: labels.len(),
            repeats: count_repeats(labels),
        });
    }
    let mut ext = Vec::with_capacity(2 * labels.len() + 1);
    ext.push(blank);
    for &l in labels {
        ext.push(l);
        ext.push(blank);
    }
    let s_len = ext.len();
    let ninf = f64::NEG_INFINITY;
    let lp = |t: usize, c: u32| logprobs.get(t, c as usize).f64();
    let can_skip = |s: usize| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];

    let mut alpha = vec![ninf; frames * s_len];
    alpha[0] = lp(0, ext[0]);
    if s_len > 1 {
        alpha[1] = lp(0, ext[1]);
    }
    for t in 1..frames {
        for s in 0..s_len {
            let prev = &alpha[(t - 1) * s_len..t * s_len];
            let mut a = prev[s];
            if s >= 1 {
                a = log_add(a, prev[s - 1]);
            }
            if can_skip(s) {
                a = log_add(a, prev[s - 2]);
            }
            alpha[t * s_len + s] = if a == ninf { ninf } else { a + lp(t, ext[s]) };
        }
    }
    let last = (frames - 1) * s_len;
    let mut log_z = alpha[last + s_len - 1];
    if s_len > 1 {
        log_z = log_add(log_z, alpha[last + s_len - 2]);
    }
    if !log_z.is_finite() {
        return Err(Error::Numeric("CTC total probability is zero".into()));
    }

    // beta excludes the emission at t.
    let mut beta = vec![ninf; frames * s_len];
    beta[last + s_len - 1] = 0.0;
    if s_len > 1 {
        beta[last + s_len - 2] = 0.0;
    }
    for t in (0..frames - 1).rev() {
        for s in 0..s_len {
            let next = (t + 1) * s_len;
            let mut b = beta[next + s] + lp(t + 1, ext[s]);
            if s + 1 < s_len {
                b = log_add(b, beta[next + s + 1] + lp(t + 1, ext[s + 1]));
            }
            if s + 2 < s_len && can_skip(s + 2) {
                b = log_add(b, beta[next + s + 2] + lp(t + 1, ext[s + 2]));
            }
            beta[t * s_len + s] = b;
        }
    }

    let mut grad = Matrix::zeros(frames, classes);
    let mut occ = vec![0.0f64; classes];
    for t in 0..frames {
        occ.iter_mut().for_each(|v| *v = 0.0);
        for s in 0..s_len {
            let g = alpha[t * s_len + s] + beta[t * s_len + s] - log_z;
            if g > ninf {
                occ[ext[s] as usize] += g.exp();
            }
        }
        let row = grad.row_mut(t);
        for k in 0..classes {
            row[k] = T::lit(lp(t, k as u32).exp() - occ[k]);
        }
    }
    Ok(LossGrad { loss: -log_z, grad })
}

/// Teacher-forced sequence cross-entropy `-sum_i log p(y_i | y_<i, X)`
/// over the target plus end token. Decoder gradients are added to `grads`;
/// returns the loss and the gradient w.r.t. `encoded`.
pub fn seq_ce_loss<T: Scalar>(
    encoded: &Matrix<T>,
    target: &[u32],
    params: &ParamStore<T>,
    cfg: &DecoderConfig,
    grads: &mut ParamStore<T>,
) -> Result<(f64, Matrix<T>)> {
    if target.is_empty() {
        return Err(Error::Input("empty target sequence".into()));
    }
    let dec = Decoder::new(cfg, params, encoded)?;
    let (nll, steps, outputs) = dec.forced(target)?;
    let d_enc = dec.forced_backward(&steps, &outputs, grads)?;
    Ok((nll, d_enc))
}

/// One member of a mixed mini-batch.
#[derive(Debug, Clone)]
pub struct TaggedExample<'a, T> {
    pub source: Option<SourceTag>,
    pub features: &'a Matrix<T>,
    pub target: &'a [u32],
}

/// Unweighted sum of per-utterance sequence losses over a batch drawn from
/// any mix of sources; all sources share the same parameters.
pub fn multitask_loss<T: Scalar>(
    model: &ModelBundle<T>,
    batch: &[TaggedExample<'_, T>],
) -> Result<(f64, ParamStore<T>)> {
    if batch.is_empty() {
        return Err(Error::Batch("empty batch".into()));
    }
    if let Some(i) = batch.iter().position(|b| b.source.is_none()) {
        return Err(Error::Batch(format!("utterance {i} has no source tag")));
    }
    let mut grads = model.params.zeros_like();
    let mut total = 0.0;
    for ex in batch {
        total += model.seq_loss_and_grad(ex.features, ex.target, &mut grads)?;
    }
    Ok((total, grads))
}
