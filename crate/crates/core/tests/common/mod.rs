//! Oracles and helpers shared by the integration suites.

#![allow(dead_code)]

use dstl::decode::{collapse, ctc_beam_search, encdec_beam_search};
use dstl::losses::{ctc_loss, frame_ce_loss, frame_distill_loss, seq_ce_loss, Posteriorgram, Teacher};
use dstl::nn::{encode_with_trace, Decoder, DecoderConfig, EncoderConfig, Matrix, ModelBundle, ModelConfig, ModelKind, ParamStore};
use dstl::scalar::log_softmax_inplace;
use dstl::seed;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type Rng64 = ChaCha8Rng;

pub fn rng(s: u64) -> Rng64 {
    seed::rng(s)
}

pub fn random_matrix(rng: &mut Rng64, rows: usize, cols: usize, scale: f64) -> Matrix<f64> {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn log_softmax_rows(z: &Matrix<f64>) -> Matrix<f64> {
    let mut lp = z.clone();
    for t in 0..lp.rows() {
        log_softmax_inplace(lp.row_mut(t));
    }
    lp
}

fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na.max(nn);
    if denom < 1e-7 {
        diff
    } else {
        diff / denom
    }
}

const H: f64 = 1e-5;

/// Relative error between `analytic` and central differences of `f` on
/// up to `max_coords` randomly chosen coordinates of `x`.
pub fn fd_check_vec(
    rng: &mut Rng64,
    x: &mut [f64],
    analytic: &[f64],
    max_coords: usize,
    mut f: impl FnMut(&[f64]) -> f64,
) -> f64 {
    let mut coords: Vec<usize> = (0..x.len()).collect();
    if coords.len() > max_coords {
        for i in 0..max_coords {
            let j = rng.random_range(i..coords.len());
            coords.swap(i, j);
        }
        coords.truncate(max_coords);
    }
    let mut a = Vec::new();
    let mut n = Vec::new();
    for &i in &coords {
        let orig = x[i];
        x[i] = orig + H;
        let up = f(x);
        x[i] = orig - H;
        let down = f(x);
        x[i] = orig;
        a.push(analytic[i]);
        n.push((up - down) / (2.0 * H));
    }
    rel_err(&a, &n)
}

pub fn fd_check_params(
    rng: &mut Rng64,
    params: &ParamStore<f64>,
    analytic: &ParamStore<f64>,
    max_coords: usize,
    mut f: impl FnMut(&ParamStore<f64>) -> f64,
) -> f64 {
    let mut flat = params.flatten();
    let grad = analytic.flatten();
    let mut work = params.clone();
    fd_check_vec(rng, &mut flat, &grad, max_coords, |x| {
        for (dst, src) in work.values_mut().zip(x) {
            *dst = *src;
        }
        f(&work)
    })
}

pub fn random_labels(rng: &mut Rng64, len: usize, classes: u32) -> Vec<u32> {
    (0..len).map(|_| rng.random_range(0..classes)).collect()
}

/// Dense posterior rows drawn from a random softmax.
pub fn random_posteriorgram(rng: &mut Rng64, frames: usize, classes: usize) -> Posteriorgram {
    let lp = log_softmax_rows(&random_matrix(rng, frames, classes, 3.0));
    let mut probs = lp.clone();
    probs.as_mut_slice().iter_mut().for_each(|v| *v = v.exp());
    Posteriorgram {
        utt_id: "p".into(),
        probs,
    }
}

pub struct GradReport {
    pub name: &'static str,
    pub instances: usize,
    pub worst: f64,
}

impl GradReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.worst < tol
    }
}

/// Frame cross-entropy w.r.t. logits.
pub fn grad_frame_ce(instances: usize, seed_value: u64) -> GradReport {
    let mut rng = rng(seed_value);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (t, k) = (rng.random_range(1..8), rng.random_range(2..7));
        let z = random_matrix(&mut rng, t, k, 2.0);
        let labels = random_labels(&mut rng, t, k as u32);
        let g = frame_ce_loss(&log_softmax_rows(&z), &labels).unwrap().grad;
        let mut x = z.as_slice().to_vec();
        let e = fd_check_vec(&mut rng, &mut x, g.as_slice(), 64, |x| {
            let m = Matrix::from_vec(t, k, x.to_vec()).unwrap();
            frame_ce_loss(&log_softmax_rows(&m), &labels).unwrap().loss
        });
        worst = worst.max(e);
    }
    GradReport {
        name: "frame cross-entropy",
        instances,
        worst,
    }
}

/// Frame distillation against dense teachers w.r.t. logits.
pub fn grad_frame_distill(instances: usize, seed_value: u64) -> GradReport {
    let mut rng = rng(seed_value);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (t, k) = (rng.random_range(1..8), rng.random_range(2..7));
        let z = random_matrix(&mut rng, t, k, 2.0);
        let teacher = random_posteriorgram(&mut rng, t, k);
        let g = frame_distill_loss(Teacher::Dense(&teacher), &log_softmax_rows(&z), false)
            .unwrap()
            .grad;
        let mut x = z.as_slice().to_vec();
        let e = fd_check_vec(&mut rng, &mut x, g.as_slice(), 64, |x| {
            let m = Matrix::from_vec(t, k, x.to_vec()).unwrap();
            frame_distill_loss(Teacher::Dense(&teacher), &log_softmax_rows(&m), false)
                .unwrap()
                .loss
        });
        worst = worst.max(e);
    }
    GradReport {
        name: "frame distillation",
        instances,
        worst,
    }
}

/// CTC w.r.t. logits on feasible random instances.
pub fn grad_ctc(instances: usize, seed_value: u64) -> GradReport {
    let mut rng = rng(seed_value);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < instances {
        let (t, k) = (rng.random_range(1..10), rng.random_range(2..6));
        let blank = (k - 1) as u32;
        let len = rng.random_range(0..4);
        let labels = random_labels(&mut rng, len, blank);
        if !dstl::losses::ctc_feasible(t, &labels) {
            continue;
        }
        let z = random_matrix(&mut rng, t, k, 2.0);
        let g = ctc_loss(&log_softmax_rows(&z), &labels, blank).unwrap().grad;
        let mut x = z.as_slice().to_vec();
        let e = fd_check_vec(&mut rng, &mut x, g.as_slice(), 64, |x| {
            let m = Matrix::from_vec(t, k, x.to_vec()).unwrap();
            ctc_loss(&log_softmax_rows(&m), &labels, blank).unwrap().loss
        });
        worst = worst.max(e);
        done += 1;
    }
    GradReport {
        name: "ctc",
        instances,
        worst,
    }
}

fn small_decoder(rng: &mut Rng64) -> (DecoderConfig, ParamStore<f64>) {
    let cfg = DecoderConfig {
        vocab_size: rng.random_range(2..5),
        embed_dim: rng.random_range(2..4),
        hidden_units: rng.random_range(2..5),
        enc_dim: rng.random_range(2..5),
    };
    let mut params = ParamStore::new();
    let mut r = seed::rng(rng.random());
    cfg.init_params(&mut params, &mut r).unwrap();
    // larger weights than the default init make the check more demanding
    for v in params.values_mut() {
        *v = rng.random_range(-0.6..0.6);
    }
    (cfg, params)
}

/// Sequence cross-entropy w.r.t. decoder parameters and encoder outputs.
pub fn grad_seq_ce(instances: usize, seed_value: u64) -> GradReport {
    let mut rng = rng(seed_value);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (cfg, params) = small_decoder(&mut rng);
        let t = rng.random_range(1..6);
        let enc = random_matrix(&mut rng, t, cfg.enc_dim, 1.0);
        let len = rng.random_range(1..4);
        let target = random_labels(&mut rng, len, cfg.vocab_size as u32);
        let mut grads = params.zeros_like();
        let (_, d_enc) = seq_ce_loss(&enc, &target, &params, &cfg, &mut grads).unwrap();
        let e1 = fd_check_params(&mut rng, &params, &grads, 60, |p| {
            let mut g = p.zeros_like();
            seq_ce_loss(&enc, &target, p, &cfg, &mut g).unwrap().0
        });
        let mut x = enc.as_slice().to_vec();
        let e2 = fd_check_vec(&mut rng, &mut x, d_enc.as_slice(), 40, |x| {
            let m = Matrix::from_vec(t, cfg.enc_dim, x.to_vec()).unwrap();
            let mut g = params.zeros_like();
            seq_ce_loss(&m, &target, &params, &cfg, &mut g).unwrap().0
        });
        worst = worst.max(e1).max(e2);
    }
    GradReport {
        name: "sequence cross-entropy",
        instances,
        worst,
    }
}

/// Encoder w.r.t. parameters and input features, through a random linear
/// read-out of its output.
pub fn grad_encoder(instances: usize, seed_value: u64) -> GradReport {
    let mut rng = rng(seed_value);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let cfg = EncoderConfig {
            input_dim: rng.random_range(1..4),
            num_layers: rng.random_range(1..4),
            hidden_units: rng.random_range(1..4),
            subsample_factor: rng.random_range(1..4),
            bidirectional: rng.random(),
        };
        let mut params = ParamStore::new();
        let mut r = seed::rng(rng.random());
        cfg.init_params(&mut params, &mut r).unwrap();
        for v in params.values_mut() {
            *v = rng.random_range(-0.7..0.7);
        }
        let t = rng.random_range(1..9);
        let x = random_matrix(&mut rng, t, cfg.input_dim, 1.0);
        let (out, trace) = encode_with_trace(&x, &params, &cfg).unwrap();
        let readout = random_matrix(&mut rng, out.rows(), out.cols(), 1.0);
        let objective = |o: &Matrix<f64>| o.as_slice().iter().zip(readout.as_slice()).map(|(a, b)| a * b).sum::<f64>();
        let mut grads = params.zeros_like();
        let d_x = trace.backward(&params, &cfg, &readout, &mut grads).unwrap();
        let e1 = fd_check_params(&mut rng, &params, &grads, 60, |p| {
            objective(&encode_with_trace(&x, p, &cfg).unwrap().0)
        });
        let mut xv = x.as_slice().to_vec();
        let e2 = fd_check_vec(&mut rng, &mut xv, d_x.as_slice(), 40, |v| {
            let m = Matrix::from_vec(t, cfg.input_dim, v.to_vec()).unwrap();
            objective(&encode_with_trace(&m, &params, &cfg).unwrap().0)
        });
        worst = worst.max(e1).max(e2);
    }
    GradReport {
        name: "encoder",
        instances,
        worst,
    }
}

/// Whole models (encoder + head or decoder) through `loss_and_grad`.
pub fn grad_models(instances: usize, seed_value: u64) -> GradReport {
    use dstl::nn::{LossOptions, Target};
    let mut rng = rng(seed_value);
    let mut worst: f64 = 0.0;
    let kinds = [ModelKind::Ctc, ModelKind::EncDec, ModelKind::FrameClassifier];
    for i in 0..instances {
        let kind = kinds[i % 3];
        let enc = EncoderConfig {
            input_dim: 3,
            num_layers: 2,
            hidden_units: 3,
            subsample_factor: 2,
            bidirectional: true,
        };
        let mut cfg = ModelConfig::new(kind, enc, 3);
        cfg.embed_dim = 3;
        cfg.dec_hidden = 4;
        let mut model = ModelBundle::<f64>::init(cfg, rng.random()).unwrap();
        for v in model.params.values_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
        let t = rng.random_range(6..10);
        let x = random_matrix(&mut rng, t, 3, 1.0);
        let out_len = t.div_ceil(2);
        let target = match kind {
            ModelKind::FrameClassifier => Target::FrameLabels(random_labels(&mut rng, out_len, 4)),
            _ => Target::Tokens(vec![0, 2]),
        };
        let mut grads = model.params.zeros_like();
        model.loss_and_grad(&x, &target, LossOptions::default(), &mut grads).unwrap();
        let cfg = model.config.clone();
        let e = fd_check_params(&mut rng, &model.params, &grads, 80, |p| {
            let m = ModelBundle {
                config: cfg.clone(),
                params: p.clone(),
            };
            let mut g = p.zeros_like();
            m.loss_and_grad(&x, &target, LossOptions::default(), &mut g).unwrap()
        });
        worst = worst.max(e);
    }
    GradReport {
        name: "full models",
        instances,
        worst,
    }
}

/// Brute-force CTC negative log-likelihood by enumerating every path.
pub fn ctc_brute_force(lp: &Matrix<f64>, labels: &[u32], blank: u32) -> f64 {
    let (t, k) = (lp.rows(), lp.cols());
    let mut total = f64::NEG_INFINITY;
    let mut path = vec![0u32; t];
    for code in 0..k.pow(t as u32) {
        let mut c = code;
        let mut score = 0.0;
        for (i, p) in path.iter_mut().enumerate() {
            *p = (c % k) as u32;
            c /= k;
            score += lp.get(i, *p as usize);
        }
        if collapse(&path, blank) == labels {
            total = dstl::scalar::log_add(total, score);
        }
    }
    -total
}

/// Largest absolute difference between `ctc_loss` and brute force over
/// random feasible instances with `T' <= 6`, vocab <= 3, labels <= 3.
pub fn ctc_oracle(instances: usize, seed_value: u64) -> f64 {
    let mut rng = rng(seed_value);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < instances {
        let vocab = rng.random_range(1..=3u32);
        let t = rng.random_range(1..=6);
        let len = rng.random_range(0..=3);
        let labels = random_labels(&mut rng, len, vocab);
        if !dstl::losses::ctc_feasible(t, &labels) {
            continue;
        }
        let lp = log_softmax_rows(&random_matrix(&mut rng, t, vocab as usize + 1, 3.0));
        let ours = ctc_loss(&lp, &labels, vocab).unwrap().loss;
        worst = worst.max((ours - ctc_brute_force(&lp, &labels, vocab)).abs());
        done += 1;
    }
    worst
}

/// Arg-max collapsed sequence by exhaustive path enumeration (summing all
/// paths per sequence); ties go to the lexicographically smaller sequence.
pub fn ctc_exhaustive_best(lp: &Matrix<f64>) -> (Vec<u32>, f64) {
    let (t, k) = (lp.rows(), lp.cols());
    let blank = (k - 1) as u32;
    let mut sums: std::collections::BTreeMap<Vec<u32>, f64> = Default::default();
    let mut path = vec![0u32; t];
    for code in 0..k.pow(t as u32) {
        let mut c = code;
        let mut score = 0.0;
        for (i, p) in path.iter_mut().enumerate() {
            *p = (c % k) as u32;
            c /= k;
            score += lp.get(i, *p as usize);
        }
        let e = sums.entry(collapse(&path, blank)).or_insert(f64::NEG_INFINITY);
        *e = dstl::scalar::log_add(*e, score);
    }
    let mut best: Option<(Vec<u32>, f64)> = None;
    for (seq, s) in sums {
        if best.as_ref().is_none_or(|b| s > b.1) {
            best = Some((seq, s));
        }
    }
    best.unwrap()
}

/// Arg-max over all sequences of at most `max_len` tokens scored by the
/// decoder, where a sequence shorter than `max_len` includes its end token.
pub fn encdec_exhaustive_best(dec: &Decoder<'_, f64>, cfg: &DecoderConfig, max_len: usize) -> (Vec<u32>, f64) {
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    let mut stack = vec![(Vec::<u32>::new(), 0.0, dec.initial_state())];
    while let Some((seq, score, state)) = stack.pop() {
        let prev = seq.last().copied().unwrap_or(cfg.bos());
        let out = dec.step(&state, prev).unwrap();
        let end = score + out.log_probs[cfg.eos() as usize];
        let consider = |s: &Vec<u32>, v: f64, best: &mut (Vec<u32>, f64)| {
            if v > best.1 || (v == best.1 && *s < best.0) {
                *best = (s.clone(), v);
            }
        };
        consider(&seq, end, &mut best);
        for tok in 0..cfg.vocab_size as u32 {
            let mut next = seq.clone();
            next.push(tok);
            let s = score + out.log_probs[tok as usize];
            if next.len() == max_len {
                consider(&next, s, &mut best);
            } else {
                stack.push((next, s, out.state.clone()));
            }
        }
    }
    best
}

/// Saturating-beam agreement with exhaustive enumeration on tiny random
/// models. Returns the number of mismatching instances for each search.
pub fn decode_oracle(instances: usize, seed_value: u64) -> (usize, usize) {
    let mut rng = rng(seed_value);
    let mut ctc_bad = 0;
    let mut ed_bad = 0;
    for _ in 0..instances {
        // CTC: T'=3..4, K=2 labels plus blank
        let t = rng.random_range(3..=4);
        let lp = log_softmax_rows(&random_matrix(&mut rng, t, 3, 3.0));
        let (best, score) = ctc_exhaustive_best(&lp);
        let hyps = ctc_beam_search(&lp, 64, None, 0.0).unwrap();
        if hyps[0].tokens != best || (hyps[0].score - score).abs() > 1e-9 {
            ctc_bad += 1;
        }
        // encoder-decoder: vocab 3, max_len 3, beam 27
        let cfg = DecoderConfig {
            vocab_size: 3,
            embed_dim: 3,
            hidden_units: 4,
            enc_dim: 3,
        };
        let mut params = ParamStore::new();
        let mut r = seed::rng(rng.random());
        cfg.init_params(&mut params, &mut r).unwrap();
        for v in params.values_mut() {
            *v = rng.random_range(-1.5..1.5);
        }
        let frames = rng.random_range(1..5);
        let enc = random_matrix(&mut rng, frames, 3, 1.0);
        let dec = Decoder::new(&cfg, &params, &enc).unwrap();
        let (best, score) = encdec_exhaustive_best(&dec, &cfg, 3);
        let hyps = encdec_beam_search(&enc, &params, &cfg, 27, 3, false).unwrap();
        if hyps[0].tokens != best || (hyps[0].score - score).abs() > 1e-9 {
            ed_bad += 1;
        }
    }
    (ctc_bad, ed_bad)
}
