//! Attention decoder: one GRU layer with input feeding and dot-product
//! attention over the encoded sequence.
//!
//! Token ids `0..vocab` are output symbols. Id `vocab` doubles as the
//! begin-of-sequence input and the end-of-sequence output class.

use super::gru::{gru_step, gru_step_backward, GruGrads, GruStepCache, GruWeights};
use super::params::ParamStore;
use super::tensor::Matrix;
use crate::scalar::{axpy, dot, log_softmax_inplace, softmax_inplace, Scalar};
use crate::seed;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_units: usize,
    pub enc_dim: usize,
}

impl DecoderConfig {
    pub fn bos(&self) -> u32 {
        self.vocab_size as u32
    }

    pub fn eos(&self) -> u32 {
        self.vocab_size as u32
    }

    pub fn num_outputs(&self) -> usize {
        self.vocab_size + 1
    }

    pub fn init_params<T: Scalar>(&self, params: &mut ParamStore<T>, rng: &mut seed::Rng) -> Result<()> {
        let (v, e, h, d) = (self.num_outputs(), self.embed_dim, self.hidden_units, self.enc_dim);
        params.insert_uniform("dec.embed", vec![v, e], 0.1, rng)?;
        params.insert_uniform("dec.gru.w", vec![3 * h, e + d], 0.1, rng)?;
        params.insert_uniform("dec.gru.u", vec![3 * h, h], 0.1, rng)?;
        params.insert_zeros("dec.gru.b", vec![3 * h])?;
        params.insert_uniform("dec.att.w", vec![h, d], 0.1, rng)?;
        params.insert_uniform("dec.out.w", vec![v, h + d], 0.1, rng)?;
        params.insert_zeros("dec.out.b", vec![v])?;
        Ok(())
    }
}

/// Recurrent state carried between decoder steps.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState<T> {
    pub hidden: Vec<T>,
    pub context: Vec<T>,
}

/// Output of one step.
pub struct StepOutput<T> {
    pub state: DecoderState<T>,
    pub log_probs: Vec<T>,
    pub attention: Vec<T>,
    cache: GruStepCache<T>,
    input: Vec<T>,
}

/// Decoder bound to one encoded sequence, with the attention keys precomputed.
pub struct Decoder<'a, T> {
    cfg: &'a DecoderConfig,
    encoded: &'a Matrix<T>,
    keys: Matrix<T>,
    embed: &'a [T],
    gru: GruWeights<'a, T>,
    att_w: &'a [T],
    out_w: &'a [T],
    out_b: &'a [T],
}

impl<'a, T: Scalar> Decoder<'a, T> {
    pub fn new(cfg: &'a DecoderConfig, params: &'a ParamStore<T>, encoded: &'a Matrix<T>) -> Result<Self> {
        if encoded.rows() == 0 {
            return Err(Error::Input("empty encoded sequence".into()));
        }
        if encoded.cols() != cfg.enc_dim {
            return Err(Error::Config(format!(
                "encoded width {} != decoder enc_dim {}",
                encoded.cols(),
                cfg.enc_dim
            )));
        }
        let (v, e, h, d) = (cfg.num_outputs(), cfg.embed_dim, cfg.hidden_units, cfg.enc_dim);
        let embed = params.get("dec.embed")?;
        let att = params.get("dec.att.w")?;
        let out_w = params.get("dec.out.w")?;
        let out_b = params.get("dec.out.b")?;
        let gru = GruWeights::from_params(params, "dec.gru")?;
        if embed.shape != [v, e]
            || att.shape != [h, d]
            || out_w.shape != [v, h + d]
            || out_b.len() != v
            || gru.hidden != h
            || gru.input != e + d
        {
            return Err(Error::Param("decoder parameter shapes do not match config".into()));
        }
        let mut keys = Matrix::zeros(encoded.rows(), h);
        for t in 0..encoded.rows() {
            let row = encoded.row(t);
            for j in 0..h {
                keys.set(t, j, dot(&att.data[j * d..(j + 1) * d], row));
            }
        }
        Ok(Decoder {
            cfg,
            encoded,
            keys,
            embed: &embed.data,
            gru,
            att_w: &att.data,
            out_w: &out_w.data,
            out_b: &out_b.data,
        })
    }

    pub fn initial_state(&self) -> DecoderState<T> {
        DecoderState {
            hidden: vec![T::zero(); self.cfg.hidden_units],
            context: vec![T::zero(); self.cfg.enc_dim],
        }
    }

    /// Consume `prev` and produce next-token log-probabilities.
    pub fn step(&self, state: &DecoderState<T>, prev: u32) -> Result<StepOutput<T>> {
        let (e, h, d) = (self.cfg.embed_dim, self.cfg.hidden_units, self.cfg.enc_dim);
        let tok = prev as usize;
        if tok >= self.cfg.num_outputs() {
            return Err(Error::Label(format!("token {prev} outside decoder vocabulary")));
        }
        let mut input = Vec::with_capacity(e + d);
        input.extend_from_slice(&self.embed[tok * e..(tok + 1) * e]);
        input.extend_from_slice(&state.context);
        let (hidden, cache) = gru_step(&self.gru, &input, &state.hidden);
        let mut attention: Vec<T> = (0..self.keys.rows()).map(|t| dot(self.keys.row(t), &hidden)).collect();
        softmax_inplace(&mut attention);
        let mut context = vec![T::zero(); d];
        for (t, a) in attention.iter().enumerate() {
            axpy(*a, self.encoded.row(t), &mut context);
        }
        let v = self.cfg.num_outputs();
        let mut log_probs = vec![T::zero(); v];
        for (k, lp) in log_probs.iter_mut().enumerate() {
            let w = &self.out_w[k * (h + d)..(k + 1) * (h + d)];
            *lp = self.out_b[k] + dot(&w[..h], &hidden) + dot(&w[h..], &context);
        }
        log_softmax_inplace(&mut log_probs);
        Ok(StepOutput {
            state: DecoderState { hidden, context },
            log_probs,
            attention,
            cache,
            input,
        })
    }

    /// Teacher-forced pass over `target` (without markers). Returns the
    /// total negative log-likelihood including the end token, and the trace.
    pub fn forced(&self, target: &[u32]) -> Result<(f64, Vec<StepOutput<T>>, Vec<u32>)> {
        let eos = self.cfg.eos();
        if let Some(bad) = target.iter().find(|&&t| t >= self.cfg.vocab_size as u32) {
            return Err(Error::Label(format!("target token {bad} outside vocabulary")));
        }
        let mut outputs: Vec<u32> = target.to_vec();
        outputs.push(eos);
        let mut state = self.initial_state();
        let mut prev = self.cfg.bos();
        let mut steps = Vec::with_capacity(outputs.len());
        let mut nll = 0.0f64;
        for &y in &outputs {
            let out = self.step(&state, prev)?;
            nll -= out.log_probs[y as usize].f64();
            state = out.state.clone();
            steps.push(out);
            prev = y;
        }
        Ok((nll, steps, outputs))
    }

    /// Backward of [`Decoder::forced`] with unit upstream gradient on the NLL.
    /// Accumulates decoder gradients into `grads` and returns the gradient
    /// w.r.t. the encoded sequence.
    pub fn forced_backward(
        &self,
        steps: &[StepOutput<T>],
        outputs: &[u32],
        grads: &mut ParamStore<T>,
    ) -> Result<Matrix<T>> {
        let (e, h, d) = (self.cfg.embed_dim, self.cfg.hidden_units, self.cfg.enc_dim);
        let v = self.cfg.num_outputs();
        let tlen = self.encoded.rows();
        let mut d_out_w = vec![T::zero(); v * (h + d)];
        let mut d_out_b = vec![T::zero(); v];
        let mut d_embed = vec![T::zero(); v * e];
        let mut d_keys = Matrix::zeros(tlen, h);
        let mut d_enc = Matrix::zeros(tlen, d);
        let mut gg = GruGrads::new(e + d, h);
        let mut ds_next = vec![T::zero(); h];
        let mut dc_next = vec![T::zero(); d];
        let init = self.initial_state();
        for i in (0..steps.len()).rev() {
            let st = &steps[i];
            let prev_state = if i == 0 { &init } else { &steps[i - 1].state };
            let prev_tok = if i == 0 { self.cfg.bos() } else { outputs[i - 1] } as usize;
            let mut dlogits: Vec<T> = st.log_probs.iter().map(|lp| lp.exp()).collect();
            dlogits[outputs[i] as usize] -= T::one();
            let mut ds = ds_next.clone();
            let mut dc = dc_next.clone();
            for (k, g) in dlogits.iter().enumerate() {
                d_out_b[k] += *g;
                let row = k * (h + d);
                axpy(*g, &st.state.hidden, &mut d_out_w[row..row + h]);
                axpy(*g, &st.state.context, &mut d_out_w[row + h..row + h + d]);
                let w = &self.out_w[row..row + h + d];
                axpy(*g, &w[..h], &mut ds);
                axpy(*g, &w[h..], &mut dc);
            }
            // context = sum_t a_t enc_t
            let da: Vec<T> = (0..tlen).map(|t| dot(&dc, self.encoded.row(t))).collect();
            let mean: T = st.attention.iter().zip(&da).map(|(a, b)| *a * *b).sum();
            for t in 0..tlen {
                let a = st.attention[t];
                axpy(a, &dc, d_enc.row_mut(t));
                let de = a * (da[t] - mean);
                axpy(de, self.keys.row(t), &mut ds);
                axpy(de, &st.state.hidden, d_keys.row_mut(t));
            }
            let (dx, dh_prev) = gru_step_backward(&self.gru, &st.input, &prev_state.hidden, &st.cache, &ds, &mut gg);
            axpy(T::one(), &dx[..e], &mut d_embed[prev_tok * e..(prev_tok + 1) * e]);
            dc_next = dx[e..].to_vec();
            ds_next = dh_prev;
        }
        // keys_t = A enc_t
        let mut d_att = vec![T::zero(); h * d];
        for t in 0..tlen {
            let enc = self.encoded.row(t);
            for j in 0..h {
                let g = d_keys.get(t, j);
                axpy(g, enc, &mut d_att[j * d..(j + 1) * d]);
                axpy(g, &self.att_w[j * d..(j + 1) * d], d_enc.row_mut(t));
            }
        }
        gg.flush(grads, "dec.gru")?;
        for (name, buf) in [
            ("dec.out.w", d_out_w),
            ("dec.out.b", d_out_b),
            ("dec.embed", d_embed),
            ("dec.att.w", d_att),
        ] {
            let t = grads.get_mut(name)?;
            for (g, x) in t.data.iter_mut().zip(buf) {
                *g += x;
            }
        }
        Ok(d_enc)
    }
}

/// Next-token distribution (probabilities) after reading `prev_tokens`,
/// which must start with the begin-of-sequence id.
pub fn decoder_step<T: Scalar>(
    prev_tokens: &[u32],
    encoded: &Matrix<T>,
    params: &ParamStore<T>,
    cfg: &DecoderConfig,
) -> Result<Vec<T>> {
    let dec = Decoder::new(cfg, params, encoded)?;
    match prev_tokens.first() {
        Some(&t) if t == cfg.bos() => {}
        _ => return Err(Error::Input("prev_tokens must start with the begin token".into())),
    }
    let mut state = dec.initial_state();
    let mut last = None;
    for &tok in prev_tokens {
        let out = dec.step(&state, tok)?;
        state = out.state.clone();
        last = Some(out.log_probs);
    }
    let lp = last.expect("non-empty prefix");
    Ok(lp.into_iter().map(|x| x.exp()).collect())
}
