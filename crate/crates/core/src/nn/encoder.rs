//! Recurrent acoustic encoder: a stack of (bi)directional GRU layers with
//! frame-concatenation subsampling after the first layer.

use super::gru::{gru_backward, gru_forward, GruGrads, GruTrace, GruWeights};
use super::params::ParamStore;
use super::tensor::Matrix;
use crate::scalar::Scalar;
use crate::seed;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub num_layers: usize,
    pub hidden_units: usize,
    pub subsample_factor: usize,
    pub bidirectional: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            input_dim: 16,
            num_layers: 2,
            hidden_units: 32,
            subsample_factor: 2,
            bidirectional: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_layers == 0 || self.hidden_units == 0 {
            return Err(Error::Config("encoder dims must be positive".into()));
        }
        if self.subsample_factor == 0 {
            return Err(Error::Config("subsample_factor must be >= 1".into()));
        }
        Ok(())
    }

    fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }

    fn layer_width(&self) -> usize {
        self.directions() * self.hidden_units
    }

    fn layer_input(&self, layer: usize) -> usize {
        match layer {
            0 => self.input_dim,
            1 => self.subsample_factor * self.layer_width(),
            _ => self.layer_width(),
        }
    }

    /// Width of the encoded rows.
    pub fn output_dim(&self) -> usize {
        if self.num_layers == 1 {
            self.subsample_factor * self.layer_width()
        } else {
            self.layer_width()
        }
    }

    /// Encoded length for `frames` input frames.
    pub fn output_len(&self, frames: usize) -> usize {
        frames.div_ceil(self.subsample_factor)
    }

    fn cell_prefixes(&self, layer: usize) -> Vec<(String, bool)> {
        let mut v = vec![(format!("enc.l{layer}.fwd"), false)];
        if self.bidirectional {
            v.push((format!("enc.l{layer}.bwd"), true));
        }
        v
    }

    /// Uniform `[-0.1, 0.1]` weights and zero biases.
    pub fn init_params<T: Scalar>(&self, params: &mut ParamStore<T>, rng: &mut seed::Rng) -> Result<()> {
        self.validate()?;
        let h = self.hidden_units;
        for layer in 0..self.num_layers {
            let input = self.layer_input(layer);
            for (prefix, _) in self.cell_prefixes(layer) {
                params.insert_uniform(&format!("{prefix}.w"), vec![3 * h, input], 0.1, rng)?;
                params.insert_uniform(&format!("{prefix}.u"), vec![3 * h, h], 0.1, rng)?;
                params.insert_zeros(&format!("{prefix}.b"), vec![3 * h])?;
            }
        }
        Ok(())
    }
}

/// Concatenate groups of `factor` adjacent rows, zero-padding the tail.
pub fn subsample<T: Scalar>(x: &Matrix<T>, factor: usize) -> Matrix<T> {
    let rows = x.rows().div_ceil(factor);
    let c = x.cols();
    let mut out = Matrix::zeros(rows, factor * c);
    for t in 0..x.rows() {
        let (j, k) = (t / factor, t % factor);
        out.row_mut(j)[k * c..(k + 1) * c].copy_from_slice(x.row(t));
    }
    out
}

fn unsubsample<T: Scalar>(d: &Matrix<T>, factor: usize, frames: usize, cols: usize) -> Matrix<T> {
    let mut out = Matrix::zeros(frames, cols);
    for t in 0..frames {
        let (j, k) = (t / factor, t % factor);
        out.row_mut(t).copy_from_slice(&d.row(j)[k * cols..(k + 1) * cols]);
    }
    out
}

struct LayerTrace<T> {
    input: Matrix<T>,
    cells: Vec<(String, GruTrace<T>)>,
}

/// Forward activations needed to backpropagate through [`encode_with_trace`].
pub struct EncoderTrace<T> {
    frames: usize,
    layers: Vec<LayerTrace<T>>,
}

fn run_layer<T: Scalar>(
    params: &ParamStore<T>,
    cfg: &EncoderConfig,
    layer: usize,
    input: Matrix<T>,
) -> Result<(Matrix<T>, LayerTrace<T>)> {
    let h = cfg.hidden_units;
    let mut out = Matrix::zeros(input.rows(), cfg.layer_width());
    let mut cells = Vec::new();
    for (dir, (prefix, reverse)) in cfg.cell_prefixes(layer).into_iter().enumerate() {
        let wt = GruWeights::from_params(params, &prefix)?;
        if wt.input != input.cols() || wt.hidden != h {
            return Err(Error::Param(format!("{prefix}: shape does not match encoder config")));
        }
        let (o, trace) = gru_forward(&wt, &input, reverse);
        for t in 0..input.rows() {
            out.row_mut(t)[dir * h..(dir + 1) * h].copy_from_slice(o.row(t));
        }
        cells.push((prefix, trace));
    }
    Ok((out, LayerTrace { input, cells }))
}

/// Encode a `T x input_dim` feature matrix into `ceil(T/subsample) x output_dim`.
pub fn encode<T: Scalar>(features: &Matrix<T>, params: &ParamStore<T>, cfg: &EncoderConfig) -> Result<Matrix<T>> {
    encode_with_trace(features, params, cfg).map(|(m, _)| m)
}

pub fn encode_with_trace<T: Scalar>(
    features: &Matrix<T>,
    params: &ParamStore<T>,
    cfg: &EncoderConfig,
) -> Result<(Matrix<T>, EncoderTrace<T>)> {
    cfg.validate()?;
    if features.cols() != cfg.input_dim {
        return Err(Error::Config(format!(
            "features have dimension {}, encoder expects {}",
            features.cols(),
            cfg.input_dim
        )));
    }
    if features.rows() == 0 {
        return Err(Error::Input("empty feature sequence".into()));
    }
    let mut layers = Vec::with_capacity(cfg.num_layers);
    let mut x = features.clone();
    for layer in 0..cfg.num_layers {
        let (out, trace) = run_layer(params, cfg, layer, x)?;
        layers.push(trace);
        x = if layer == 0 {
            subsample(&out, cfg.subsample_factor)
        } else {
            out
        };
    }
    Ok((
        x,
        EncoderTrace {
            frames: features.rows(),
            layers,
        },
    ))
}

impl<T: Scalar> EncoderTrace<T> {
    /// Accumulate parameter gradients into `grads`; returns the feature gradient.
    pub fn backward(
        &self,
        params: &ParamStore<T>,
        cfg: &EncoderConfig,
        d_out: &Matrix<T>,
        grads: &mut ParamStore<T>,
    ) -> Result<Matrix<T>> {
        let h = cfg.hidden_units;
        let mut d = d_out.clone();
        for (layer, lt) in self.layers.iter().enumerate().rev() {
            if layer == 0 {
                d = unsubsample(&d, cfg.subsample_factor, self.frames, cfg.layer_width());
            }
            let mut d_in = Matrix::zeros(lt.input.rows(), lt.input.cols());
            for (dir, (prefix, trace)) in lt.cells.iter().enumerate() {
                let wt = GruWeights::from_params(params, prefix)?;
                let mut d_cell = Matrix::zeros(lt.input.rows(), h);
                for t in 0..lt.input.rows() {
                    d_cell.row_mut(t).copy_from_slice(&d.row(t)[dir * h..(dir + 1) * h]);
                }
                let mut g = GruGrads::new(wt.input, h);
                let dx = gru_backward(&wt, &lt.input, trace, &d_cell, &mut g);
                g.flush(grads, prefix)?;
                for (a, b) in d_in.as_mut_slice().iter_mut().zip(dx.as_slice()) {
                    *a += *b;
                }
            }
            d = d_in;
        }
        Ok(d)
    }
}
