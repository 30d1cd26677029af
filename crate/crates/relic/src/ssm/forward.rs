//! Forward evaluation of the model.
//!
//! Evaluation order is fixed and identical between the inference path and the
//! cached training path: layer norm per row, both input projections, causal
//! depth-wise convolution, SiLU, the selective scan left to right, gating,
//! output projection, residual add. Encoder and decoder call the same
//! functions, so equal inputs give bit-identical PMFs.

use super::params::{LayerParams, ModelParams};
use super::Pmf;
use crate::error::{Error, Result};
use crate::mat::Mat;

const LN_EPS: f64 = 1e-5;

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub(crate) fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// d silu(x) / dx expressed through the pre-activation.
#[inline]
pub(crate) fn silu_deriv(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Per-layer activations recorded for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerCache {
    pub ln_out: Mat,
    pub ln_mean: Vec<f64>,
    pub ln_rstd: Vec<f64>,
    pub pre_conv: Mat,
    pub conv_out: Mat,
    pub scan_in: Mat,
    pub dt_head: Mat,
    pub dt_pre: Mat,
    pub delta: Mat,
    pub b_in: Mat,
    pub c_out: Mat,
    /// Discretized transitions exp(delta * a) per position, each E x N.
    pub abar: Vec<Mat>,
    /// Hidden state after each position, each E x N.
    pub states: Vec<Mat>,
    pub scan_y: Mat,
    pub gate_pre: Mat,
}

/// Full forward trace: the residual stream entering every layer plus the head
/// output probabilities.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// streams[s] is the input to layer s; streams[S] is the feature matrix.
    pub streams: Vec<Mat>,
    pub layers: Vec<LayerCache>,
    /// Softmax output per position, len x A.
    pub probs: Mat,
}

impl ForwardCache {
    pub fn features(&self) -> &Mat {
        self.streams.last().expect("cache holds at least the tokens")
    }
}

fn layer_norm_row(x: &[f64], gain: &[f64], bias: &[f64], out: &mut [f64]) -> (f64, f64) {
    let d = x.len();
    let mut mean = 0.0;
    for &v in x {
        mean += v;
    }
    mean /= d as f64;
    let mut var = 0.0;
    for &v in x {
        let c = v - mean;
        var += c * c;
    }
    var /= d as f64;
    let rstd = 1.0 / (var + LN_EPS).sqrt();
    for i in 0..d {
        out[i] = (x[i] - mean) * rstd * gain[i] + bias[i];
    }
    (mean, rstd)
}

/// Causal depth-wise convolution: output at position t mixes positions
/// t-k+1..=t of the same channel, zero-padded on the left.
fn conv_row(pre_conv: &Mat, kernel: &Mat, bias: &[f64], t: usize, out: &mut [f64]) {
    let k = kernel.cols;
    let e = kernel.rows;
    for ch in 0..e {
        let krow = kernel.row(ch);
        let mut acc = bias[ch];
        for j in 0..k {
            let src = t as isize - (k as isize - 1) + j as isize;
            if src >= 0 {
                acc += krow[j] * pre_conv.at(src as usize, ch);
            }
        }
        out[ch] = acc;
    }
}

/// Result of the selective scan with optional history for backprop.
struct ScanOutput {
    y: Mat,
    dt_head: Mat,
    dt_pre: Mat,
    delta: Mat,
    b_in: Mat,
    c_out: Mat,
    abar: Vec<Mat>,
    states: Vec<Mat>,
}

/// Input-dependent linear recurrence over the sequence:
///   h_t = exp(delta_t * a) h_{t-1} + delta_t * b_t * u_t
///   y_t = c_t . h_t + d_skip * u_t
/// with delta_t = softplus(w_dt . head_t + dt_bias) and (head, b, c) produced
/// from u_t by w_x. Strictly causal by construction.
fn scan_impl(scan_in: &Mat, lp: &LayerParams, dt_rank: usize, keep: bool) -> ScanOutput {
    let len = scan_in.rows;
    let e = lp.a_log.rows;
    let n = lp.a_log.cols;

    // Transition coefficients a = -exp(a_log), fixed for the whole window.
    let mut a = lp.a_log.clone();
    for v in a.data.iter_mut() {
        *v = -v.exp();
    }

    let mut y = Mat::zeros(len, e);
    let mut dt_head = Mat::zeros(len, dt_rank);
    let mut dt_pre = Mat::zeros(len, e);
    let mut delta = Mat::zeros(len, e);
    let mut b_in = Mat::zeros(len, n);
    let mut c_out = Mat::zeros(len, n);
    let mut abar = Vec::new();
    let mut states = Vec::new();

    let mut h = Mat::zeros(e, n);
    let mut xp = vec![0.0; dt_rank + 2 * n];
    let d_skip = lp.d_skip.row(0);
    let dt_bias = lp.dt_bias.row(0);

    for t in 0..len {
        let u_t = scan_in.row(t);
        lp.w_x.matvec(u_t, &mut xp);
        dt_head.row_mut(t).copy_from_slice(&xp[..dt_rank]);
        b_in.row_mut(t).copy_from_slice(&xp[dt_rank..dt_rank + n]);
        c_out.row_mut(t).copy_from_slice(&xp[dt_rank + n..]);

        {
            let head = dt_head.row(t);
            for ch in 0..e {
                let wrow = lp.w_dt.row(ch);
                let mut acc = dt_bias[ch];
                for r in 0..dt_rank {
                    acc += wrow[r] * head[r];
                }
                *dt_pre.at_mut(t, ch) = acc;
                *delta.at_mut(t, ch) = softplus(acc);
            }
        }

        let mut abar_t = if keep { Some(Mat::zeros(e, n)) } else { None };
        {
            let b_t = b_in.row(t);
            let c_t = c_out.row(t);
            let y_row = y.row_mut(t);
            for ch in 0..e {
                let u = u_t[ch];
                let d = delta.at(t, ch);
                let du = d * u;
                let a_row = a.row(ch);
                let h_row = h.row_mut(ch);
                let mut acc = 0.0;
                for s in 0..n {
                    let ab = (d * a_row[s]).exp();
                    h_row[s] = ab * h_row[s] + du * b_t[s];
                    acc += c_t[s] * h_row[s];
                    if let Some(m) = abar_t.as_mut() {
                        *m.at_mut(ch, s) = ab;
                    }
                }
                y_row[ch] = acc + d_skip[ch] * u;
            }
        }
        if keep {
            abar.push(abar_t.expect("abar recorded"));
            states.push(h.clone());
        }
    }

    ScanOutput {
        y,
        dt_head,
        dt_pre,
        delta,
        b_in,
        c_out,
        abar,
        states,
    }
}

/// Public selective-scan entry point; `inputs` is a sequence of inner-dim
/// vectors (one row per position).
pub fn selective_scan(inputs: &Mat, lp: &LayerParams) -> Result<Mat> {
    if inputs.cols != lp.a_log.rows {
        return Err(Error::validation(format!(
            "scan input dim {} does not match inner dim {}",
            inputs.cols,
            lp.a_log.rows
        )));
    }
    let dt_rank = lp.w_dt.cols;
    let out = scan_impl(inputs, lp, dt_rank, false);
    check_finite(&out.y, 0, "selective scan")?;
    Ok(out.y)
}

fn check_finite(m: &Mat, layer: usize, what: &str) -> Result<()> {
    for t in 0..m.rows {
        if !m.row(t).iter().all(|v| v.is_finite()) {
            return Err(Error::numeric(format!(
                "non-finite activation in {what} at layer {layer}, position {t}"
            )));
        }
    }
    Ok(())
}

struct LayerOutput {
    out: Mat,
    cache: Option<LayerCache>,
}

fn layer_impl(input: &Mat, lp: &LayerParams, layer_idx: usize, keep: bool) -> Result<LayerOutput> {
    let len = input.rows;
    let d = input.cols;
    let e = lp.w_in.rows;
    let dt_rank = lp.w_dt.cols;

    let mut ln_out = Mat::zeros(len, d);
    let mut ln_mean = vec![0.0; len];
    let mut ln_rstd = vec![0.0; len];
    let gain = lp.ln_gain.row(0);
    let bias = lp.ln_bias.row(0);
    for t in 0..len {
        let (m, r) = layer_norm_row(input.row(t), gain, bias, ln_out.row_mut(t));
        ln_mean[t] = m;
        ln_rstd[t] = r;
    }

    let mut pre_conv = Mat::zeros(len, e);
    let mut gate_pre = Mat::zeros(len, e);
    for t in 0..len {
        lp.w_in.matvec(ln_out.row(t), pre_conv.row_mut(t));
        lp.w_gate.matvec(ln_out.row(t), gate_pre.row_mut(t));
    }

    let mut conv_out = Mat::zeros(len, e);
    let mut scan_in = Mat::zeros(len, e);
    let conv_bias = lp.conv_bias.row(0);
    for t in 0..len {
        conv_row(&pre_conv, &lp.conv_kernel, conv_bias, t, conv_out.row_mut(t));
        let src = conv_out.row(t);
        let dst = scan_in.row_mut(t);
        for ch in 0..e {
            dst[ch] = silu(src[ch]);
        }
    }

    let scan = scan_impl(&scan_in, lp, dt_rank, keep);

    let mut out = Mat::zeros(len, d);
    let mut gated = vec![0.0; e];
    for t in 0..len {
        let y_row = scan.y.row(t);
        let g_row = gate_pre.row(t);
        for ch in 0..e {
            gated[ch] = y_row[ch] * silu(g_row[ch]);
        }
        let out_row = out.row_mut(t);
        lp.w_out.matvec(&gated, out_row);
        let in_row = input.row(t);
        for i in 0..d {
            out_row[i] += in_row[i];
        }
    }
    check_finite(&out, layer_idx, "layer output")?;

    let cache = if keep {
        Some(LayerCache {
            ln_out,
            ln_mean,
            ln_rstd,
            pre_conv,
            conv_out,
            scan_in,
            dt_head: scan.dt_head,
            dt_pre: scan.dt_pre,
            delta: scan.delta,
            b_in: scan.b_in,
            c_out: scan.c_out,
            abar: scan.abar,
            states: scan.states,
            scan_y: scan.y,
            gate_pre,
        })
    } else {
        None
    };
    Ok(LayerOutput { out, cache })
}

/// One full layer: LayerNorm, two projected branches (conv + SiLU + scan,
/// and SiLU gate), Hadamard gating, output projection, residual add.
pub fn mamba_layer(tokens: &Mat, lp: &LayerParams) -> Result<Mat> {
    check_finite(tokens, 0, "layer input")?;
    Ok(layer_impl(tokens, lp, 0, false)?.out)
}

/// Inference forward: tokens through all layers, returning the feature matrix.
pub fn forward_features(params: &ModelParams, tokens: &Mat) -> Result<Mat> {
    check_finite(tokens, 0, "tokens")?;
    let mut stream = tokens.clone();
    for (s, lp) in params.layers.iter().enumerate() {
        stream = layer_impl(&stream, lp, s, false)?.out;
    }
    Ok(stream)
}

/// Training forward: records every intermediate needed by the backward pass.
pub fn forward_cached(params: &ModelParams, tokens: &Mat) -> Result<ForwardCache> {
    check_finite(tokens, 0, "tokens")?;
    let mut streams = Vec::with_capacity(params.layers.len() + 1);
    let mut layers = Vec::with_capacity(params.layers.len());
    streams.push(tokens.clone());
    for (s, lp) in params.layers.iter().enumerate() {
        let prev = streams.last().expect("stream present");
        let out = layer_impl(prev, lp, s, true)?;
        layers.push(out.cache.expect("cache requested"));
        streams.push(out.out);
    }
    let probs = head_probs(params, streams.last().expect("features"))?;
    Ok(ForwardCache {
        streams,
        layers,
        probs,
    })
}

fn head_probs_row(params: &ModelParams, feat: &[f64], out: &mut [f64]) {
    params.head_w.matvec(feat, out);
    let bias = params.head_b.row(0);
    let a = out.len();
    let mut max = f64::NEG_INFINITY;
    for i in 0..a {
        out[i] += bias[i];
        if out[i] > max {
            max = out[i];
        }
    }
    let mut sum = 0.0;
    for v in out.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in out.iter_mut() {
        *v /= sum;
    }
}

pub(crate) fn head_probs(params: &ModelParams, features: &Mat) -> Result<Mat> {
    let a = params.head_w.rows;
    let mut probs = Mat::zeros(features.rows, a);
    for t in 0..features.rows {
        head_probs_row(params, features.row(t), probs.row_mut(t));
    }
    check_finite(&probs, params.layers.len(), "head probabilities")?;
    Ok(probs)
}

/// Softmax classifier over the alphabet, numerically stabilized by
/// max-subtraction, one PMF per position.
pub fn pmf_head(params: &ModelParams, features: &Mat) -> Result<Vec<Pmf>> {
    let probs = head_probs(params, features)?;
    Ok((0..probs.rows).map(|t| Pmf(probs.row(t).to_vec())).collect())
}

/// Total code length in bits of the observed symbols under the PMFs,
/// restricted to the first `valid_len` positions.
pub fn nll_bits(pmfs: &[Pmf], symbols: &[u16], valid_len: usize) -> Result<f64> {
    if valid_len > pmfs.len() || valid_len > symbols.len() {
        return Err(Error::validation(format!(
            "valid length {valid_len} exceeds pmfs ({}) or symbols ({})",
            pmfs.len(),
            symbols.len()
        )));
    }
    let mut bits = 0.0;
    for i in 0..valid_len {
        let s = usize::from(symbols[i]);
        if s >= pmfs[i].alphabet() {
            return Err(Error::validation(format!(
                "symbol {s} outside alphabet {} at position {i}",
                pmfs[i].alphabet()
            )));
        }
        bits -= pmfs[i].0[s].log2();
    }
    Ok(bits)
}

/// Matrix variant used by the trainer.
pub(crate) fn nll_bits_mat(probs: &Mat, symbols: &[u16], valid_len: usize) -> f64 {
    let mut bits = 0.0;
    for i in 0..valid_len {
        bits -= probs.at(i, usize::from(symbols[i])).log2();
    }
    bits
}
