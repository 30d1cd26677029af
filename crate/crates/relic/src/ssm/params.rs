//! Trainable tensors and their deterministic initialization.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::geom::SensorConfig;
use crate::mat::Mat;
use crate::tokenizer::TokenizerParams;

/// Parameters of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// Layer-norm gain and bias, 1 x D.
    pub ln_gain: Mat,
    pub ln_bias: Mat,
    /// Input projection of the scan branch, E x D.
    pub w_in: Mat,
    /// Gate-branch projection, E x D.
    pub w_gate: Mat,
    /// Depth-wise causal convolution: E x k kernel plus 1 x E bias.
    pub conv_kernel: Mat,
    pub conv_bias: Mat,
    /// State-transition log decays, E x N; the transition is -exp(a_log).
    pub a_log: Mat,
    /// Projection producing the step-size head and the input/output mixing
    /// vectors: (dt_rank + 2N) x E.
    pub w_x: Mat,
    /// Step-size projection E x dt_rank and its bias 1 x E.
    pub w_dt: Mat,
    pub dt_bias: Mat,
    /// Direct feed-through coefficient, 1 x E.
    pub d_skip: Mat,
    /// Output projection back to the residual stream, D x E.
    pub w_out: Mat,
}

/// Every trainable tensor of the model, including the tokenizer tables.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub sensor: SensorConfig,
    pub tokenizer: TokenizerParams,
    pub layers: Vec<LayerParams>,
    /// Classifier mapping features to logits: A x D weight, 1 x A bias.
    pub head_w: Mat,
    pub head_b: Mat,
}

fn uniform_fan_in(rng: &mut ChaCha12Rng, rows: usize, cols: usize, fan_in: usize) -> Mat {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let mut m = Mat::zeros(rows, cols);
    for v in m.data.iter_mut() {
        *v = rng.gen_range(-bound..bound);
    }
    m
}

fn inverse_softplus(y: f64) -> f64 {
    // x with ln(1 + e^x) = y
    (y.exp() - 1.0).ln()
}

impl ModelParams {
    /// Deterministic random initialization. Embeddings and projections draw
    /// from symmetric uniform distributions scaled by fan-in; log decays are
    /// set so state half-lives span roughly one position up to the window
    /// length.
    pub fn init(config: ModelConfig, sensor: SensorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        sensor.validate()?;
        if config.alphabet != sensor.alphabet {
            return Err(Error::config(format!(
                "model alphabet {} does not match sensor alphabet {}",
                config.alphabet, sensor.alphabet
            )));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let d = config.dim;
        let e = config.inner_dim();
        let n = config.ssm_state;
        let k = config.conv_kernel;
        let dt_rank = config.dt_rank();
        let a = config.alphabet as usize;
        let [dv, du, dr, dp] = config.dim_split;

        let tokenizer = TokenizerParams {
            embed_laser: uniform_fan_in(&mut rng, sensor.lasers as usize, dv, dv),
            embed_azimuth: uniform_fan_in(&mut rng, sensor.azimuth_bins as usize, du, du),
            rho_weight: uniform_fan_in(&mut rng, 1, dr, 1),
            rho_bias: Mat::zeros(1, dr),
            embed_symbol: uniform_fan_in(&mut rng, a, dp, dp),
            start_token: uniform_fan_in(&mut rng, 1, dp, dp),
        };

        let mut layers = Vec::with_capacity(config.layers);
        for _ in 0..config.layers {
            let mut ln_gain = Mat::zeros(1, d);
            ln_gain.fill(1.0);
            let mut a_log = Mat::zeros(e, n);
            for ch in 0..e {
                for s in 0..n {
                    *a_log.at_mut(ch, s) = ((s + 1) as f64).ln();
                }
            }
            // Step sizes start log-spaced across channels in [1e-3, 1e-1],
            // which with the decay ladder above spreads state half-lives from
            // under a position to beyond the window.
            let mut dt_bias = Mat::zeros(1, e);
            for ch in 0..e {
                let frac = if e > 1 { ch as f64 / (e - 1) as f64 } else { 0.5 };
                let dt = (1e-3f64.ln() + frac * (1e-1f64.ln() - 1e-3f64.ln())).exp();
                *dt_bias.at_mut(0, ch) = inverse_softplus(dt);
            }
            let mut d_skip = Mat::zeros(1, e);
            d_skip.fill(1.0);
            layers.push(LayerParams {
                ln_gain,
                ln_bias: Mat::zeros(1, d),
                w_in: uniform_fan_in(&mut rng, e, d, d),
                w_gate: uniform_fan_in(&mut rng, e, d, d),
                conv_kernel: uniform_fan_in(&mut rng, e, k, k),
                conv_bias: Mat::zeros(1, e),
                a_log,
                w_x: uniform_fan_in(&mut rng, dt_rank + 2 * n, e, e),
                w_dt: uniform_fan_in(&mut rng, e, dt_rank, dt_rank),
                dt_bias,
                d_skip,
                w_out: uniform_fan_in(&mut rng, d, e, e),
            });
        }

        Ok(ModelParams {
            config,
            sensor,
            tokenizer,
            layers,
            head_w: uniform_fan_in(&mut rng, a, d, d),
            head_b: Mat::zeros(1, a),
        })
    }

    /// Same shapes, all zeros. Used for gradient accumulators.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, m, _) in z.tensors_mut() {
            m.fill(0.0);
        }
        z
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, m, _)| m.len()).sum()
    }

    /// Every tensor in a fixed order with its name and whether weight decay
    /// applies (projection and embedding weights decay; biases, gains, decays
    /// and the start token do not). The order defines the checkpoint layout
    /// and the optimizer-state alignment, so it must never change.
    pub fn tensors(&self) -> Vec<(String, &Mat, bool)> {
        let mut out: Vec<(String, &Mat, bool)> = vec![
            ("tokenizer.embed_laser".into(), &self.tokenizer.embed_laser, true),
            ("tokenizer.embed_azimuth".into(), &self.tokenizer.embed_azimuth, true),
            ("tokenizer.rho_weight".into(), &self.tokenizer.rho_weight, true),
            ("tokenizer.rho_bias".into(), &self.tokenizer.rho_bias, false),
            ("tokenizer.embed_symbol".into(), &self.tokenizer.embed_symbol, true),
            ("tokenizer.start_token".into(), &self.tokenizer.start_token, false),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.ln_gain"), &l.ln_gain, false));
            out.push((format!("layer{i}.ln_bias"), &l.ln_bias, false));
            out.push((format!("layer{i}.w_in"), &l.w_in, true));
            out.push((format!("layer{i}.w_gate"), &l.w_gate, true));
            out.push((format!("layer{i}.conv_kernel"), &l.conv_kernel, true));
            out.push((format!("layer{i}.conv_bias"), &l.conv_bias, false));
            out.push((format!("layer{i}.a_log"), &l.a_log, false));
            out.push((format!("layer{i}.w_x"), &l.w_x, true));
            out.push((format!("layer{i}.w_dt"), &l.w_dt, true));
            out.push((format!("layer{i}.dt_bias"), &l.dt_bias, false));
            out.push((format!("layer{i}.d_skip"), &l.d_skip, false));
            out.push((format!("layer{i}.w_out"), &l.w_out, true));
        }
        out.push(("head.weight".into(), &self.head_w, true));
        out.push(("head.bias".into(), &self.head_b, false));
        out
    }

    /// Mutable twin of `tensors`, same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Mat, bool)> {
        let mut out: Vec<(String, &mut Mat, bool)> = vec![
            ("tokenizer.embed_laser".into(), &mut self.tokenizer.embed_laser, true),
            ("tokenizer.embed_azimuth".into(), &mut self.tokenizer.embed_azimuth, true),
            ("tokenizer.rho_weight".into(), &mut self.tokenizer.rho_weight, true),
            ("tokenizer.rho_bias".into(), &mut self.tokenizer.rho_bias, false),
            ("tokenizer.embed_symbol".into(), &mut self.tokenizer.embed_symbol, true),
            ("tokenizer.start_token".into(), &mut self.tokenizer.start_token, false),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("layer{i}.ln_gain"), &mut l.ln_gain, false));
            out.push((format!("layer{i}.ln_bias"), &mut l.ln_bias, false));
            out.push((format!("layer{i}.w_in"), &mut l.w_in, true));
            out.push((format!("layer{i}.w_gate"), &mut l.w_gate, true));
            out.push((format!("layer{i}.conv_kernel"), &mut l.conv_kernel, true));
            out.push((format!("layer{i}.conv_bias"), &mut l.conv_bias, false));
            out.push((format!("layer{i}.a_log"), &mut l.a_log, false));
            out.push((format!("layer{i}.w_x"), &mut l.w_x, true));
            out.push((format!("layer{i}.w_dt"), &mut l.w_dt, true));
            out.push((format!("layer{i}.dt_bias"), &mut l.dt_bias, false));
            out.push((format!("layer{i}.d_skip"), &mut l.d_skip, false));
            out.push((format!("layer{i}.w_out"), &mut l.w_out, true));
        }
        out.push(("head.weight".into(), &mut self.head_w, true));
        out.push(("head.bias".into(), &mut self.head_b, false));
        out
    }

    /// Returns the name of the first non-finite tensor, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        self.tensors()
            .into_iter()
            .find(|(_, m, _)| !m.all_finite())
            .map(|(name, _, _)| name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> ModelParams {
        let cfg = ModelConfig::with_dims(8, 2, 4, 5);
        let sensor = SensorConfig {
            lasers: 3,
            azimuth_bins: 8,
            phi_up: 0.1,
            phi_down: -0.4,
            rho_max: 100.0,
            alphabet: 5,
        };
        ModelParams::init(cfg, sensor, 42).unwrap()
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = toy();
        let b = toy();
        assert_eq!(a, b);
        let cfg = ModelConfig::with_dims(8, 2, 4, 5);
        let c = ModelParams::init(cfg, a.sensor, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn alphabet_mismatch_is_config_error() {
        let cfg = ModelConfig::with_dims(8, 1, 4, 6);
        let sensor = SensorConfig {
            alphabet: 5,
            ..SensorConfig::hdl64()
        };
        assert!(matches!(
            ModelParams::init(cfg, sensor, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn tensor_enumeration_is_stable_and_complete() {
        let p = toy();
        let names: Vec<String> = p.tensors().into_iter().map(|(n, _, _)| n).collect();
        assert_eq!(names.len(), 6 + 2 * 12 + 2);
        assert_eq!(names[0], "tokenizer.embed_laser");
        assert_eq!(names[6], "layer0.ln_gain");
        assert_eq!(names.last().unwrap(), "head.bias");
        let mut q = p.clone();
        let mut_names: Vec<String> = q.tensors_mut().into_iter().map(|(n, _, _)| n).collect();
        assert_eq!(names, mut_names);
    }

    #[test]
    fn zeros_like_preserves_shapes() {
        let p = toy();
        let z = p.zeros_like();
        assert_eq!(p.param_count(), z.param_count());
        for (_, m, _) in z.tensors() {
            assert!(m.data.iter().all(|&x| x == 0.0));
        }
    }
}
