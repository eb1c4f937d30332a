//! Feedforward SiLU networks with matrix-free first-order derivatives.
//!
//! An [`MlpModel`] is a stack of dense layers with SiLU on hidden layers and
//! identity on the output layer, stored as a single flat parameter vector
//! (per layer: row-major weights, then biases). Besides the forward pass it
//! provides Jacobian-vector products, vector-Jacobian products and parameter
//! gradients, all by layer-wise tape replay — the Jacobian itself is never
//! materialized.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[inline]
fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

#[inline]
fn silu(t: f64) -> f64 {
    t * sigmoid(t)
}

/// d/dt silu(t) = s(t) + t s(t)(1 - s(t)) with s the logistic sigmoid.
#[inline]
fn silu_d(t: f64) -> f64 {
    let s = sigmoid(t);
    s + t * s * (1.0 - s)
}

/// d²/dt² silu(t) = s(t)(1 - s(t)) (2 + t (1 - 2 s(t))).
#[inline]
fn silu_dd(t: f64) -> f64 {
    let s = sigmoid(t);
    s * (1.0 - s) * (2.0 + t * (1.0 - 2.0 * s))
}

/// Gradients of a scalar contraction of a network output.
///
/// `param_grad` follows the owning model's flat parameter layout;
/// `input_grad`, when present, has the model's input dimension.
#[derive(Debug, Clone)]
pub struct GradientBundle {
    pub param_grad: Vec<f64>,
    pub input_grad: Option<Vec<f64>>,
}

/// A feedforward network: SiLU hidden layers, identity output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMlp", into = "RawMlp")]
pub struct MlpModel {
    layer_widths: Vec<usize>,
    params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawMlp {
    layer_widths: Vec<usize>,
    params: Vec<f64>,
    activation: String,
}

impl TryFrom<RawMlp> for MlpModel {
    type Error = Error;

    fn try_from(raw: RawMlp) -> Result<Self> {
        if raw.activation != "silu" {
            return Err(Error::InvalidModel(format!(
                "unsupported activation {:?}",
                raw.activation
            )));
        }
        MlpModel::new(raw.layer_widths, raw.params)
    }
}

impl From<MlpModel> for RawMlp {
    fn from(model: MlpModel) -> Self {
        RawMlp {
            layer_widths: model.layer_widths,
            params: model.params,
            activation: "silu".to_owned(),
        }
    }
}

/// Per-layer forward record: layer inputs and pre-activations.
struct Trace {
    /// `acts[l]` is the input of layer `l`; `acts[L]` is the network output.
    acts: Vec<Vec<f64>>,
    /// `pres[l]` is the pre-activation of layer `l`.
    pres: Vec<Vec<f64>>,
}

impl MlpModel {
    /// Builds a model from explicit widths and a flat parameter vector.
    pub fn new(layer_widths: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        if layer_widths.len() < 2 {
            return Err(Error::InvalidModel(
                "need at least an input and an output width".to_owned(),
            ));
        }
        if layer_widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidModel("layer widths must be positive".to_owned()));
        }
        let expected = Self::param_count_for(&layer_widths);
        if params.len() != expected {
            return Err(Error::InvalidModel(format!(
                "params length {} does not match widths (expected {})",
                params.len(),
                expected
            )));
        }
        Ok(Self {
            layer_widths,
            params,
        })
    }

    /// Number of parameters implied by a width list.
    pub fn param_count_for(widths: &[usize]) -> usize {
        widths
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Glorot-uniform weights in ±sqrt(6/(fan_in+fan_out)), zero biases.
    pub fn init<R: Rng + ?Sized>(layer_widths: &[usize], rng: &mut R) -> Result<Self> {
        let mut params = Vec::with_capacity(Self::param_count_for(layer_widths));
        for w in layer_widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(rng.gen_range(-limit..limit));
            }
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        Self::new(layer_widths.to_vec(), params)
    }

    /// All-zero parameters (the constant zero map).
    pub fn zeros(layer_widths: &[usize]) -> Result<Self> {
        let n = Self::param_count_for(layer_widths);
        Self::new(layer_widths.to_vec(), vec![0.0; n])
    }

    pub fn layer_widths(&self) -> &[usize] {
        &self.layer_widths
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Replaces the parameter vector; the length must match.
    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::ShapeMismatch {
                what: "params",
                expected: self.params.len(),
                got: params.len(),
            });
        }
        self.params = params;
        Ok(())
    }

    fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    fn check_len(&self, v: &[f64], expected: usize, what: &'static str) -> Result<()> {
        if v.len() != expected {
            return Err(Error::ShapeMismatch {
                what,
                expected,
                got: v.len(),
            });
        }
        Ok(())
    }

    /// Weight and bias slices of layer `l`, with the running offset updated.
    #[inline]
    fn layer(&self, l: usize, offset: &mut usize) -> (&[f64], &[f64], usize, usize) {
        let (n_in, n_out) = (self.layer_widths[l], self.layer_widths[l + 1]);
        let w = &self.params[*offset..*offset + n_in * n_out];
        let b = &self.params[*offset + n_in * n_out..*offset + n_in * n_out + n_out];
        *offset += n_in * n_out + n_out;
        (w, b, n_in, n_out)
    }

    /// Network output at `x`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x, self.input_dim(), "input")?;
        let last = self.num_layers() - 1;
        let mut a = x.to_vec();
        let mut offset = 0;
        for l in 0..self.num_layers() {
            let (w, b, n_in, n_out) = self.layer(l, &mut offset);
            let mut z = vec![0.0; n_out];
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &w[o * n_in..(o + 1) * n_in];
                let mut acc = b[o];
                for (wi, ai) in row.iter().zip(&a) {
                    acc += wi * ai;
                }
                *zo = if l == last { acc } else { silu(acc) };
            }
            a = z;
        }
        Ok(a)
    }

    fn forward_trace(&self, x: &[f64]) -> Trace {
        let last = self.num_layers() - 1;
        let mut acts = Vec::with_capacity(self.num_layers() + 1);
        let mut pres = Vec::with_capacity(self.num_layers());
        acts.push(x.to_vec());
        let mut offset = 0;
        for l in 0..self.num_layers() {
            let (w, b, n_in, n_out) = self.layer(l, &mut offset);
            let a = acts.last().unwrap();
            let mut z = vec![0.0; n_out];
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &w[o * n_in..(o + 1) * n_in];
                let mut acc = b[o];
                for (wi, ai) in row.iter().zip(a) {
                    acc += wi * ai;
                }
                *zo = acc;
            }
            let out = if l == last {
                z.clone()
            } else {
                z.iter().map(|&t| silu(t)).collect()
            };
            pres.push(z);
            acts.push(out);
        }
        Trace { acts, pres }
    }

    /// Jacobian-vector product `J(x) u` by forward-mode propagation.
    pub fn jvp(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x, self.input_dim(), "input")?;
        self.check_len(u, self.input_dim(), "tangent")?;
        let last = self.num_layers() - 1;
        let mut a = x.to_vec();
        let mut t = u.to_vec();
        let mut offset = 0;
        for l in 0..self.num_layers() {
            let (w, b, n_in, n_out) = self.layer(l, &mut offset);
            let mut z = vec![0.0; n_out];
            let mut tz = vec![0.0; n_out];
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let mut acc = b[o];
                let mut tacc = 0.0;
                for i in 0..n_in {
                    acc += row[i] * a[i];
                    tacc += row[i] * t[i];
                }
                if l == last {
                    z[o] = acc;
                    tz[o] = tacc;
                } else {
                    z[o] = silu(acc);
                    tz[o] = silu_d(acc) * tacc;
                }
            }
            a = z;
            t = tz;
        }
        Ok(t)
    }

    /// Vector-Jacobian product `J(x)ᵀ v` by reverse-mode propagation.
    pub fn vjp(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x, self.input_dim(), "input")?;
        self.check_len(v, self.output_dim(), "cotangent")?;
        let trace = self.forward_trace(x);
        Ok(self.backward_input(&trace, v))
    }

    /// Reverse pass computing only the input adjoint.
    fn backward_input(&self, trace: &Trace, v: &[f64]) -> Vec<f64> {
        let last = self.num_layers() - 1;
        let mut delta = v.to_vec();
        for l in (0..self.num_layers()).rev() {
            let mut offset = self.offset_of(l);
            let (w, _b, n_in, _n_out) = self.layer(l, &mut offset);
            // Adjoint of the pre-activation.
            let zbar: Vec<f64> = if l == last {
                delta.clone()
            } else {
                trace.pres[l]
                    .iter()
                    .zip(&delta)
                    .map(|(&z, &d)| silu_d(z) * d)
                    .collect()
            };
            let mut prev = vec![0.0; n_in];
            for (o, &zb) in zbar.iter().enumerate() {
                let row = &w[o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    prev[i] += row[i] * zb;
                }
            }
            delta = prev;
        }
        delta
    }

    fn offset_of(&self, layer: usize) -> usize {
        self.layer_widths[..layer]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum::<usize>()
            + if layer > 0 {
                // windows(2) over a prefix misses the boundary pair; compute directly.
                0
            } else {
                0
            }
    }

    /// Gradient of `upstreamᵀ forward(x)` with respect to the parameters,
    /// plus the matching input gradient.
    pub fn param_grad(&self, x: &[f64], upstream: &[f64]) -> Result<GradientBundle> {
        self.check_len(x, self.input_dim(), "input")?;
        self.check_len(upstream, self.output_dim(), "upstream")?;
        let trace = self.forward_trace(x);
        let last = self.num_layers() - 1;
        let mut grad = vec![0.0; self.params.len()];
        let mut delta = upstream.to_vec();
        for l in (0..self.num_layers()).rev() {
            let mut offset = self.offset_of(l);
            let start = offset;
            let (w, _b, n_in, n_out) = self.layer(l, &mut offset);
            let zbar: Vec<f64> = if l == last {
                delta.clone()
            } else {
                trace.pres[l]
                    .iter()
                    .zip(&delta)
                    .map(|(&z, &d)| silu_d(z) * d)
                    .collect()
            };
            let a = &trace.acts[l];
            let mut prev = vec![0.0; n_in];
            for (o, &zb) in zbar.iter().enumerate() {
                let row = &w[o * n_in..(o + 1) * n_in];
                let wgrad = &mut grad[start + o * n_in..start + (o + 1) * n_in];
                for i in 0..n_in {
                    wgrad[i] = zb * a[i];
                    prev[i] += row[i] * zb;
                }
            }
            for (o, &zb) in zbar.iter().enumerate() {
                grad[start + n_in * n_out + o] = zb;
            }
            delta = prev;
        }
        Ok(GradientBundle {
            param_grad: grad,
            input_grad: Some(delta),
        })
    }

    /// Gradient of `upstreamᵀ (J(x) u)` with respect to the parameters:
    /// a reverse pass over the forward-mode tangent propagation. Needed to
    /// differentiate losses that contain Jacobian norms.
    pub fn jvp_param_grad(&self, x: &[f64], u: &[f64], upstream: &[f64]) -> Result<GradientBundle> {
        self.check_len(x, self.input_dim(), "input")?;
        self.check_len(u, self.input_dim(), "tangent")?;
        self.check_len(upstream, self.output_dim(), "upstream")?;
        let last = self.num_layers() - 1;
        let layers = self.num_layers();

        // Augmented forward: primal inputs a_l, pre-activations z_l,
        // tangent inputs u_l and pre-activation tangents t_l per layer.
        let mut acts = Vec::with_capacity(layers + 1);
        let mut pres = Vec::with_capacity(layers);
        let mut tans = Vec::with_capacity(layers + 1);
        let mut pre_tans = Vec::with_capacity(layers);
        acts.push(x.to_vec());
        tans.push(u.to_vec());
        let mut offset = 0;
        for l in 0..layers {
            let (w, b, n_in, n_out) = self.layer(l, &mut offset);
            let a = acts.last().unwrap().clone();
            let t = tans.last().unwrap().clone();
            let mut z = vec![0.0; n_out];
            let mut tz = vec![0.0; n_out];
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let mut acc = b[o];
                let mut tacc = 0.0;
                for i in 0..n_in {
                    acc += row[i] * a[i];
                    tacc += row[i] * t[i];
                }
                z[o] = acc;
                tz[o] = tacc;
            }
            let (a_next, t_next) = if l == last {
                (z.clone(), tz.clone())
            } else {
                (
                    z.iter().map(|&v| silu(v)).collect::<Vec<_>>(),
                    z.iter().zip(&tz).map(|(&zv, &tv)| silu_d(zv) * tv).collect(),
                )
            };
            pres.push(z);
            pre_tans.push(tz);
            acts.push(a_next);
            tans.push(t_next);
        }

        // Reverse pass with paired adjoints (abar for the primal path,
        // ubar for the tangent path).
        let mut grad = vec![0.0; self.params.len()];
        let mut abar = vec![0.0; self.output_dim()];
        let mut ubar = upstream.to_vec();
        for l in (0..layers).rev() {
            let mut offset = self.offset_of(l);
            let start = offset;
            let (w, _b, n_in, n_out) = self.layer(l, &mut offset);
            let z = &pres[l];
            let tz = &pre_tans[l];
            // zbar collects the primal pre-activation adjoint; tbar the
            // tangent pre-activation adjoint.
            let mut zbar = vec![0.0; n_out];
            let mut tbar = vec![0.0; n_out];
            if l == last {
                zbar.copy_from_slice(&abar);
                tbar.copy_from_slice(&ubar);
            } else {
                for o in 0..n_out {
                    zbar[o] = silu_d(z[o]) * abar[o] + silu_dd(z[o]) * tz[o] * ubar[o];
                    tbar[o] = silu_d(z[o]) * ubar[o];
                }
            }
            let a = &acts[l];
            let t = &tans[l];
            let mut abar_prev = vec![0.0; n_in];
            let mut ubar_prev = vec![0.0; n_in];
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let wgrad = &mut grad[start + o * n_in..start + (o + 1) * n_in];
                for i in 0..n_in {
                    wgrad[i] = zbar[o] * a[i] + tbar[o] * t[i];
                    abar_prev[i] += row[i] * zbar[o];
                    ubar_prev[i] += row[i] * tbar[o];
                }
                grad[start + n_in * n_out + o] = zbar[o];
            }
            abar = abar_prev;
            ubar = ubar_prev;
        }
        Ok(GradientBundle {
            param_grad: grad,
            input_grad: None,
        })
    }
}
