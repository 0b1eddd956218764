//! Reverse- and forward-mode differentiation of fixed-topology MLPs.
//!
//! A forward pass records a [`Tape`]: the ordered primitive operations and,
//! for every affine layer, its (multiplied) input and pre-activation. The
//! reverse sweep ([`vjp`]) and the tangent sweep ([`jvp_with_tape`]) both run
//! off those saved activations, so neither repeats the forward pass.
//!
//! Outputs are flattened row-major: entry `n * out_dim + k` is output `k` of
//! sample `n`. The Jacobian `J` has one row per flattened output and one
//! column per parameter.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::linalg::LinearOperator;
use crate::models::{forward_raw, Activation, MlpSpec, ParamVector};
use crate::par;
use crate::tensor::Tensor2;

/// Default ceiling for dense Jacobian and Gram materialization (1 GiB).
pub const DEFAULT_MEMORY_BUDGET: u64 = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TapeOp {
    /// `z = (c * a) W^T + beta * b`
    Affine {
        layer: usize,
        weight_multiplier: f64,
        bias_multiplier: f64,
    },
    Activation { layer: usize, kind: Activation },
    /// `y = factor * z` on the network output.
    OutputScale { factor: f64 },
}

#[derive(Debug, Clone)]
struct LayerRecord {
    /// Layer input after the weight multiplier, `batch x fan_in`.
    input: Array2<f64>,
    /// Pre-activation, `batch x fan_out`.
    pre: Array2<f64>,
}

/// Record of one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    spec: MlpSpec,
    params: ParamVector,
    x: Array2<f64>,
    ops: Vec<TapeOp>,
    layers: Vec<LayerRecord>,
    output: Array2<f64>,
}

impl Tape {
    pub fn ops(&self) -> &[TapeOp] {
        &self.ops
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn batch_size(&self) -> usize {
        self.x.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    pub fn outputs(&self) -> Tensor2 {
        Tensor2::wrap(self.output.clone())
    }

    /// Number of flattened outputs (Jacobian rows).
    pub fn num_outputs(&self) -> usize {
        self.output.len()
    }

    /// Re-executes the recorded operations from the saved input.
    pub fn replay(&self) -> Tensor2 {
        let mut act = self.x.clone();
        for op in &self.ops {
            match *op {
                TapeOp::Affine {
                    layer,
                    weight_multiplier,
                    bias_multiplier,
                } => {
                    let input = if weight_multiplier != 1.0 {
                        act.mapv(|v| v * weight_multiplier)
                    } else {
                        act
                    };
                    let mut pre = input.dot(&self.params.weight(layer).t());
                    pre += &self.params.bias(layer).mapv(|b| b * bias_multiplier);
                    act = pre;
                }
                TapeOp::Activation { kind, .. } => act.mapv_inplace(|z| kind.eval(z)),
                TapeOp::OutputScale { factor } => act.mapv_inplace(|v| v * factor),
            }
        }
        Tensor2::wrap(act)
    }

    /// Backpropagated signals for every flattened output.
    ///
    /// Entry `l` is a `(batch * out_dim) x fan_out(l)` matrix whose row
    /// `n * out_dim + k` is the derivative of output `(n, k)` with respect to
    /// the pre-activation of layer `l` for sample `n`.
    fn output_signals(&self) -> Vec<Array2<f64>> {
        let depth = self.spec.depth();
        let k_out = self.spec.output_dim();
        let batch = self.batch_size();
        let rows = batch * k_out;
        let factor = self.spec.output_factor();
        let mut signals = vec![Array2::<f64>::zeros((0, 0)); depth];
        let mut top = Array2::<f64>::zeros((rows, k_out));
        for n in 0..batch {
            for k in 0..k_out {
                top[[n * k_out + k, k]] = factor;
            }
        }
        signals[depth - 1] = top;
        for layer in (1..depth).rev() {
            let c = self.spec.weight_multiplier(layer);
            let mut g = signals[layer].dot(&self.params.weight(layer));
            let pre = &self.layers[layer - 1].pre;
            let act = self.spec.activation;
            let width = g.ncols();
            par::for_each_row(
                g.as_slice_mut().expect("standard layout"),
                width,
                |r, row| {
                    let z = pre.row(r / k_out);
                    for (v, &zz) in row.iter_mut().zip(z.iter()) {
                        *v *= c * act.derivative(zz);
                    }
                },
            );
            signals[layer - 1] = g;
        }
        signals
    }
}

/// Runs the network and records the operations needed to differentiate it.
pub fn forward_with_tape(spec: &MlpSpec, params: &ParamVector, x: &Tensor2) -> Result<(Tensor2, Tape)> {
    spec.validate()?;
    spec.check_params(params)?;
    spec.check_input(x)?;
    let depth = spec.depth();
    let mut ops = Vec::with_capacity(2 * depth + 1);
    let mut layers = Vec::with_capacity(depth);
    let beta = spec.bias_multiplier();
    let output = forward_raw(spec, params, x.view(), |layer, input, pre| {
        ops.push(TapeOp::Affine {
            layer,
            weight_multiplier: spec.weight_multiplier(layer),
            bias_multiplier: beta,
        });
        if layer + 1 < depth {
            ops.push(TapeOp::Activation {
                layer,
                kind: spec.activation,
            });
        }
        layers.push(LayerRecord {
            input: input.clone(),
            pre: pre.clone(),
        });
    });
    let factor = spec.output_factor();
    if factor != 1.0 {
        ops.push(TapeOp::OutputScale { factor });
    }
    let tape = Tape {
        spec: spec.clone(),
        params: params.clone(),
        x: x.as_array().clone(),
        ops,
        layers,
        output: output.clone(),
    };
    Ok((Tensor2::wrap(output), tape))
}

/// `J^T cotangent`, where `cotangent` has the shape of the tape outputs.
pub fn vjp(tape: &Tape, cotangent: &Tensor2) -> Result<ParamVector> {
    if cotangent.dim() != tape.output.dim() {
        return Err(Error::config(format!(
            "cotangent shape {:?} does not match outputs {:?}",
            cotangent.dim(),
            tape.output.dim()
        )));
    }
    Ok(vjp_array(tape, cotangent.as_array()))
}

pub(crate) fn vjp_array(tape: &Tape, cotangent: &Array2<f64>) -> ParamVector {
    let spec = &tape.spec;
    let depth = spec.depth();
    let beta = spec.bias_multiplier();
    let mut grad = tape.params.zeros_like();
    let layout = tape.params.shared_layout();
    let mut delta = cotangent.mapv(|v| v * spec.output_factor());
    for layer in (0..depth).rev() {
        let rec = &tape.layers[layer];
        if layer + 1 < depth {
            let act = spec.activation;
            ndarray::Zip::from(&mut delta)
                .and(&rec.pre)
                .for_each(|d, &z| *d *= act.derivative(z));
        }
        let gw = delta.t().dot(&rec.input);
        let gb = delta.sum_axis(Axis(0));
        let wb = layout.weight_block(layer);
        let bb = layout.bias_block(layer);
        let g = grad.values_mut().as_slice_mut().expect("contiguous");
        g[wb.range()].copy_from_slice(gw.as_standard_layout().as_slice().expect("standard"));
        for (dst, src) in g[bb.range()].iter_mut().zip(gb.iter()) {
            *dst = beta * src;
        }
        if layer > 0 {
            let c = spec.weight_multiplier(layer);
            delta = delta.dot(&tape.params.weight(layer));
            if c != 1.0 {
                delta.mapv_inplace(|v| v * c);
            }
        }
    }
    grad
}

/// `J tangent`, evaluated by a fresh forward pass.
pub fn jvp(spec: &MlpSpec, params: &ParamVector, x: &Tensor2, tangent: &ParamVector) -> Result<Tensor2> {
    let (_, tape) = forward_with_tape(spec, params, x)?;
    jvp_with_tape(&tape, tangent)
}

/// `J tangent` from the activations saved on `tape`.
pub fn jvp_with_tape(tape: &Tape, tangent: &ParamVector) -> Result<Tensor2> {
    tape.params.check_same_layout(tangent)?;
    Ok(Tensor2::wrap(jvp_array(tape, tangent)))
}

pub(crate) fn jvp_array(tape: &Tape, tangent: &ParamVector) -> Array2<f64> {
    let spec = &tape.spec;
    let depth = spec.depth();
    let beta = spec.bias_multiplier();
    // Tangent of the (multiplied) layer input; zero for the data.
    let mut d_input: Option<Array2<f64>> = None;
    let mut d_pre = Array2::<f64>::zeros((0, 0));
    for layer in 0..depth {
        let rec = &tape.layers[layer];
        let mut dz = rec.input.dot(&tangent.weight(layer).t());
        dz += &tangent.bias(layer).mapv(|b| b * beta);
        if let Some(di) = &d_input {
            dz += &di.dot(&tape.params.weight(layer).t());
        }
        if layer + 1 < depth {
            let act = spec.activation;
            let c = spec.weight_multiplier(layer + 1);
            let mut next = dz;
            ndarray::Zip::from(&mut next)
                .and(&rec.pre)
                .for_each(|d, &z| *d *= c * act.derivative(z));
            d_input = Some(next);
        } else {
            d_pre = dz;
        }
    }
    let factor = spec.output_factor();
    if factor != 1.0 {
        d_pre.mapv_inplace(|v| v * factor);
    }
    d_pre
}

fn check_budget(what: &str, entries: u64, budget: u64) -> Result<()> {
    let needed = entries.saturating_mul(8);
    if needed > budget {
        return Err(Error::Resource {
            what: what.to_string(),
            needed,
            limit: budget,
        });
    }
    Ok(())
}

/// Dense `(batch * out_dim) x p` Jacobian of the network outputs.
pub fn dense_jacobian(spec: &MlpSpec, params: &ParamVector, x: &Tensor2, budget: u64) -> Result<Tensor2> {
    let (_, tape) = forward_with_tape(spec, params, x)?;
    dense_jacobian_from_tape(&tape, budget).map(Tensor2::wrap)
}

pub(crate) fn dense_jacobian_from_tape(tape: &Tape, budget: u64) -> Result<Array2<f64>> {
    let rows = tape.num_outputs();
    let p = tape.params.len();
    check_budget("dense Jacobian", rows as u64 * p as u64, budget)?;
    let signals = tape.output_signals();
    let k_out = tape.output_dim();
    let layout = tape.params.layout().clone();
    let beta = tape.spec.bias_multiplier();
    let mut jac = Array2::<f64>::zeros((rows, p));
    if p == 0 {
        return Ok(jac);
    }
    par::for_each_row(
        jac.as_slice_mut().expect("standard layout"),
        p,
        |r, row| {
            let n = r / k_out;
            for (layer, sig) in signals.iter().enumerate() {
                let delta = sig.row(r);
                let input = tape.layers[layer].input.row(n);
                let wb = layout.weight_block(layer);
                let fan_in = wb.shape.1;
                let block = &mut row[wb.range()];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let dst = &mut block[o * fan_in..(o + 1) * fan_in];
                    for (v, &a) in dst.iter_mut().zip(input.iter()) {
                        *v = d * a;
                    }
                }
                let bb = layout.bias_block(layer);
                for (v, &d) in row[bb.range()].iter_mut().zip(delta.iter()) {
                    *v = beta * d;
                }
            }
        },
    );
    Ok(jac)
}

/// `J J^T` assembled layer by layer without materializing `J`.
///
/// For layer `l` the rows of `J` factor as `delta (x) input` for the weights
/// and `beta * delta` for the bias, so the layer's contribution to entry
/// `((n,k),(m,j))` is `<delta_nk, delta_mj> * (<input_n, input_m> + beta^2)`.
pub(crate) fn gram_from_tape(tape: &Tape, budget: u64) -> Result<Array2<f64>> {
    let rows = tape.num_outputs();
    check_budget("NTK Gram matrix", 2 * rows as u64 * rows as u64, budget)?;
    let signals = tape.output_signals();
    let k_out = tape.output_dim();
    let beta2 = tape.spec.bias_multiplier().powi(2);
    let mut gram = Array2::<f64>::zeros((rows, rows));
    for (layer, sig) in signals.iter().enumerate() {
        let input = &tape.layers[layer].input;
        let act_gram = input.dot(&input.t());
        let sig_gram = sig.dot(&sig.t()).as_standard_layout().into_owned();
        let sig_slice = sig_gram.as_slice().expect("standard layout");
        par::for_each_row(
            gram.as_slice_mut().expect("standard layout"),
            rows,
            |r, row| {
                let n = r / k_out;
                let src = &sig_slice[r * rows..(r + 1) * rows];
                let a = act_gram.row(n);
                for (c, (dst, &s)) in row.iter_mut().zip(src.iter()).enumerate() {
                    *dst += s * (a[c / k_out] + beta2);
                }
            },
        );
    }
    Ok(gram)
}

/// Matrix-free Jacobian of an MLP at fixed parameters and inputs, optionally
/// multiplied by a constant (used for the `1/sqrt(batch)` residual scaling).
#[derive(Debug, Clone)]
pub struct JacobianOperator {
    tape: Tape,
    scale: f64,
    budget: u64,
}

impl JacobianOperator {
    pub fn new(tape: Tape) -> Self {
        JacobianOperator {
            tape,
            scale: 1.0,
            budget: DEFAULT_MEMORY_BUDGET,
        }
    }

    pub fn from_model(spec: &MlpSpec, params: &ParamVector, x: &Tensor2) -> Result<Self> {
        let (_, tape) = forward_with_tape(spec, params, x)?;
        Ok(JacobianOperator::new(tape))
    }

    pub fn scaled(mut self, scale: f64) -> Self {
        self.scale *= scale;
        self
    }

    pub fn with_budget(mut self, budget: u64) -> Self {
        self.budget = budget;
        self
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    /// Dense copy of the (scaled) Jacobian.
    pub fn dense(&self) -> Result<Array2<f64>> {
        let mut j = dense_jacobian_from_tape(&self.tape, self.budget)?;
        if self.scale != 1.0 {
            j.mapv_inplace(|v| v * self.scale);
        }
        Ok(j)
    }
}

impl LinearOperator for JacobianOperator {
    fn shape(&self) -> (usize, usize) {
        (self.tape.num_outputs(), self.tape.params.len())
    }

    fn apply(&self, v: &Array1<f64>) -> Result<Array1<f64>> {
        if v.len() != self.tape.params.len() {
            return Err(Error::config(format!(
                "tangent has length {}, expected {}",
                v.len(),
                self.tape.params.len()
            )));
        }
        let tangent = self.tape.params.with_values(v.clone());
        let out = jvp_array(&self.tape, &tangent);
        let mut flat = Array1::from(out.into_raw_vec_and_offset().0);
        if self.scale != 1.0 {
            flat.mapv_inplace(|x| x * self.scale);
        }
        Ok(flat)
    }

    fn apply_transpose(&self, u: &Array1<f64>) -> Result<Array1<f64>> {
        let (b, k) = self.tape.output.dim();
        if u.len() != b * k {
            return Err(Error::config(format!(
                "cotangent has length {}, expected {}",
                u.len(),
                b * k
            )));
        }
        let cot = Array2::from_shape_vec((b, k), u.to_vec()).expect("shape checked");
        let mut g = vjp_array(&self.tape, &cot).into_values();
        if self.scale != 1.0 {
            g.mapv_inplace(|x| x * self.scale);
        }
        Ok(g)
    }

    fn gram(&self) -> Result<Array2<f64>> {
        let mut g = gram_from_tape(&self.tape, self.budget)?;
        if self.scale != 1.0 {
            let s2 = self.scale * self.scale;
            g.mapv_inplace(|v| v * s2);
        }
        Ok(g)
    }
}
