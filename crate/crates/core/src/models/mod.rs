//! Fixed-topology MLPs: architecture description, flat parameter storage,
//! seeded initialization and the forward map with its output scalings.

mod params;

pub use params::{BlockKind, ParamBlock, ParamLayout, ParamVector};

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    /// `z -> z^2`
    Quadratic,
    Identity,
}

impl Activation {
    #[inline]
    pub fn eval(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Quadratic => z * z,
            Activation::Identity => z,
        }
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Quadratic => 2.0 * z,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parametrization {
    /// Fan-in scaling lives in the initializer only.
    Standard,
    /// Unit-variance weights with `1/sqrt(fan_in)` applied in the forward
    /// pass and biases multiplied by `bias_scale`.
    Ntk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    GlorotNormal,
    GlorotUniform,
    KaimingUniform,
    NtkGaussian,
}

impl std::str::FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "glorot_normal" => Ok(InitScheme::GlorotNormal),
            "glorot_uniform" => Ok(InitScheme::GlorotUniform),
            "kaiming_uniform" => Ok(InitScheme::KaimingUniform),
            "ntk_gaussian" => Ok(InitScheme::NtkGaussian),
            other => Err(Error::config(format!("unknown init scheme '{other}'"))),
        }
    }
}

pub const DEFAULT_NTK_BIAS_SCALE: f64 = 0.1;

/// Architecture of a fully connected network.
///
/// `widths = [input, hidden_1, ..., hidden_{L-1}, output]`, so the depth is
/// `widths.len() - 1` affine layers. The activation is applied after every
/// affine layer except the last. The network output is
/// `output_scale * raw(x) / output_divisor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activation: Activation,
    #[serde(default = "default_bias_scale")]
    pub bias_scale: f64,
    pub parametrization: Parametrization,
    pub init_scheme: InitScheme,
    #[serde(default = "one")]
    pub output_scale: f64,
    #[serde(default = "one")]
    pub output_divisor: f64,
    /// Splits the last hidden layer into two copies with opposite outgoing
    /// weights, so the network outputs zero (up to rounding) at
    /// initialization.
    #[serde(default)]
    pub mirrored_init: bool,
}

fn default_bias_scale() -> f64 {
    DEFAULT_NTK_BIAS_SCALE
}

fn one() -> f64 {
    1.0
}

impl MlpSpec {
    /// Standard-parametrized MLP with unit output scaling.
    pub fn new(widths: Vec<usize>, activation: Activation, init_scheme: InitScheme) -> Self {
        MlpSpec {
            widths,
            activation,
            bias_scale: DEFAULT_NTK_BIAS_SCALE,
            parametrization: Parametrization::Standard,
            init_scheme,
            output_scale: 1.0,
            output_divisor: 1.0,
            mirrored_init: false,
        }
    }

    /// NTK-parametrized MLP with Gaussian initialization.
    pub fn ntk(widths: Vec<usize>, activation: Activation) -> Self {
        MlpSpec {
            parametrization: Parametrization::Ntk,
            ..MlpSpec::new(widths, activation, InitScheme::NtkGaussian)
        }
    }

    pub fn with_output_scaling(mut self, scale: f64, divisor: f64) -> Self {
        self.output_scale = scale;
        self.output_divisor = divisor;
        self
    }

    pub fn with_mirrored_init(mut self) -> Self {
        self.mirrored_init = true;
        self
    }

    pub fn depth(&self) -> usize {
        self.widths.len().saturating_sub(1)
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated spec has widths")
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::config(
                "model.widths needs at least an input and an output width",
            ));
        }
        if self.widths.contains(&0) {
            return Err(Error::config("model.widths entries must be positive"));
        }
        if !(self.output_scale > 0.0 && self.output_scale.is_finite()) {
            return Err(Error::config("model.output_scale must be > 0"));
        }
        if !(self.output_divisor > 0.0 && self.output_divisor.is_finite()) {
            return Err(Error::config("model.output_divisor must be > 0"));
        }
        if self.mirrored_init {
            let depth = self.widths.len() - 1;
            if depth < 2 || !self.widths[depth - 1].is_multiple_of(2) {
                return Err(Error::config(
                    "model.mirrored_init needs a hidden layer of even width before the output",
                ));
            }
        }
        if self.parametrization == Parametrization::Ntk && !self.bias_scale.is_finite() {
            return Err(Error::config("model.bias_scale must be finite"));
        }
        Ok(())
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::for_widths(&self.widths)
    }

    pub fn num_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Multiplier applied to `W a` in layer `layer`.
    pub(crate) fn weight_multiplier(&self, layer: usize) -> f64 {
        match self.parametrization {
            Parametrization::Standard => 1.0,
            Parametrization::Ntk => 1.0 / (self.widths[layer] as f64).sqrt(),
        }
    }

    /// Multiplier applied to the bias of every layer.
    pub(crate) fn bias_multiplier(&self) -> f64 {
        match self.parametrization {
            Parametrization::Standard => 1.0,
            Parametrization::Ntk => self.bias_scale,
        }
    }

    pub(crate) fn output_factor(&self) -> f64 {
        self.output_scale / self.output_divisor
    }

    pub(crate) fn check_input(&self, x: &Tensor2) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::config(format!(
                "input has {} columns, model expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub(crate) fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.layout().widths() != self.widths.as_slice() {
            return Err(Error::config(format!(
                "parameter layout {:?} does not match model widths {:?}",
                params.layout().widths(),
                self.widths
            )));
        }
        Ok(())
    }
}

/// Draws a parameter vector for `spec` and multiplies every entry by
/// `init_scale`.
pub fn init_params(spec: &MlpSpec, seed: u64, init_scale: f64) -> Result<ParamVector> {
    spec.validate()?;
    if !(init_scale > 0.0 && init_scale.is_finite()) {
        return Err(Error::config("init_scale must be > 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = spec.layout();
    let mut values = Vec::with_capacity(layout.len());
    for w in spec.widths.windows(2) {
        let (fan_in, fan_out) = (w[0] as f64, w[1] as f64);
        let n = w[0] * w[1];
        match spec.init_scheme {
            InitScheme::GlorotNormal => {
                let std = (2.0 / (fan_in + fan_out)).sqrt();
                sample(&mut values, n, Normal::new(0.0, std).unwrap(), &mut rng);
                values.extend(std::iter::repeat_n(0.0, w[1]));
            }
            InitScheme::GlorotUniform => {
                let lim = (6.0 / (fan_in + fan_out)).sqrt();
                sample(&mut values, n, Uniform::new(-lim, lim).unwrap(), &mut rng);
                values.extend(std::iter::repeat_n(0.0, w[1]));
            }
            InitScheme::KaimingUniform => {
                let lim = (6.0 / fan_in).sqrt();
                sample(&mut values, n, Uniform::new(-lim, lim).unwrap(), &mut rng);
                values.extend(std::iter::repeat_n(0.0, w[1]));
            }
            InitScheme::NtkGaussian => {
                let unit = Normal::new(0.0, 1.0).unwrap();
                sample(&mut values, n + w[1], unit, &mut rng);
            }
        }
    }
    let mut params = ParamVector::from_vec(layout, values)?;
    if spec.mirrored_init {
        params = mirror_last_hidden(params)?;
    }
    if init_scale != 1.0 {
        params.scale_in_place(init_scale);
    }
    Ok(params)
}

/// Copies the first half of the last hidden layer onto the second half and
/// negates the copies' outgoing weights; the output bias is zeroed.
fn mirror_last_hidden(params: ParamVector) -> Result<ParamVector> {
    let mut layers = params.unflatten();
    let depth = layers.len();
    let half = layers[depth - 2].1.len() / 2;
    {
        let (w, b) = &mut layers[depth - 2];
        for i in 0..half {
            let row = w.row(i).to_owned();
            w.row_mut(half + i).assign(&row);
            b[half + i] = b[i];
        }
    }
    let (w, b) = &mut layers[depth - 1];
    for j in 0..half {
        let col = w.column(j).to_owned();
        w.column_mut(half + j).assign(&(-&col));
    }
    b.fill(0.0);
    ParamVector::flatten(params.layout().clone(), &layers)
}

fn sample<D: Distribution<f64>>(out: &mut Vec<f64>, n: usize, dist: D, rng: &mut ChaCha8Rng) {
    out.extend(dist.sample_iter(rng).take(n));
}

/// Evaluates the network on a batch of inputs.
pub fn apply(spec: &MlpSpec, params: &ParamVector, x: &Tensor2) -> Result<Tensor2> {
    spec.validate()?;
    spec.check_params(params)?;
    spec.check_input(x)?;
    Ok(Tensor2::wrap(forward_raw(spec, params, x.view(), |_, _, _| {})))
}

/// Forward pass shared with the tape recorder. `record(layer, input, pre)`
/// sees the (multiplied) input and pre-activation of every affine layer.
pub(crate) fn forward_raw<F>(
    spec: &MlpSpec,
    params: &ParamVector,
    x: ArrayView2<'_, f64>,
    mut record: F,
) -> Array2<f64>
where
    F: FnMut(usize, &Array2<f64>, &Array2<f64>),
{
    let depth = spec.depth();
    let beta = spec.bias_multiplier();
    let mut act = x.to_owned();
    for layer in 0..depth {
        let c = spec.weight_multiplier(layer);
        let input = if c != 1.0 { act.mapv(|v| v * c) } else { act };
        let mut pre = input.dot(&params.weight(layer).t());
        pre += &params.bias(layer).mapv(|b| b * beta);
        record(layer, &input, &pre);
        act = if layer + 1 < depth {
            let a = spec.activation;
            pre.mapv(|z| a.eval(z))
        } else {
            pre
        };
    }
    let factor = spec.output_factor();
    if factor != 1.0 {
        act.mapv_inplace(|v| v * factor);
    }
    act
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tanh_spec() -> MlpSpec {
        MlpSpec::new(vec![1, 4, 1], Activation::Tanh, InitScheme::GlorotNormal)
    }

    #[test]
    fn linear_scaling_of_init() {
        let spec = tanh_spec();
        let a = init_params(&spec, 3, 1.0).unwrap();
        let b = init_params(&spec, 3, 8.0).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert_eq!(x * 8.0, *y);
        }
    }

    #[test]
    fn standard_schemes_zero_the_biases() {
        for scheme in [
            InitScheme::GlorotNormal,
            InitScheme::GlorotUniform,
            InitScheme::KaimingUniform,
        ] {
            let spec = MlpSpec::new(vec![3, 80, 2], Activation::Tanh, scheme);
            let p = init_params(&spec, 1, 2.0).unwrap();
            for layer in 0..spec.depth() {
                assert!(p.bias(layer).iter().all(|&b| b == 0.0));
            }
        }
    }

    #[test]
    fn mirrored_init_outputs_zero() {
        for act in [Activation::Quadratic, Activation::Tanh, Activation::Relu] {
            let spec = MlpSpec::new(vec![5, 6, 8, 3], act, InitScheme::NtkGaussian).with_mirrored_init();
            let p = init_params(&spec, 4, 1.5).unwrap();
            let x = Tensor2::from_vec(7, 5, (0..35).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
            let f = apply(&spec, &p, &x).unwrap();
            assert!(f.as_slice().iter().all(|v| v.abs() < 1e-10), "{act:?}");
            // The gradient does not vanish: the two halves differ in sign only.
            assert!(p.weight(2).iter().any(|w| *w != 0.0));
        }
        let odd = MlpSpec::new(vec![2, 5, 1], Activation::Tanh, InitScheme::GlorotNormal).with_mirrored_init();
        assert!(init_params(&odd, 0, 1.0).is_err());
        let shallow = MlpSpec::new(vec![2, 1], Activation::Tanh, InitScheme::GlorotNormal).with_mirrored_init();
        assert!(shallow.validate().is_err());
    }

    #[test]
    fn different_seeds_differ_almost_everywhere() {
        let spec = MlpSpec::ntk(vec![5, 64, 3], Activation::Tanh);
        let a = init_params(&spec, 0, 1.0).unwrap();
        let b = init_params(&spec, 1, 1.0).unwrap();
        let differ = a
            .values()
            .iter()
            .zip(b.values())
            .filter(|(x, y)| x != y)
            .count();
        assert!(differ as f64 >= 0.99 * a.len() as f64);

        // Weight entries of a standard scheme also differ.
        let spec = MlpSpec::new(vec![5, 64, 3], Activation::Relu, InitScheme::GlorotUniform);
        let a = init_params(&spec, 0, 1.0).unwrap();
        let b = init_params(&spec, 1, 1.0).unwrap();
        let w_a = a.weight(0);
        let w_b = b.weight(0);
        let same = w_a.iter().zip(w_b.iter()).filter(|(x, y)| x == y).count();
        assert!(same as f64 <= 0.01 * w_a.len() as f64);
    }

    #[test]
    fn rejects_bad_scale() {
        assert!(init_params(&tanh_spec(), 0, 0.0).is_err());
        assert!(init_params(&tanh_spec(), 0, -1.0).is_err());
    }

    #[test]
    fn unknown_scheme_is_config_error() {
        let e = "he_normal".parse::<InitScheme>().unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }

    #[test]
    fn output_scale_applies_after_raw() {
        // raw output 0.5 with scale 4 -> 2.0
        let spec = MlpSpec::new(vec![1, 1], Activation::Identity, InitScheme::GlorotNormal)
            .with_output_scaling(4.0, 1.0);
        let p = ParamVector::from_vec(spec.layout(), vec![0.5, 0.0]).unwrap();
        let x = Tensor2::from_vec(1, 1, vec![1.0]).unwrap();
        let y = apply(&spec, &p, &x).unwrap();
        assert_eq!(y[[0, 0]], 2.0);
    }

    #[test]
    fn divisor_for_modular_shape() {
        let spec = MlpSpec::new(vec![46, 100, 23], Activation::Quadratic, InitScheme::GlorotNormal)
            .with_output_scaling(4.0, 46.0 * 100.0);
        assert_eq!(spec.output_divisor, 4600.0);
        let p = init_params(&spec, 0, 1.0).unwrap();
        let x = Tensor2::zeros(2, 46);
        let unit = MlpSpec {
            output_scale: 1.0,
            output_divisor: 1.0,
            ..spec.clone()
        };
        let raw = apply(&unit, &p, &x).unwrap();
        let scaled = apply(&spec, &p, &x).unwrap();
        for (r, s) in raw.iter().zip(scaled.iter()) {
            assert!((r * 4.0 / 4600.0 - s).abs() <= 1e-15 * r.abs().max(1.0));
        }
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let spec = tanh_spec();
        let p = init_params(&spec, 0, 1.0).unwrap();
        let x = Tensor2::zeros(3, 2);
        assert!(matches!(apply(&spec, &p, &x), Err(Error::Config(_))));
    }
}
