//! The character CNN: embedding, parallel convolutions of several widths
//! with ReLU, max-over-time pooling, an optional fully-connected ReLU layer
//! and a softmax output. Forward and backward passes are written by hand.

mod gradcheck;
mod layers;
mod network;

use std::fmt;
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::PAD_INDEX;
use crate::error::{Error, Result};

pub use gradcheck::{
    gradient_check, gradient_check_suite, tiny_config, GradCheckReport, DEFAULT_EPSILON,
};
pub use layers::{
    conv_relu_forward, cross_entropy, max_pool_over_time, softmax, Matrix, Pooled,
};
pub use network::{
    backward, forward, forward_inputs, inspect, predict, BankActivation, ExampleCache,
    ForwardCache, Prediction,
};

/// Floating-point element type of parameters and activations. `f32` is used
/// for training and inference, `f64` for gradient checking.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Send + Sync + fmt::Debug + 'static
{
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + ToPrimitive + Sum + Default + Send + Sync + fmt::Debug + 'static
{
}

#[inline]
pub(crate) fn cast<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("finite f64 converts to scalar")
}

/// `n` filters of width `w`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvBank {
    pub width: usize,
    pub filters: usize,
}

/// Ordered convolution banks, written `w:n,w:n,...` (e.g. `1:50,2:50,3:100`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FilterSpec(pub Vec<ConvBank>);

impl FilterSpec {
    pub fn banks(&self) -> &[ConvBank] {
        &self.0
    }

    pub fn total_filters(&self) -> usize {
        self.0.iter().map(|b| b.filters).sum()
    }

    pub fn max_width(&self) -> usize {
        self.0.iter().map(|b| b.width).max().unwrap_or(0)
    }
}

impl fmt::Display for FilterSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, b) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}:{}", b.width, b.filters)?;
        }
        Ok(())
    }
}

impl FromStr for FilterSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("bad filter spec `{s}` (want w:n,w:n,...)"));
        let banks = s
            .split(',')
            .map(|part| {
                let (w, n) = part.trim().split_once(':').ok_or_else(bad)?;
                Ok(ConvBank {
                    width: w.trim().parse().map_err(|_| bad())?,
                    filters: n.trim().parse().map_err(|_| bad())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FilterSpec(banks))
    }
}

impl Serialize for FilterSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FilterSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Network hyperparameters. `alphabet_size` and `num_classes` come from the
/// data; the rest are chosen by the user.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub alphabet_size: usize,
    #[serde(default)]
    pub num_classes: usize,
    pub max_len: usize,
    pub embed_dim: usize,
    pub filter_spec: FilterSpec,
    /// 0 drops the fully-connected layer.
    pub fc_dim: usize,
    pub dropout_embed: f64,
    pub dropout_fc: f64,
}

impl Default for ModelConfig {
    /// Best sub-task 2 configuration; data-dependent sizes left at zero.
    fn default() -> Self {
        ModelConfig {
            alphabet_size: 0,
            num_classes: 0,
            max_len: 400,
            embed_dim: 50,
            filter_spec: "1:50,2:50,3:100,4:100,5:100,6:100,7:100".parse().unwrap(),
            fc_dim: 250,
            dropout_embed: 0.2,
            dropout_fc: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.alphabet_size < 1 {
            return fail("alphabet_size must be at least 1".into());
        }
        if self.num_classes < 1 {
            return fail("num_classes must be at least 1".into());
        }
        if self.max_len < 1 || self.embed_dim < 1 {
            return fail("max_len and embed_dim must be at least 1".into());
        }
        if self.filter_spec.0.is_empty() {
            return fail("at least one convolution bank is required".into());
        }
        for b in self.filter_spec.banks() {
            if b.filters < 1 {
                return fail(format!("bank of width {} has no filters", b.width));
            }
            if b.width < 1 || b.width > self.max_len {
                return fail(format!(
                    "filter width {} must lie in 1..={} (max_len)",
                    b.width, self.max_len
                ));
            }
        }
        for (name, p) in [
            ("dropout_embed", self.dropout_embed),
            ("dropout_fc", self.dropout_fc),
        ] {
            if !(0.0..1.0).contains(&p) {
                return fail(format!("{name} must lie in [0, 1), got {p}"));
            }
        }
        Ok(())
    }

    /// Width of the concatenated pooled vector.
    pub fn pooled_dim(&self) -> usize {
        self.filter_spec.total_filters()
    }

    /// Width of the vector fed to the output layer.
    pub fn hidden_dim(&self) -> usize {
        if self.fc_dim > 0 {
            self.fc_dim
        } else {
            self.pooled_dim()
        }
    }

    /// Canonical tensor names and shapes, in storage order.
    pub fn tensor_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = vec![(
            "embedding".to_string(),
            vec![self.alphabet_size, self.embed_dim],
        )];
        for (i, b) in self.filter_spec.banks().iter().enumerate() {
            out.push((
                format!("conv{i}.weight"),
                vec![b.width, self.embed_dim, b.filters],
            ));
            out.push((format!("conv{i}.bias"), vec![b.filters]));
        }
        if self.fc_dim > 0 {
            out.push(("fc.weight".into(), vec![self.pooled_dim(), self.fc_dim]));
            out.push(("fc.bias".into(), vec![self.fc_dim]));
        }
        out.push((
            "output.weight".into(),
            vec![self.hidden_dim(), self.num_classes],
        ));
        out.push(("output.bias".into(), vec![self.num_classes]));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensor_layout()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

/// Weights `[width × embed_dim × filters]` (row-major) and biases of one
/// convolution bank.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T> {
    pub width: usize,
    pub in_dim: usize,
    pub filters: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvParams<T> {
    pub fn zeros(width: usize, in_dim: usize, filters: usize) -> Self {
        ConvParams {
            width,
            in_dim,
            filters,
            weight: vec![T::zero(); width * in_dim * filters],
            bias: vec![T::zero(); filters],
        }
    }

    #[inline]
    pub fn w(&self, j: usize, c: usize, f: usize) -> T {
        self.weight[(j * self.in_dim + c) * self.filters + f]
    }
}

/// Dense layer with weights `[inputs × outputs]` (row-major).
#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> DenseParams<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        DenseParams {
            inputs,
            outputs,
            weight: vec![T::zero(); inputs * outputs],
            bias: vec![T::zero(); outputs],
        }
    }

    /// `bias + x · W`
    pub fn apply(&self, x: &[T]) -> Vec<T> {
        let mut out = self.bias.clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            let row = &self.weight[i * self.outputs..(i + 1) * self.outputs];
            for (o, &w) in out.iter_mut().zip(row) {
                *o = *o + xi * w;
            }
        }
        out
    }
}

/// All learned tensors. The same type holds gradients and Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T = f32> {
    /// `[alphabet_size × embed_dim]`, row per character index.
    pub embedding: Vec<T>,
    pub embed_dim: usize,
    pub conv: Vec<ConvParams<T>>,
    pub fc: Option<DenseParams<T>>,
    pub output: DenseParams<T>,
}

pub type Gradients<T = f32> = ModelParams<T>;

impl<T: Scalar> ModelParams<T> {
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.embed_dim;
        ModelParams {
            embedding: vec![T::zero(); config.alphabet_size * d],
            embed_dim: d,
            conv: config
                .filter_spec
                .banks()
                .iter()
                .map(|b| ConvParams::zeros(b.width, d, b.filters))
                .collect(),
            fc: (config.fc_dim > 0).then(|| DenseParams::zeros(config.pooled_dim(), config.fc_dim)),
            output: DenseParams::zeros(config.hidden_dim(), config.num_classes),
        }
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        self.map(|_| T::zero())
    }

    /// Tensors in canonical order.
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = vec![&self.embedding];
        for c in &self.conv {
            out.push(&c.weight);
            out.push(&c.bias);
        }
        if let Some(fc) = &self.fc {
            out.push(&fc.weight);
            out.push(&fc.bias);
        }
        out.push(&self.output.weight);
        out.push(&self.output.bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = vec![&mut self.embedding];
        for c in &mut self.conv {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        if let Some(fc) = &mut self.fc {
            out.push(&mut fc.weight);
            out.push(&mut fc.bias);
        }
        out.push(&mut self.output.weight);
        out.push(&mut self.output.bias);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Applies `f` elementwise, keeping shapes.
    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U + Copy) -> ModelParams<U> {
        let v = |xs: &[T]| xs.iter().map(|&x| f(x)).collect::<Vec<U>>();
        ModelParams {
            embedding: v(&self.embedding),
            embed_dim: self.embed_dim,
            conv: self
                .conv
                .iter()
                .map(|c| ConvParams {
                    width: c.width,
                    in_dim: c.in_dim,
                    filters: c.filters,
                    weight: v(&c.weight),
                    bias: v(&c.bias),
                })
                .collect(),
            fc: self.fc.as_ref().map(|d| DenseParams {
                inputs: d.inputs,
                outputs: d.outputs,
                weight: v(&d.weight),
                bias: v(&d.bias),
            }),
            output: DenseParams {
                inputs: self.output.inputs,
                outputs: self.output.outputs,
                weight: v(&self.output.weight),
                bias: v(&self.output.bias),
            },
        }
    }

    /// Converts element type (e.g. `f32` to `f64`).
    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        self.map(|x| U::from_f64(x.to_f64().unwrap()).unwrap())
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x = *x + y;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Checks every tensor against the layout the config implies.
    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let layout = config.tensor_layout();
        let tensors = self.tensors();
        if layout.len() != tensors.len() || self.embed_dim != config.embed_dim {
            return Err(Error::Shape(format!(
                "expected {} tensors for the config, found {}",
                layout.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in layout.iter().zip(tensors) {
            let want: usize = shape.iter().product();
            if want != t.len() {
                return Err(Error::Shape(format!(
                    "tensor `{name}` has {} elements, expected {want} for shape {shape:?}",
                    t.len()
                )));
            }
        }
        Ok(())
    }
}

/// Initialization ranges. Weights use a Glorot-uniform bound scaled by
/// `glorot_gain`; embeddings are uniform in `±embedding_range`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitScheme {
    pub embedding_range: f64,
    pub glorot_gain: f64,
}

impl Default for InitScheme {
    fn default() -> Self {
        InitScheme {
            embedding_range: 0.05,
            glorot_gain: 1.0,
        }
    }
}

pub fn init_params<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<ModelParams<T>> {
    init_params_with(config, seed, InitScheme::default())
}

/// Random initialization. Values are drawn in `f64` so that `f32` and `f64`
/// parameters from the same seed agree up to rounding. Biases start at zero
/// and the PAD embedding row starts at zero (it stays trainable).
pub fn init_params_with<T: Scalar>(
    config: &ModelConfig,
    seed: u64,
    scheme: InitScheme,
) -> Result<ModelParams<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::<T>::zeros(config);
    let d = config.embed_dim;

    let mut fill = |xs: &mut [T], bound: f64| {
        if bound <= 0.0 {
            return;
        }
        let dist = Uniform::new_inclusive(-bound, bound);
        for x in xs {
            *x = cast(dist.sample(&mut rng));
        }
    };
    let glorot = |fan_in: usize, fan_out: usize| {
        scheme.glorot_gain * (6.0 / (fan_in + fan_out) as f64).sqrt()
    };

    fill(&mut params.embedding, scheme.embedding_range);
    let pad = PAD_INDEX as usize * d;
    params.embedding[pad..pad + d].fill(T::zero());

    for c in &mut params.conv {
        // receptive field times channels, as for 1-D convolutions in common frameworks
        let bound = glorot(c.width * c.in_dim, c.width * c.filters);
        fill(&mut c.weight, bound);
    }
    if let Some(fc) = &mut params.fc {
        fill(&mut fc.weight, glorot(fc.inputs, fc.outputs));
    }
    let out = &mut params.output;
    fill(&mut out.weight, glorot(out.inputs, out.outputs));
    Ok(params)
}
