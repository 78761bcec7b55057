//! Encoder / projection head / classifier with hand-written backprop.
//!
//! ```text
//! x --[Linear, act]*--> h (representation, dim R)
//! h --[Linear, act, Linear]--> z --normalize--> projected (dim P, |.| = 1)
//! h --[Linear]--> logits (dim C)
//! ```
//!
//! All arithmetic is `f64`. Parameters are laid out, for checkpoints and
//! the optimizer, as: encoder layers, projection layers, classifier; each
//! layer as its weight matrix (row-major, `out x in`) followed by its bias.

mod checkpoint;

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, streams};

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointHeader, CHECKPOINT_MAGIC};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// Weight initialization. Only one scheme exists; it is recorded in run
/// metadata and checkpoints by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Weights and biases uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    #[default]
    FanInUniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub num_classes: usize,
    #[serde(default = "default_hidden")]
    pub encoder_widths: Vec<usize>,
    #[serde(default = "default_proj_hidden")]
    pub projection_hidden: usize,
    #[serde(default = "default_proj_dim")]
    pub projection_dim: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub init: InitScheme,
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}
fn default_proj_hidden() -> usize {
    64
}
fn default_proj_dim() -> usize {
    32
}

impl ModelConfig {
    pub fn new(input_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            num_classes,
            encoder_widths: default_hidden(),
            projection_hidden: default_proj_hidden(),
            projection_dim: default_proj_dim(),
            activation: Activation::default(),
            init: InitScheme::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0
            || self.num_classes == 0
            || self.encoder_widths.is_empty()
            || self.encoder_widths.contains(&0)
            || self.projection_hidden == 0
            || self.projection_dim == 0
        {
            return Err(Error::Config(format!("invalid model dimensions: {self:?}")));
        }
        Ok(())
    }

    pub fn representation_dim(&self) -> usize {
        *self.encoder_widths.last().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `out x in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    fn init(inputs: usize, outputs: usize, rng: &mut rng::Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((outputs, inputs), || rng.random_range(-bound..bound));
        let bias = Array1::from_shape_simple_fn(outputs, || rng.random_range(-bound..bound));
        Self { weight, bias }
    }

    fn zeros_like(&self) -> Self {
        Self { weight: Array2::zeros(self.weight.raw_dim()), bias: Array1::zeros(self.bias.len()) }
    }

    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    /// Accumulates parameter gradients into `grad`; returns the input gradient.
    fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.weight += &dy.t().dot(x);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight)
    }

    fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Model parameters (also used, with the same shapes, for gradients and
/// optimizer state).
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    pub encoder: Vec<Linear>,
    pub projection: [Linear; 2],
    pub classifier: Linear,
}

/// Output for one input row.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardResult {
    pub representation: Vec<f64>,
    pub projected: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Batch forward pass with the activations needed for backprop.
#[derive(Debug, Clone)]
pub struct BatchForward {
    /// Inputs to each encoder layer followed by the representation.
    encoder_acts: Vec<Array2<f64>>,
    projection_hidden: Array2<f64>,
    projection_norms: Array1<f64>,
    pub projected: Array2<f64>,
    pub logits: Array2<f64>,
}

impl BatchForward {
    pub fn representation(&self) -> &Array2<f64> {
        self.encoder_acts.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.logits.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The same forward restricted to `rows`, for backprop through a subset.
    pub fn select(&self, rows: &[usize]) -> BatchForward {
        let pick = |m: &Array2<f64>| m.select(Axis(0), rows);
        BatchForward {
            encoder_acts: self.encoder_acts.iter().map(pick).collect(),
            projection_hidden: pick(&self.projection_hidden),
            projection_norms: self.projection_norms.select(Axis(0), rows),
            projected: pick(&self.projected),
            logits: pick(&self.logits),
        }
    }
}

/// Upstream gradients for [`Model::backward`]; absent parts are zero.
#[derive(Debug, Default)]
pub struct Upstream<'a> {
    pub logits: Option<&'a Array2<f64>>,
    /// With respect to the unit-normalized projection.
    pub projected: Option<&'a Array2<f64>>,
    /// With respect to the encoder representation directly.
    pub representation: Option<&'a Array2<f64>>,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, streams::INIT);
        let mut encoder = Vec::with_capacity(config.encoder_widths.len());
        let mut prev = config.input_dim;
        for &w in &config.encoder_widths {
            encoder.push(Linear::init(prev, w, &mut rng));
            prev = w;
        }
        let projection = [
            Linear::init(prev, config.projection_hidden, &mut rng),
            Linear::init(config.projection_hidden, config.projection_dim, &mut rng),
        ];
        let classifier = Linear::init(prev, config.num_classes, &mut rng);
        Ok(Self { config, encoder, projection, classifier })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            encoder: self.encoder.iter().map(Linear::zeros_like).collect(),
            projection: [self.projection[0].zeros_like(), self.projection[1].zeros_like()],
            classifier: self.classifier.zeros_like(),
        }
    }

    fn layers(&self) -> impl Iterator<Item = &Linear> {
        self.encoder.iter().chain(self.projection.iter()).chain(std::iter::once(&self.classifier))
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Linear> {
        self.encoder.iter_mut().chain(self.projection.iter_mut()).chain(std::iter::once(&mut self.classifier))
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(Linear::param_count).sum()
    }

    /// Parameter slices in checkpoint order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers()
            .flat_map(|l| [l.weight.as_slice().expect("standard layout"), l.bias.as_slice().expect("standard layout")])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.tensors().into_iter().flatten().copied().collect()
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::Data(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                values.len()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&values[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }

    /// FNV-1a over the parameter bit patterns.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for t in self.tensors() {
            for v in t {
                for b in v.to_bits().to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        }
        h
    }

    pub fn forward_batch(&self, x: &Array2<f64>) -> Result<BatchForward> {
        if x.ncols() != self.config.input_dim {
            return Err(Error::Domain(format!(
                "input dimension {} does not match model input {}",
                x.ncols(),
                self.config.input_dim
            )));
        }
        let act = self.config.activation;
        let mut encoder_acts = Vec::with_capacity(self.encoder.len() + 1);
        let mut h = x.to_owned();
        for layer in &self.encoder {
            let next = layer.forward(&h).mapv_into(|v| act.apply(v));
            encoder_acts.push(h);
            h = next;
        }
        let projection_hidden = self.projection[0].forward(&h).mapv_into(|v| act.apply(v));
        let projection_raw = self.projection[1].forward(&projection_hidden);
        let projection_norms = projection_raw.map_axis(Axis(1), |row| row.dot(&row).sqrt());
        let mut projected = projection_raw;
        for (mut row, n) in projected.rows_mut().into_iter().zip(&projection_norms) {
            if *n > 0.0 {
                row /= *n;
            }
        }
        let logits = self.classifier.forward(&h);
        encoder_acts.push(h);
        Ok(BatchForward { encoder_acts, projection_hidden, projection_norms, projected, logits })
    }

    /// Per-row results.
    pub fn forward(&self, inputs: &[Vec<f64>]) -> Result<Vec<ForwardResult>> {
        let x = rows_to_array(inputs, self.config.input_dim)?;
        let f = self.forward_batch(&x)?;
        Ok((0..f.len())
            .map(|i| ForwardResult {
                representation: f.representation().row(i).to_vec(),
                projected: f.projected.row(i).to_vec(),
                logits: f.logits.row(i).to_vec(),
            })
            .collect())
    }

    /// Accumulates the parameter gradient of a scalar whose partials with
    /// respect to the forward outputs are `up` into `grad`.
    pub fn backward(&self, fwd: &BatchForward, up: &Upstream<'_>, grad: &mut Model) {
        let act = self.config.activation;
        let rep = fwd.representation();
        let mut d_rep = match up.representation {
            Some(d) => d.to_owned(),
            None => Array2::zeros(rep.raw_dim()),
        };
        if let Some(d_logits) = up.logits {
            d_rep += &self.classifier.backward(rep, d_logits, &mut grad.classifier);
        }
        if let Some(d_proj) = up.projected {
            // d(z / |z|) / dz = (I - u u^T) / |z|
            let mut d_raw = d_proj.to_owned();
            Zip::from(d_raw.rows_mut())
                .and(fwd.projected.rows())
                .and(&fwd.projection_norms)
                .for_each(|mut g, u, &n| {
                    if n > 0.0 {
                        let along = g.dot(&u);
                        g.scaled_add(-along, &u);
                        g /= n;
                    }
                });
            let [grad_p0, grad_p1] = &mut grad.projection;
            let d_hidden = self.projection[1].backward(&fwd.projection_hidden, &d_raw, grad_p1);
            let d_pre = d_hidden * fwd.projection_hidden.mapv(|y| act.derivative_from_output(y));
            d_rep += &self.projection[0].backward(rep, &d_pre, grad_p0);
        }
        let mut d = d_rep;
        for (idx, layer) in self.encoder.iter().enumerate().rev() {
            let out = &fwd.encoder_acts[idx + 1];
            let d_pre = d * out.mapv(|y| act.derivative_from_output(y));
            d = layer.backward(&fwd.encoder_acts[idx], &d_pre, &mut grad.encoder[idx]);
        }
    }
}

pub fn rows_to_array(rows: &[Vec<f64>], dim: usize) -> Result<Array2<f64>> {
    let mut flat = Vec::with_capacity(rows.len() * dim);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != dim {
            return Err(Error::Domain(format!("row {i} has dimension {}, expected {dim}", r.len())));
        }
        flat.extend_from_slice(r);
    }
    Ok(Array2::from_shape_vec((rows.len(), dim), flat).expect("shape checked"))
}

/// Counts per-sample forward passes made through it.
pub struct ForwardCounter<'m> {
    model: &'m Model,
    passes: u64,
}

impl<'m> ForwardCounter<'m> {
    pub fn new(model: &'m Model) -> Self {
        Self { model, passes: 0 }
    }

    pub fn forward_batch(&mut self, x: &Array2<f64>) -> Result<BatchForward> {
        let out = self.model.forward_batch(x)?;
        self.passes += x.nrows() as u64;
        Ok(out)
    }

    pub fn passes(&self) -> u64 {
        self.passes
    }

    pub fn model(&self) -> &'m Model {
        self.model
    }
}
