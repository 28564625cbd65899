//! Fully-connected tanh networks `t ↦ u(t) ∈ ℝᴺ` and their flat parameter layout.
//!
//! Layer 0 maps the scalar input to the first hidden layer, layers
//! `1..depth` are hidden-to-hidden and layer `depth` is the linear output
//! layer. Weights are stored row-major `(fan_out, fan_in)`, each followed by
//! its bias.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{self, Scalar};
use crate::error::{Error, Result};

pub const INPUT_DIM: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Mlp,
    ResNet,
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::Mlp => "mlp",
            Arch::ResNet => "resnet",
        })
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mlp" => Ok(Arch::Mlp),
            "resnet" => Ok(Arch::ResNet),
            other => Err(Error::Config(format!(
                "unknown architecture `{other}` (expected mlp or resnet)"
            ))),
        }
    }
}

/// Architecture descriptor: `depth` hidden layers of `width` tanh units.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub depth: usize,
    pub width: usize,
    pub arch: Arch,
    pub output_dim: usize,
}

impl NetworkConfig {
    pub fn new(depth: usize, width: usize, arch: Arch, output_dim: usize) -> Result<Self> {
        let cfg = Self {
            depth,
            width,
            arch,
            output_dim,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn mlp(depth: usize, width: usize, output_dim: usize) -> Result<Self> {
        Self::new(depth, width, Arch::Mlp, output_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.width == 0 || self.output_dim == 0 {
            return Err(Error::Config(format!(
                "depth, width and output_dim must be positive (got {}, {}, {})",
                self.depth, self.width, self.output_dim
            )));
        }
        Ok(())
    }

    /// Number of affine layers including the output layer.
    pub fn n_layers(&self) -> usize {
        self.depth + 1
    }

    /// `(fan_out, fan_in)` of affine layer `layer`.
    pub fn layer_shape(&self, layer: usize) -> (usize, usize) {
        if layer == 0 {
            (self.width, INPUT_DIM)
        } else if layer < self.depth {
            (self.width, self.width)
        } else {
            (self.output_dim, self.width)
        }
    }

    /// Whether hidden layer `layer` carries an identity skip.
    pub fn has_skip(&self, layer: usize) -> bool {
        self.arch == Arch::ResNet && layer >= 1 && layer < self.depth
    }
}

/// Total number of trainable parameters `M`.
pub fn param_count(config: &NetworkConfig) -> usize {
    let (w, n) = (config.width, config.output_dim);
    (INPUT_DIM * w + w) + (config.depth - 1) * (w * w + w) + (w * n + n)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Weight,
    Bias,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub layer: usize,
    pub kind: ParamKind,
    pub shape: (usize, usize),
    pub offset: usize,
}

impl LayoutEntry {
    pub fn len(&self) -> usize {
        self.shape.0 * self.shape.1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered map from flat parameter offsets back to layers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub entries: Vec<LayoutEntry>,
}

impl Layout {
    pub fn for_config(config: &NetworkConfig) -> Self {
        let mut entries = Vec::with_capacity(2 * config.n_layers());
        let mut offset = 0;
        for layer in 0..config.n_layers() {
            let (rows, cols) = config.layer_shape(layer);
            entries.push(LayoutEntry {
                layer,
                kind: ParamKind::Weight,
                shape: (rows, cols),
                offset,
            });
            offset += rows * cols;
            entries.push(LayoutEntry {
                layer,
                kind: ParamKind::Bias,
                shape: (rows, 1),
                offset,
            });
            offset += rows;
        }
        Self { entries }
    }

    pub fn total_len(&self) -> usize {
        self.entries.last().map_or(0, |e| e.offset + e.len())
    }

    pub fn weight(&self, layer: usize) -> &LayoutEntry {
        &self.entries[2 * layer]
    }

    pub fn bias(&self, layer: usize) -> &LayoutEntry {
        &self.entries[2 * layer + 1]
    }
}

/// Flat weight vector `w ∈ ℝᴹ` with its layer layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Layout,
}

/// Per-layer matrices, the "unflattened" view of a [`ParamVector`].
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl ParamVector {
    pub fn zeros(config: &NetworkConfig) -> Self {
        Self {
            values: vec![0.0; param_count(config)],
            layout: Layout::for_config(config),
        }
    }

    pub fn from_values(config: &NetworkConfig, values: Vec<f64>) -> Result<Self> {
        let layout = Layout::for_config(config);
        if values.len() != layout.total_len() {
            return Err(Error::Config(format!(
                "parameter vector has length {} but the network needs {}",
                values.len(),
                layout.total_len()
            )));
        }
        Ok(Self { values, layout })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn unflatten(&self) -> Vec<LayerParams> {
        let n_layers = self.layout.entries.len() / 2;
        (0..n_layers)
            .map(|layer| {
                let w = self.layout.weight(layer);
                let b = self.layout.bias(layer);
                LayerParams {
                    weight: Array2::from_shape_vec(w.shape, self.values[w.range()].to_vec())
                        .expect("layout shape"),
                    bias: Array1::from(self.values[b.range()].to_vec()),
                }
            })
            .collect()
    }

    pub fn flatten(config: &NetworkConfig, layers: &[LayerParams]) -> Result<Self> {
        let layout = Layout::for_config(config);
        if layers.len() != config.n_layers() {
            return Err(Error::Config(format!(
                "expected {} layers, got {}",
                config.n_layers(),
                layers.len()
            )));
        }
        let mut values = Vec::with_capacity(layout.total_len());
        for (layer, lp) in layers.iter().enumerate() {
            if lp.weight.dim() != config.layer_shape(layer) || lp.bias.len() != lp.weight.nrows() {
                return Err(Error::Config(format!("layer {layer} has the wrong shape")));
            }
            values.extend(lp.weight.iter().copied());
            values.extend(lp.bias.iter().copied());
        }
        Ok(Self { values, layout })
    }
}

/// Glorot-uniform weights, zero biases; deterministic in `seed`.
pub fn init_params(config: &NetworkConfig, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamVector::zeros(config);
    for layer in 0..config.n_layers() {
        let entry = params.layout.weight(layer).clone();
        let (fan_out, fan_in) = entry.shape;
        let bound = glorot_bound(fan_in, fan_out);
        for w in &mut params.values[entry.range()] {
            *w = rng.random_range(-bound..=bound);
        }
    }
    params
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Network output at a single time.
pub fn forward(config: &NetworkConfig, params: &ParamVector, t: f64) -> Result<Vec<f64>> {
    Ok(autodiff::eval_with_input_tangent(config, params, t)?.0)
}

/// Network outputs at many times, returned as an `(N, times.len())` matrix.
pub fn forward_batch(
    config: &NetworkConfig,
    params: &ParamVector,
    times: &[f64],
) -> Result<Array2<f64>> {
    check_params(config, params.values())?;
    let record = autodiff::forward_extended(config, params.values(), times);
    Ok(record.outputs().to_owned())
}

pub(crate) fn check_params<S>(config: &NetworkConfig, params: &[S]) -> Result<()> {
    config.validate()?;
    let m = param_count(config);
    if params.len() != m {
        return Err(Error::Config(format!(
            "parameter vector has length {} but the network needs {m}",
            params.len()
        )));
    }
    Ok(())
}

/// Borrowed weight/bias views for one affine layer.
pub(crate) struct LayerView<'a, S> {
    pub weight: ArrayView2<'a, S>,
    pub bias: ArrayView1<'a, S>,
}

pub(crate) fn layer_views<'a, S: Scalar>(
    config: &NetworkConfig,
    params: &'a [S],
) -> Vec<LayerView<'a, S>> {
    let mut offset = 0;
    (0..config.n_layers())
        .map(|layer| {
            let (rows, cols) = config.layer_shape(layer);
            let weight =
                ArrayView2::from_shape((rows, cols), &params[offset..offset + rows * cols])
                    .expect("layout shape");
            offset += rows * cols;
            let bias = ArrayView1::from(&params[offset..offset + rows]);
            offset += rows;
            LayerView { weight, bias }
        })
        .collect()
}

const CHECKPOINT_MAGIC: &str = "pinn-params-v1";

/// JSON header line of a parameter checkpoint.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub network: NetworkConfig,
    pub count: usize,
    pub layout: Layout,
    /// Free-form training context (system, collocation size, ...).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<serde_json::Value>,
}

/// Writes one JSON header line followed by `M` little-endian `f64`s.
pub fn write_checkpoint<W: Write>(
    mut out: W,
    config: &NetworkConfig,
    params: &ParamVector,
    context: Option<serde_json::Value>,
) -> Result<()> {
    check_params(config, params.values())?;
    let header = CheckpointHeader {
        format: CHECKPOINT_MAGIC.to_string(),
        network: config.clone(),
        count: params.len(),
        layout: params.layout.clone(),
        context,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for v in params.values() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<(CheckpointHeader, ParamVector)> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Checkpoint("missing header line".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..newline])?;
    if header.format != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "unknown format `{}`",
            header.format
        )));
    }
    header.network.validate()?;
    if header.layout != Layout::for_config(&header.network) {
        return Err(Error::Checkpoint("layout does not match network".into()));
    }
    let body = &bytes[newline + 1..];
    if body.len() != header.count * 8 || header.count != param_count(&header.network) {
        return Err(Error::Checkpoint(format!(
            "expected {} parameters, found {} bytes",
            header.count,
            body.len()
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let params = ParamVector::from_values(&header.network, values)?;
    Ok((header, params))
}
