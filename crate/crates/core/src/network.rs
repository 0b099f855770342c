//! Feedforward ReLU network: parameters, traced forward inference, and the
//! model file format.
//!
//! Weights for layer `ℓ` are stored as a `d_ℓ × d_{ℓ-1}` matrix acting by left
//! multiplication, so entry `(i, j)` connects node `i` of layer `ℓ` to node `j`
//! of layer `ℓ-1`. Every weighted layer, including the output layer, applies
//! ReLU.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "ekfprop-model";
pub const MODEL_VERSION: u32 = 1;

/// Componentwise `max(0, v)`. Rejects non-finite input.
pub fn relu(v: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::Value(format!("relu input component {i} is not finite ({})", v[i])));
    }
    Ok(v.map(|x| if x > 0.0 { x } else { 0.0 }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl LayerParams {
    pub fn new(weights: DMatrix<f64>, bias: DVector<f64>) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::shape(format!(
                "weights have {} rows but bias has length {}",
                weights.nrows(),
                bias.len()
            )));
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Value("layer parameters must be finite".into()));
        }
        Ok(LayerParams { weights, bias })
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    /// `W·x + b` without the activation.
    pub fn pre_activation(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.weights * x + &self.bias
    }
}

/// A trained ReLU MLP with `L ≥ 1` weighted layers. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<LayerParams>,
}

impl Network {
    pub fn new(layers: Vec<LayerParams>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::shape("a network needs at least one layer"));
        }
        for (idx, pair) in layers.windows(2).enumerate() {
            if pair[1].input_dim() != pair[0].output_dim() {
                return Err(Error::layer_shape(
                    idx + 2,
                    format!(
                        "expects {} inputs but layer {} has {} outputs",
                        pair[1].input_dim(),
                        idx + 1,
                        pair[0].output_dim()
                    ),
                ));
            }
        }
        for (idx, layer) in layers.iter().enumerate() {
            if layer.weights.iter().chain(layer.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Value(format!("layer {} has non-finite parameters", idx + 1)));
            }
            if layer.bias.len() != layer.output_dim() {
                return Err(Error::layer_shape(idx + 1, "bias length differs from row count"));
            }
        }
        Ok(Network { layers })
    }

    /// Number of weighted layers `L`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Layer widths `[d_0, d_1, ..., d_L]`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].input_dim()).chain(self.layers.iter().map(LayerParams::output_dim)).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    /// Weighted layer `ℓ`, 1-based.
    pub fn layer(&self, l: usize) -> &LayerParams {
        &self.layers[l - 1]
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    /// Runs inference and records every layer state `x_0..x_L`.
    pub fn forward(&self, x0: &DVector<f64>) -> Result<ActivationTrace> {
        if x0.len() != self.input_dim() {
            return Err(Error::layer_shape(
                1,
                format!("input has length {} but the layer expects {}", x0.len(), self.input_dim()),
            ));
        }
        let mut states = Vec::with_capacity(self.layers.len() + 1);
        states.push(x0.clone());
        for (idx, layer) in self.layers.iter().enumerate() {
            let next = relu(&layer.pre_activation(&states[idx])).map_err(|e| match e {
                Error::Value(m) => Error::Value(format!("layer {}: {m}", idx + 1)),
                other => other,
            })?;
            states.push(next);
        }
        Ok(ActivationTrace { states })
    }

    /// Forward pass returning only `x_L`.
    pub fn predict(&self, x0: &DVector<f64>) -> Result<DVector<f64>> {
        let mut trace = self.forward(x0)?;
        Ok(trace.states.pop().expect("trace holds at least two states"))
    }
}

/// Layer states `[x_0, x_1, ..., x_L]` from one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    pub states: Vec<DVector<f64>>,
}

impl ActivationTrace {
    pub fn output(&self) -> &DVector<f64> {
        &self.states[self.states.len() - 1]
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    dims: Vec<usize>,
    layers: Vec<LayerRecord>,
}

/// One layer; `weights` is row-major `d_ℓ × d_{ℓ-1}`.
#[derive(Serialize, Deserialize)]
struct LayerRecord {
    weights: Vec<f64>,
    bias: Vec<f64>,
}

pub fn save_model(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let doc = ModelFile {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_VERSION,
        dims: net.dims(),
        layers: net
            .layers
            .iter()
            .map(|l| LayerRecord { weights: row_major(&l.weights), bias: l.bias.iter().copied().collect() })
            .collect(),
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, &doc).map_err(|e| Error::format(path, e.to_string()))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let doc: ModelFile =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::format(path, e.to_string()))?;
    if doc.format != MODEL_FORMAT {
        return Err(Error::format(path, format!("unexpected format tag {:?}", doc.format)));
    }
    if doc.version != MODEL_VERSION {
        return Err(Error::format(path, format!("unsupported version {}", doc.version)));
    }
    if doc.dims.len() < 2 || doc.dims.len() != doc.layers.len() + 1 {
        return Err(Error::shape(format!(
            "{}: dims list of length {} does not describe {} layers",
            path.display(),
            doc.dims.len(),
            doc.layers.len()
        )));
    }
    let mut layers = Vec::with_capacity(doc.layers.len());
    for (idx, rec) in doc.layers.into_iter().enumerate() {
        let (rows, cols) = (doc.dims[idx + 1], doc.dims[idx]);
        if rec.weights.len() != rows * cols || rec.bias.len() != rows {
            return Err(Error::layer_shape(
                idx + 1,
                format!(
                    "{}: declared {rows}x{cols} but found {} weights and {} biases",
                    path.display(),
                    rec.weights.len(),
                    rec.bias.len()
                ),
            ));
        }
        let weights = DMatrix::from_row_slice(rows, cols, &rec.weights);
        let bias = DVector::from_vec(rec.bias);
        layers.push(LayerParams::new(weights, bias).map_err(|e| e.at_layer(idx + 1))?);
    }
    Network::new(layers)
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}
