//! Per-layer process noise `Q_ℓ`, estimated as the unbiased sample covariance
//! of layer-`ℓ` activations over a calibration set.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_symmetric, symmetrize};
use crate::network::{row_major, Network};

pub const NOISE_FORMAT: &str = "ekfprop-noise";
pub const NOISE_VERSION: u32 = 1;

/// Calibration inputs per work unit. Fixed so that partial sums, and hence the
/// merged result, do not depend on the thread count.
const CHUNK: usize = 128;

/// `Q_1..Q_L` with the sample means they were centered on. There is no `Q_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessNoiseSet {
    q: Vec<DMatrix<f64>>,
    mean_activations: Vec<DVector<f64>>,
    sample_count: usize,
}

impl ProcessNoiseSet {
    pub fn new(q: Vec<DMatrix<f64>>, mean_activations: Vec<DVector<f64>>, sample_count: usize) -> Result<Self> {
        if sample_count < 2 {
            return Err(Error::Value(format!("process noise needs at least 2 samples, got {sample_count}")));
        }
        if q.is_empty() || q.len() != mean_activations.len() {
            return Err(Error::shape(format!(
                "{} covariance matrices for {} mean vectors",
                q.len(),
                mean_activations.len()
            )));
        }
        for (idx, (qm, mean)) in q.iter().zip(&mean_activations).enumerate() {
            if qm.nrows() != mean.len() || qm.ncols() != mean.len() {
                return Err(Error::layer_shape(
                    idx + 1,
                    format!("Q is {}x{} but the mean has length {}", qm.nrows(), qm.ncols(), mean.len()),
                ));
            }
            check_symmetric(qm).map_err(|e| e.at_layer(idx + 1))?;
        }
        Ok(ProcessNoiseSet { q, mean_activations, sample_count })
    }

    /// `Q_ℓ` for weighted layer `ℓ` (1-based).
    pub fn q(&self, l: usize) -> &DMatrix<f64> {
        &self.q[l - 1]
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.q
    }

    pub fn mean_activations(&self) -> &[DVector<f64>] {
        &self.mean_activations
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    /// Layer widths `[d_1, ..., d_L]` covered by this set.
    pub fn layer_dims(&self) -> Vec<usize> {
        self.q.iter().map(|q| q.nrows()).collect()
    }

    pub fn check_matches(&self, net: &Network) -> Result<()> {
        let expected = &net.dims()[1..];
        if self.layer_dims() != expected {
            return Err(Error::shape(format!(
                "process noise covers layer widths {:?} but the network has {:?}",
                self.layer_dims(),
                expected
            )));
        }
        Ok(())
    }
}

/// Estimates `Q_ℓ(i,j) = 1/(N-1) Σ_k (x_ℓk(i) - x̄_ℓ(i))(x_ℓk(j) - x̄_ℓ(j))`.
///
/// Two passes over the calibration set: means first, then centered outer
/// products. Only per-layer accumulators are held between chunks.
pub fn estimate_process_noise(net: &Network, calibration: &[DVector<f64>]) -> Result<ProcessNoiseSet> {
    let n = calibration.len();
    if n < 2 {
        return Err(Error::Value(format!("process noise estimation needs at least 2 calibration inputs, got {n}")));
    }
    let dims = net.dims();
    let layer_dims = &dims[1..];

    // Means are accumulated as offsets from the first input's activations, so
    // a constant calibration set yields exactly zero deviations.
    let shift = net.forward(&calibration[0])?.states.split_off(1);
    let sums = calibration
        .par_chunks(CHUNK)
        .map(|chunk| -> Result<Vec<DVector<f64>>> {
            let mut acc: Vec<DVector<f64>> = layer_dims.iter().map(|&d| DVector::zeros(d)).collect();
            for x in chunk {
                let trace = net.forward(x)?;
                for ((a, s), c) in acc.iter_mut().zip(&trace.states[1..]).zip(&shift) {
                    *a += s - c;
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut offsets: Vec<DVector<f64>> = layer_dims.iter().map(|&d| DVector::zeros(d)).collect();
    for partial in &sums {
        for (m, p) in offsets.iter_mut().zip(partial) {
            *m += p;
        }
    }
    let means: Vec<DVector<f64>> = shift.iter().zip(&offsets).map(|(c, o)| c + o / n as f64).collect();

    let scatters = calibration
        .par_chunks(CHUNK)
        .map(|chunk| -> Result<Vec<DMatrix<f64>>> {
            let mut centered: Vec<DMatrix<f64>> = layer_dims.iter().map(|&d| DMatrix::zeros(d, chunk.len())).collect();
            for (k, x) in chunk.iter().enumerate() {
                let trace = net.forward(x)?;
                for ((c, s), m) in centered.iter_mut().zip(&trace.states[1..]).zip(&means) {
                    c.set_column(k, &(s - m));
                }
            }
            Ok(centered.iter().map(|c| c * c.transpose()).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut q: Vec<DMatrix<f64>> = layer_dims.iter().map(|&d| DMatrix::zeros(d, d)).collect();
    for partial in &scatters {
        for (acc, p) in q.iter_mut().zip(partial) {
            *acc += p;
        }
    }
    for (idx, qm) in q.iter_mut().enumerate() {
        *qm = symmetrize(qm) / (n - 1) as f64;
        if qm.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite process noise at layer {}", idx + 1)));
        }
    }
    ProcessNoiseSet::new(q, means, n)
}

#[derive(Serialize, Deserialize)]
struct NoiseFile {
    format: String,
    version: u32,
    /// Full network widths `[d_0, ..., d_L]`.
    dims: Vec<usize>,
    sample_count: usize,
    mean_activations: Vec<Vec<f64>>,
    /// Row-major `d_ℓ × d_ℓ` matrices for `ℓ = 1..L`.
    q: Vec<Vec<f64>>,
}

/// Writes the set. `input_dim` is `d_0` of the network it was estimated on.
pub fn save_noise(set: &ProcessNoiseSet, input_dim: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let doc = NoiseFile {
        format: NOISE_FORMAT.to_string(),
        version: NOISE_VERSION,
        dims: std::iter::once(input_dim).chain(set.layer_dims()).collect(),
        sample_count: set.sample_count,
        mean_activations: set.mean_activations.iter().map(|m| m.iter().copied().collect()).collect(),
        q: set.q.iter().map(row_major).collect(),
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, &doc).map_err(|e| Error::format(path, e.to_string()))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a set and the `d_0` it declares.
pub fn load_noise(path: impl AsRef<Path>) -> Result<(ProcessNoiseSet, usize)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let doc: NoiseFile =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::format(path, e.to_string()))?;
    if doc.format != NOISE_FORMAT {
        return Err(Error::format(path, format!("unexpected format tag {:?}", doc.format)));
    }
    if doc.version != NOISE_VERSION {
        return Err(Error::format(path, format!("unsupported version {}", doc.version)));
    }
    if doc.dims.len() < 2 || doc.q.len() != doc.dims.len() - 1 || doc.mean_activations.len() != doc.q.len() {
        return Err(Error::shape(format!(
            "{}: dims {:?} disagree with {} matrices and {} mean vectors",
            path.display(),
            doc.dims,
            doc.q.len(),
            doc.mean_activations.len()
        )));
    }
    let mut q = Vec::with_capacity(doc.q.len());
    let mut means = Vec::with_capacity(doc.q.len());
    for (idx, (flat, mean)) in doc.q.into_iter().zip(doc.mean_activations).enumerate() {
        let d = doc.dims[idx + 1];
        if flat.len() != d * d || mean.len() != d {
            return Err(Error::layer_shape(
                idx + 1,
                format!(
                    "{}: declared width {d} but found {} matrix entries and a mean of length {}",
                    path.display(),
                    flat.len(),
                    mean.len()
                ),
            ));
        }
        q.push(DMatrix::from_row_slice(d, d, &flat));
        means.push(DVector::from_vec(mean));
    }
    Ok((ProcessNoiseSet::new(q, means, doc.sample_count)?, doc.dims[0]))
}
