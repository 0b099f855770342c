//! Monte Carlo reference: push Gaussian input samples through the network and
//! take sample moments of the outputs.
//!
//! Sample `k` draws its normals from a ChaCha stream selected by `(seed, k)`,
//! so any split of the index range across workers reproduces the same draws.
//! Reductions always run in index order.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{is_diagonal, psd_sqrt};
use crate::network::Network;

/// Floor on the Monte Carlo std used as a relative-difference denominator.
pub const RELATIVE_FLOOR: f64 = 1e-9;

enum Root {
    Diagonal(DVector<f64>),
    Full(DMatrix<f64>),
}

/// Draws `mean + A·z`, with `A` the symmetric PSD square root of the covariance.
pub struct GaussianSampler {
    mean: DVector<f64>,
    root: Root,
}

impl GaussianSampler {
    pub fn new(mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::shape(format!(
                "covariance is {}x{} but the mean has length {}",
                cov.nrows(),
                cov.ncols(),
                mean.len()
            )));
        }
        let sqrt = psd_sqrt(cov)?;
        let root = if is_diagonal(&sqrt) { Root::Diagonal(sqrt.diagonal()) } else { Root::Full(sqrt) };
        Ok(GaussianSampler { mean: mean.clone(), root })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Sample `k` of the stream identified by `seed`.
    pub fn sample(&self, seed: u64, k: u64) -> DVector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k);
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        match &self.root {
            Root::Diagonal(d) => &self.mean + d.component_mul(&z),
            Root::Full(a) => &self.mean + a * z,
        }
    }
}

/// `n` draws from `N(x0, sigma0)`; a pure function of `(seed, n)`.
pub fn sample_inputs(x0: &DVector<f64>, sigma0: &DMatrix<f64>, n: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
    if n == 0 {
        return Err(Error::Value("sample count must be at least 1".into()));
    }
    let sampler = GaussianSampler::new(x0, sigma0)?;
    Ok((0..n as u64).into_par_iter().map(|k| sampler.sample(seed, k)).collect())
}

/// Unbiased sample moments.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleStats {
    pub n: usize,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub std: DVector<f64>,
}

impl SampleStats {
    /// Two-pass mean and `1/(n-1)` covariance of `samples`, reduced in order.
    pub fn from_samples(samples: &[DVector<f64>]) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(Error::Value(format!("sample statistics need at least 2 samples, got {n}")));
        }
        let d = samples[0].len();
        if samples.iter().any(|s| s.len() != d) {
            return Err(Error::shape("samples have differing lengths"));
        }
        // shifted by the first sample so identical samples give exact moments
        let shift = &samples[0];
        let mut offset = DVector::zeros(d);
        for s in samples {
            offset += s - shift;
        }
        let mean = shift + offset / n as f64;
        let mut centered = DMatrix::zeros(d, n);
        for (k, s) in samples.iter().enumerate() {
            centered.set_column(k, &(s - &mean));
        }
        let raw = &centered * centered.transpose() / (n - 1) as f64;
        let cov = crate::linalg::symmetrize(&raw);
        let std = cov.diagonal().map(|v| v.max(0.0).sqrt());
        Ok(SampleStats { n, mean, cov, std })
    }
}

/// Forwards `n` input samples and returns the output sample moments.
pub fn mc_propagate(
    net: &Network,
    x0: &DVector<f64>,
    sigma0: &DMatrix<f64>,
    n: usize,
    seed: u64,
) -> Result<SampleStats> {
    if n < 2 {
        return Err(Error::Value(format!("Monte Carlo needs at least 2 samples, got {n}")));
    }
    if x0.len() != net.input_dim() {
        return Err(Error::layer_shape(
            1,
            format!("input has length {} but the network expects {}", x0.len(), net.input_dim()),
        ));
    }
    let sampler = GaussianSampler::new(x0, sigma0)?;
    let outputs =
        (0..n as u64).into_par_iter().map(|k| net.predict(&sampler.sample(seed, k))).collect::<Result<Vec<_>>>()?;
    SampleStats::from_samples(&outputs)
}

/// Per-component agreement between two std vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub abs_diff: Vec<f64>,
    /// `|ekf - mc| / max(mc, RELATIVE_FLOOR)`.
    pub rel_diff: Vec<f64>,
    pub max_abs: f64,
    pub mean_abs: f64,
    pub max_rel: f64,
    pub mean_rel: f64,
}

pub fn compare_stats(ekf_std: &DVector<f64>, mc_std: &DVector<f64>) -> Result<ComparisonReport> {
    if ekf_std.len() != mc_std.len() {
        return Err(Error::shape(format!(
            "cannot compare std vectors of lengths {} and {}",
            ekf_std.len(),
            mc_std.len()
        )));
    }
    if ekf_std.is_empty() {
        return Err(Error::shape("cannot compare empty std vectors"));
    }
    let abs_diff: Vec<f64> = ekf_std.iter().zip(mc_std.iter()).map(|(e, m)| (e - m).abs()).collect();
    let rel_diff: Vec<f64> = abs_diff.iter().zip(mc_std.iter()).map(|(a, m)| a / m.max(RELATIVE_FLOOR)).collect();
    let len = abs_diff.len() as f64;
    Ok(ComparisonReport {
        max_abs: abs_diff.iter().copied().fold(0.0, f64::max),
        mean_abs: abs_diff.iter().sum::<f64>() / len,
        max_rel: rel_diff.iter().copied().fold(0.0, f64::max),
        mean_rel: rel_diff.iter().sum::<f64>() / len,
        abs_diff,
        rel_diff,
    })
}
