//! EKF prediction step over network layers.
//!
//! Each weighted layer is one time step. The state mean follows the ordinary
//! forward pass and the covariance follows `Σ_ℓ = F_ℓ Σ_{ℓ-1} F_ℓᵀ (+ Q_ℓ)`,
//! where `F_ℓ` is the ReLU Jacobian of layer `ℓ` at the traced state.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{check_psd, check_symmetric, symmetrize};
use crate::network::{ActivationTrace, LayerParams, Network};
use crate::noise::ProcessNoiseSet;

/// Mean and covariance at one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl BeliefState {
    /// Per-component standard deviations. Diagonal entries within `-1e-12` of
    /// zero are treated as zero.
    pub fn std_devs(&self) -> DVector<f64> {
        self.cov.diagonal().map(|v| if v > 0.0 { v.sqrt() } else { 0.0 })
    }
}

#[derive(Debug, Clone, Copy)]
pub enum PropagationMode<'a> {
    /// `Σ_ℓ = F_ℓ Σ_{ℓ-1} F_ℓᵀ`: all output uncertainty comes from the input.
    PerfectModel,
    /// Adds the estimated `Q_ℓ` after every layer.
    WithProcessNoise(&'a ProcessNoiseSet),
}

impl PropagationMode<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            PropagationMode::PerfectModel => "perfect",
            PropagationMode::WithProcessNoise(_) => "noisy",
        }
    }
}

/// ReLU Jacobian of one layer: row `i` is row `i` of the weights when the
/// post-activation `x_l(i) > 0`, and zero otherwise.
pub fn jacobian(layer: &LayerParams, x_l: &DVector<f64>) -> Result<DMatrix<f64>> {
    if x_l.len() != layer.output_dim() {
        return Err(Error::shape(format!(
            "state has length {} but the layer has {} nodes",
            x_l.len(),
            layer.output_dim()
        )));
    }
    let mut f = layer.weights.clone();
    for (i, &x) in x_l.iter().enumerate() {
        if !(x > 0.0) {
            f.row_mut(i).fill(0.0);
        }
    }
    Ok(f)
}

/// `F·Σ·Fᵀ (+ Q)`, symmetrized as `(M + Mᵀ)/2`.
pub fn predict_cov(prev_cov: &DMatrix<f64>, f: &DMatrix<f64>, q: Option<&DMatrix<f64>>) -> Result<DMatrix<f64>> {
    check_symmetric(prev_cov)?;
    if f.ncols() != prev_cov.nrows() {
        return Err(Error::shape(format!(
            "Jacobian is {}x{} but the previous covariance is {}x{}",
            f.nrows(),
            f.ncols(),
            prev_cov.nrows(),
            prev_cov.ncols()
        )));
    }
    let mut next = f * prev_cov * f.transpose();
    if let Some(q) = q {
        if q.nrows() != f.nrows() || q.ncols() != f.nrows() {
            return Err(Error::shape(format!(
                "process noise is {}x{} but the layer has {} nodes",
                q.nrows(),
                q.ncols(),
                f.nrows()
            )));
        }
        check_symmetric(q)?;
        next += q;
    }
    Ok(symmetrize(&next))
}

/// Result of [`propagate`]: the forward trace and the `L+1` belief states.
#[derive(Debug, Clone)]
pub struct Propagation {
    pub trace: ActivationTrace,
    pub beliefs: Vec<BeliefState>,
}

impl Propagation {
    pub fn output(&self) -> &BeliefState {
        &self.beliefs[self.beliefs.len() - 1]
    }
}

/// Runs the prediction recursion from `(x0, sigma0)` to the output layer.
///
/// Every intermediate covariance is checked for PSD within
/// [`crate::linalg::PSD_TOLERANCE`]; a violation is reported, not repaired.
pub fn propagate(
    net: &Network,
    x0: &DVector<f64>,
    sigma0: &DMatrix<f64>,
    mode: PropagationMode<'_>,
) -> Result<Propagation> {
    let d0 = net.input_dim();
    if sigma0.nrows() != d0 || sigma0.ncols() != d0 {
        return Err(Error::shape(format!(
            "input covariance is {}x{} but the network input has {d0} components",
            sigma0.nrows(),
            sigma0.ncols()
        )));
    }
    check_psd(sigma0).map_err(|e| e.at_layer(0))?;
    if let PropagationMode::WithProcessNoise(noise) = mode {
        noise.check_matches(net)?;
    }

    let trace = net.forward(x0)?;
    let mut beliefs = Vec::with_capacity(net.depth() + 1);
    beliefs.push(BeliefState { mean: x0.clone(), cov: symmetrize(sigma0) });
    for l in 1..=net.depth() {
        let f = jacobian(net.layer(l), &trace.states[l]).map_err(|e| e.at_layer(l))?;
        let q = match mode {
            PropagationMode::PerfectModel => None,
            PropagationMode::WithProcessNoise(noise) => Some(noise.q(l)),
        };
        let cov = predict_cov(&beliefs[l - 1].cov, &f, q).map_err(|e| e.at_layer(l))?;
        check_psd(&cov).map_err(|e| e.at_layer(l))?;
        beliefs.push(BeliefState { mean: trace.states[l].clone(), cov });
    }
    Ok(Propagation { trace, beliefs })
}
