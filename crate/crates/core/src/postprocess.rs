//! Reportable quantities derived from the output belief: truncated-normal
//! variance, clamped error bars, and the per-label RMSE baseline.

use std::f64::consts::{PI, SQRT_2};

use libm::erfc;
use nalgebra::DVector;

use crate::ekf::BeliefState;
use crate::error::{Error, Result};
use crate::network::Network;

/// Beyond this standardized lower bound the tail ratio comes from a continued
/// fraction instead of `φ/Z`.
const TAIL_SWITCH: f64 = 5.0;

/// Diagonal entries down to this negative value are read as round-off zeros.
const NEGATIVE_VARIANCE_SLACK: f64 = 1e-12;

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Convergents `c_k = x + k / c_{k+1}` of the Mills-ratio continued fraction,
/// truncated deep enough to be exact in double precision for `x ≥ TAIL_SWITCH`.
/// Returns `(c_1, c_2, c_3, c_4)`; the hazard `φ(x)/(1 - Φ(x))` is `c_1`.
fn mills_convergents(x: f64) -> (f64, f64, f64, f64) {
    let mut c = [x; 5];
    let mut t = x;
    for k in (1..=400).rev() {
        t = x + k as f64 / t;
        if k <= 4 {
            c[k] = t;
        }
    }
    (c[1], c[2], c[3], c[4])
}

/// `1 + αλ - λ²` and `ln(1 - Φ(α))` for standardized lower bound `α`.
fn truncation_factor(alpha: f64) -> (f64, f64) {
    if alpha > TAIL_SWITCH {
        // With λ = α + 1/s, s = α + 2/u, u = α + 3/w the factor is
        // (α + 4/u - 3/w) / (u·s²), free of cancellation.
        let (lambda, s, u, w) = mills_convergents(alpha);
        let factor = (alpha + 4.0 / u - 3.0 / w) / (u * s * s);
        let log_tail = -0.5 * alpha * alpha - 0.5 * (2.0 * PI).ln() - lambda.ln();
        (factor, log_tail)
    } else {
        let tail = 0.5 * erfc(alpha / SQRT_2);
        let lambda = std_normal_pdf(alpha) / tail;
        (1.0 + alpha * lambda - lambda * lambda, tail.ln())
    }
}

/// Variance of `N(mu, var)` conditioned on `[0, ∞)`.
///
/// With `σ = √var`, `α = -mu/σ` and hazard `λ = φ(α)/(1 - Φ(α))`, the result
/// is `var·(1 + αλ - λ²)`.
pub fn truncated_variance(mu: f64, var: f64) -> Result<f64> {
    if !(var > 0.0) || !var.is_finite() {
        return Err(Error::Value(format!("truncated variance needs var > 0, got {var}")));
    }
    if !mu.is_finite() {
        return Err(Error::Value(format!("truncated variance needs a finite mean, got {mu}")));
    }
    let alpha = -mu / var.sqrt();
    let (factor, log_tail) = truncation_factor(alpha);
    if log_tail < (f64::MIN_POSITIVE * f64::EPSILON).ln() {
        return Err(Error::Numeric(format!("mass of N({mu}, {var}) on [0, inf) underflows")));
    }
    Ok(var * factor.clamp(0.0, 1.0))
}

/// Per-component error bars around the predicted output.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorBarSet {
    pub center: DVector<f64>,
    pub sigma_raw: DVector<f64>,
    pub sigma_truncated: DVector<f64>,
    pub multiplier: f64,
    /// Whether the bars use `sigma_truncated` (otherwise `sigma_raw`).
    pub truncated: bool,
    pub bar_low: DVector<f64>,
    pub bar_high: DVector<f64>,
}

pub fn make_error_bars(belief: &BeliefState, multiplier: f64, truncate: bool) -> Result<ErrorBarSet> {
    if !(multiplier > 0.0) || !multiplier.is_finite() {
        return Err(Error::Value(format!("sigma multiplier must be positive, got {multiplier}")));
    }
    let d = belief.mean.len();
    if belief.cov.nrows() != d || belief.cov.ncols() != d {
        return Err(Error::shape("belief covariance does not match its mean"));
    }
    let mut sigma_raw = DVector::zeros(d);
    let mut sigma_truncated = DVector::zeros(d);
    for i in 0..d {
        let var = belief.cov[(i, i)];
        if var < -NEGATIVE_VARIANCE_SLACK {
            return Err(Error::Value(format!("output variance {i} is negative ({var:e})")));
        }
        if var > 0.0 {
            sigma_raw[i] = var.sqrt();
            let t = truncated_variance(belief.mean[i], var)?.sqrt();
            sigma_truncated[i] = t.min(sigma_raw[i]);
        }
    }
    let sigma = if truncate { &sigma_truncated } else { &sigma_raw };
    let bar_low = DVector::from_fn(d, |i, _| (belief.mean[i] - multiplier * sigma[i]).max(0.0));
    let bar_high = DVector::from_fn(d, |i, _| belief.mean[i] + multiplier * sigma[i]);
    Ok(ErrorBarSet {
        center: belief.mean.clone(),
        sigma_raw,
        sigma_truncated,
        multiplier,
        truncated: truncate,
        bar_low,
        bar_high,
    })
}

/// Per-component RMSE of predictions against the one-hot target, over the
/// inputs carrying `target_label`.
pub fn rmse_by_label(
    net: &Network,
    inputs: &[DVector<f64>],
    labels: &[usize],
    target_label: usize,
) -> Result<DVector<f64>> {
    if inputs.len() != labels.len() {
        return Err(Error::shape(format!("{} inputs but {} labels", inputs.len(), labels.len())));
    }
    let classes = net.output_dim();
    if target_label >= classes {
        return Err(Error::Value(format!("label {target_label} is outside the {classes} output classes")));
    }
    let mut target = DVector::zeros(classes);
    target[target_label] = 1.0;

    let mut sum_sq = DVector::zeros(classes);
    let mut count = 0usize;
    for (x, &label) in inputs.iter().zip(labels) {
        if label != target_label {
            continue;
        }
        let err = net.predict(x)? - &target;
        sum_sq += err.component_mul(&err);
        count += 1;
    }
    if count == 0 {
        return Err(Error::Value(format!("no inputs carry label {target_label}")));
    }
    Ok(sum_sq.map(|s| (s / count as f64).sqrt()))
}
