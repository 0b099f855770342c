#![allow(dead_code)]

use ekfprop::{LayerParams, Network};
use nalgebra::{DMatrix, DVector};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let u = Uniform::new(lo, hi).unwrap();
    DMatrix::from_fn(rows, cols, |_, _| u.sample(rng))
}

pub fn uniform_vector(len: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let u = Uniform::new(lo, hi).unwrap();
    DVector::from_fn(len, |_, _| u.sample(rng))
}

pub fn normal_vector(len: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(len, |_, _| StandardNormal.sample(rng))
}

/// `G·Gᵀ` plus a small ridge, scaled to unit-ish entries.
pub fn random_psd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = uniform_matrix(n, n, -1.0, 1.0, rng);
    let m = &g * g.transpose() / n as f64 + DMatrix::identity(n, n) * 0.05;
    (&m + m.transpose()) * 0.5
}

/// Rank-deficient PSD matrix `G·Gᵀ` with `G` of shape `n × rank`.
pub fn random_low_rank_psd(n: usize, rank: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = uniform_matrix(n, rank, -1.0, 1.0, rng);
    let m = &g * g.transpose();
    (&m + m.transpose()) * 0.5
}

pub fn random_network(dims: &[usize], bias_lo: f64, bias_hi: f64, rng: &mut ChaCha8Rng) -> Network {
    let layers = dims
        .windows(2)
        .map(|d| {
            let bound = 1.0 / (d[0] as f64).sqrt();
            LayerParams::new(
                uniform_matrix(d[1], d[0], -bound * 1.5, bound * 1.5, rng),
                uniform_vector(d[1], bias_lo, bias_hi, rng),
            )
            .unwrap()
        })
        .collect();
    Network::new(layers).unwrap()
}

/// Max of `|a - b| / max(|b|, floor)` over entries.
pub fn max_rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>, floor: f64) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs() / y.abs().max(floor)).fold(0.0, f64::max)
}

/// Brute-force unbiased sample covariance with the textbook double loop.
pub fn naive_sample_cov(samples: &[DVector<f64>]) -> DMatrix<f64> {
    let n = samples.len();
    let d = samples[0].len();
    let mut mean = vec![0.0; d];
    for s in samples {
        for i in 0..d {
            mean[i] += s[i];
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    DMatrix::from_fn(d, d, |i, j| {
        samples.iter().map(|s| (s[i] - mean[i]) * (s[j] - mean[j])).sum::<f64>() / (n - 1) as f64
    })
}

/// Standard error of a Gaussian sample-covariance entry:
/// `sqrt((Σ_ij² + Σ_ii·Σ_jj) / (n - 1))`.
pub fn cov_standard_error(sigma: &DMatrix<f64>, i: usize, j: usize, n: usize) -> f64 {
    ((sigma[(i, j)].powi(2) + sigma[(i, i)] * sigma[(j, j)]) / (n - 1) as f64).sqrt()
}

/// Adaptive Simpson quadrature on `[a, b]` to absolute tolerance `tol`, seeded
/// with panels no wider than 0.25 so narrow peaks cannot be stepped over.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let panels = ((b - a) / 0.25).ceil().max(1.0) as usize;
    let width = (b - a) / panels as f64;
    (0..panels)
        .map(|k| {
            let lo = a + k as f64 * width;
            let hi = if k + 1 == panels { b } else { lo + width };
            adaptive_simpson_panel(f, lo, hi, tol / panels as f64)
        })
        .sum()
}

fn adaptive_simpson_panel(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1)
            + recurse(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, m, fm, whole, tol, 50)
}

/// Variance of `N(mu, var)` restricted to `[0, ∞)`, by quadrature of the
/// zeroth, first and second moments of the standardized density on
/// `[α, α + 40]` (mass beyond is below double precision).
pub fn truncated_variance_quadrature(mu: f64, var: f64) -> f64 {
    let sigma = var.sqrt();
    let alpha = -mu / sigma;
    // Rescaling by exp(α²/2) keeps the moments O(1) deep in the tail.
    let shift = if alpha > 0.0 { alpha } else { 0.0 };
    let density = move |t: f64| (-0.5 * (t * t - shift * shift)).exp();
    let hi = alpha + 40.0;
    let tol = 1e-15;
    let m0 = adaptive_simpson(&|t| density(t), alpha, hi, tol);
    let m1 = adaptive_simpson(&|t| (t - alpha) * density(t), alpha, hi, tol);
    let m2 = adaptive_simpson(&|t| (t - alpha).powi(2) * density(t), alpha, hi, tol);
    let mean = m1 / m0;
    var * (m2 / m0 - mean * mean)
}
