//! Noise calibration, data synthesis, reconstruction and posterior
//! variances.
//!
//! The measurement noise level is tied to the signal strength: its variance
//! is a configured fraction of the mean prior-predictive variance at the
//! sensors, estimated from prior draws pushed through the forward map.
//! Reconstruction solves the regularized normal equations of the
//! linear-Gaussian model, so the result is both the posterior mean and the
//! maximum a posteriori estimate. Pointwise posterior variances come from
//! the low-rank update formula `post = C0 - Z S_w Z'` with `Z = L Q` and
//! `S_w = I - (R W R' + I)^{-1}`, whose mass-weighted total reproduces the
//! design objective exactly at any truncation level.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::NoiseConfig;
use crate::error::{Error, Result};
use crate::heat::HeatWorkspace;
use crate::lowrank::LowRankFactor;
use crate::mesh::Point;
use crate::prior::BilaplacianPrior;

/// Reference heat source: two smooth bumps of radius `3 pi / 40` centered
/// at `(-0.75, -0.7)` and `(-0.75, 0.7)`, with peak value about `0.238`.
pub fn test_source(p: Point) -> f64 {
    let r2 = (3.0 * std::f64::consts::PI / 40.0).powi(2);
    let bump = |dy: f64| {
        let r = r2 - (p[0] + 0.75).powi(2) - (p[1] + dy).powi(2);
        if r > 0.0 {
            (-1.0 / r.powf(0.125)).exp()
        } else {
            0.0
        }
    };
    bump(0.7) + bump(-0.7)
}

/// Noise variance as `relative_level` times the mean (over sensors) sample
/// variance of noise-free data under prior draws.
pub fn calibrate_noise(
    heat: &HeatWorkspace,
    prior: &BilaplacianPrior,
    cfg: &NoiseConfig,
    rng: &mut impl Rng,
) -> Result<f64> {
    let m = heat.ops.n_sensors();
    let n = cfg.calibration_samples;
    let mut sum = DVector::zeros(m);
    let mut sum_sq = DVector::zeros(m);
    let mut remaining = n;
    while remaining > 0 {
        let chunk = remaining.min(100);
        let samples = prior.sample_block(rng, chunk);
        let data = heat.apply_forward_block(&samples);
        for col in data.column_iter() {
            sum += col;
            sum_sq += col.component_mul(&col);
        }
        remaining -= chunk;
    }
    let mean_variance = (0..m)
        .map(|k| (sum_sq[k] - sum[k] * sum[k] / n as f64) / (n - 1) as f64)
        .sum::<f64>()
        / m as f64;
    if !(mean_variance > 0.0) {
        return Err(Error::Noise(format!(
            "prior-predictive variance at the sensors is {mean_variance:e}; the forward map provides no signal"
        )));
    }
    Ok(cfg.relative_level * mean_variance)
}

/// Noise-free data plus one Gaussian noise draw on every sensor. A design
/// later selects rows of this vector, so competing designs see the same
/// realization at shared sensors.
pub fn synthesize_data(
    heat: &HeatWorkspace,
    source: &DVector<f64>,
    sigma2: f64,
    rng: &mut impl Rng,
) -> DVector<f64> {
    let clean = heat.apply_forward(source);
    let sigma = sigma2.sqrt();
    clean.map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal))
}

/// Posterior mean (equivalently the maximum a posteriori source) for data
/// `data` under design weights `w`.
///
/// Solves `(F' W F / sigma2 + K D^{-1} K) s = F' W data / sigma2` with the
/// dense forward matrix `f_mat` (sensors by source dofs).
pub fn reconstruct_map(
    f_mat: &DMatrix<f64>,
    prior: &BilaplacianPrior,
    sigma2: f64,
    w: &DVector<f64>,
    data: &DVector<f64>,
) -> Result<DVector<f64>> {
    let m = f_mat.nrows();
    if w.len() != m || data.len() != m {
        return Err(Error::Parameter(format!(
            "design and data must have one entry per sensor ({m}), got {} and {}",
            w.len(),
            data.len()
        )));
    }
    if sigma2 <= 0.0 {
        return Err(Error::Parameter(format!("noise variance must be positive, got {sigma2}")));
    }
    let mut fw = f_mat.clone();
    for (k, mut row) in fw.row_iter_mut().enumerate() {
        row *= w[k];
    }
    let mut system = (f_mat.transpose() * &fw) / sigma2 + prior.precision_dense();
    let st = system.transpose();
    system = 0.5 * (&system + st);
    let rhs = f_mat.transpose() * w.component_mul(data) / sigma2;
    let chol = Cholesky::new(system)
        .ok_or_else(|| Error::Solve("posterior precision is not positive definite".into()))?;
    Ok(chol.solve(&rhs))
}

/// Pointwise posterior variances of the source coefficients under design
/// `w`, through the low-rank update of the prior covariance.
pub fn posterior_variances(
    prior: &BilaplacianPrior,
    factor: &LowRankFactor,
    w: &DVector<f64>,
) -> DVector<f64> {
    let rank = factor.rank();
    let mut scaled = factor.r.clone();
    for (k, mut col) in scaled.column_iter_mut().enumerate() {
        col *= w[k];
    }
    let mut a = scaled * factor.r.transpose();
    for i in 0..rank {
        a[(i, i)] += 1.0;
    }
    let ainv = Cholesky::new(a)
        .expect("information matrix is positive definite")
        .solve(&DMatrix::identity(rank, rank));
    let s_w = DMatrix::identity(rank, rank) - ainv;

    let z = prior.apply_l_block(&factor.q);
    let zs = &z * s_w;
    let g_diag = prior.covariance_dense().diagonal();
    let d = &prior.ops.source_mass_lumped;
    DVector::from_fn(prior.n(), |i, _| {
        let reduction: f64 = zs.row(i).dot(&z.row(i));
        g_diag[i] - reduction / d[i]
    })
}

/// Dense-algebra posterior variances; the oracle for
/// [`posterior_variances`].
pub fn posterior_variances_dense(
    f_mat: &DMatrix<f64>,
    prior: &BilaplacianPrior,
    sigma2: f64,
    w: &DVector<f64>,
) -> DVector<f64> {
    let mut fw = f_mat.clone();
    for (k, mut row) in fw.row_iter_mut().enumerate() {
        row *= w[k];
    }
    let mut system = (f_mat.transpose() * &fw) / sigma2 + prior.precision_dense();
    let st = system.transpose();
    system = 0.5 * (&system + st);
    let n = f_mat.ncols();
    let cov = Cholesky::new(system)
        .expect("posterior precision is positive definite")
        .solve(&DMatrix::identity(n, n));
    cov.diagonal()
}

/// A uniformly random binary design with exactly `m0` active sensors.
pub fn random_design(m: usize, m0: usize, rng: &mut impl Rng) -> DVector<f64> {
    assert!(m0 <= m, "budget {m0} exceeds {m} sensors");
    let mut idx: Vec<usize> = (0..m).collect();
    for i in 0..m0 {
        let j = rng.gen_range(i..m);
        idx.swap(i, j);
    }
    let mut w = DVector::zeros(m);
    for &k in &idx[..m0] {
        w[k] = 1.0;
    }
    w
}

/// Objective range over random binary designs of one budget.
#[derive(Debug, Clone)]
pub struct BaselineSummary {
    pub j_min: f64,
    pub j_max: f64,
    /// The best random design found.
    pub best: DVector<f64>,
}

pub fn random_baseline(
    factor: &LowRankFactor,
    m0: usize,
    count: usize,
    rng: &mut impl Rng,
) -> BaselineSummary {
    assert!(count > 0);
    let m = factor.n_sensors();
    let mut best = DVector::zeros(m);
    let mut j_min = f64::INFINITY;
    let mut j_max = f64::NEG_INFINITY;
    for _ in 0..count {
        let w = random_design(m, m0, rng);
        let j = crate::design::objective(factor, &w);
        if j < j_min {
            j_min = j;
            best = w.clone();
        }
        j_max = j_max.max(j);
    }
    BaselineSummary { j_min, j_max, best }
}

/// Relative error in the mass-weighted norm on the source patch,
/// `|est - truth|_M / |truth|_M`.
pub fn relative_error(prior: &BilaplacianPrior, estimate: &DVector<f64>, truth: &DVector<f64>) -> f64 {
    let m = &prior.ops.source_mass;
    let diff = estimate - truth;
    let num = (m * &diff).dot(&diff);
    let den = (m * truth).dot(truth);
    (num / den).sqrt()
}
