//! Average-variance design criterion and the binary design optimizer.
//!
//! For a sensor weight vector `w` the posterior average variance reduces,
//! through the low-rank factorization, to
//!
//! ```text
//! J(w) = tr(C0) - tr(C) + tr((R W R' + I)^{-1} C),   W = Diag(w),
//! ```
//!
//! which touches only rank-sized matrices. `J` is convex and non-increasing
//! in every weight, so the relaxed problem over the capped simplex
//! `{0 <= w <= 1, sum w <= m0}` is solved globally by projected gradient
//! descent. Binary designs come from a continuation that rewrites the
//! problem in the variables `z = w^p` and shrinks `p` geometrically: for
//! small `p` fractional weights waste budget, pushing the solution to the
//! vertices. Weights classified as firmly active or inactive at the relaxed
//! optimum are pinned before the continuation starts.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::config::DesignConfig;
use crate::error::{Error, Result};
use crate::lowrank::LowRankFactor;

/// `I + R Diag(w) R'`.
fn regularized_information(factor: &LowRankFactor, w: &DVector<f64>) -> DMatrix<f64> {
    let rank = factor.rank();
    let mut scaled = factor.r.clone();
    for (k, mut col) in scaled.column_iter_mut().enumerate() {
        col *= w[k];
    }
    let mut a = scaled * factor.r.transpose();
    for i in 0..rank {
        a[(i, i)] += 1.0;
    }
    a
}

fn information_cholesky(factor: &LowRankFactor, w: &DVector<f64>) -> Cholesky<f64, nalgebra::Dyn> {
    // The matrix is I plus a PSD term, so the factorization cannot fail.
    Cholesky::new(regularized_information(factor, w)).expect("information matrix is positive definite")
}

/// Average posterior variance under design `w` (trace of the posterior
/// covariance in the mass-weighted frame).
pub fn objective(factor: &LowRankFactor, w: &DVector<f64>) -> f64 {
    let chol = information_cholesky(factor, w);
    let x = chol.solve(&factor.c);
    factor.trace_c0 - factor.c.trace() + x.trace()
}

/// Gradient of [`objective`]: minus the squared column norms of
/// `C^{1/2} (R W R' + I)^{-1} R`.
pub fn gradient(factor: &LowRankFactor, w: &DVector<f64>) -> DVector<f64> {
    let chol = information_cholesky(factor, w);
    let x = chol.solve(&factor.r);
    let y = &factor.c_half * x;
    DVector::from_fn(factor.n_sensors(), |k, _| -y.column(k).norm_squared())
}

/// Objective in the continuation variables, `J(z^{1/p})`.
pub fn objective_p(factor: &LowRankFactor, z: &DVector<f64>, p: f64) -> f64 {
    objective(factor, &z.map(|v| v.powf(1.0 / p)))
}

/// Gradient of [`objective_p`]: `(1/p) grad J(z^{1/p}) z^{1/p - 1}`.
pub fn gradient_p(factor: &LowRankFactor, z: &DVector<f64>, p: f64) -> DVector<f64> {
    let w = z.map(|v| v.powf(1.0 / p));
    let g = gradient(factor, &w);
    let e = (1.0 - p) / p;
    DVector::from_fn(z.len(), |k, _| g[k] * z[k].powf(e) / p)
}

/// Euclidean projection onto `{0 <= z <= 1, sum z <= budget}`.
///
/// Clipping to the box either lands inside the budget or a shifted clip
/// `clamp(z - tau)` does; the shift is found by bisection and taken from
/// the feasible side, so the result always satisfies the budget.
pub fn project_design(z: &DVector<f64>, budget: f64) -> DVector<f64> {
    let clipped = z.map(|v| v.clamp(0.0, 1.0));
    if clipped.sum() <= budget {
        return clipped;
    }
    let mut lo = 0.0;
    let mut hi = z.max();
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        let s: f64 = z.iter().map(|&v| (v - mid).clamp(0.0, 1.0)).sum();
        if s > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    z.map(|v| (v - hi).clamp(0.0, 1.0))
}

/// Weight classes at a relaxed optimum.
#[derive(Debug, Clone)]
pub struct Classification {
    /// Indices at (numerically) 1: keep these sensors.
    pub dominant: Vec<usize>,
    /// Indices at (numerically) 0: drop these sensors.
    pub redundant: Vec<usize>,
    /// Undecided indices.
    pub free: Vec<usize>,
}

pub fn classify(w: &DVector<f64>, tol: f64) -> Classification {
    let mut c = Classification {
        dominant: Vec::new(),
        redundant: Vec::new(),
        free: Vec::new(),
    };
    for (k, &v) in w.iter().enumerate() {
        if v >= 1.0 - tol {
            c.dominant.push(k);
        } else if v <= tol {
            c.redundant.push(k);
        } else {
            c.free.push(k);
        }
    }
    c
}

/// Coordinates held at fixed values while the rest are optimized.
struct Pinned {
    free: Vec<usize>,
    base: DVector<f64>,
    free_budget: f64,
}

impl Pinned {
    fn from_classes(n: usize, classes: &Classification, budget: f64) -> Self {
        let mut base = DVector::zeros(n);
        for &k in &classes.dominant {
            base[k] = 1.0;
        }
        Pinned {
            free: classes.free.clone(),
            base,
            free_budget: (budget - classes.dominant.len() as f64).max(0.0),
        }
    }

    fn expand(&self, zf: &DVector<f64>) -> DVector<f64> {
        let mut full = self.base.clone();
        for (i, &k) in self.free.iter().enumerate() {
            full[k] = zf[i];
        }
        full
    }

    fn restrict(&self, full: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.free.len(), self.free.iter().map(|&k| full[k]))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolveStats {
    pub iterations: usize,
    pub stationarity: f64,
    pub converged: bool,
}

/// Projected gradient descent with a backtracking line search.
fn minimize_projected(
    value: impl Fn(&DVector<f64>) -> f64,
    grad: impl Fn(&DVector<f64>) -> DVector<f64>,
    z0: DVector<f64>,
    budget: f64,
    tol: f64,
    max_iterations: usize,
) -> (DVector<f64>, f64, SolveStats) {
    let mut z = project_design(&z0, budget);
    let mut fz = value(&z);
    let mut step = 1.0;
    let mut stats = SolveStats {
        iterations: 0,
        stationarity: f64::INFINITY,
        converged: false,
    };
    if z.is_empty() {
        stats.converged = true;
        return (z, fz, stats);
    }
    for it in 0..max_iterations {
        stats.iterations = it + 1;
        let g = grad(&z);
        stats.stationarity = (&z - project_design(&(&z - &g), budget)).amax();
        if stats.stationarity <= tol {
            stats.converged = true;
            break;
        }
        // Backtrack along the projection arc.
        let mut accepted = false;
        for _ in 0..60 {
            let trial = project_design(&(&z - step * &g), budget);
            let ft = value(&trial);
            let decrease = g.dot(&(&trial - &z));
            if ft <= fz + 1e-4 * decrease && ft.is_finite() {
                z = trial;
                fz = ft;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // Line search stalled at numerical resolution.
            stats.converged = stats.stationarity <= tol.max(1e-7);
            break;
        }
        step = (step * 2.0).min(1e6);
    }
    (z, fz, stats)
}

/// Result of the binary design search for one budget.
#[derive(Debug, Clone)]
pub struct DesignResult {
    /// Binary weights, exactly 0 or 1, with at most `m0` ones.
    pub weights: DVector<f64>,
    /// Optimum of the relaxed problem; a lower bound certificate.
    pub relaxed: DVector<f64>,
    pub objective_binary: f64,
    pub objective_relaxed: f64,
    pub n_dominant: usize,
    pub n_redundant: usize,
    /// Continuation stages actually run (0 when the relaxed optimum was
    /// already binary).
    pub stages: usize,
    pub final_p: f64,
    /// True when the continuation bottomed out and the design was rounded
    /// by keeping the largest weights.
    pub forced_rounding: bool,
}

impl DesignResult {
    /// Indices of the selected sensors.
    pub fn selected(&self) -> Vec<usize> {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.5)
            .map(|(k, _)| k)
            .collect()
    }
}

/// Globally solve the relaxed problem for budget `m0`.
pub fn solve_relaxed(
    factor: &LowRankFactor,
    m0: usize,
    cfg: &DesignConfig,
) -> Result<(DVector<f64>, f64, SolveStats)> {
    let m = factor.n_sensors();
    if m0 == 0 || m0 > m {
        return Err(Error::Parameter(format!("budget {m0} must lie in 1..={m}")));
    }
    let budget = m0 as f64;
    let z0 = DVector::from_element(m, budget / m as f64);
    let (w, j, stats) = minimize_projected(
        |w| objective(factor, w),
        |w| gradient(factor, w),
        z0,
        budget,
        cfg.gradient_tol,
        cfg.max_iterations,
    );
    Ok((w, j, stats))
}

fn is_binary(w: &DVector<f64>, tol: f64) -> bool {
    w.iter().all(|&v| v <= tol || v >= 1.0 - tol)
}

/// Round to exactly min(m0, #positive) ones, largest weights first; ties
/// break toward the lower index.
fn round_largest(w: &DVector<f64>, m0: usize) -> DVector<f64> {
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&a, &b| w[b].partial_cmp(&w[a]).unwrap().then(a.cmp(&b)));
    let mut out = DVector::zeros(w.len());
    for &k in order.iter().take(m0) {
        if w[k] > 0.0 {
            out[k] = 1.0;
        }
    }
    out
}

/// Polish a binary design: fill unused budget when that helps, then apply
/// the best single sensor swap until no swap improves the objective. The
/// returned objective never exceeds `objective(factor, &w)`.
pub fn exchange_refine(factor: &LowRankFactor, mut w: DVector<f64>, m0: usize) -> (DVector<f64>, f64) {
    let m = w.len();
    let mut j = objective(factor, &w);

    // Adding a sensor never increases the objective; use spare budget on
    // the best additions.
    while w.iter().filter(|&&v| v == 1.0).count() < m0 {
        let mut best: Option<(usize, f64)> = None;
        for k in 0..m {
            if w[k] == 0.0 {
                w[k] = 1.0;
                let jt = objective(factor, &w);
                w[k] = 0.0;
                if best.as_ref().is_none_or(|&(_, bj)| jt < bj) {
                    best = Some((k, jt));
                }
            }
        }
        match best {
            Some((k, jt)) if jt < j - 1e-15 => {
                w[k] = 1.0;
                j = jt;
            }
            _ => break,
        }
    }

    for _pass in 0..50 {
        let selected: Vec<usize> = (0..m).filter(|&k| w[k] == 1.0).collect();
        let unselected: Vec<usize> = (0..m).filter(|&k| w[k] == 0.0).collect();
        let mut best: Option<(usize, usize, f64)> = None;
        for &i in &selected {
            for &k in &unselected {
                w[i] = 0.0;
                w[k] = 1.0;
                let jt = objective(factor, &w);
                w[i] = 1.0;
                w[k] = 0.0;
                if jt < j - 1e-13 && best.as_ref().is_none_or(|&(_, _, bj)| jt < bj) {
                    best = Some((i, k, jt));
                }
            }
        }
        match best {
            Some((i, k, jt)) => {
                w[i] = 0.0;
                w[k] = 1.0;
                j = jt;
            }
            None => break,
        }
    }
    (w, j)
}

/// Compute a binary design with at most `m0` sensors.
///
/// Solves the relaxed problem, pins the decided weights, runs the
/// shrinking-exponent continuation until the iterate is binary or the
/// exponent floor is reached (in which case the result is rounded and
/// flagged), and finally polishes the selection with greedy sensor swaps.
pub fn optimize_design(factor: &LowRankFactor, m0: usize, cfg: &DesignConfig) -> Result<DesignResult> {
    let m = factor.n_sensors();
    let (relaxed, objective_relaxed, _) = solve_relaxed(factor, m0, cfg)?;
    let classes = classify(&relaxed, cfg.classification_tol);
    let pins = Pinned::from_classes(m, &classes, m0 as f64);

    let mut w = relaxed.clone();
    let mut p = 1.0;
    let mut stages = 0;
    let mut forced_rounding = false;

    while !is_binary(&w, cfg.binariness_tol) {
        if p <= cfg.p_min {
            forced_rounding = true;
            break;
        }
        p *= 1.0 - cfg.continuation_shrink;
        stages += 1;
        let z0 = pins.restrict(&w.map(|v| v.powf(p)));
        let (zf, _, _) = minimize_projected(
            |zf| objective_p(factor, &pins.expand(zf), p),
            |zf| pins.restrict(&gradient_p(factor, &pins.expand(zf), p)),
            z0,
            pins.free_budget,
            cfg.gradient_tol,
            cfg.max_iterations,
        );
        w = pins.expand(&zf).map(|v| v.powf(1.0 / p));
        // Pinned coordinates are exact by construction.
        for &k in &classes.dominant {
            w[k] = 1.0;
        }
    }

    let (weights, objective_binary) = exchange_refine(factor, round_largest(&w, m0), m0);
    Ok(DesignResult {
        weights,
        relaxed,
        objective_binary,
        objective_relaxed,
        n_dominant: classes.dominant.len(),
        n_redundant: classes.redundant.len(),
        stages,
        final_p: p,
        forced_rounding,
    })
}

/// Brute-force best binary design with at most `m0` ones; exponential in
/// the number of sensors, for oracle tests only.
pub fn exhaustive_best(factor: &LowRankFactor, m0: usize) -> (Vec<usize>, f64) {
    let m = factor.n_sensors();
    assert!(m <= 20, "exhaustive search is exponential");
    let mut best = (Vec::new(), f64::INFINITY);
    for mask in 0u32..(1 << m) {
        if mask.count_ones() as usize > m0 {
            continue;
        }
        let w = DVector::from_fn(m, |k, _| if mask >> k & 1 == 1 { 1.0 } else { 0.0 });
        let j = objective(factor, &w);
        if j < best.1 {
            best = ((0..m).filter(|k| mask >> k & 1 == 1).collect(), j);
        }
    }
    best
}
