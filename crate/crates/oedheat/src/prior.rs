//! Gaussian smoothness prior on the source subdomain.
//!
//! The prior covariance is the squared inverse of the elliptic operator
//! `-alpha Lap + I` with a Robin boundary condition on the source patch;
//! the Robin coefficient `sqrt(alpha) / robin_divisor` damps the variance
//! inflation that a pure Neumann condition produces along the patch
//! boundary. Discretely the precision root is
//! `K = alpha K1 + M + alpha beta B` (stiffness, mass, boundary mass).
//!
//! Two realizations of the covariance coexist:
//! * the consistent-mass form `C0 = (K^{-1} M)^2`, natural for samples seen
//!   as functions, and
//! * the lumped form built from `L = D^{1/2} K^{-1} D^{1/2}` with `D` the
//!   lumped mass, whose square is exactly the covariance of the sampler in
//!   the mass-weighted frame. The design criterion uses the lumped form
//!   because `L` is symmetric, which makes low-rank trace identities exact.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::assembly::FemOperators;
use crate::error::{Error, Result};

pub struct BilaplacianPrior {
    pub ops: Arc<FemOperators>,
    pub alpha: f64,
    /// Robin coefficient `beta = sqrt(alpha) / robin_divisor`.
    pub beta: f64,
    precision_root: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    /// Square root of the lumped source mass.
    d_half: DVector<f64>,
}

impl BilaplacianPrior {
    pub fn new(ops: Arc<FemOperators>, alpha: f64, robin_divisor: f64) -> Result<Self> {
        if alpha <= 0.0 {
            return Err(Error::Parameter(format!("prior alpha must be positive, got {alpha}")));
        }
        if robin_divisor <= 0.0 {
            return Err(Error::Parameter(format!(
                "robin divisor must be positive, got {robin_divisor}"
            )));
        }
        let beta = alpha.sqrt() / robin_divisor;
        let precision_root =
            alpha * &ops.source_stiffness + &ops.source_mass + alpha * beta * &ops.source_boundary_mass;
        let chol = Cholesky::new(precision_root.clone())
            .ok_or_else(|| Error::Solve("prior operator is not positive definite".into()))?;
        let d_half = ops.source_mass_lumped.map(f64::sqrt);
        Ok(BilaplacianPrior {
            ops,
            alpha,
            beta,
            precision_root,
            chol,
            d_half,
        })
    }

    pub fn n(&self) -> usize {
        self.d_half.len()
    }

    /// The discrete elliptic operator `K`.
    pub fn precision_root_matrix(&self) -> &DMatrix<f64> {
        &self.precision_root
    }

    /// Square root of the lumped source mass, `D^{1/2}`.
    pub fn d_half(&self) -> &DVector<f64> {
        &self.d_half
    }

    /// `K^{-1} r`.
    pub fn solve_k(&self, r: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(r)
    }

    pub fn solve_k_block(&self, r: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(r)
    }

    /// Symmetric lumped covariance root `L x = D^{1/2} K^{-1} D^{1/2} x`.
    pub fn apply_l(&self, x: &DVector<f64>) -> DVector<f64> {
        let y = x.component_mul(&self.d_half);
        let z = self.chol.solve(&y);
        z.component_mul(&self.d_half)
    }

    pub fn apply_l_block(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x.clone();
        for (i, mut row) in y.row_iter_mut().enumerate() {
            row *= self.d_half[i];
        }
        let mut z = self.chol.solve(&y);
        for (i, mut row) in z.row_iter_mut().enumerate() {
            row *= self.d_half[i];
        }
        z
    }

    /// Dense `L`; small-problem helper for traces and oracles.
    pub fn dense_l(&self) -> DMatrix<f64> {
        self.apply_l_block(&DMatrix::identity(self.n(), self.n()))
    }

    /// Consistent-mass covariance root `K^{-1} M x`.
    pub fn apply_cov_sqrt(&self, x: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(&(&self.ops.source_mass * x))
    }

    /// Adjoint of [`apply_cov_sqrt`](Self::apply_cov_sqrt): `M K^{-1} x`.
    pub fn apply_cov_sqrt_t(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.ops.source_mass * self.chol.solve(x)
    }

    /// Consistent-mass covariance `(K^{-1} M)^2 x`.
    pub fn apply_cov(&self, x: &DVector<f64>) -> DVector<f64> {
        self.apply_cov_sqrt(&self.apply_cov_sqrt(x))
    }

    /// Precision of the sampled coefficients, `K D^{-1} K s`.
    pub fn apply_precision(&self, s: &DVector<f64>) -> DVector<f64> {
        let y = &self.precision_root * s;
        let z = y.component_div(&self.ops.source_mass_lumped);
        &self.precision_root * z
    }

    /// Dense precision `K D^{-1} K`, the inverse of [`covariance_dense`](Self::covariance_dense).
    pub fn precision_dense(&self) -> DMatrix<f64> {
        let mut kd = self.precision_root.clone();
        for (j, mut col) in kd.column_iter_mut().enumerate() {
            col /= self.ops.source_mass_lumped[j];
        }
        kd * &self.precision_root
    }

    /// Dense coefficient covariance `G = K^{-1} D K^{-1}`; matches the
    /// sampler exactly.
    pub fn covariance_dense(&self) -> DMatrix<f64> {
        let kinv = self.chol.solve(&DMatrix::identity(self.n(), self.n()));
        // (K^{-1} D) K^{-1} with D diagonal: scale columns, then multiply
        // by the (symmetric) inverse again.
        let mut scaled = kinv.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= self.ops.source_mass_lumped[j];
        }
        scaled * kinv
    }

    /// One draw of the prior: `s = K^{-1} D^{1/2} xi`, `xi` standard normal.
    pub fn sample(&self, rng: &mut impl Rng) -> DVector<f64> {
        let xi = DVector::from_fn(self.n(), |_, _| rng.sample::<f64, _>(StandardNormal));
        self.chol.solve(&xi.component_mul(&self.d_half))
    }

    /// Several independent draws, one per column. The generator is consumed
    /// column by column, so a block of `k` draws equals `k` single draws
    /// from the same generator state.
    pub fn sample_block(&self, rng: &mut impl Rng, count: usize) -> DMatrix<f64> {
        let mut xi = DMatrix::zeros(self.n(), count);
        for j in 0..count {
            for i in 0..self.n() {
                xi[(i, j)] = rng.sample::<f64, _>(StandardNormal) * self.d_half[i];
            }
        }
        self.chol.solve(&xi)
    }

    /// Trace of the lumped-frame covariance `L^2`; the constant term of the
    /// design criterion.
    pub fn trace_lumped(&self) -> f64 {
        // L symmetric, so tr(L^2) is its squared Frobenius norm.
        self.dense_l().iter().map(|v| v * v).sum()
    }

    /// Trace of the consistent-mass covariance `(K^{-1} M)^2`.
    pub fn trace_consistent(&self) -> f64 {
        let a = self.chol.solve(&self.ops.source_mass.clone());
        let mut t = 0.0;
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                t += a[(i, j)] * a[(j, i)];
            }
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::CoefficientQuadrature;
    use crate::mesh::{build_mesh, DomainSpec, Mesh, Rect};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_prior(h: f64, alpha: f64) -> BilaplacianPrior {
        let spec = DomainSpec {
            bounds: Rect::new(-1.0, -1.0, 1.0, 1.0),
            holes: vec![],
            source_region: Rect::new(-1.0, -1.0, -0.25, 1.0),
            sensors: vec![],
            mesh_size: h,
        };
        let mesh = build_mesh(&spec).unwrap();
        let ops = FemOperators::new(mesh, &[], CoefficientQuadrature::Centroid).unwrap();
        BilaplacianPrior::new(Arc::new(ops), alpha, 1.42).unwrap()
    }

    #[test]
    fn hand_assembled_operator_on_one_triangle() {
        let mesh = Mesh {
            vertices: vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            triangles: vec![[0, 1, 2]],
            boundary_edges: vec![],
            source_triangles: vec![0],
            source_vertices: vec![0, 1, 2],
        };
        let ops = FemOperators::with_coefficient(mesh, &[], CoefficientQuadrature::Centroid, |_| 1.0).unwrap();
        let alpha = 0.3;
        let prior = BilaplacianPrior::new(Arc::new(ops), alpha, 1.42).unwrap();
        let beta = alpha.sqrt() / 1.42;

        let k1 = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        let m = [
            [1.0 / 12.0, 1.0 / 24.0, 1.0 / 24.0],
            [1.0 / 24.0, 1.0 / 12.0, 1.0 / 24.0],
            [1.0 / 24.0, 1.0 / 24.0, 1.0 / 12.0],
        ];
        // Boundary: edges (0,1) len 1, (1,2) len sqrt 2, (2,0) len 1.
        let r2 = std::f64::consts::SQRT_2;
        let b = [
            [(1.0 + 1.0) / 3.0, 1.0 / 6.0, 1.0 / 6.0],
            [1.0 / 6.0, (1.0 + r2) / 3.0, r2 / 6.0],
            [1.0 / 6.0, r2 / 6.0, (r2 + 1.0) / 3.0],
        ];
        for i in 0..3 {
            for j in 0..3 {
                let expect = alpha * k1[i][j] + m[i][j] + alpha * beta * b[i][j];
                assert_relative_eq!(prior.precision_root_matrix()[(i, j)], expect, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn vanishing_alpha_gives_identity_covariance_root() {
        let prior = small_prior(0.25, 1e-12);
        let x = DVector::from_fn(prior.n(), |i, _| (0.83 * i as f64).sin());
        let y = prior.apply_cov_sqrt(&x);
        assert!((y - &x).amax() < 1e-8);
    }

    #[test]
    fn lumped_root_squares_to_covariance() {
        let prior = small_prior(0.3, 0.25);
        let g = prior.covariance_dense();
        let x = DVector::from_fn(prior.n(), |i, _| (0.31 * i as f64).cos());
        // L(Lx) should equal D^{1/2} G D^{1/2} x.
        let ll = prior.apply_l(&prior.apply_l(&x));
        let gx = {
            let y = x.component_mul(prior.d_half());
            let z = &g * y;
            z.component_mul(prior.d_half())
        };
        assert_relative_eq!((ll - gx).amax(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn precision_inverts_covariance() {
        let prior = small_prior(0.3, 0.25);
        let g = prior.covariance_dense();
        let p = prior.precision_dense();
        let eye = &g * &p;
        for i in 0..prior.n() {
            for j in 0..prior.n() {
                let e = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(eye[(i, j)], e, epsilon = 1e-9);
            }
        }
        let x = DVector::from_fn(prior.n(), |i, _| 1.0 / (1.0 + i as f64));
        let roundtrip = prior.apply_precision(&(&g * &x));
        assert_relative_eq!((roundtrip - &x).amax(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn traces_match_eigenvalue_sums() {
        let prior = small_prior(0.35, 0.25);
        let l = prior.dense_l();
        let asym = (&l - l.transpose()).amax();
        assert!(asym < 1e-12, "L must be symmetric, asym {asym}");
        let eig = l.clone().symmetric_eigen();
        let tr_sq: f64 = eig.eigenvalues.iter().map(|e| e * e).sum();
        assert_relative_eq!(prior.trace_lumped(), tr_sq, max_relative = 1e-10);
        // Positive spectrum.
        assert!(eig.eigenvalues.iter().all(|&e| e > 0.0));

        // Same trace through the sampler covariance: sum_i d_i G_ii.
        let g = prior.covariance_dense();
        let tr_g: f64 = (0..prior.n())
            .map(|i| prior.ops.source_mass_lumped[i] * g[(i, i)])
            .sum();
        assert_relative_eq!(prior.trace_lumped(), tr_g, max_relative = 1e-10);
    }

    #[test]
    fn consistent_covariance_is_mass_self_adjoint() {
        let prior = small_prior(0.35, 0.3);
        let n = prior.n();
        let mut cov = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            cov.set_column(j, &prior.apply_cov(&e));
        }
        let mcov = &prior.ops.source_mass * cov;
        assert!((&mcov - mcov.transpose()).amax() < 1e-12);
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let prior = small_prior(0.3, 0.25);
        let a = prior.sample(&mut ChaCha8Rng::seed_from_u64(42));
        let b = prior.sample(&mut ChaCha8Rng::seed_from_u64(42));
        let c = prior.sample(&mut ChaCha8Rng::seed_from_u64(43));
        assert_eq!(a, b);
        assert!((&a - &c).amax() > 0.0);
    }

    #[test]
    fn sample_covariance_matches_dense_covariance() {
        let prior = small_prior(0.4, 0.25);
        let n = prior.n();
        let g = prior.covariance_dense();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let draws = 20_000;
        let mut mean = DVector::zeros(n);
        let mut second = DMatrix::zeros(n, n);
        for _ in 0..draws / 500 {
            let block = prior.sample_block(&mut rng, 500);
            for col in block.column_iter() {
                mean += col;
                second += col * col.transpose();
            }
        }
        mean /= draws as f64;
        second /= draws as f64;
        let cov = second - &mean * mean.transpose();
        let scale = g.diagonal().max();
        // Monte Carlo agreement at 5 percent of the largest variance.
        assert!((&cov - &g).amax() < 0.05 * scale, "err {}", (&cov - &g).amax());
        assert!(mean.amax() < 0.05 * scale.sqrt());
    }

    #[test]
    fn block_sampling_matches_sequential_draws() {
        let prior = small_prior(0.4, 0.3);
        let block = prior.sample_block(&mut ChaCha8Rng::seed_from_u64(9), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for j in 0..3 {
            let single = prior.sample(&mut rng);
            assert_relative_eq!((block.column(j) - single).amax(), 0.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let spec = DomainSpec {
            bounds: Rect::new(0.0, 0.0, 1.0, 1.0),
            holes: vec![],
            source_region: Rect::new(0.0, 0.0, 1.0, 1.0),
            sensors: vec![],
            mesh_size: 0.5,
        };
        let mesh = build_mesh(&spec).unwrap();
        let ops = Arc::new(FemOperators::new(mesh, &[], CoefficientQuadrature::Centroid).unwrap());
        assert!(BilaplacianPrior::new(ops.clone(), -1.0, 1.42).is_err());
        assert!(BilaplacianPrior::new(ops, 0.25, 0.0).is_err());
    }
}
