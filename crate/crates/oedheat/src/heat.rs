//! Implicit-Euler heat solver and its exact discrete adjoint.
//!
//! The forward map takes a time-independent source on the source dofs,
//! integrates the heat equation with homogeneous Neumann walls from a cold
//! start, and reads the final temperature at the sensors. The adjoint is the
//! exact matrix transpose of that composite map, realised by running the
//! step recurrence in reverse, so the inner-product identity
//! `<F s, g> = <s, F' g>` holds to machine precision.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::assembly::FemOperators;
use crate::error::{Error, Result};

/// Uniform time grid on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub dt: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    /// Grid with step `dt` covering `[0, t_final]`; `dt` must divide
    /// `t_final` to within roundoff.
    pub fn new(dt: f64, t_final: f64) -> Result<Self> {
        if dt <= 0.0 || t_final <= 0.0 {
            return Err(Error::Parameter(format!(
                "time grid needs positive dt and t_final, got dt={dt}, t_final={t_final}"
            )));
        }
        let n = (t_final / dt).round();
        if n < 1.0 || ((n * dt - t_final) / t_final).abs() > 1e-9 {
            return Err(Error::Parameter(format!(
                "dt={dt} does not divide t_final={t_final}"
            )));
        }
        Ok(TimeGrid {
            dt,
            n_steps: n as usize,
        })
    }

    pub fn t_final(&self) -> f64 {
        self.dt * self.n_steps as f64
    }
}

/// Factorized stepping operator for one mesh and one time grid.
///
/// Holds a single Cholesky factorization of `M + dt K`, reused by every
/// forward and adjoint application.
pub struct HeatWorkspace {
    pub ops: Arc<FemOperators>,
    pub grid: TimeGrid,
    chol: Cholesky<f64, Dyn>,
}

impl HeatWorkspace {
    pub fn new(ops: Arc<FemOperators>, grid: TimeGrid) -> Result<Self> {
        let system = &ops.mass + grid.dt * &ops.stiffness;
        let chol = Cholesky::new(system)
            .ok_or_else(|| Error::Solve("M + dt K is not positive definite".into()))?;
        Ok(HeatWorkspace { ops, grid, chol })
    }

    /// Final temperature on the full mesh for a source-space vector.
    pub fn final_state(&self, source: &DVector<f64>) -> DVector<f64> {
        let load = self.grid.dt * (&self.ops.mass * self.ops.extend_source(source));
        let mut u = DVector::zeros(self.ops.n_full());
        for _ in 0..self.grid.n_steps {
            let rhs = &self.ops.mass * &u + &load;
            u = self.chol.solve(&rhs);
        }
        u
    }

    /// Final temperatures for several sources at once (one per column).
    pub fn final_state_block(&self, sources: &DMatrix<f64>) -> DMatrix<f64> {
        let load = self.grid.dt * (&self.ops.mass * self.ops.extend_source_block(sources));
        let mut u = DMatrix::zeros(self.ops.n_full(), sources.ncols());
        for _ in 0..self.grid.n_steps {
            let rhs = &self.ops.mass * &u + &load;
            u = self.chol.solve(&rhs);
        }
        u
    }

    /// Sensor readings of the final state: the parameter-to-observable map.
    pub fn apply_forward(&self, source: &DVector<f64>) -> DVector<f64> {
        &self.ops.observation * self.final_state(source)
    }

    pub fn apply_forward_block(&self, sources: &DMatrix<f64>) -> DMatrix<f64> {
        &self.ops.observation * self.final_state_block(sources)
    }

    /// Transpose of [`apply_forward`](Self::apply_forward): sensor weights to
    /// a source-space vector, via the reversed step recurrence.
    pub fn apply_adjoint(&self, weights: &DVector<f64>) -> DVector<f64> {
        let mut v = self.ops.observation.transpose() * weights;
        let mut acc = DVector::zeros(self.ops.n_full());
        for _ in 0..self.grid.n_steps {
            let p = self.chol.solve(&v);
            let mp = &self.ops.mass * p;
            acc += self.grid.dt * &mp;
            v = mp;
        }
        self.ops.restrict_source(&acc)
    }

    pub fn apply_adjoint_block(&self, weights: &DMatrix<f64>) -> DMatrix<f64> {
        let mut v = self.ops.observation.transpose() * weights;
        let mut acc = DMatrix::zeros(self.ops.n_full(), weights.ncols());
        for _ in 0..self.grid.n_steps {
            let p = self.chol.solve(&v);
            let mp = &self.ops.mass * p;
            acc += self.grid.dt * &mp;
            v = mp;
        }
        self.ops.restrict_source_block(&acc)
    }

    /// Dense forward map, built column by column. Intended for small
    /// problems and oracle tests; cost is one multi-column solve sweep.
    pub fn materialize_forward(&self) -> DMatrix<f64> {
        let eye = DMatrix::identity(self.ops.n_source(), self.ops.n_source());
        self.apply_forward_block(&eye)
    }

    /// Dense forward map via one adjoint sweep on all sensor indicators;
    /// cheaper than [`materialize_forward`](Self::materialize_forward) when
    /// there are fewer sensors than source dofs.
    pub fn materialize_forward_via_adjoint(&self) -> DMatrix<f64> {
        let eye = DMatrix::identity(self.ops.n_sensors(), self.ops.n_sensors());
        self.apply_adjoint_block(&eye).transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::CoefficientQuadrature;
    use crate::mesh::{build_mesh, DomainSpec, Rect};
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn workspace(h: f64, dt: f64, source_whole: bool) -> HeatWorkspace {
        let spec = DomainSpec {
            bounds: Rect::new(-1.0, -1.0, 1.0, 1.0),
            holes: vec![],
            source_region: if source_whole {
                Rect::new(-1.0, -1.0, 1.0, 1.0)
            } else {
                Rect::new(-1.0, -1.0, -0.5, 1.0)
            },
            sensors: vec![],
            mesh_size: h,
        };
        let mesh = build_mesh(&spec).unwrap();
        let sensors = [[0.3, 0.3], [-0.2, 0.6], [0.55, -0.35], [0.0, 0.0]];
        let ops = FemOperators::new(mesh, &sensors, CoefficientQuadrature::EdgeMidpoints).unwrap();
        HeatWorkspace::new(Arc::new(ops), TimeGrid::new(dt, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn time_grid_divisibility() {
        let g = TimeGrid::new(0.1, 1.0).unwrap();
        assert_eq!(g.n_steps, 10);
        assert_relative_eq!(g.t_final(), 1.0);
        assert!(TimeGrid::new(0.3, 1.0).is_err());
        assert!(TimeGrid::new(-0.1, 1.0).is_err());
    }

    #[test]
    fn zero_source_stays_cold() {
        let ws = workspace(0.25, 0.25, false);
        let s = DVector::zeros(ws.ops.n_source());
        assert_eq!(ws.final_state(&s).amax(), 0.0);
        assert_eq!(ws.apply_forward(&s).amax(), 0.0);
    }

    #[test]
    fn constant_source_heats_linearly_in_time() {
        // With the source region covering the room and K 1 = 0, the discrete
        // solution is exactly u^k = c k dt.
        let ws = workspace(0.25, 0.125, true);
        let c = 2.75;
        let s = DVector::from_element(ws.ops.n_source(), c);
        let u = ws.final_state(&s);
        for &ui in u.iter() {
            assert_relative_eq!(ui, c * 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn adjoint_matches_forward_inner_product() {
        let ws = workspace(0.2, 0.1, false);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let s = DVector::from_fn(ws.ops.n_source(), |_, _| rng.gen::<f64>() - 0.5);
            let g = DVector::from_fn(ws.ops.n_sensors(), |_, _| rng.gen::<f64>() - 0.5);
            let lhs = ws.apply_forward(&s).dot(&g);
            let rhs = s.dot(&ws.apply_adjoint(&g));
            assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
        }
    }

    #[test]
    fn single_step_matches_dense_formula() {
        // One implicit step: F = dt O (M + dt K)^{-1} M E_S.
        let ws = workspace(0.3, 1.0, false);
        let ops = &ws.ops;
        let system = &ops.mass + 1.0 * &ops.stiffness;
        let inv = system.clone().try_inverse().unwrap();
        let ext = {
            let mut e = DMatrix::zeros(ops.n_full(), ops.n_source());
            for (i, &v) in ops.mesh.source_vertices.iter().enumerate() {
                e[(v, i)] = 1.0;
            }
            e
        };
        let dense = 1.0 * &ops.observation * &inv * &ops.mass * &ext;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = DVector::from_fn(ops.n_source(), |_, _| rng.gen::<f64>());
        assert_relative_eq!((ws.apply_forward(&s) - &dense * &s).amax(), 0.0, epsilon = 1e-11);
        let g = DVector::from_fn(ops.n_sensors(), |_, _| rng.gen::<f64>());
        assert_relative_eq!(
            (ws.apply_adjoint(&g) - dense.transpose() * &g).amax(),
            0.0,
            epsilon = 1e-11
        );
    }

    #[test]
    fn forward_is_linear() {
        let ws = workspace(0.25, 0.2, false);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s1 = DVector::from_fn(ws.ops.n_source(), |_, _| rng.gen::<f64>());
        let s2 = DVector::from_fn(ws.ops.n_source(), |_, _| rng.gen::<f64>());
        let combo = ws.apply_forward(&(2.0 * &s1 - 3.0 * &s2));
        let parts = 2.0 * ws.apply_forward(&s1) - 3.0 * ws.apply_forward(&s2);
        assert_relative_eq!((combo - parts).amax(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn block_solvers_match_single_column() {
        let ws = workspace(0.3, 0.25, false);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let block = DMatrix::from_fn(ws.ops.n_source(), 3, |_, _| rng.gen::<f64>());
        let fwd = ws.apply_forward_block(&block);
        for j in 0..3 {
            let col = DVector::from_column_slice(block.column(j).as_slice());
            assert_relative_eq!((fwd.column(j) - ws.apply_forward(&col)).amax(), 0.0, epsilon = 1e-12);
        }
        let gblock = DMatrix::from_fn(ws.ops.n_sensors(), 2, |_, _| rng.gen::<f64>());
        let adj = ws.apply_adjoint_block(&gblock);
        for j in 0..2 {
            let col = DVector::from_column_slice(gblock.column(j).as_slice());
            assert_relative_eq!((adj.column(j) - ws.apply_adjoint(&col)).amax(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn dense_materializations_agree() {
        let ws = workspace(0.3, 0.5, false);
        let a = ws.materialize_forward();
        let b = ws.materialize_forward_via_adjoint();
        assert_relative_eq!((&a - &b).amax(), 0.0, epsilon = 1e-12);
        assert_eq!(a.nrows(), ws.ops.n_sensors());
        assert_eq!(a.ncols(), ws.ops.n_source());
    }
}
