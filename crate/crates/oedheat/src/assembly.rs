//! Piecewise-linear finite element operators on a triangulation.
//!
//! Assembles the consistent and lumped mass matrices, the stiffness matrix
//! with a spatially varying conductivity, the point-observation matrix and
//! the source-space operators (mass, unit-coefficient stiffness, boundary
//! mass) used by the prior.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mesh::{self, Mesh, Point};

/// Thermal conductivity of the room: `1 + (5 y^5 + y^3)` on the upper half,
/// `1` on the lower half.
pub fn thermal_conductivity(p: Point) -> f64 {
    let y = p[1];
    if y >= 0.0 {
        1.0 + 5.0 * y.powi(5) + y.powi(3)
    } else {
        1.0
    }
}

/// Quadrature rule for the conductivity integral per element.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoefficientQuadrature {
    /// One-point rule at the centroid.
    Centroid,
    /// Three-point rule at the edge midpoints (exact for quadratics).
    EdgeMidpoints,
}

/// Assembled operators for one mesh.
///
/// Full-mesh operators act on all vertices; source operators act on the
/// source dofs (`mesh.source_vertices`) only.
#[derive(Debug, Clone)]
pub struct FemOperators {
    pub mesh: Mesh,
    /// Consistent mass matrix on the full mesh.
    pub mass: DMatrix<f64>,
    /// Row-sum lumped mass on the full mesh.
    pub mass_lumped: DVector<f64>,
    /// Stiffness matrix with the variable conductivity.
    pub stiffness: DMatrix<f64>,
    /// Consistent mass matrix on the source dofs.
    pub source_mass: DMatrix<f64>,
    /// Row-sum lumped source mass.
    pub source_mass_lumped: DVector<f64>,
    /// Unit-coefficient stiffness on the source dofs.
    pub source_stiffness: DMatrix<f64>,
    /// Boundary mass matrix of the source submesh.
    pub source_boundary_mass: DMatrix<f64>,
    /// Point observation matrix, one barycentric row per sensor.
    pub observation: DMatrix<f64>,
}

impl FemOperators {
    /// Assemble with the built-in conductivity.
    pub fn new(mesh: Mesh, sensors: &[Point], quad: CoefficientQuadrature) -> Result<Self> {
        Self::with_coefficient(mesh, sensors, quad, thermal_conductivity)
    }

    /// Assemble with a caller-supplied conductivity.
    pub fn with_coefficient(
        mesh: Mesh,
        sensors: &[Point],
        quad: CoefficientQuadrature,
        coefficient: impl Fn(Point) -> f64,
    ) -> Result<Self> {
        let n = mesh.n_vertices();
        let mut mass = DMatrix::zeros(n, n);
        let mut stiffness = DMatrix::zeros(n, n);

        for tri in &mesh.triangles {
            let pts = tri.map(|v| mesh.vertices[v]);
            let area = mesh::signed_area(pts[0], pts[1], pts[2]);
            if area <= 0.0 {
                return Err(Error::Assembly("non-positive triangle area".into()));
            }
            let me = element_mass(area);
            let a_bar = mean_coefficient(&pts, quad, &coefficient);
            let ke = element_stiffness(&pts, area);
            for i in 0..3 {
                for j in 0..3 {
                    mass[(tri[i], tri[j])] += me[i][j];
                    stiffness[(tri[i], tri[j])] += a_bar * ke[i][j];
                }
            }
        }
        let mass_lumped = DVector::from_iterator(n, (0..n).map(|i| mass.row(i).sum()));

        // Source-space operators, assembled over the source submesh.
        let index = mesh.source_index();
        let ns = mesh.n_source();
        let mut source_mass = DMatrix::zeros(ns, ns);
        let mut source_stiffness = DMatrix::zeros(ns, ns);
        for &t in &mesh.source_triangles {
            let tri = mesh.triangles[t];
            let loc = tri.map(|v| index[&v]);
            let pts = tri.map(|v| mesh.vertices[v]);
            let area = mesh::signed_area(pts[0], pts[1], pts[2]);
            let me = element_mass(area);
            let ke = element_stiffness(&pts, area);
            for i in 0..3 {
                for j in 0..3 {
                    source_mass[(loc[i], loc[j])] += me[i][j];
                    source_stiffness[(loc[i], loc[j])] += ke[i][j];
                }
            }
        }
        let source_mass_lumped = DVector::from_iterator(ns, (0..ns).map(|i| source_mass.row(i).sum()));

        let mut source_boundary_mass = DMatrix::zeros(ns, ns);
        for [a, b] in mesh::source_boundary_edges(&mesh) {
            let pa = mesh.vertices[mesh.source_vertices[a]];
            let pb = mesh.vertices[mesh.source_vertices[b]];
            let len = ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt();
            source_boundary_mass[(a, a)] += len / 3.0;
            source_boundary_mass[(b, b)] += len / 3.0;
            source_boundary_mass[(a, b)] += len / 6.0;
            source_boundary_mass[(b, a)] += len / 6.0;
        }

        let observation = observation_matrix(&mesh, sensors)?;

        Ok(FemOperators {
            mesh,
            mass,
            mass_lumped,
            stiffness,
            source_mass,
            source_mass_lumped,
            source_stiffness,
            source_boundary_mass,
            observation,
        })
    }

    pub fn n_full(&self) -> usize {
        self.mesh.n_vertices()
    }

    pub fn n_source(&self) -> usize {
        self.mesh.n_source()
    }

    pub fn n_sensors(&self) -> usize {
        self.observation.nrows()
    }

    /// Zero-extend a source-space vector to the full mesh.
    pub fn extend_source(&self, s: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_full());
        for (i, &v) in self.mesh.source_vertices.iter().enumerate() {
            out[v] = s[i];
        }
        out
    }

    /// Restrict a full-mesh vector to the source dofs (transpose of
    /// [`extend_source`](Self::extend_source)).
    pub fn restrict_source(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.n_source(), self.mesh.source_vertices.iter().map(|&v| u[v]))
    }

    /// Column-block variants used by the multi-vector solvers.
    pub fn extend_source_block(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n_full(), s.ncols());
        for (i, &v) in self.mesh.source_vertices.iter().enumerate() {
            out.row_mut(v).copy_from(&s.row(i));
        }
        out
    }

    pub fn restrict_source_block(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n_source(), u.ncols());
        for (i, &v) in self.mesh.source_vertices.iter().enumerate() {
            out.row_mut(i).copy_from(&u.row(v));
        }
        out
    }

    /// Interpolate a function into the source space by vertex evaluation.
    pub fn interpolate_source(&self, f: impl Fn(Point) -> f64) -> DVector<f64> {
        DVector::from_iterator(
            self.n_source(),
            self.mesh.source_vertices.iter().map(|&v| f(self.mesh.vertices[v])),
        )
    }
}

fn element_mass(area: f64) -> [[f64; 3]; 3] {
    let d = area / 6.0;
    let o = area / 12.0;
    [[d, o, o], [o, d, o], [o, o, d]]
}

/// Unit-coefficient element stiffness, `area * grad(phi_i) . grad(phi_j)`.
fn element_stiffness(pts: &[Point; 3], area: f64) -> [[f64; 3]; 3] {
    // Gradient of the hat function at vertex i is the rotated opposite edge
    // over twice the area.
    let mut g = [[0.0f64; 2]; 3];
    for i in 0..3 {
        let b = pts[(i + 1) % 3];
        let c = pts[(i + 2) % 3];
        g[i] = [(b[1] - c[1]) / (2.0 * area), (c[0] - b[0]) / (2.0 * area)];
    }
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = area * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
        }
    }
    k
}

/// Quadrature mean of the coefficient over one element.
fn mean_coefficient(pts: &[Point; 3], quad: CoefficientQuadrature, coefficient: &impl Fn(Point) -> f64) -> f64 {
    match quad {
        CoefficientQuadrature::Centroid => coefficient([
            (pts[0][0] + pts[1][0] + pts[2][0]) / 3.0,
            (pts[0][1] + pts[1][1] + pts[2][1]) / 3.0,
        ]),
        CoefficientQuadrature::EdgeMidpoints => {
            let mut s = 0.0;
            for i in 0..3 {
                let a = pts[i];
                let b = pts[(i + 1) % 3];
                s += coefficient([(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0]);
            }
            s / 3.0
        }
    }
}

/// One barycentric row per sensor; errors if a sensor misses the mesh.
pub fn observation_matrix(mesh: &Mesh, sensors: &[Point]) -> Result<DMatrix<f64>> {
    let mut obs = DMatrix::zeros(sensors.len(), mesh.n_vertices());
    for (k, s) in sensors.iter().enumerate() {
        let (t, lam) = mesh
            .locate_point(*s)
            .ok_or(Error::PointOutsideMesh(s[0], s[1]))?;
        let tri = mesh.triangles[t];
        for i in 0..3 {
            obs[(k, tri[i])] += lam[i];
        }
    }
    Ok(obs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_mesh, DomainSpec, Hole, Rect};
    use approx::assert_relative_eq;

    fn reference_triangle_mesh() -> Mesh {
        Mesh {
            vertices: vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            triangles: vec![[0, 1, 2]],
            boundary_edges: vec![],
            source_triangles: vec![0],
            source_vertices: vec![0, 1, 2],
        }
    }

    fn square_spec(h: f64) -> DomainSpec {
        DomainSpec {
            bounds: Rect::new(-1.0, -1.0, 1.0, 1.0),
            holes: vec![],
            source_region: Rect::new(-1.0, -1.0, -0.5, 1.0),
            sensors: vec![],
            mesh_size: h,
        }
    }

    #[test]
    fn conductivity_matches_reference_values() {
        assert_relative_eq!(thermal_conductivity([0.3, -0.5]), 1.0);
        assert_relative_eq!(thermal_conductivity([0.0, 1.0]), 7.0);
        assert_relative_eq!(thermal_conductivity([0.2, 0.5]), 1.28125);
    }

    #[test]
    fn reference_element_stiffness() {
        let ops = FemOperators::with_coefficient(
            reference_triangle_mesh(),
            &[],
            CoefficientQuadrature::Centroid,
            |_| 1.0,
        )
        .unwrap();
        let expect = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(ops.stiffness[(i, j)], expect[i][j], epsilon = 1e-14);
            }
        }
        // Reference element mass: area/12 * (ones + I).
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 / 12.0 } else { 1.0 / 24.0 };
                assert_relative_eq!(ops.mass[(i, j)], e, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn mass_row_sums_give_area() {
        let mesh = build_mesh(&square_spec(0.23)).unwrap();
        let ops = FemOperators::new(mesh, &[], CoefficientQuadrature::EdgeMidpoints).unwrap();
        let ones = DVector::from_element(ops.n_full(), 1.0);
        let total = (&ops.mass * &ones).dot(&ones);
        assert_relative_eq!(total, 4.0, epsilon = 1e-10);
        assert_relative_eq!(ops.mass_lumped.sum(), 4.0, epsilon = 1e-10);

        let ones_s = DVector::from_element(ops.n_source(), 1.0);
        let src_area = (&ops.source_mass * &ones_s).dot(&ones_s);
        assert_relative_eq!(ops.source_mass_lumped.sum(), src_area, epsilon = 1e-12);
        assert!(src_area > 0.0 && src_area < 4.0);
    }

    #[test]
    fn stiffness_annihilates_constants() {
        let spec = DomainSpec {
            holes: vec![Hole::new(0.5, 0.2, 0.15)],
            ..square_spec(0.11)
        };
        let mesh = build_mesh(&spec).unwrap();
        let ops = FemOperators::new(mesh, &[], CoefficientQuadrature::EdgeMidpoints).unwrap();
        let ones = DVector::from_element(ops.n_full(), 1.0);
        let r = &ops.stiffness * &ones;
        assert!(r.amax() < 1e-12, "K 1 = {}", r.amax());
        let ones_s = DVector::from_element(ops.n_source(), 1.0);
        let rs = &ops.source_stiffness * &ones_s;
        assert!(rs.amax() < 1e-12);
        // Symmetry.
        let asym = (&ops.stiffness - ops.stiffness.transpose()).amax();
        assert!(asym < 1e-13);
    }

    #[test]
    fn observation_is_exact_on_linears() {
        let mesh = build_mesh(&square_spec(0.19)).unwrap();
        let sensors = [[0.13, 0.41], [-0.72, 0.05], [0.9, -0.9]];
        let ops = FemOperators::new(mesh, &sensors, CoefficientQuadrature::Centroid).unwrap();
        let lin = |p: [f64; 2]| 0.7 * p[0] - 1.3 * p[1] + 0.25;
        let u = DVector::from_iterator(
            ops.n_full(),
            ops.mesh.vertices.iter().map(|&v| lin(v)),
        );
        let g = &ops.observation * &u;
        for (k, s) in sensors.iter().enumerate() {
            assert_relative_eq!(g[k], lin(*s), epsilon = 1e-12);
        }
        // Rows are convex weights.
        for k in 0..3 {
            assert_relative_eq!(ops.observation.row(k).sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn observation_outside_mesh_is_an_error() {
        let mesh = build_mesh(&square_spec(0.5)).unwrap();
        let err = observation_matrix(&mesh, &[[3.0, 0.0]]).unwrap_err();
        assert!(matches!(err, Error::PointOutsideMesh(_, _)));
    }

    #[test]
    fn boundary_mass_integrates_perimeter() {
        let mesh = build_mesh(&square_spec(0.25)).unwrap();
        let ops = FemOperators::new(mesh, &[], CoefficientQuadrature::Centroid).unwrap();
        let ones = DVector::from_element(ops.n_source(), 1.0);
        let perim = (&ops.source_boundary_mass * &ones).dot(&ones);
        // Source region is [-1,-0.5] x [-1,1]: perimeter 5.
        assert_relative_eq!(perim, 5.0, epsilon = 1e-10);
    }

    #[test]
    fn extend_restrict_are_transposes() {
        let mesh = build_mesh(&square_spec(0.3)).unwrap();
        let ops = FemOperators::new(mesh, &[], CoefficientQuadrature::Centroid).unwrap();
        let s = DVector::from_fn(ops.n_source(), |i, _| (i as f64 * 0.37).sin());
        let u = DVector::from_fn(ops.n_full(), |i, _| (i as f64 * 0.11).cos());
        let lhs = ops.extend_source(&s).dot(&u);
        let rhs = s.dot(&ops.restrict_source(&u));
        assert_relative_eq!(lhs, rhs, epsilon = 1e-13);
        // Round trip restrict(extend(s)) = s.
        let rt = ops.restrict_source(&ops.extend_source(&s));
        assert_relative_eq!((rt - &s).amax(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn block_variants_match_vector_variants() {
        let mesh = build_mesh(&square_spec(0.4)).unwrap();
        let ops = FemOperators::new(mesh, &[], CoefficientQuadrature::Centroid).unwrap();
        let s = DMatrix::from_fn(ops.n_source(), 3, |i, j| (i as f64 + 0.3 * j as f64).sin());
        let ext = ops.extend_source_block(&s);
        for j in 0..3 {
            let col = DVector::from_column_slice(s.column(j).as_slice());
            let e = ops.extend_source(&col);
            assert_relative_eq!((ext.column(j) - e).amax(), 0.0, epsilon = 1e-15);
        }
        let back = ops.restrict_source_block(&ext);
        assert_relative_eq!((&back - &s).amax(), 0.0, epsilon = 1e-15);
    }
}
