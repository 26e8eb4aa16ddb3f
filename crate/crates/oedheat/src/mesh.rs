//! Triangular meshes of a rectangular room with circular obstacles.
//!
//! Meshes are produced by uniform refinement of a structured grid: each grid
//! cell is split into two triangles, triangles touching an obstacle are
//! dropped, and vertices close to an obstacle circle are snapped onto it.
//! The source subdomain is the union of all triangles whose vertices lie in
//! the configured source rectangle.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planar point, `[x, y]`.
pub type Point = [f64; 2];

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Rect { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Closed containment with a small tolerance against roundoff.
    pub fn contains(&self, p: Point) -> bool {
        let tol = 1e-12 * (self.width().abs() + self.height().abs()).max(1.0);
        p[0] >= self.x0 - tol && p[0] <= self.x1 + tol && p[1] >= self.y0 - tol && p[1] <= self.y1 + tol
    }
}

/// Circular obstacle removed from the domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hole {
    pub center: Point,
    pub radius: f64,
}

impl Hole {
    pub fn new(cx: f64, cy: f64, radius: f64) -> Self {
        Hole {
            center: [cx, cy],
            radius,
        }
    }

    fn dist(&self, p: Point) -> f64 {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        (dx * dx + dy * dy).sqrt()
    }

    fn contains(&self, p: Point) -> bool {
        self.dist(p) < self.radius
    }
}

/// Geometry of the room, the source subdomain and the candidate sensors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainSpec {
    pub bounds: Rect,
    pub holes: Vec<Hole>,
    /// Source subdomain; the mesh keeps the triangles fully contained here.
    pub source_region: Rect,
    /// Candidate sensor locations, inside the domain and away from the source.
    pub sensors: Vec<Point>,
    /// Target edge length of the structured grid.
    pub mesh_size: f64,
}

impl DomainSpec {
    /// Check the purely geometric invariants that do not need a mesh.
    pub fn validate(&self) -> Result<()> {
        if self.mesh_size <= 0.0 {
            return Err(Error::Geometry(format!(
                "mesh_size must be positive, got {}",
                self.mesh_size
            )));
        }
        if self.bounds.width() <= 0.0 || self.bounds.height() <= 0.0 {
            return Err(Error::Geometry("bounds rectangle is empty".into()));
        }
        if self.source_region.area() <= 0.0 {
            return Err(Error::Geometry("source region has zero area".into()));
        }
        for (i, h) in self.holes.iter().enumerate() {
            if h.radius <= 0.0 {
                return Err(Error::Geometry(format!("hole {i} has non-positive radius")));
            }
            let b = &self.bounds;
            if h.center[0] - h.radius <= b.x0
                || h.center[0] + h.radius >= b.x1
                || h.center[1] - h.radius <= b.y0
                || h.center[1] + h.radius >= b.y1
            {
                return Err(Error::Geometry(format!(
                    "hole {i} at ({}, {}) r={} is not strictly inside the bounds",
                    h.center[0], h.center[1], h.radius
                )));
            }
            if circle_meets_rect(h, &self.source_region) {
                return Err(Error::Geometry(format!("hole {i} intersects the source region")));
            }
            for (j, g) in self.holes.iter().enumerate().skip(i + 1) {
                let d = ((h.center[0] - g.center[0]).powi(2) + (h.center[1] - g.center[1]).powi(2)).sqrt();
                if d <= h.radius + g.radius {
                    return Err(Error::Geometry(format!("holes {i} and {j} overlap")));
                }
            }
        }
        for (k, s) in self.sensors.iter().enumerate() {
            if !self.bounds.contains(*s) {
                return Err(Error::Geometry(format!(
                    "sensor {k} at ({}, {}) lies outside the bounds",
                    s[0], s[1]
                )));
            }
            if self.source_region.contains(*s) {
                return Err(Error::Geometry(format!(
                    "sensor {k} at ({}, {}) lies inside the source region",
                    s[0], s[1]
                )));
            }
            for (i, h) in self.holes.iter().enumerate() {
                if h.contains(*s) {
                    return Err(Error::Geometry(format!(
                        "sensor {k} at ({}, {}) lies inside hole {i}",
                        s[0], s[1]
                    )));
                }
            }
        }
        Ok(())
    }
}

fn circle_meets_rect(h: &Hole, r: &Rect) -> bool {
    let cx = h.center[0].clamp(r.x0, r.x1);
    let cy = h.center[1].clamp(r.y0, r.y1);
    h.dist([cx, cy]) < h.radius
}

/// Boundary edge classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryTag {
    Exterior,
    Hole,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundaryEdge {
    pub vertices: [usize; 2],
    pub tag: BoundaryTag,
}

/// Immutable triangulation with a marked source submesh.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    /// Positively oriented vertex index triples.
    pub triangles: Vec<[usize; 3]>,
    pub boundary_edges: Vec<BoundaryEdge>,
    /// Triangle ids whose three vertices lie in the source region.
    pub source_triangles: Vec<usize>,
    /// Sorted vertex ids appearing in `source_triangles`; the source dofs.
    pub source_vertices: Vec<usize>,
}

impl Mesh {
    /// Number of vertices of the full mesh.
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    /// Number of source-space dofs.
    pub fn n_source(&self) -> usize {
        self.source_vertices.len()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        signed_area(self.vertices[a], self.vertices[b], self.vertices[c])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Locate a point: containing triangle and its barycentric coordinates.
    ///
    /// Returns `None` if the point lies outside every triangle. The
    /// coordinates are clamped to be nonnegative and sum to one.
    pub fn locate_point(&self, p: Point) -> Option<(usize, [f64; 3])> {
        const TOL: f64 = 1e-10;
        for (t, tri) in self.triangles.iter().enumerate() {
            let lam = barycentric(self.vertices[tri[0]], self.vertices[tri[1]], self.vertices[tri[2]], p);
            if lam.iter().all(|&l| l >= -TOL) {
                let mut lam = lam.map(|l| l.max(0.0));
                let s: f64 = lam.iter().sum();
                for l in lam.iter_mut() {
                    *l /= s;
                }
                return Some((t, lam));
            }
        }
        None
    }

    /// True if every vertex is reachable from vertex 0 through triangle edges.
    pub fn is_connected(&self) -> bool {
        if self.vertices.is_empty() {
            return false;
        }
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for tri in &self.triangles {
            for i in 0..3 {
                adj[tri[i]].push(tri[(i + 1) % 3]);
                adj[tri[i]].push(tri[(i + 2) % 3]);
            }
        }
        let mut seen = vec![false; self.vertices.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Map from global vertex id to source dof index, where defined.
    pub fn source_index(&self) -> HashMap<usize, usize> {
        self.source_vertices.iter().enumerate().map(|(i, &v)| (v, i)).collect()
    }

    pub fn write_vertices_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "id,x,y")?;
        for (i, v) in self.vertices.iter().enumerate() {
            writeln!(f, "{},{},{}", i, v[0], v[1])?;
        }
        Ok(())
    }

    pub fn write_triangles_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "id,v0,v1,v2")?;
        for (i, t) in self.triangles.iter().enumerate() {
            writeln!(f, "{},{},{},{}", i, t[0], t[1], t[2])?;
        }
        Ok(())
    }
}

pub fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

/// Barycentric coordinates of `p` in triangle `(a, b, c)`.
pub fn barycentric(a: Point, b: Point, c: Point, p: Point) -> [f64; 3] {
    let total = signed_area(a, b, c);
    let l0 = signed_area(p, b, c) / total;
    let l1 = signed_area(a, p, c) / total;
    let l2 = signed_area(a, b, p) / total;
    [l0, l1, l2]
}

/// Build the structured triangulation of `spec`.
///
/// Fails on degenerate geometry (holes outside the bounds or overlapping,
/// empty source submesh, sensors that end up outside the meshed domain).
pub fn build_mesh(spec: &DomainSpec) -> Result<Mesh> {
    spec.validate()?;

    let b = &spec.bounds;
    let nx = (b.width() / spec.mesh_size).ceil().max(1.0) as usize;
    let ny = (b.height() / spec.mesh_size).ceil().max(1.0) as usize;
    let hx = b.width() / nx as f64;
    let hy = b.height() / ny as f64;

    let vid = |i: usize, j: usize| j * (nx + 1) + i;
    let mut points = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            points.push([b.x0 + i as f64 * hx, b.y0 + j as f64 * hy]);
        }
    }

    let in_hole = |p: Point| spec.holes.iter().any(|h| h.contains(p));

    // Two triangles per cell, dropped when they touch a hole.
    let mut tris: Vec<[usize; 3]> = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let v00 = vid(i, j);
            let v10 = vid(i + 1, j);
            let v01 = vid(i, j + 1);
            let v11 = vid(i + 1, j + 1);
            for tri in [[v00, v10, v11], [v00, v11, v01]] {
                let keep = tri.iter().all(|&v| !in_hole(points[v])) && {
                    let c = centroid(&points, tri);
                    !in_hole(c)
                };
                if keep {
                    tris.push(tri);
                }
            }
        }
    }

    // Snap near-circle vertices onto the circle for a smoother polygonal
    // hole; skipped when it would flip or crush an adjacent triangle.
    let snap_band = 0.45 * hx.min(hy);
    let mut incident: HashMap<usize, Vec<usize>> = HashMap::new();
    for (t, tri) in tris.iter().enumerate() {
        for &v in tri {
            incident.entry(v).or_default().push(t);
        }
    }
    let area_floor = 1e-3 * 0.5 * hx * hy;
    for h in &spec.holes {
        for (&v, tids) in incident.iter() {
            let d = h.dist(points[v]);
            if d >= h.radius && d < h.radius + snap_band {
                let scale = h.radius / d;
                let snapped = [
                    h.center[0] + (points[v][0] - h.center[0]) * scale,
                    h.center[1] + (points[v][1] - h.center[1]) * scale,
                ];
                let old = points[v];
                points[v] = snapped;
                let ok = tids.iter().all(|&t| {
                    let [a, b2, c] = tris[t];
                    signed_area(points[a], points[b2], points[c]) > area_floor
                });
                if !ok {
                    points[v] = old;
                }
            }
        }
    }

    // Drop orphan vertices and reindex.
    let mut used = vec![false; points.len()];
    for tri in &tris {
        for &v in tri {
            used[v] = true;
        }
    }
    let mut remap = vec![usize::MAX; points.len()];
    let mut vertices = Vec::new();
    for (v, &u) in used.iter().enumerate() {
        if u {
            remap[v] = vertices.len();
            vertices.push(points[v]);
        }
    }
    let triangles: Vec<[usize; 3]> = tris.iter().map(|t| t.map(|v| remap[v])).collect();

    for (t, tri) in triangles.iter().enumerate() {
        let a = signed_area(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
        if a <= 0.0 {
            return Err(Error::Geometry(format!("triangle {t} is degenerate (area {a:.3e})")));
        }
    }

    let boundary_edges = extract_boundary(&vertices, &triangles, b)?;

    // Source submesh: triangles fully inside the source rectangle.
    let mut source_triangles = Vec::new();
    let mut in_source = vec![false; vertices.len()];
    for (t, tri) in triangles.iter().enumerate() {
        if tri.iter().all(|&v| spec.source_region.contains(vertices[v])) {
            source_triangles.push(t);
            for &v in tri {
                in_source[v] = true;
            }
        }
    }
    let source_vertices: Vec<usize> = (0..vertices.len()).filter(|&v| in_source[v]).collect();
    if source_vertices.is_empty() {
        return Err(Error::Geometry(
            "source region contains no complete triangle; refine the mesh or enlarge it".into(),
        ));
    }

    let mesh = Mesh {
        vertices,
        triangles,
        boundary_edges,
        source_triangles,
        source_vertices,
    };

    for (k, s) in spec.sensors.iter().enumerate() {
        if mesh.locate_point(*s).is_none() {
            return Err(Error::Geometry(format!(
                "sensor {k} at ({}, {}) is outside the meshed domain",
                s[0], s[1]
            )));
        }
    }

    Ok(mesh)
}

fn centroid(points: &[Point], tri: [usize; 3]) -> Point {
    [
        (points[tri[0]][0] + points[tri[1]][0] + points[tri[2]][0]) / 3.0,
        (points[tri[0]][1] + points[tri[1]][1] + points[tri[2]][1]) / 3.0,
    ]
}

fn extract_boundary(vertices: &[Point], triangles: &[[usize; 3]], bounds: &Rect) -> Result<Vec<BoundaryEdge>> {
    let mut count: HashMap<(usize, usize), usize> = HashMap::new();
    for tri in triangles {
        for i in 0..3 {
            let (a, b) = (tri[i], tri[(i + 1) % 3]);
            let key = (a.min(b), a.max(b));
            *count.entry(key).or_insert(0) += 1;
        }
    }
    let tol = 1e-9 * (bounds.width() + bounds.height());
    let on_rect = |p: Point| {
        (p[0] - bounds.x0).abs() < tol
            || (p[0] - bounds.x1).abs() < tol
            || (p[1] - bounds.y0).abs() < tol
            || (p[1] - bounds.y1).abs() < tol
    };
    let mut edges = Vec::new();
    let mut degree: HashMap<usize, usize> = HashMap::new();
    for (&(a, b), &c) in count.iter() {
        if c == 1 {
            let tag = if on_rect(vertices[a]) && on_rect(vertices[b]) {
                BoundaryTag::Exterior
            } else {
                BoundaryTag::Hole
            };
            edges.push(BoundaryEdge { vertices: [a, b], tag });
            *degree.entry(a).or_insert(0) += 1;
            *degree.entry(b).or_insert(0) += 1;
        } else if c > 2 {
            return Err(Error::Geometry(format!("edge ({a}, {b}) shared by {c} triangles")));
        }
    }
    // Closed loops: every boundary vertex has exactly two boundary edges.
    for (&v, &d) in degree.iter() {
        if d != 2 {
            return Err(Error::Geometry(format!("boundary vertex {v} has degree {d}, loops are not closed")));
        }
    }
    edges.sort_by_key(|e| (e.vertices[0], e.vertices[1]));
    Ok(edges)
}

/// Boundary edges (pairs of source-dof indices) of the source submesh.
///
/// Works on the submesh made of `source_triangles`; returned indices are
/// positions in `source_vertices`.
pub fn source_boundary_edges(mesh: &Mesh) -> Vec<[usize; 2]> {
    let index = mesh.source_index();
    let mut count: HashMap<(usize, usize), usize> = HashMap::new();
    for &t in &mesh.source_triangles {
        let tri = mesh.triangles[t];
        for i in 0..3 {
            let (a, b) = (tri[i], tri[(i + 1) % 3]);
            let key = (a.min(b), a.max(b));
            *count.entry(key).or_insert(0) += 1;
        }
    }
    let mut edges: Vec<[usize; 2]> = count
        .into_iter()
        .filter(|&(_, c)| c == 1)
        .map(|((a, b), _)| [index[&a], index[&b]])
        .collect();
    edges.sort_unstable();
    edges
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unit_square(h: f64) -> DomainSpec {
        DomainSpec {
            bounds: Rect::new(0.0, 0.0, 1.0, 1.0),
            holes: vec![],
            source_region: Rect::new(0.0, 0.0, 1.0, 1.0),
            sensors: vec![],
            mesh_size: h,
        }
    }

    #[test]
    fn unit_square_area_is_conserved() {
        let mesh = build_mesh(&unit_square(1.0)).unwrap();
        assert!(mesh.triangles.len() >= 2);
        assert_relative_eq!(mesh.total_area(), 1.0, epsilon = 1e-12);

        let fine = build_mesh(&unit_square(0.07)).unwrap();
        assert_relative_eq!(fine.total_area(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn hole_area_is_removed() {
        let spec = DomainSpec {
            bounds: Rect::new(-1.0, -1.0, 1.0, 1.0),
            holes: vec![Hole::new(0.0, 0.0, 0.2)],
            source_region: Rect::new(-1.0, -1.0, -0.6, 1.0),
            sensors: vec![],
            mesh_size: 0.03,
        };
        let mesh = build_mesh(&spec).unwrap();
        let expected = 4.0 - std::f64::consts::PI * 0.04;
        let got = mesh.total_area();
        assert!(
            (got - expected).abs() / expected < 0.02,
            "area {got} vs {expected}"
        );
    }

    #[test]
    fn default_domain_contains_all_sensors() {
        let spec = crate::config::RunConfig::desk_default().domain_spec();
        assert!(spec.sensors.len() >= 36);
        let mesh = build_mesh(&spec).unwrap();
        for s in &spec.sensors {
            let (_, lam) = mesh.locate_point(*s).expect("sensor outside mesh");
            assert!(lam.iter().all(|&l| l >= 0.0));
        }
    }

    #[test]
    fn rejects_degenerate_geometry() {
        let mut spec = unit_square(0.2);
        spec.holes = vec![Hole::new(0.95, 0.5, 0.2)];
        assert!(matches!(build_mesh(&spec), Err(Error::Geometry(_))));

        let mut spec = unit_square(0.2);
        spec.source_region = Rect::new(0.0, 0.0, 0.4, 1.0);
        spec.holes = vec![Hole::new(0.6, 0.4, 0.1), Hole::new(0.6, 0.55, 0.1)];
        assert!(matches!(build_mesh(&spec), Err(Error::Geometry(_))));

        let mut spec = unit_square(0.0);
        spec.mesh_size = -1.0;
        assert!(build_mesh(&spec).is_err());
    }

    #[test]
    fn locate_vertex_and_centroid() {
        let mesh = build_mesh(&unit_square(0.25)).unwrap();

        let v = 5;
        let p = mesh.vertices[v];
        let (t, lam) = mesh.locate_point(p).unwrap();
        let tri = mesh.triangles[t];
        let slot = tri.iter().position(|&w| w == v).unwrap();
        assert_relative_eq!(lam[slot], 1.0, epsilon = 1e-12);

        let tri = mesh.triangles[3];
        let c = centroid(&mesh.vertices, tri);
        let (t, lam) = mesh.locate_point(c).unwrap();
        assert_eq!(t, 3);
        for l in lam {
            assert_relative_eq!(l, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn locate_outside_returns_none() {
        let mesh = build_mesh(&unit_square(0.5)).unwrap();
        assert!(mesh.locate_point([2.0, 0.5]).is_none());
        assert!(mesh.locate_point([-0.1, -0.1]).is_none());
    }

    #[test]
    fn mesh_is_connected_and_covered() {
        let spec = DomainSpec {
            bounds: Rect::new(-1.0, -1.0, 1.0, 1.0),
            holes: vec![Hole::new(0.5, 0.0, 0.2)],
            source_region: Rect::new(-1.0, -1.0, -0.5, 1.0),
            sensors: vec![],
            mesh_size: 0.1,
        };
        let mesh = build_mesh(&spec).unwrap();
        assert!(mesh.is_connected());
        // Every vertex belongs to at least one triangle by construction; the
        // reindexing would have dropped it otherwise.
        let mut used = vec![false; mesh.n_vertices()];
        for tri in &mesh.triangles {
            for &v in tri {
                used[v] = true;
            }
        }
        assert!(used.into_iter().all(|u| u));
        assert!(!mesh.source_vertices.is_empty());
        assert!(mesh.boundary_edges.iter().any(|e| e.tag == BoundaryTag::Hole));
        assert!(mesh.boundary_edges.iter().any(|e| e.tag == BoundaryTag::Exterior));
    }

    #[test]
    fn source_submesh_boundary_is_closed() {
        let spec = DomainSpec {
            bounds: Rect::new(-1.0, -1.0, 1.0, 1.0),
            holes: vec![],
            source_region: Rect::new(-1.0, -1.0, -0.5, 1.0),
            sensors: vec![],
            mesh_size: 0.125,
        };
        let mesh = build_mesh(&spec).unwrap();
        let edges = source_boundary_edges(&mesh);
        let mut degree = HashMap::new();
        for e in &edges {
            *degree.entry(e[0]).or_insert(0) += 1;
            *degree.entry(e[1]).or_insert(0) += 1;
        }
        assert!(degree.values().all(|&d| d == 2));
    }

    proptest! {
        #[test]
        fn barycentric_roundtrip(x in -0.95f64..0.95, y in -0.95f64..0.95) {
            let spec = DomainSpec {
                bounds: Rect::new(-1.0, -1.0, 1.0, 1.0),
                holes: vec![],
                source_region: Rect::new(-1.0, -1.0, 1.0, 1.0),
                sensors: vec![],
                mesh_size: 0.21,
            };
            let mesh = build_mesh(&spec).unwrap();
            let (t, lam) = mesh.locate_point([x, y]).unwrap();
            let tri = mesh.triangles[t];
            let mut rx = 0.0;
            let mut ry = 0.0;
            for i in 0..3 {
                rx += lam[i] * mesh.vertices[tri[i]][0];
                ry += lam[i] * mesh.vertices[tri[i]][1];
            }
            prop_assert!((rx - x).abs() < 1e-10);
            prop_assert!((ry - y).abs() < 1e-10);
            let s: f64 = lam.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
