//! Mesh the default room and inspect the assembled finite element
//! operators: sizes, areas, boundary structure and the conductivity field.
//!
//! Run with `cargo run --example mesh_and_operators`.

use std::sync::Arc;

use oedheat::assembly::{thermal_conductivity, FemOperators};
use oedheat::config::RunConfig;
use oedheat::mesh::{build_mesh, BoundaryTag};

fn main() -> oedheat::Result<()> {
    let cfg = RunConfig::desk_default();
    let spec = cfg.domain_spec();
    let mesh = build_mesh(&spec)?;

    println!("room {:?} at mesh size {}", cfg.domain.bounds, cfg.domain.mesh_size);
    println!("  vertices:        {}", mesh.n_vertices());
    println!("  triangles:       {}", mesh.triangles.len());
    println!("  source dofs:     {}", mesh.n_source());

    let hole_area: f64 = spec.holes.iter().map(|h| std::f64::consts::PI * h.radius * h.radius).sum();
    let exact = spec.bounds.area() - hole_area;
    println!(
        "  total area:      {:.4} (room minus obstacles: {:.4}, off by {:.2}%)",
        mesh.total_area(),
        exact,
        100.0 * (mesh.total_area() - exact).abs() / exact
    );

    let exterior = mesh.boundary_edges.iter().filter(|e| e.tag == BoundaryTag::Exterior).count();
    let hole = mesh.boundary_edges.len() - exterior;
    println!("  boundary edges:  {exterior} on the walls, {hole} around the obstacles");

    // The conductivity grows sharply with height in the upper half.
    println!("conductivity samples:");
    for p in [[0.3, -0.5], [0.0, 0.0], [0.2, 0.5], [0.0, 1.0]] {
        println!("  a({:>4}, {:>4}) = {:.5}", p[0], p[1], thermal_conductivity(p));
    }

    let ops = Arc::new(FemOperators::new(mesh, &spec.sensors, cfg.quadrature())?);
    println!("assembled operators:");
    println!("  mass row sums total:  {:.4} (equals the area)", ops.mass_lumped.sum());
    println!("  stiffness row-sum max: {:.2e} (zero row sums: K 1 = 0)",
        (0..ops.n_full()).map(|i| ops.stiffness.row(i).sum().abs()).fold(0.0, f64::max));
    println!("  observation rows:     {} sensors, each row sums to 1", ops.n_sensors());
    Ok(())
}
