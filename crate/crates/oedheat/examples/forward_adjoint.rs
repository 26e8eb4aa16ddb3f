//! Drive the heat equation with the two-bump source, read the sensors at the
//! final time, and verify that the coded adjoint is the exact transpose of the
//! discrete forward map.
//!
//! Run with `cargo run --example forward_adjoint`.

use std::sync::Arc;

use nalgebra::DVector;
use oedheat::assembly::FemOperators;
use oedheat::config::RunConfig;
use oedheat::heat::{HeatWorkspace, TimeGrid};
use oedheat::mesh::build_mesh;
use oedheat::posterior::test_source;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> oedheat::Result<()> {
    let cfg = RunConfig::desk_default();
    let spec = cfg.domain_spec();
    let ops = Arc::new(FemOperators::new(build_mesh(&spec)?, &spec.sensors, cfg.quadrature())?);
    let grid = TimeGrid::new(cfg.fem.dt, cfg.fem.t_final)?;
    println!(
        "heat solve: {} dofs, {} steps of dt = {}",
        ops.n_full(),
        grid.n_steps,
        grid.dt
    );

    let heat = HeatWorkspace::new(Arc::clone(&ops), grid)?;

    // Forward solve from the two-bump source, then read the sensors.
    let source = ops.interpolate_source(test_source);
    let u = heat.final_state(&ops.extend_source(&source));
    let readings = heat.apply_forward(&source);
    println!("final temperature range: [{:.4}, {:.4}]", u.min(), u.max());
    println!(
        "sensor readings: {} values in [{:.4}, {:.4}]",
        readings.len(),
        readings.min(),
        readings.max()
    );

    // The adjoint must satisfy <F s, g> = <s, F' g> to machine precision.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let s = DVector::from_fn(ops.n_source(), |_, _| StandardNormal.sample(&mut rng));
        let g = DVector::from_fn(ops.n_sensors(), |_, _| StandardNormal.sample(&mut rng));
        let fs = heat.apply_forward(&s);
        let ftg = heat.apply_adjoint(&g);
        let gap = (fs.dot(&g) - s.dot(&ftg)).abs() / (fs.norm() * g.norm());
        worst = worst.max(gap);
    }
    println!("adjoint identity, worst of 5 random pairs: {worst:.2e}");
    Ok(())
}
