//! Map how much each part of the source region is still uncertain after
//! measuring with an optimized design, and check that the mass-weighted
//! total of those pointwise variances is exactly the quantity the design
//! optimizer minimizes.
//!
//! Run with `cargo run --example posterior_variance`.

use oedheat::config::{RunConfig, SensorGridConfig};
use oedheat::pipeline::Pipeline;
use oedheat::{design, posterior};

/// Desk defaults shrunk (coarser mesh, fewer sensors, shorter sweep) so the
/// example finishes in a few seconds.
fn quick_config() -> RunConfig {
    let mut cfg = RunConfig::desk_default();
    cfg.domain.mesh_size = 0.12;
    cfg.domain.sensor_grid = Some(SensorGridConfig { nx: 6, ny: 6, rect: [-0.34, -0.82, 0.4, 0.82] });
    cfg.fem.dt = 0.02;
    cfg.noise.calibration_samples = 200;
    cfg.lowrank.max_rank = 40;
    cfg.design.m0_max = 12;
    cfg.design.random_baseline = 50;
    cfg
}

fn main() -> oedheat::Result<()> {
    let out = std::env::temp_dir().join("oedheat-examples").join("variance");
    std::fs::create_dir_all(&out)?;

    let pipe = Pipeline::new(quick_config())?;
    let factor = pipe.factor(&out)?;
    let m0 = 6;
    let (res, _) = pipe.design_for_budget(&factor, m0)?;

    let prior_var = pipe.prior.covariance_dense().diagonal();
    let post_var = posterior::posterior_variances(&pipe.prior, &factor, &res.weights);
    println!("pointwise source variance, budget {m0}:");
    println!("  prior:     mean {:.4}, max {:.4}", prior_var.mean(), prior_var.max());
    println!("  posterior: mean {:.4}, max {:.4}", post_var.mean(), post_var.max());
    let best = (0..post_var.len())
        .min_by(|&a, &b| {
            (post_var[a] / prior_var[a]).partial_cmp(&(post_var[b] / prior_var[b])).unwrap()
        })
        .unwrap();
    let v = pipe.prior.ops.mesh.vertices[pipe.prior.ops.mesh.source_vertices[best]];
    println!(
        "  sharpest reduction at ({:.2}, {:.2}): {:.4} -> {:.4}",
        v[0], v[1], prior_var[best], post_var[best]
    );

    // The objective the optimizer minimizes is this field's weighted total.
    let d = &pipe.prior.ops.source_mass_lumped;
    let weighted: f64 = (0..post_var.len()).map(|i| d[i] * post_var[i]).sum();
    let j = design::objective(&factor, &res.weights);
    println!("mass-weighted total: {weighted:.10}");
    println!("design objective:    {j:.10}");
    println!("relative gap:        {:.2e}", (weighted - j).abs() / j);

    // Same field through plain dense algebra, as a cross-check.
    let f_mat = pipe.heat.materialize_forward_via_adjoint();
    let dense = posterior::posterior_variances_dense(&f_mat, &pipe.prior, factor.sigma2, &res.weights);
    let worst = (0..dense.len())
        .map(|i| (dense[i] - post_var[i]).abs() / dense[i])
        .fold(0.0f64, f64::max);
    println!("dense cross-check, worst pointwise gap: {worst:.2e}");
    Ok(())
}
