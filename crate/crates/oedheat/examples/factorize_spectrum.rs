//! Build the prior-preconditioned forward map on a reduced problem and
//! factorize it, then look at the retained spectrum: how fast it decays and
//! how many directions carry more signal than noise.
//!
//! Run with `cargo run --example factorize_spectrum`.

use oedheat::config::{RunConfig, SensorGridConfig};
use oedheat::pipeline::Pipeline;

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
    let out = std::env::temp_dir().join("oedheat-examples").join("factorize");
    std::fs::create_dir_all(&out)?;

    let pipe = Pipeline::new(quick_config())?;
    println!(
        "problem: {} source dofs, {} candidate sensors",
        pipe.ops.n_source(),
        pipe.ops.n_sensors()
    );

    let t = std::time::Instant::now();
    let factor = pipe.factorize(&out)?;
    println!("factorized in {:.1} s (cache in {})", t.elapsed().as_secs_f64(), out.display());

    let sv = &factor.singular_values;
    println!(
        "retained rank {} of at most {} (saturated: {})",
        sv.len(),
        pipe.cfg.lowrank.max_rank,
        factor.saturated
    );
    println!("calibrated noise variance: {:.4e}", factor.sigma2);
    println!("leading singular values:");
    for (i, s) in sv.iter().take(10).enumerate() {
        println!("  sigma_{:<2} = {:>10.4e}   data-vs-noise weight {:.4}", i + 1, s, s * s / (1.0 + s * s));
    }
    if sv.len() > 10 {
        println!("  ... down to sigma_{} = {:.4e}", sv.len(), sv[sv.len() - 1]);
    }
    let informed = sv.iter().filter(|&&s| s >= 1.0).count();
    println!("{informed} directions have signal above the noise floor (sigma >= 1)");
    let all_on = nalgebra::DVector::from_element(pipe.ops.n_sensors(), 1.0);
    println!(
        "prior trace {:.4}; switching every sensor on leaves {:.4}",
        factor.trace_c0,
        oedheat::design::objective(&factor, &all_on)
    );
    Ok(())
}
