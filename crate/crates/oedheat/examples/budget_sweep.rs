//! Sweep the sensor budget on a reduced problem and print the resulting
//! trade-off curve: certified lower bound, optimized binary design, and the
//! envelope of random designs for every budget.
//!
//! Run with `cargo run --example budget_sweep`.

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
    let out = std::env::temp_dir().join("oedheat-examples").join("sweep");
    std::fs::create_dir_all(&out)?;

    let pipe = Pipeline::new(quick_config())?;
    let factor = pipe.factor(&out)?;
    let t = std::time::Instant::now();
    let report = pipe.sweep(&factor, &out)?;
    println!(
        "swept budgets 1..={} in {:.1} s; table in {}",
        pipe.cfg.design.m0_max,
        t.elapsed().as_secs_f64(),
        out.join("Aoptimalities.csv").display()
    );

    println!("budget   lower bound   optimized   random best   random worst");
    for r in &report.rows {
        println!(
            "{:>6}   {:>11.6}   {:>9.6}   {:>11.6}   {:>12.6}",
            r.m0, r.j_relaxed, r.j_binary, r.rand_min, r.rand_max
        );
    }
    let beats = report.rows.iter().filter(|r| r.j_binary <= r.rand_min).count();
    println!(
        "optimized designs beat the best of {} random draws on {}/{} budgets",
        pipe.cfg.design.random_baseline,
        beats,
        report.rows.len()
    );
    Ok(())
}
