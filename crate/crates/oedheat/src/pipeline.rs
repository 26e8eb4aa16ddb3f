//! End-to-end stages behind the command-line interface.
//!
//! A [`Pipeline`] owns the assembled operators for one configuration. Its
//! stages mirror the subcommands: `factorize` calibrates the noise and
//! builds (or reuses) the low-rank factorization, `sweep` optimizes designs
//! over a range of budgets against random baselines, `reconstruct` compares
//! source reconstructions, and `variance` maps pointwise uncertainty.
//!
//! Every random stage draws from its own stream of one master seed, so
//! stages can run independently or in parallel and still reproduce the same
//! numbers; outputs contain no timestamps and are byte-stable across runs.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::assembly::FemOperators;
use crate::config::RunConfig;
use crate::design::{self, DesignResult};
use crate::error::{Error, Result};
use crate::heat::HeatWorkspace;
use crate::lowrank::{factorize_map, LowRankFactor, PreconditionedMap};
use crate::mesh::build_mesh;
use crate::posterior::{self, BaselineSummary};
use crate::prior::BilaplacianPrior;

/// Stream identifiers for the seed fan-out. The factorization sketch uses
/// the raw master seed (streams below `1 << 32`), so purposes start at 1.
const STREAM_NOISE_CALIBRATION: u64 = 1;
const STREAM_DATA_NOISE: u64 = 2;
const STREAM_RANDOM_DESIGNS: u64 = 3;

/// Independent generator for one purpose and index under a master seed.
pub fn stream_rng(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 32) | index);
    rng
}

/// Operators and settings for one configuration, ready to run stages.
pub struct Pipeline {
    pub cfg: RunConfig,
    pub ops: Arc<FemOperators>,
    pub heat: HeatWorkspace,
    pub prior: BilaplacianPrior,
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let spec = cfg.domain_spec();
        let mesh = build_mesh(&spec)?;
        let ops = Arc::new(FemOperators::new(mesh, &spec.sensors, cfg.quadrature())?);
        let heat = HeatWorkspace::new(ops.clone(), cfg.time_grid()?)?;
        let prior = BilaplacianPrior::new(ops.clone(), cfg.prior.alpha, cfg.prior.robin_divisor)?;
        Ok(Pipeline { cfg, ops, heat, prior })
    }

    /// Default budget for the reconstruction and variance stages.
    pub fn default_budget(&self) -> usize {
        self.cfg.design.m0_max.min(10)
    }

    /// Calibrate the noise, factorize the preconditioned map and persist
    /// the result; a cached factorization with a matching configuration
    /// hash is reused instead.
    pub fn factorize(&self, out: &Path) -> Result<LowRankFactor> {
        std::fs::create_dir_all(out)?;
        let hash = self.cfg.factorization_hash();
        if let Ok(factor) = LowRankFactor::load(out, &hash) {
            println!(
                "factorize: reusing cached factorization (rank {}, sigma2 {:.3e})",
                factor.rank(),
                factor.sigma2
            );
            return Ok(factor);
        }

        let mut rng = stream_rng(self.cfg.seed, STREAM_NOISE_CALIBRATION, 0);
        let sigma2 = posterior::calibrate_noise(&self.heat, &self.prior, &self.cfg.noise, &mut rng)?;
        println!(
            "factorize: noise variance {:.6e} from {} prior draws",
            sigma2, self.cfg.noise.calibration_samples
        );

        let map = PreconditionedMap {
            heat: &self.heat,
            prior: &self.prior,
            sigma: sigma2.sqrt(),
        };
        let mf = factorize_map(&map, &self.cfg.lowrank, self.cfg.seed)?;
        if mf.saturated {
            eprintln!(
                "factorize: warning: rank cap {} reached before the spectrum fell below the threshold",
                self.cfg.lowrank.max_rank
            );
        }
        let factor = LowRankFactor::assemble(
            mf,
            |b| self.prior.apply_l_block(b),
            self.prior.trace_lumped(),
            sigma2,
        )?;
        println!(
            "factorize: rank {} of {} sensors x {} source dofs",
            factor.rank(),
            factor.n_sensors(),
            factor.n_source()
        );

        factor.save(out, &hash)?;
        write_spectrum_csv(&out.join("spectrum.csv"), &factor)?;
        Ok(factor)
    }

    /// Load the cached factorization or build it.
    pub fn factor(&self, out: &Path) -> Result<LowRankFactor> {
        self.factorize(out)
    }

    /// Optimize one budget and draw its random baseline (deterministic per
    /// budget, independent of other budgets).
    pub fn design_for_budget(&self, factor: &LowRankFactor, m0: usize) -> Result<(DesignResult, BaselineSummary)> {
        let result = design::optimize_design(factor, m0, &self.cfg.design)?;
        let mut rng = stream_rng(self.cfg.seed, STREAM_RANDOM_DESIGNS, m0 as u64);
        let baseline = posterior::random_baseline(factor, m0, self.cfg.design.random_baseline, &mut rng);
        Ok((result, baseline))
    }

    /// Sweep budgets `1..=m0_max`: optimized binary designs, relaxed lower
    /// bounds and random-design envelopes, written to `Aoptimalities.csv`
    /// plus one design file per budget.
    ///
    /// Budgets are first optimized independently (in parallel); a carried
    /// pass then offers each budget the previous budget's design plus the
    /// best extra sensor as a candidate, so a larger budget never ends up
    /// with a worse objective.
    pub fn sweep(&self, factor: &LowRankFactor, out: &Path) -> Result<SweepReport> {
        std::fs::create_dir_all(out)?;
        let budgets: Vec<usize> = (1..=self.cfg.design.m0_max).collect();
        let solved: Vec<Result<(DesignResult, BaselineSummary)>> = budgets
            .par_iter()
            .map(|&m0| self.design_for_budget(factor, m0))
            .collect();
        let mut solved: Vec<(DesignResult, BaselineSummary)> =
            solved.into_iter().collect::<Result<_>>()?;

        let mut carry: Option<DVector<f64>> = None;
        for (i, (res, _)) in solved.iter_mut().enumerate() {
            if let Some(prev) = &carry {
                let (w, j) = design::exchange_refine(factor, prev.clone(), budgets[i]);
                if j < res.objective_binary {
                    res.weights = w;
                    res.objective_binary = j;
                }
            }
            carry = Some(res.weights.clone());
        }

        let mut rows = Vec::with_capacity(budgets.len());
        let designs_dir = out.join("designs");
        std::fs::create_dir_all(&designs_dir)?;
        let sensors = self.cfg.sensor_points();
        let mut log = String::new();
        for (i, (res, base)) in solved.into_iter().enumerate() {
            let m0 = budgets[i];
            write_design_csv(&designs_dir.join(format!("design_m0_{m0:02}.csv")), &sensors, &res.weights)?;
            log.push_str(&format!(
                "m0={m0} relaxed={:.12e} binary={:.12e} rand_min={:.12e} rand_max={:.12e} stages={} final_p={:.4} forced={} dominant={} redundant={}\n",
                res.objective_relaxed,
                res.objective_binary,
                base.j_min,
                base.j_max,
                res.stages,
                res.final_p,
                res.forced_rounding,
                res.n_dominant,
                res.n_redundant,
            ));
            rows.push(SweepRow {
                m0,
                j_relaxed: res.objective_relaxed,
                j_binary: res.objective_binary,
                rand_min: base.j_min,
                rand_max: base.j_max,
                forced_rounding: res.forced_rounding,
                stages: res.stages,
            });
        }
        std::fs::write(out.join("sweep.log"), log)?;

        let report = SweepReport { rows };
        report.write_csv(&out.join("Aoptimalities.csv"))?;
        println!(
            "sweep: {} budgets, objective range {:.6e} .. {:.6e}",
            report.rows.len(),
            report.rows.last().map(|r| r.j_binary).unwrap_or(f64::NAN),
            report.rows.first().map(|r| r.j_binary).unwrap_or(f64::NAN),
        );
        Ok(report)
    }

    /// Reconstruct the reference source from one synthetic data draw, with
    /// the optimized design and with the best random design of the same
    /// budget, and report both errors.
    pub fn reconstruct(&self, factor: &LowRankFactor, out: &Path, m0: usize) -> Result<ReconstructReport> {
        std::fs::create_dir_all(out)?;
        let truth = self.ops.interpolate_source(posterior::test_source);
        let mut noise_rng = stream_rng(self.cfg.seed, STREAM_DATA_NOISE, 0);
        let data = posterior::synthesize_data(&self.heat, &truth, factor.sigma2, &mut noise_rng);

        let (res, base) = self.design_for_budget(factor, m0)?;
        let f_mat = self.heat.materialize_forward_via_adjoint();
        let est_opt = posterior::reconstruct_map(&f_mat, &self.prior, factor.sigma2, &res.weights, &data)?;
        let est_rand = posterior::reconstruct_map(&f_mat, &self.prior, factor.sigma2, &base.best, &data)?;

        let report = ReconstructReport {
            m0,
            sigma2: factor.sigma2,
            j_optimized: res.objective_binary,
            j_random_best: base.j_min,
            error_optimized: posterior::relative_error(&self.prior, &est_opt, &truth),
            error_random_best: posterior::relative_error(&self.prior, &est_rand, &truth),
            error_optimized_coeff: coefficient_error(&est_opt, &truth),
            error_random_best_coeff: coefficient_error(&est_rand, &truth),
        };

        write_field_csv(
            &out.join(format!("reconstruction_m0_{m0:02}.csv")),
            self,
            &[("truth", &truth), ("optimized", &est_opt), ("random", &est_rand)],
        )?;
        let mut txt = String::new();
        txt.push_str(&format!("budget = {}\n", report.m0));
        txt.push_str(&format!("noise_variance = {:e}\n", report.sigma2));
        txt.push_str(&format!("objective_optimized = {:e}\n", report.j_optimized));
        txt.push_str(&format!("objective_random_best = {:e}\n", report.j_random_best));
        txt.push_str(&format!("relative_error_optimized = {:e}\n", report.error_optimized));
        txt.push_str(&format!("relative_error_random_best = {:e}\n", report.error_random_best));
        txt.push_str(&format!(
            "relative_error_optimized_coefficients = {:e}\n",
            report.error_optimized_coeff
        ));
        txt.push_str(&format!(
            "relative_error_random_best_coefficients = {:e}\n",
            report.error_random_best_coeff
        ));
        std::fs::write(out.join(format!("reconstruct_report_m0_{m0:02}.txt")), txt)?;
        println!(
            "reconstruct: m0={} error {:.4} (optimized) vs {:.4} (best random)",
            m0, report.error_optimized, report.error_random_best
        );
        Ok(report)
    }

    /// Pointwise prior and posterior variances for the optimized design of
    /// budget `m0`.
    pub fn variance(&self, factor: &LowRankFactor, out: &Path, m0: usize) -> Result<()> {
        std::fs::create_dir_all(out)?;
        let (res, _) = self.design_for_budget(factor, m0)?;
        let post = posterior::posterior_variances(&self.prior, factor, &res.weights);
        let prior_var = self.prior.covariance_dense().diagonal();
        write_field_csv(
            &out.join(format!("variance_m0_{m0:02}.csv")),
            self,
            &[("prior_variance", &prior_var), ("posterior_variance", &post)],
        )?;
        println!(
            "variance: m0={} mean posterior variance {:.6e} (prior {:.6e})",
            m0,
            post.sum() / post.len() as f64,
            prior_var.sum() / prior_var.len() as f64
        );
        Ok(())
    }

    /// All stages in order, sharing one factorization.
    pub fn run_all(&self, out: &Path) -> Result<()> {
        let factor = self.factorize(out)?;
        self.sweep(&factor, out)?;
        let m0 = self.default_budget();
        self.reconstruct(&factor, out, m0)?;
        self.variance(&factor, out, m0)?;
        Ok(())
    }
}

fn coefficient_error(estimate: &DVector<f64>, truth: &DVector<f64>) -> f64 {
    (estimate - truth).norm() / truth.norm()
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub m0: usize,
    pub j_relaxed: f64,
    pub j_binary: f64,
    pub rand_min: f64,
    pub rand_max: f64,
    pub forced_rounding: bool,
    pub stages: usize,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    /// Budget sweep table: `targets` is the budget, `randommax`/`randommin`
    /// bracket the random designs, `w` is the optimized binary objective
    /// and `w1` the relaxed lower bound.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "targets,randommax,randommin,w,w1")?;
        for r in &self.rows {
            writeln!(f, "{},{},{},{},{}", r.m0, r.rand_max, r.rand_min, r.j_binary, r.j_relaxed)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ReconstructReport {
    pub m0: usize,
    pub sigma2: f64,
    pub j_optimized: f64,
    pub j_random_best: f64,
    /// Mass-weighted relative errors.
    pub error_optimized: f64,
    pub error_random_best: f64,
    /// Plain coefficient-norm relative errors.
    pub error_optimized_coeff: f64,
    pub error_random_best_coeff: f64,
}

fn write_spectrum_csv(path: &Path, factor: &LowRankFactor) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "index,singular_value")?;
    for (i, s) in factor.singular_values.iter().enumerate() {
        writeln!(f, "{},{}", i, s)?;
    }
    Ok(())
}

fn write_design_csv(path: &Path, sensors: &[[f64; 2]], w: &DVector<f64>) -> Result<()> {
    if sensors.len() != w.len() {
        return Err(Error::Parameter(format!(
            "{} sensors but {} weights",
            sensors.len(),
            w.len()
        )));
    }
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "sensor,x,y,w")?;
    for (k, s) in sensors.iter().enumerate() {
        writeln!(f, "{},{},{},{}", k, s[0], s[1], w[k])?;
    }
    Ok(())
}

/// Write one row per source dof: global vertex id, coordinates, then one
/// column per named field.
fn write_field_csv(path: &Path, pipe: &Pipeline, fields: &[(&str, &DVector<f64>)]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    let mut header = String::from("vertex,x,y");
    for (name, _) in fields {
        header.push(',');
        header.push_str(name);
    }
    writeln!(f, "{header}")?;
    for (i, &v) in pipe.ops.mesh.source_vertices.iter().enumerate() {
        let p = pipe.ops.mesh.vertices[v];
        let mut line = format!("{},{},{}", v, p[0], p[1]);
        for (_, values) in fields {
            line.push(',');
            line.push_str(&values[i].to_string());
        }
        writeln!(f, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A configuration small enough for unit tests.
    pub fn tiny_config() -> RunConfig {
        let mut cfg = RunConfig::desk_default();
        cfg.domain.mesh_size = 0.2;
        cfg.domain.holes.truncate(1);
        cfg.domain.sensor_grid = Some(crate::config::SensorGridConfig {
            nx: 3,
            ny: 3,
            rect: [-0.3, -0.6, 0.3, 0.6],
        });
        cfg.fem.dt = 0.05;
        cfg.noise.calibration_samples = 60;
        cfg.design.m0_max = 4;
        cfg.design.random_baseline = 15;
        cfg
    }

    #[test]
    fn streams_are_independent_and_reproducible() {
        use rand::RngCore;
        let mut a = stream_rng(9, 1, 0);
        let mut b = stream_rng(9, 1, 0);
        assert_eq!(a.next_u64(), b.next_u64());
        let mut c = stream_rng(9, 2, 0);
        let mut d = stream_rng(9, 1, 1);
        let x = stream_rng(9, 1, 0).next_u64();
        assert_ne!(c.next_u64(), x);
        assert_ne!(d.next_u64(), x);
    }

    #[test]
    fn factorization_cache_round_trips_through_the_pipeline() {
        let pipe = Pipeline::new(tiny_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let f1 = pipe.factorize(dir.path()).unwrap();
        let f2 = pipe.factorize(dir.path()).unwrap();
        assert_eq!(f1.q, f2.q);
        assert_eq!(f1.sigma2, f2.sigma2);

        // A changed seed must not reuse the cache.
        let mut cfg = tiny_config();
        cfg.seed += 1;
        let pipe2 = Pipeline::new(cfg).unwrap();
        let f3 = pipe2.factorize(dir.path()).unwrap();
        assert!(f3.sigma2 != f1.sigma2 || f3.q != f1.q);
    }

    #[test]
    fn sweep_rows_are_ordered_and_bracketed() {
        let pipe = Pipeline::new(tiny_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let factor = pipe.factorize(dir.path()).unwrap();
        let report = pipe.sweep(&factor, dir.path()).unwrap();
        assert_eq!(report.rows.len(), 4);
        for (i, r) in report.rows.iter().enumerate() {
            assert_eq!(r.m0, i + 1);
            assert!(r.j_relaxed <= r.j_binary + 1e-9);
            assert!(r.j_binary <= r.rand_max + 1e-9);
            assert!(r.rand_min <= r.rand_max);
        }
        // The carried pass makes more budget never hurt.
        for pair in report.rows.windows(2) {
            assert!(pair[1].j_binary <= pair[0].j_binary);
        }
        let csv = std::fs::read_to_string(dir.path().join("Aoptimalities.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "targets,randommax,randommin,w,w1");
        assert_eq!(csv.lines().count(), 5);
        assert!(dir.path().join("designs/design_m0_01.csv").exists());
        assert!(dir.path().join("sweep.log").exists());
    }

    #[test]
    fn reconstruct_and_variance_write_their_outputs() {
        let pipe = Pipeline::new(tiny_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let factor = pipe.factorize(dir.path()).unwrap();
        let report = pipe.reconstruct(&factor, dir.path(), 3).unwrap();
        assert!(report.error_optimized.is_finite());
        assert!(report.error_optimized > 0.0);
        assert!(dir.path().join("reconstruction_m0_03.csv").exists());
        assert!(dir.path().join("reconstruct_report_m0_03.txt").exists());

        pipe.variance(&factor, dir.path(), 3).unwrap();
        let text = std::fs::read_to_string(dir.path().join("variance_m0_03.csv")).unwrap();
        assert!(text.starts_with("vertex,x,y,prior_variance,posterior_variance"));
        // Posterior never exceeds prior variance.
        for line in text.lines().skip(1) {
            let cols: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
            assert!(cols[4] <= cols[3] + 1e-12, "line {line}");
        }
    }

    #[test]
    fn identical_runs_write_identical_bytes() {
        let pipe = Pipeline::new(tiny_config()).unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        pipe.run_all(d1.path()).unwrap();
        pipe.run_all(d2.path()).unwrap();
        for name in ["Aoptimalities.csv", "spectrum.csv", "sweep.log"] {
            let a = std::fs::read(d1.path().join(name)).unwrap();
            let b = std::fs::read(d2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }
    }
}
