//! Run configuration: geometry, discretization, prior, noise, factorization
//! and design-solver settings, read from a TOML file.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::assembly::CoefficientQuadrature;
use crate::error::{Error, Result};
use crate::heat::TimeGrid;
use crate::mesh::{DomainSpec, Hole, Point, Rect};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoleConfig {
    pub center: [f64; 2],
    pub radius: f64,
}

/// Rectangular grid of candidate sensors, `nx * ny` points covering `rect`
/// (given as `[x0, y0, x1, y1]`), listed row by row from the bottom.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorGridConfig {
    pub nx: usize,
    pub ny: usize,
    pub rect: [f64; 4],
}

impl SensorGridConfig {
    pub fn points(&self) -> Vec<Point> {
        let [x0, y0, x1, y1] = self.rect;
        let mut pts = Vec::with_capacity(self.nx * self.ny);
        for j in 0..self.ny {
            let t = if self.ny > 1 { j as f64 / (self.ny - 1) as f64 } else { 0.5 };
            let y = y0 + t * (y1 - y0);
            for i in 0..self.nx {
                let s = if self.nx > 1 { i as f64 / (self.nx - 1) as f64 } else { 0.5 };
                pts.push([x0 + s * (x1 - x0), y]);
            }
        }
        pts
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    /// Room rectangle `[x0, y0, x1, y1]`.
    pub bounds: [f64; 4],
    #[serde(default)]
    pub holes: Vec<HoleConfig>,
    /// Source rectangle `[x0, y0, x1, y1]`; must avoid holes and sensors.
    pub source_region: [f64; 4],
    #[serde(default)]
    pub sensor_grid: Option<SensorGridConfig>,
    /// Extra sensors appended after the grid.
    #[serde(default)]
    pub sensors: Vec<[f64; 2]>,
    pub mesh_size: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureChoice {
    Centroid,
    EdgeMidpoints,
}

impl From<QuadratureChoice> for CoefficientQuadrature {
    fn from(q: QuadratureChoice) -> Self {
        match q {
            QuadratureChoice::Centroid => CoefficientQuadrature::Centroid,
            QuadratureChoice::EdgeMidpoints => CoefficientQuadrature::EdgeMidpoints,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FemConfig {
    pub dt: f64,
    pub t_final: f64,
    pub coefficient_quadrature: QuadratureChoice,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    /// Smoothing length-scale parameter of the elliptic operator.
    pub alpha: f64,
    /// The Robin coefficient is `sqrt(alpha) / robin_divisor`.
    pub robin_divisor: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Noise variance as a fraction of the mean prior-predictive variance
    /// over the sensors.
    pub relative_level: f64,
    /// Prior draws used to estimate that variance.
    pub calibration_samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LowRankConfig {
    /// Hard cap on the retained rank.
    pub max_rank: usize,
    /// Extra sketch columns beyond the requested rank.
    pub oversample: usize,
    pub power_iterations: usize,
    /// Keep singular values down to this fraction of the largest.
    pub singular_ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    /// Largest sensor budget of the sweep (budgets run `1..=m0_max`).
    pub m0_max: usize,
    /// Multiplicative shrink factor of the continuation exponent.
    pub continuation_shrink: f64,
    /// Entry distance from `{0, 1}` below which a design counts as binary.
    pub binariness_tol: f64,
    /// Entry distance from `{0, 1}` below which a relaxed optimum is pinned.
    pub classification_tol: f64,
    /// Stop shrinking the exponent below this value.
    pub p_min: f64,
    /// Projected-gradient stationarity tolerance.
    pub gradient_tol: f64,
    pub max_iterations: usize,
    /// Random binary designs drawn per budget for the comparison envelope.
    pub random_baseline: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub domain: DomainConfig,
    pub fem: FemConfig,
    pub prior: PriorConfig,
    pub noise: NoiseConfig,
    pub lowrank: LowRankConfig,
    pub design: DesignConfig,
    /// Master seed; every random stage derives its own stream from it.
    pub seed: u64,
}

/// The fields that determine the cached factorization. Design-solver
/// settings are deliberately excluded: changing them must not invalidate
/// the cache.
#[derive(Serialize)]
struct FactorizationKey<'a> {
    domain: &'a DomainConfig,
    fem: &'a FemConfig,
    prior: &'a PriorConfig,
    noise: &'a NoiseConfig,
    lowrank: &'a LowRankConfig,
    seed: u64,
}

impl RunConfig {
    pub fn from_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(&path)?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.as_ref().display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Err(Error::Config(msg));
        let [x0, y0, x1, y1] = self.domain.bounds;
        if x1 <= x0 || y1 <= y0 {
            return cfg(format!("bounds {:?} are empty", self.domain.bounds));
        }
        let [sx0, sy0, sx1, sy1] = self.domain.source_region;
        if sx1 <= sx0 || sy1 <= sy0 {
            return cfg(format!("source_region {:?} is empty", self.domain.source_region));
        }
        if self.domain.mesh_size <= 0.0 {
            return cfg(format!("mesh_size must be positive, got {}", self.domain.mesh_size));
        }
        if let Some(g) = &self.domain.sensor_grid {
            if g.nx == 0 || g.ny == 0 {
                return cfg("sensor_grid needs nx >= 1 and ny >= 1".into());
            }
        }
        if self.n_sensors() == 0 {
            return cfg("no sensors configured".into());
        }
        if self.fem.dt <= 0.0 || self.fem.t_final <= 0.0 {
            return cfg(format!(
                "dt and t_final must be positive, got {} and {}",
                self.fem.dt, self.fem.t_final
            ));
        }
        TimeGrid::new(self.fem.dt, self.fem.t_final).map_err(|e| Error::Config(e.to_string()))?;
        if self.prior.alpha <= 0.0 || self.prior.robin_divisor <= 0.0 {
            return cfg("prior.alpha and prior.robin_divisor must be positive".into());
        }
        if self.noise.relative_level <= 0.0 {
            return cfg("noise.relative_level must be positive".into());
        }
        if self.noise.calibration_samples < 2 {
            return cfg("noise.calibration_samples must be at least 2".into());
        }
        if self.lowrank.max_rank == 0 {
            return cfg("lowrank.max_rank must be at least 1".into());
        }
        if !(self.lowrank.singular_ratio > 0.0 && self.lowrank.singular_ratio <= 1.0) {
            return cfg(format!(
                "lowrank.singular_ratio must lie in (0, 1], got {}",
                self.lowrank.singular_ratio
            ));
        }
        let d = &self.design;
        if d.m0_max == 0 {
            return cfg("design.m0_max must be at least 1".into());
        }
        if d.m0_max > self.n_sensors() {
            return cfg(format!(
                "design.m0_max = {} exceeds the {} candidate sensors",
                d.m0_max,
                self.n_sensors()
            ));
        }
        if !(d.continuation_shrink > 0.0 && d.continuation_shrink < 1.0) {
            return cfg("design.continuation_shrink must lie in (0, 1)".into());
        }
        if !(d.p_min > 0.0 && d.p_min <= 1.0) {
            return cfg("design.p_min must lie in (0, 1]".into());
        }
        if d.binariness_tol <= 0.0 || d.classification_tol <= 0.0 || d.gradient_tol <= 0.0 {
            return cfg("design tolerances must be positive".into());
        }
        if d.max_iterations == 0 || d.random_baseline == 0 {
            return cfg("design.max_iterations and design.random_baseline must be at least 1".into());
        }
        Ok(())
    }

    pub fn sensor_points(&self) -> Vec<Point> {
        let mut pts = self
            .domain
            .sensor_grid
            .as_ref()
            .map(|g| g.points())
            .unwrap_or_default();
        pts.extend(self.domain.sensors.iter().copied());
        pts
    }

    pub fn n_sensors(&self) -> usize {
        self.domain.sensor_grid.as_ref().map_or(0, |g| g.nx * g.ny) + self.domain.sensors.len()
    }

    pub fn domain_spec(&self) -> DomainSpec {
        let [x0, y0, x1, y1] = self.domain.bounds;
        let [sx0, sy0, sx1, sy1] = self.domain.source_region;
        DomainSpec {
            bounds: Rect::new(x0, y0, x1, y1),
            holes: self
                .domain
                .holes
                .iter()
                .map(|h| Hole::new(h.center[0], h.center[1], h.radius))
                .collect(),
            source_region: Rect::new(sx0, sy0, sx1, sy1),
            sensors: self.sensor_points(),
            mesh_size: self.domain.mesh_size,
        }
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.fem.dt, self.fem.t_final)
    }

    pub fn quadrature(&self) -> CoefficientQuadrature {
        self.fem.coefficient_quadrature.into()
    }

    /// Hex digest identifying the factorization inputs; used to decide
    /// whether a cached factorization can be reused.
    pub fn factorization_hash(&self) -> String {
        let key = FactorizationKey {
            domain: &self.domain,
            fem: &self.fem,
            prior: &self.prior,
            noise: &self.noise,
            lowrank: &self.lowrank,
            seed: self.seed,
        };
        let text = toml::to_string(&key).expect("config serializes");
        let mut h = Sha256::new();
        h.update(text.as_bytes());
        hex(&h.finalize())
    }

    /// The documented desk-scale experiment: a 2 x 2 room with three round
    /// obstacles, the source patch along the left wall and a 10 x 10 sensor
    /// grid in the middle of the room.
    pub fn desk_default() -> Self {
        RunConfig {
            domain: DomainConfig {
                bounds: [-1.0, -1.0, 1.0, 1.0],
                holes: vec![
                    HoleConfig { center: [0.66, 0.54], radius: 0.13 },
                    HoleConfig { center: [0.66, -0.54], radius: 0.13 },
                    HoleConfig { center: [0.76, 0.0], radius: 0.13 },
                ],
                source_region: [-1.0, -1.0, -0.5, 1.0],
                sensor_grid: Some(SensorGridConfig {
                    nx: 10,
                    ny: 10,
                    rect: [-0.34, -0.82, 0.4, 0.82],
                }),
                sensors: vec![],
                mesh_size: 0.08,
            },
            fem: FemConfig {
                dt: 0.01,
                t_final: 1.0,
                coefficient_quadrature: QuadratureChoice::EdgeMidpoints,
            },
            prior: PriorConfig {
                alpha: 0.25,
                robin_divisor: 1.42,
            },
            noise: NoiseConfig {
                relative_level: 0.01,
                calibration_samples: 1000,
            },
            lowrank: LowRankConfig {
                max_rank: 50,
                oversample: 10,
                power_iterations: 2,
                singular_ratio: 1e-12,
            },
            design: DesignConfig {
                m0_max: 36,
                continuation_shrink: 0.2,
                binariness_tol: 1e-3,
                classification_tol: 1e-3,
                p_min: 1e-3,
                gradient_tol: 1e-9,
                max_iterations: 500,
                random_baseline: 200,
            },
            seed: 7,
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
