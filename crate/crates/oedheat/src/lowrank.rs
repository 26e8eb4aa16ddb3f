//! Randomized low-rank factorization of the whitened forward map.
//!
//! The design criterion never needs the forward map itself, only a thin
//! factorization of the noise-whitened, prior-preconditioned map
//! `Fhat = Gamma^{-1/2} F K^{-1} D^{1/2}`. Its transpose is approximated as
//! `Fhat' ~ Q R` with `Q` orthonormal (source space by rank) and `R`
//! (rank by sensors) carrying one column per candidate sensor. A randomized
//! subspace sketch with power iterations finds `Q`; the rank grows in steps
//! until the retained singular values cover the spectrum down to a relative
//! threshold or a hard cap.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::config::LowRankConfig;
use crate::error::{Error, Result};
use crate::heat::HeatWorkspace;
use crate::prior::BilaplacianPrior;

/// A linear operator given by matrix-vector products with itself and its
/// transpose.
pub trait LinearMap {
    /// Output dimension.
    fn nrows(&self) -> usize;
    /// Input dimension.
    fn ncols(&self) -> usize;
    fn apply(&self, x: &DVector<f64>) -> DVector<f64>;
    fn apply_transpose(&self, y: &DVector<f64>) -> DVector<f64>;

    fn apply_block(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nrows(), x.ncols());
        for j in 0..x.ncols() {
            out.set_column(j, &self.apply(&x.column(j).into_owned()));
        }
        out
    }

    fn apply_transpose_block(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.ncols(), y.ncols());
        for j in 0..y.ncols() {
            out.set_column(j, &self.apply_transpose(&y.column(j).into_owned()));
        }
        out
    }
}

/// A dense matrix as a [`LinearMap`]; used by tests and small oracles.
pub struct DenseLinearMap(pub DMatrix<f64>);

impl LinearMap for DenseLinearMap {
    fn nrows(&self) -> usize {
        self.0.nrows()
    }
    fn ncols(&self) -> usize {
        self.0.ncols()
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.0 * x
    }
    fn apply_transpose(&self, y: &DVector<f64>) -> DVector<f64> {
        self.0.transpose() * y
    }
    fn apply_block(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        &self.0 * x
    }
    fn apply_transpose_block(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        self.0.transpose() * y
    }
}

/// The whitened, preconditioned map `x -> Gamma^{-1/2} F K^{-1} D^{1/2} x`
/// from source coefficients in the prior-weighted frame to noise-scaled
/// sensor readings.
pub struct PreconditionedMap<'a> {
    pub heat: &'a HeatWorkspace,
    pub prior: &'a BilaplacianPrior,
    /// Noise standard deviation (shared by all sensors).
    pub sigma: f64,
}

impl PreconditionedMap<'_> {
    fn precondition(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x.clone();
        for (i, mut row) in y.row_iter_mut().enumerate() {
            row *= self.prior.d_half()[i];
        }
        self.prior.solve_k_block(&y)
    }
}

impl LinearMap for PreconditionedMap<'_> {
    fn nrows(&self) -> usize {
        self.heat.ops.n_sensors()
    }
    fn ncols(&self) -> usize {
        self.heat.ops.n_source()
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let s = self.prior.solve_k(&x.component_mul(self.prior.d_half()));
        self.heat.apply_forward(&s) / self.sigma
    }
    fn apply_transpose(&self, y: &DVector<f64>) -> DVector<f64> {
        let a = self.heat.apply_adjoint(&(y / self.sigma));
        self.prior.solve_k(&a).component_mul(self.prior.d_half())
    }
    fn apply_block(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.heat.apply_forward_block(&self.precondition(x)) / self.sigma
    }
    fn apply_transpose_block(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let a = self.heat.apply_adjoint_block(&(y / self.sigma));
        let mut z = self.prior.solve_k_block(&a);
        for (i, mut row) in z.row_iter_mut().enumerate() {
            row *= self.prior.d_half()[i];
        }
        z
    }
}

/// Dense matrix of a map, built column by column through `apply_block`.
pub fn materialize(map: &impl LinearMap) -> DMatrix<f64> {
    map.apply_block(&DMatrix::identity(map.ncols(), map.ncols()))
}

/// Thin factorization `map' ~ Q R` with singular-value ordering.
#[derive(Debug, Clone)]
pub struct MapFactor {
    /// Orthonormal basis of the input space of the transpose, `ncols x rank`.
    pub q: DMatrix<f64>,
    /// Coefficients, `rank x nrows`; its columns correspond to sensors.
    pub r: DMatrix<f64>,
    /// Retained singular values, decreasing.
    pub singular_values: DVector<f64>,
    /// True when the rank cap cut the spectrum before the relative
    /// threshold was reached.
    pub saturated: bool,
}

impl MapFactor {
    pub fn rank(&self) -> usize {
        self.q.ncols()
    }

    /// True for the placeholder factor of an (all but) zero map.
    pub fn is_null(&self) -> bool {
        self.singular_values.amax() == 0.0
    }
}

/// Randomized factorization of the transpose of `map`.
///
/// The sketch width starts at 10 columns (plus oversampling) and grows in
/// steps of 10 until the trailing retained singular value drops below
/// `singular_ratio` times the largest, or the width reaches
/// `min(max_rank, nrows, ncols)`. Each attempt redraws its sketch from a
/// seed derived from `seed` and the attempt number, so results do not
/// depend on how many attempts earlier widths consumed.
pub fn factorize_map(map: &impl LinearMap, cfg: &LowRankConfig, seed: u64) -> Result<MapFactor> {
    let (m, n) = (map.nrows(), map.ncols());
    if m == 0 || n == 0 {
        return Err(Error::Factorization("map has a zero dimension".into()));
    }
    let cap = cfg.max_rank.min(m).min(n);

    let mut attempt = 0u64;
    let mut k = 10usize.min(cap);
    loop {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt);
        let width = (k + cfg.oversample).min(n);

        // Sketch the range of map' with a Gaussian test matrix.
        let mut g = DMatrix::zeros(m, width);
        for j in 0..width {
            for i in 0..m {
                g[(i, j)] = rng.sample::<f64, _>(StandardNormal);
            }
        }
        let y = map.apply_transpose_block(&g);
        let mut q = thin_q(y);
        for _ in 0..cfg.power_iterations {
            let z = map.apply_block(&q);
            q = thin_q(map.apply_transpose_block(&z));
        }

        // Project: map' ~ Q (map Q)'.
        let b = map.apply_block(&q);
        let r = b.transpose();

        let svd = r.clone().svd(true, true);
        let sigma = &svd.singular_values;
        let s1 = sigma.max();
        if !s1.is_finite() {
            return Err(Error::Factorization("singular values are not finite".into()));
        }
        if s1 == 0.0 {
            // Nothing to observe: keep a rank-one zero factor so downstream
            // formulas degrade to the prior.
            let mut q0 = DMatrix::zeros(n, 1);
            q0[(0, 0)] = 1.0;
            return Ok(MapFactor {
                q: q0,
                r: DMatrix::zeros(1, m),
                singular_values: DVector::zeros(1),
                saturated: false,
            });
        }

        let kept_by_ratio = sigma.iter().filter(|&&s| s >= cfg.singular_ratio * s1).count();
        if kept_by_ratio <= k || k == cap {
            let keep = kept_by_ratio.min(cap);
            let saturated = kept_by_ratio > cap;
            let u = svd.u.as_ref().expect("svd with u");
            let vt = svd.v_t.as_ref().expect("svd with v_t");
            let q_final = &q * u.columns(0, keep);
            let mut r_final = vt.rows(0, keep).into_owned();
            for (i, mut row) in r_final.row_iter_mut().enumerate() {
                row *= sigma[i];
            }
            return Ok(MapFactor {
                q: q_final,
                r: r_final,
                singular_values: sigma.rows(0, keep).into_owned(),
                saturated,
            });
        }

        k = (k + 10).min(cap);
        attempt += 1;
    }
}

fn thin_q(y: DMatrix<f64>) -> DMatrix<f64> {
    let ncols = y.ncols();
    let qr = y.qr();
    let q = qr.q();
    // nalgebra already returns the thin factor; guard the column count.
    q.columns(0, ncols.min(q.ncols())).into_owned()
}

/// Everything the design criterion and the posterior need, detached from
/// the operators that produced it.
#[derive(Debug, Clone)]
pub struct LowRankFactor {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    /// Prior covariance compressed onto the basis: `C = Q' C0 Q`.
    pub c: DMatrix<f64>,
    /// Symmetric PSD square root of `c`.
    pub c_half: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    /// Trace of the (lumped-frame) prior covariance.
    pub trace_c0: f64,
    /// Calibrated noise variance.
    pub sigma2: f64,
    pub saturated: bool,
}

impl LowRankFactor {
    /// Combine a map factorization with the prior covariance root
    /// (`cov_root` must apply the symmetric root of `C0` to a block).
    pub fn assemble(
        factor: MapFactor,
        cov_root: impl Fn(&DMatrix<f64>) -> DMatrix<f64>,
        trace_c0: f64,
        sigma2: f64,
    ) -> Result<Self> {
        let z = cov_root(&factor.q);
        // C = (L Q)'(L Q) is symmetric PSD by construction.
        let mut c = z.transpose() * &z;
        let ct = c.transpose();
        c = 0.5 * (&c + ct);
        let c_half = symmetric_sqrt(&c)?;
        Ok(LowRankFactor {
            q: factor.q,
            r: factor.r,
            c,
            c_half,
            singular_values: factor.singular_values,
            trace_c0,
            sigma2,
            saturated: factor.saturated,
        })
    }

    pub fn rank(&self) -> usize {
        self.q.ncols()
    }

    pub fn n_source(&self) -> usize {
        self.q.nrows()
    }

    pub fn n_sensors(&self) -> usize {
        self.r.ncols()
    }

    /// Write `meta` (text) and `bin` (little-endian doubles) files.
    pub fn save(&self, dir: &Path, config_hash: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let payload = self.payload_bytes();
        let checksum = hex(&Sha256::digest(&payload));
        std::fs::write(dir.join("factor.bin"), &payload)?;

        let mut meta = String::new();
        meta.push_str("format = 1\n");
        meta.push_str(&format!("config = {config_hash}\n"));
        meta.push_str(&format!("n_source = {}\n", self.n_source()));
        meta.push_str(&format!("n_sensors = {}\n", self.n_sensors()));
        meta.push_str(&format!("rank = {}\n", self.rank()));
        meta.push_str(&format!("sigma2 = {:e}\n", self.sigma2));
        meta.push_str(&format!("trace_c0 = {:e}\n", self.trace_c0));
        meta.push_str(&format!("saturated = {}\n", self.saturated));
        meta.push_str(&format!("checksum = {checksum}\n"));
        std::fs::write(dir.join("factor.meta"), meta)?;
        Ok(())
    }

    /// Load a factorization saved by [`save`](Self::save), verifying the
    /// configuration hash and the payload checksum.
    pub fn load(dir: &Path, expected_hash: &str) -> Result<Self> {
        let meta_path = dir.join("factor.meta");
        let text = std::fs::read_to_string(&meta_path)?;
        let mut fields = std::collections::HashMap::new();
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                fields.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let get = |k: &str| {
            fields
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Cache(format!("{} lacks field {k}", meta_path.display())))
        };
        if get("format")? != "1" {
            return Err(Error::Cache("unknown factor format".into()));
        }
        if get("config")? != expected_hash {
            return Err(Error::Cache("cached factorization was built from a different configuration".into()));
        }
        let parse = |k: &str| -> Result<f64> {
            get(k)?
                .parse::<f64>()
                .map_err(|e| Error::Cache(format!("bad {k} in factor.meta: {e}")))
        };
        let n_source = parse("n_source")? as usize;
        let n_sensors = parse("n_sensors")? as usize;
        let rank = parse("rank")? as usize;
        let sigma2 = parse("sigma2")?;
        let trace_c0 = parse("trace_c0")?;
        let saturated = get("saturated")? == "true";

        let mut payload = Vec::new();
        std::fs::File::open(dir.join("factor.bin"))?.read_to_end(&mut payload)?;
        if hex(&Sha256::digest(&payload)) != get("checksum")? {
            return Err(Error::Cache("factor.bin does not match its checksum".into()));
        }

        let expected_len = 8 * (n_source * rank + rank * n_sensors + 2 * rank * rank + rank);
        if payload.len() != expected_len {
            return Err(Error::Cache(format!(
                "factor.bin has {} bytes, expected {expected_len}",
                payload.len()
            )));
        }
        let mut cursor = payload.as_slice();
        let mut take = |len: usize| -> Vec<f64> {
            let (head, tail) = cursor.split_at(8 * len);
            cursor = tail;
            head.chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect()
        };
        let q = DMatrix::from_column_slice(n_source, rank, &take(n_source * rank));
        let r = DMatrix::from_column_slice(rank, n_sensors, &take(rank * n_sensors));
        let c = DMatrix::from_column_slice(rank, rank, &take(rank * rank));
        let c_half = DMatrix::from_column_slice(rank, rank, &take(rank * rank));
        let singular_values = DVector::from_column_slice(&take(rank));

        Ok(LowRankFactor {
            q,
            r,
            c,
            c_half,
            singular_values,
            trace_c0,
            sigma2,
            saturated,
        })
    }

    fn payload_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let mut push = |values: &[f64]| {
            for v in values {
                out.write_all(&v.to_le_bytes()).expect("vec write");
            }
        };
        push(self.q.as_slice());
        push(self.r.as_slice());
        push(self.c.as_slice());
        push(self.c_half.as_slice());
        push(self.singular_values.as_slice());
        out
    }
}

/// Symmetric PSD square root by eigendecomposition; tiny negative
/// eigenvalues from roundoff are clamped to zero.
pub fn symmetric_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let eig = a.clone().symmetric_eigen();
    let floor = -1e-10 * eig.eigenvalues.amax().max(1.0);
    for &l in eig.eigenvalues.iter() {
        if l < floor {
            return Err(Error::Factorization(format!(
                "matrix is not positive semidefinite (eigenvalue {l:.3e})"
            )));
        }
    }
    let mut root = DMatrix::zeros(n, n);
    for j in 0..n {
        let s = eig.eigenvalues[j].max(0.0).sqrt();
        let col = eig.eigenvectors.column(j);
        root += s * &col * col.transpose();
    }
    Ok(root)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
