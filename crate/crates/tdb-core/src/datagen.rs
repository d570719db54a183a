//! Streaming snapshot sources: an analytic Runge-function field, an exact
//! low-multirank stream for lossless oracles, and a file-backed reader.
//!
//! All sources share the [`SnapshotStream`] trait: a sequential cursor that
//! emits snapshots at a fixed step. Analytic sources also provide the exact
//! time derivative so integrator accuracy can be isolated from
//! finite-difference error.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::archive::read_raw_tensor;
use crate::error::{Result, TdbError};
use crate::tensor::{mode_product, DenseTensor, ModeWeights, MultiRank};

/// One emitted snapshot; `derivative` is present only for sources that can
/// evaluate it exactly.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub time: f64,
    pub data: DenseTensor,
    pub derivative: Option<DenseTensor>,
}

/// A sequential source of snapshots at fixed time step.
pub trait SnapshotStream {
    fn dims(&self) -> &[usize];
    fn weights(&self) -> &ModeWeights;
    fn dt(&self) -> f64;
    /// True when emitted snapshots carry the analytic time derivative.
    fn has_exact_derivative(&self) -> bool;
    /// True when [`SnapshotStream::peek_next`] is available.
    fn has_lookahead(&self) -> bool;
    /// Emit the next snapshot and advance the cursor; `None` when exhausted.
    fn next_snapshot(&mut self) -> Result<Option<Snapshot>>;
    /// The data of the snapshot that `next_snapshot` would return, without
    /// advancing. Only meaningful when `has_lookahead()`.
    fn peek_next(&mut self) -> Result<Option<DenseTensor>> {
        Ok(None)
    }
}

/// Composite trapezoid quadrature weights on a uniform grid with spacing `h`.
pub fn trapezoid_weights(n: usize, h: f64) -> Vec<f64> {
    assert!(n >= 2);
    let mut w = vec![h; n];
    w[0] = 0.5 * h;
    w[n - 1] = 0.5 * h;
    w
}

/// Analytic field 1 / (a(t)^2 + x1^2 + x2^2 + x3^2) with
/// a(t) = 1 - 0.5 exp(-alpha (t-1)^2) on a uniform tensor grid.
pub struct RungeStream {
    dims: Vec<usize>,
    weights: ModeWeights,
    axis_sq: Vec<Vec<f64>>,
    dt: f64,
    alpha: f64,
    cursor: f64,
    t_end: Option<f64>,
}

pub const RUNGE_DEFAULT_ALPHA: f64 = 0.5;

impl RungeStream {
    /// Uniform grid of `n` points per axis on `[domain.0, domain.1]^3`.
    pub fn new(n: usize, domain: (f64, f64), dt: f64, alpha: f64) -> Result<Self> {
        if n < 2 || domain.1 <= domain.0 || dt <= 0.0 {
            return Err(TdbError::Config(format!(
                "runge stream: need n >= 2, increasing domain, positive dt (got n={n}, domain={domain:?}, dt={dt})"
            )));
        }
        let h = (domain.1 - domain.0) / (n - 1) as f64;
        let axis: Vec<f64> = (0..n).map(|i| domain.0 + h * i as f64).collect();
        let axis_sq: Vec<f64> = axis.iter().map(|x| x * x).collect();
        let w = trapezoid_weights(n, h);
        Ok(Self {
            dims: vec![n; 3],
            weights: ModeWeights::new(vec![w.clone(), w.clone(), w])?,
            axis_sq: vec![axis_sq.clone(), axis_sq.clone(), axis_sq],
            dt,
            alpha,
            cursor: 0.0,
            t_end: None,
        })
    }

    /// Defaults mirroring the reference configuration: 126 points per axis on
    /// [-pi, pi]^3, dt = 5e-3.
    pub fn reference() -> Self {
        Self::new(
            126,
            (-std::f64::consts::PI, std::f64::consts::PI),
            5e-3,
            RUNGE_DEFAULT_ALPHA,
        )
        .expect("reference parameters are valid")
    }

    pub fn with_start(mut self, t0: f64) -> Self {
        self.cursor = t0;
        self
    }

    pub fn with_end(mut self, t_end: f64) -> Self {
        self.t_end = Some(t_end);
        self
    }

    pub fn a(&self, t: f64) -> f64 {
        1.0 - 0.5 * (-self.alpha * (t - 1.0) * (t - 1.0)).exp()
    }

    pub fn a_dot(&self, t: f64) -> f64 {
        self.alpha * (t - 1.0) * (-self.alpha * (t - 1.0) * (t - 1.0)).exp()
    }

    /// f(x, t) on the full grid.
    pub fn snapshot_at(&self, t: f64) -> DenseTensor {
        let a2 = self.a(t).powi(2);
        let (x1, x2, x3) = (&self.axis_sq[0], &self.axis_sq[1], &self.axis_sq[2]);
        let mut out = DenseTensor::zeros(&self.dims);
        let vals = out.values_mut();
        let n = self.dims[0];
        let mut off = 0;
        for k in 0..n {
            let sk = a2 + x3[k];
            for j in 0..n {
                let sjk = sk + x2[j];
                for xi in x1.iter().take(n) {
                    vals[off] = 1.0 / (sjk + xi);
                    off += 1;
                }
            }
        }
        out
    }

    /// Exact time derivative -2 a(t) a'(t) f^2.
    pub fn derivative_at(&self, t: f64) -> DenseTensor {
        let c = -2.0 * self.a(t) * self.a_dot(t);
        let mut f = self.snapshot_at(t);
        for v in f.values_mut() {
            *v = c * *v * *v;
        }
        f
    }
}

impl SnapshotStream for RungeStream {
    fn dims(&self) -> &[usize] {
        &self.dims
    }

    fn weights(&self) -> &ModeWeights {
        &self.weights
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn has_exact_derivative(&self) -> bool {
        true
    }

    fn has_lookahead(&self) -> bool {
        true
    }

    fn next_snapshot(&mut self) -> Result<Option<Snapshot>> {
        let t = self.cursor;
        if let Some(end) = self.t_end {
            if t > end + 1e-12 {
                return Ok(None);
            }
        }
        self.cursor = t + self.dt;
        Ok(Some(Snapshot {
            time: t,
            data: self.snapshot_at(t),
            derivative: Some(self.derivative_at(t)),
        }))
    }

    fn peek_next(&mut self) -> Result<Option<DenseTensor>> {
        if let Some(end) = self.t_end {
            if self.cursor > end + 1e-12 {
                return Ok(None);
            }
        }
        Ok(Some(self.snapshot_at(self.cursor)))
    }
}

/// Stream whose snapshots have exact multirank for every t:
/// V(t) = T(t) x_1 U1(t) ... with U_n(t) = exp(t G_n) B_n for a fixed random
/// skew-symmetric generator G_n and orthonormal initial frame B_n, and a
/// smooth trigonometric core. The derivative follows by the product rule,
/// using U'_n = G_n U_n.
pub struct ExactRankStream {
    dims: Vec<usize>,
    ranks: MultiRank,
    weights: ModeWeights,
    generators: Vec<DMatrix<f64>>,
    frames: Vec<DMatrix<f64>>,
    core_mean: DenseTensor,
    core_amp: DenseTensor,
    core_freq: DenseTensor,
    core_phase: DenseTensor,
    dt: f64,
    cursor: f64,
}

impl ExactRankStream {
    pub fn new(dims: &[usize], ranks: MultiRank, seed: u64, dt: f64) -> Result<Self> {
        if ranks.ranks().len() != dims.len() {
            return Err(TdbError::InvalidRank {
                context: format!(
                    "exact rank stream: {} ranks for {} dims",
                    ranks.ranks().len(),
                    dims.len()
                ),
            });
        }
        if dt <= 0.0 {
            return Err(TdbError::Config(format!("exact rank stream: dt {dt} <= 0")));
        }
        let mut rng = StdRng::seed_from_u64(seed);
        let mut generators = Vec::with_capacity(dims.len());
        let mut frames = Vec::with_capacity(dims.len());
        for (&n, &r) in dims.iter().zip(ranks.ranks()) {
            // modest generator norm keeps the trajectories slow and smooth
            let mut g = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..i {
                    let v = rng.random_range(-1.0..1.0) * 0.1 / (n as f64).sqrt();
                    g[(i, j)] = v;
                    g[(j, i)] = -v;
                }
            }
            let raw = DMatrix::from_fn(n, r, |_, _| rng.random_range(-1.0..1.0));
            let qr = raw.qr();
            let mut b = qr.q().columns(0, r).into_owned();
            // protect against unlucky sign/degeneracy: QR of a random matrix
            // has full column rank with probability one
            for j in 0..r {
                if b.column(j).amax() == 0.0 {
                    b[(j, j)] = 1.0;
                }
            }
            generators.push(g);
            frames.push(b);
        }
        let rd = ranks.ranks().to_vec();
        let core_mean = DenseTensor::from_fn(&rd, |_| {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            sign * rng.random_range(0.6..1.4)
        });
        let core_amp = DenseTensor::from_fn(&rd, |_| rng.random_range(0.05..0.2));
        let core_freq = DenseTensor::from_fn(&rd, |_| rng.random_range(0.2..0.6));
        let core_phase = DenseTensor::from_fn(&rd, |_| {
            rng.random_range(0.0..std::f64::consts::TAU)
        });
        Ok(Self {
            dims: dims.to_vec(),
            weights: ModeWeights::unit(dims),
            ranks,
            generators,
            frames,
            core_mean,
            core_amp,
            core_freq,
            core_phase,
            dt,
            cursor: 0.0,
        })
    }

    pub fn ranks(&self) -> &MultiRank {
        &self.ranks
    }

    pub fn basis_at(&self, n: usize, t: f64) -> DMatrix<f64> {
        let rot = (&self.generators[n] * t).exp();
        rot * &self.frames[n]
    }

    fn basis_dot_at(&self, n: usize, t: f64) -> DMatrix<f64> {
        &self.generators[n] * self.basis_at(n, t)
    }

    pub fn core_at(&self, t: f64) -> DenseTensor {
        let mut c = self.core_mean.clone();
        for (((v, &a), &w), &p) in c
            .values_mut()
            .iter_mut()
            .zip(self.core_amp.values())
            .zip(self.core_freq.values())
            .zip(self.core_phase.values())
        {
            *v += a * (w * t + p).sin();
        }
        c
    }

    fn core_dot_at(&self, t: f64) -> DenseTensor {
        let mut c = DenseTensor::zeros(self.core_mean.dims());
        for (((v, &a), &w), &p) in c
            .values_mut()
            .iter_mut()
            .zip(self.core_amp.values())
            .zip(self.core_freq.values())
            .zip(self.core_phase.values())
        {
            *v = a * w * (w * t + p).cos();
        }
        c
    }

    fn expand(&self, core: &DenseTensor, bases: &[DMatrix<f64>]) -> DenseTensor {
        let mut out = core.clone();
        for (n, b) in bases.iter().enumerate() {
            out = mode_product(&out, b, n).expect("consistent shapes");
        }
        out
    }

    pub fn snapshot_at(&self, t: f64) -> DenseTensor {
        let bases: Vec<_> = (0..self.dims.len()).map(|n| self.basis_at(n, t)).collect();
        self.expand(&self.core_at(t), &bases)
    }

    pub fn derivative_at(&self, t: f64) -> DenseTensor {
        let p = self.dims.len();
        let bases: Vec<_> = (0..p).map(|n| self.basis_at(n, t)).collect();
        let core = self.core_at(t);
        let mut out = self.expand(&self.core_dot_at(t), &bases);
        for j in 0..p {
            let mut term = core.clone();
            for n in 0..p {
                let factor = if n == j {
                    self.basis_dot_at(n, t)
                } else {
                    bases[n].clone()
                };
                term = mode_product(&term, &factor, n).expect("consistent shapes");
            }
            out.axpy(1.0, &term).expect("consistent shapes");
        }
        out
    }
}

impl SnapshotStream for ExactRankStream {
    fn dims(&self) -> &[usize] {
        &self.dims
    }

    fn weights(&self) -> &ModeWeights {
        &self.weights
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn has_exact_derivative(&self) -> bool {
        true
    }

    fn has_lookahead(&self) -> bool {
        true
    }

    fn next_snapshot(&mut self) -> Result<Option<Snapshot>> {
        let t = self.cursor;
        self.cursor = t + self.dt;
        Ok(Some(Snapshot {
            time: t,
            data: self.snapshot_at(t),
            derivative: Some(self.derivative_at(t)),
        }))
    }

    fn peek_next(&mut self) -> Result<Option<DenseTensor>> {
        Ok(Some(self.snapshot_at(self.cursor)))
    }
}

/// Snapshots read in order from TDBT files listed in a plain-text manifest.
///
/// Manifest syntax (one `key = value` pair per line, `#` comments):
///
/// ```text
/// dims = 64 64 64
/// dt = 0.005
/// t0 = 0.0              # optional, default 0
/// lookahead = true      # optional, default false
/// weights = unit        # or omit and give per-mode lines:
/// weights.0 = 0.5 1.0 1.0 0.5
/// file = snap_0000.tdbt
/// file = snap_0001.tdbt
/// ```
///
/// File paths are resolved relative to the manifest's directory.
pub struct FileStream {
    dims: Vec<usize>,
    weights: ModeWeights,
    dt: f64,
    t0: f64,
    lookahead: bool,
    files: Vec<PathBuf>,
    cursor: usize,
}

impl FileStream {
    pub fn from_manifest(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let manifest_name = path.display().to_string();
        let fail = |context: String| TdbError::Format {
            path: manifest_name.clone(),
            context,
        };

        let mut dims: Option<Vec<usize>> = None;
        let mut dt: Option<f64> = None;
        let mut t0 = 0.0;
        let mut lookahead = false;
        let mut unit_weights = false;
        let mut mode_weights: Vec<(usize, Vec<f64>)> = Vec::new();
        let mut files = Vec::new();

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| fail(format!("line {}: expected key = value", lineno + 1)))?;
            let key = key.trim();
            let value = value.trim();
            match key {
                "dims" => {
                    let parsed: std::result::Result<Vec<usize>, _> =
                        value.split_whitespace().map(str::parse).collect();
                    dims = Some(parsed.map_err(|_| {
                        fail(format!("line {}: bad dims '{value}'", lineno + 1))
                    })?);
                }
                "dt" => {
                    dt = Some(value.parse().map_err(|_| {
                        fail(format!("line {}: bad dt '{value}'", lineno + 1))
                    })?);
                }
                "t0" => {
                    t0 = value.parse().map_err(|_| {
                        fail(format!("line {}: bad t0 '{value}'", lineno + 1))
                    })?;
                }
                "lookahead" => {
                    lookahead = value.parse().map_err(|_| {
                        fail(format!("line {}: bad lookahead '{value}'", lineno + 1))
                    })?;
                }
                "weights" => {
                    if value != "unit" {
                        return Err(fail(format!(
                            "line {}: weights must be 'unit' or per-mode weights.N lines",
                            lineno + 1
                        )));
                    }
                    unit_weights = true;
                }
                "file" => files.push(dir.join(value)),
                _ if key.starts_with("weights.") => {
                    let mode: usize = key["weights.".len()..].parse().map_err(|_| {
                        fail(format!("line {}: bad weight key '{key}'", lineno + 1))
                    })?;
                    let parsed: std::result::Result<Vec<f64>, _> =
                        value.split_whitespace().map(str::parse).collect();
                    mode_weights.push((
                        mode,
                        parsed.map_err(|_| {
                            fail(format!("line {}: bad weights '{value}'", lineno + 1))
                        })?,
                    ));
                }
                _ => {
                    return Err(fail(format!("line {}: unknown key '{key}'", lineno + 1)));
                }
            }
        }

        let dims = dims.ok_or_else(|| fail("missing 'dims'".into()))?;
        let dt = dt.ok_or_else(|| fail("missing 'dt'".into()))?;
        if dt <= 0.0 {
            return Err(fail(format!("dt {dt} must be positive")));
        }
        if files.is_empty() {
            return Err(fail("manifest lists no files".into()));
        }
        let weights = if mode_weights.is_empty() || unit_weights {
            if !mode_weights.is_empty() {
                return Err(fail("both 'weights = unit' and weights.N given".into()));
            }
            ModeWeights::unit(&dims)
        } else {
            let mut per_mode = vec![None; dims.len()];
            for (mode, w) in mode_weights {
                if mode >= dims.len() {
                    return Err(fail(format!("weights.{mode} out of range")));
                }
                per_mode[mode] = Some(w);
            }
            let full: Option<Vec<Vec<f64>>> = per_mode.into_iter().collect();
            let w = ModeWeights::new(full.ok_or_else(|| {
                fail("weights.N lines must cover every mode".into())
            })?)?;
            w.check_dims(&dims)?;
            w
        };
        Ok(Self {
            dims,
            weights,
            dt,
            t0,
            lookahead,
            files,
            cursor: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    fn load(&self, idx: usize) -> Result<DenseTensor> {
        let path = &self.files[idx];
        let t = read_raw_tensor(path)?;
        if t.dims() != self.dims {
            return Err(TdbError::Format {
                path: path.display().to_string(),
                context: format!(
                    "snapshot dims {:?} do not match manifest dims {:?}",
                    t.dims(),
                    self.dims
                ),
            });
        }
        Ok(t)
    }
}

impl SnapshotStream for FileStream {
    fn dims(&self) -> &[usize] {
        &self.dims
    }

    fn weights(&self) -> &ModeWeights {
        &self.weights
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn has_exact_derivative(&self) -> bool {
        false
    }

    fn has_lookahead(&self) -> bool {
        self.lookahead
    }

    fn next_snapshot(&mut self) -> Result<Option<Snapshot>> {
        if self.cursor >= self.files.len() {
            return Ok(None);
        }
        let data = self.load(self.cursor)?;
        let snap = Snapshot {
            time: self.t0 + self.dt * self.cursor as f64,
            data,
            derivative: None,
        };
        self.cursor += 1;
        Ok(Some(snap))
    }

    fn peek_next(&mut self) -> Result<Option<DenseTensor>> {
        if !self.lookahead || self.cursor >= self.files.len() {
            return Ok(None);
        }
        Ok(Some(self.load(self.cursor)?))
    }
}
