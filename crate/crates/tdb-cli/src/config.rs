//! TOML run configuration: stream selection, compression controls, outputs.

use serde::{Deserialize, Serialize};

use tdb_core::adaptivity::AdaptiveConfig;
use tdb_core::datagen::{ExactRankStream, FileStream, RungeStream, SnapshotStream};
use tdb_core::driver::{DerivativeMode, RunConfig};
use tdb_core::evolve::{DerivScheme, Integrator, DEFAULT_PINV_TOL, DEFAULT_REORTH_TOL};
use tdb_core::grouping::GroupSpec;
use tdb_core::tensor::MultiRank;
use tdb_core::{Result, TdbError};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub stream: StreamSection,
    pub compression: CompressionSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSection {
    /// "runge", "exact_rank", or "files".
    pub kind: String,
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
    // runge
    pub grid: Option<usize>,
    pub domain: Option<[f64; 2]>,
    pub alpha: Option<f64>,
    // exact_rank
    pub dims: Option<Vec<usize>>,
    pub ranks: Option<Vec<usize>>,
    pub seed: Option<u64>,
    // files
    pub manifest: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressionSection {
    /// "euler" or "rk2".
    pub integrator: String,
    /// "exact", "fd1", "fd2", or "fd2-central".
    pub derivative: String,
    /// TOML floats accept `inf`, which disables the controller.
    pub eps_th: f64,
    pub gamma_th: f64,
    pub slope_window: Option<usize>,
    pub check_interval: Option<usize>,
    pub initial_ranks: Option<Vec<usize>>,
    pub max_ranks: Option<Vec<usize>>,
    pub max_steps: Option<usize>,
    pub pinv_tol: Option<f64>,
    pub reorth_tol: Option<f64>,
    /// 1-based axis groups, e.g. [[1, 2], [3]].
    pub groups: Option<Vec<Vec<usize>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub archive: String,
    pub log: String,
}

impl Config {
    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| {
            TdbError::Config(format!("{}: {e}", path.display()))
        })
    }

    pub fn integrator(&self) -> Result<Integrator> {
        match self.compression.integrator.as_str() {
            "euler" => Ok(Integrator::Euler),
            "rk2" => Ok(Integrator::Rk2),
            other => Err(TdbError::Config(format!(
                "unknown integrator '{other}' (expected euler or rk2)"
            ))),
        }
    }

    pub fn derivative(&self) -> Result<DerivativeMode> {
        match self.compression.derivative.as_str() {
            "exact" => Ok(DerivativeMode::Exact),
            "fd1" => Ok(DerivativeMode::Fd(DerivScheme::Fd1)),
            "fd2" => Ok(DerivativeMode::Fd(DerivScheme::Fd2)),
            "fd2-central" => Ok(DerivativeMode::Fd(DerivScheme::Fd2Central)),
            other => Err(TdbError::Config(format!(
                "unknown derivative '{other}' (expected exact, fd1, fd2, fd2-central)"
            ))),
        }
    }

    /// Build the stream; its order is needed to resolve the group spec.
    pub fn make_stream(&self) -> Result<Box<dyn SnapshotStream>> {
        let s = &self.stream;
        let need = |field: &str| {
            TdbError::Config(format!("stream.{field} is required for kind '{}'", s.kind))
        };
        match s.kind.as_str() {
            "runge" => {
                let grid = s.grid.ok_or_else(|| need("grid"))?;
                let domain = s
                    .domain
                    .unwrap_or([-std::f64::consts::PI, std::f64::consts::PI]);
                let dt = s.dt.ok_or_else(|| need("dt"))?;
                let alpha = s.alpha.unwrap_or(tdb_core::datagen::RUNGE_DEFAULT_ALPHA);
                let mut stream = RungeStream::new(grid, (domain[0], domain[1]), dt, alpha)?;
                if let Some(t_end) = s.t_end {
                    stream = stream.with_end(t_end);
                }
                Ok(Box::new(stream))
            }
            "exact_rank" => {
                let dims = s.dims.clone().ok_or_else(|| need("dims"))?;
                let ranks = s.ranks.clone().ok_or_else(|| need("ranks"))?;
                let dt = s.dt.ok_or_else(|| need("dt"))?;
                let mr = MultiRank::new(ranks, &dims)?;
                Ok(Box::new(ExactRankStream::new(
                    &dims,
                    mr,
                    s.seed.unwrap_or(0),
                    dt,
                )?))
            }
            "files" => {
                let manifest = s.manifest.as_ref().ok_or_else(|| need("manifest"))?;
                Ok(Box::new(FileStream::from_manifest(manifest)?))
            }
            other => Err(TdbError::Config(format!(
                "unknown stream kind '{other}' (expected runge, exact_rank, files)"
            ))),
        }
    }

    pub fn run_config(&self, stream_order: usize) -> Result<RunConfig> {
        let c = &self.compression;
        let groups = match &c.groups {
            None => None,
            Some(gs) => {
                // config uses 1-based axis numbers
                let zero_based: Vec<Vec<usize>> = gs
                    .iter()
                    .map(|g| {
                        g.iter()
                            .map(|&a| {
                                a.checked_sub(1).ok_or_else(|| TdbError::InvalidGroups {
                                    context: "axis numbers are 1-based".into(),
                                })
                            })
                            .collect()
                    })
                    .collect::<Result<_>>()?;
                Some(GroupSpec::new(zero_based, stream_order)?)
            }
        };
        let adaptive = AdaptiveConfig {
            eps_th: c.eps_th,
            gamma_th: c.gamma_th,
            slope_window: c.slope_window.unwrap_or(10),
            max_ranks: c.max_ranks.clone(),
            check_interval: c.check_interval.unwrap_or(1),
        };
        adaptive.validate()?;
        Ok(RunConfig {
            initial_ranks: c.initial_ranks.clone(),
            integrator: self.integrator()?,
            derivative: self.derivative()?,
            adaptive,
            pinv_tol: c.pinv_tol.unwrap_or(DEFAULT_PINV_TOL),
            reorth_tol: c.reorth_tol.unwrap_or(DEFAULT_REORTH_TOL),
            max_steps: c.max_steps,
            t_end: self.stream.t_end,
            groups,
        })
    }

    /// The configuration with every default filled in, for echoing next to
    /// the run log.
    pub fn resolved(&self) -> Config {
        let mut out = self.clone();
        let c = &mut out.compression;
        c.slope_window = Some(c.slope_window.unwrap_or(10));
        c.check_interval = Some(c.check_interval.unwrap_or(1));
        c.pinv_tol = Some(c.pinv_tol.unwrap_or(DEFAULT_PINV_TOL));
        c.reorth_tol = Some(c.reorth_tol.unwrap_or(DEFAULT_REORTH_TOL));
        if out.stream.kind == "runge" {
            out.stream.domain = Some(
                out.stream
                    .domain
                    .unwrap_or([-std::f64::consts::PI, std::f64::consts::PI]),
            );
            out.stream.alpha = Some(
                out.stream
                    .alpha
                    .unwrap_or(tdb_core::datagen::RUNGE_DEFAULT_ALPHA),
            );
        }
        out
    }
}
