//! End-to-end compression loop: consume a snapshot stream, evolve the
//! decomposition, let the rank controller intervene, and record every step.
//!
//! The same loop backs the CLI and the integration tests. Axis grouping is
//! applied on ingest, so the evolving state always lives in the (possibly
//! fused) p-order space.

use crate::adaptivity::{Action, AdaptiveConfig, Controller};
use crate::archive::{compression_ratio, weighted_compression_ratio, ArchiveWriter, RecordFlags};
use crate::datagen::{Snapshot, SnapshotStream};
use crate::error::{Result, TdbError};
use crate::evolve::{
    estimate_vdot, step, DerivScheme, Integrator, StepOptions, DEFAULT_PINV_TOL,
    DEFAULT_REORTH_TOL,
};
use crate::grouping::{fuse, GroupSpec};
use crate::hosvd::{full_mode_spectra, hosvd_truncate, ranks_for_energy};
use crate::state::TdbState;
use crate::tensor::{DenseTensor, ModeWeights, MultiRank};

/// Where the data derivative for each step comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeMode {
    /// Analytic derivative supplied by the stream.
    Exact,
    /// Finite differences over the snapshot window.
    Fd(DerivScheme),
}

/// Full configuration of one compression run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Initial multirank; `None` picks ranks from the first snapshot's
    /// spectra at the controller's gamma threshold.
    pub initial_ranks: Option<Vec<usize>>,
    pub integrator: Integrator,
    pub derivative: DerivativeMode,
    pub adaptive: AdaptiveConfig,
    pub pinv_tol: f64,
    pub reorth_tol: f64,
    /// Stop after this many steps even if the stream continues.
    pub max_steps: Option<usize>,
    /// Stop once the cursor passes this time.
    pub t_end: Option<f64>,
    /// Optional axis fusion applied to every snapshot.
    pub groups: Option<GroupSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            initial_ranks: None,
            integrator: Integrator::Rk2,
            derivative: DerivativeMode::Exact,
            adaptive: AdaptiveConfig::default(),
            pinv_tol: DEFAULT_PINV_TOL,
            reorth_tol: DEFAULT_REORTH_TOL,
            max_steps: None,
            t_end: None,
            groups: None,
        }
    }
}

/// One monitored step of a run.
#[derive(Debug, Clone)]
pub struct StepLog {
    pub t: f64,
    pub eps: f64,
    pub gamma: Vec<f64>,
    pub ranks: Vec<usize>,
    pub action: Action,
    pub cr: f64,
}

/// Result of a completed run.
#[derive(Debug)]
pub struct RunOutput {
    pub logs: Vec<StepLog>,
    pub final_state: TdbState,
    /// Dims and weights of the (possibly fused) working space.
    pub dims: Vec<usize>,
    pub weights: ModeWeights,
    pub weighted_cr: f64,
    pub reinit_count: usize,
}

impl RunOutput {
    pub fn max_eps(&self) -> f64 {
        self.logs.iter().fold(0.0, |m, l| m.max(l.eps))
    }

    pub fn rank_trace(&self) -> Vec<Vec<usize>> {
        let mut trace: Vec<Vec<usize>> = Vec::new();
        for l in &self.logs {
            if trace.last() != Some(&l.ranks) {
                trace.push(l.ranks.clone());
            }
        }
        trace
    }
}

struct Ingest<'a> {
    stream: &'a mut dyn SnapshotStream,
    groups: Option<&'a GroupSpec>,
    weights: ModeWeights,
}

impl<'a> Ingest<'a> {
    fn new(stream: &'a mut dyn SnapshotStream, groups: Option<&'a GroupSpec>) -> Result<Self> {
        let weights = match groups {
            Some(spec) => {
                // fuse a zero tensor once just to derive the fused weights
                let zero = DenseTensor::zeros(stream.dims());
                fuse(&zero, stream.weights(), spec)?.1
            }
            None => stream.weights().clone(),
        };
        Ok(Self {
            stream,
            groups,
            weights,
        })
    }

    fn apply(&self, t: &DenseTensor) -> Result<DenseTensor> {
        match self.groups {
            Some(spec) => Ok(fuse(t, self.stream.weights(), spec)?.0),
            None => Ok(t.clone()),
        }
    }

    fn next(&mut self) -> Result<Option<Snapshot>> {
        match self.stream.next_snapshot()? {
            None => Ok(None),
            Some(s) => Ok(Some(Snapshot {
                time: s.time,
                data: self.apply(&s.data)?,
                derivative: match &s.derivative {
                    Some(d) => Some(self.apply(d)?),
                    None => None,
                },
            })),
        }
    }
}

/// Derivative estimates available for the stage times of one step.
struct StageDerivs {
    entries: Vec<(f64, DenseTensor)>,
    dt: f64,
}

impl StageDerivs {
    fn lookup(&self, t: f64) -> Result<DenseTensor> {
        for (tq, d) in &self.entries {
            if (t - tq).abs() <= 1e-6 * self.dt {
                return Ok(d.clone());
            }
        }
        Err(TdbError::InsufficientHistory {
            needed: 1,
            have: 0,
        })
    }
}

fn fd_at_newest(window: &[Snapshot], scheme: DerivScheme) -> Result<DenseTensor> {
    let refs: Vec<(f64, &DenseTensor)> = window.iter().map(|s| (s.time, &s.data)).collect();
    Ok(estimate_vdot(&refs, scheme)?.vdot)
}

/// Build the derivative estimates used by the step from `window.last()` to
/// the snapshot after it (`next`). The window is ordered, newest last.
fn stage_derivatives(
    window: &[Snapshot],
    next: &Snapshot,
    mode: DerivativeMode,
    dt: f64,
) -> Result<StageDerivs> {
    let cur = window.last().expect("nonempty window");
    let mut entries = Vec::with_capacity(2);
    match mode {
        DerivativeMode::Exact => {
            let take = |s: &Snapshot| -> Result<(f64, DenseTensor)> {
                Ok((
                    s.time,
                    s.derivative.clone().ok_or_else(|| {
                        TdbError::Config(
                            "exact derivative requested but the stream has none".into(),
                        )
                    })?,
                ))
            };
            entries.push(take(cur)?);
            entries.push(take(next)?);
        }
        DerivativeMode::Fd(scheme) => {
            let mut extended: Vec<Snapshot> = window.to_vec();
            extended.push(next.clone());
            match scheme {
                DerivScheme::Fd1 => {
                    // at the current time: backward difference, or a forward
                    // one on the very first step
                    let at_cur = if window.len() >= 2 {
                        fd_at_newest(window, DerivScheme::Fd1)?
                    } else {
                        fd_at_newest(&extended, DerivScheme::Fd1)?
                    };
                    entries.push((cur.time, at_cur));
                    entries.push((next.time, fd_at_newest(&extended, DerivScheme::Fd1)?));
                }
                DerivScheme::Fd2 => {
                    let at_cur = if window.len() >= 3 {
                        fd_at_newest(window, DerivScheme::Fd2)?
                    } else if window.len() == 2 {
                        fd_at_newest(window, DerivScheme::Fd1)?
                    } else {
                        fd_at_newest(&extended, DerivScheme::Fd1)?
                    };
                    entries.push((cur.time, at_cur));
                    let at_next = if extended.len() >= 3 {
                        fd_at_newest(&extended, DerivScheme::Fd2)?
                    } else {
                        fd_at_newest(&extended, DerivScheme::Fd1)?
                    };
                    entries.push((next.time, at_next));
                }
                DerivScheme::Fd2Central => {
                    // central at the current time uses the lookahead value;
                    // the corrector stage falls back to a backward stencil
                    let at_cur = if window.len() >= 2 {
                        let refs: Vec<(f64, &DenseTensor)> = [
                            (&window[window.len() - 2], ()),
                            (cur, ()),
                            (next, ()),
                        ]
                        .iter()
                        .map(|(s, _)| (s.time, &s.data))
                        .collect();
                        estimate_vdot(&refs, DerivScheme::Fd2Central)?.vdot
                    } else {
                        fd_at_newest(&extended, DerivScheme::Fd1)?
                    };
                    entries.push((cur.time, at_cur));
                    let at_next = if extended.len() >= 3 {
                        fd_at_newest(&extended, DerivScheme::Fd2)?
                    } else {
                        fd_at_newest(&extended, DerivScheme::Fd1)?
                    };
                    entries.push((next.time, at_next));
                }
            }
        }
    }
    Ok(StageDerivs { entries, dt })
}

/// Run the full compression loop. When `writer` is given, every monitored
/// step is appended to the archive.
pub fn run(
    stream: &mut dyn SnapshotStream,
    config: &RunConfig,
    mut writer: Option<&mut ArchiveWriter>,
) -> Result<RunOutput> {
    config.adaptive.validate()?;
    if config.derivative == DerivativeMode::Exact && !stream.has_exact_derivative() {
        return Err(TdbError::Config(
            "exact derivative requested but the stream does not provide one".into(),
        ));
    }
    if config.derivative == DerivativeMode::Fd(DerivScheme::Fd2Central) && !stream.has_lookahead()
    {
        return Err(TdbError::Config(
            "central differences need a lookahead-capable stream".into(),
        ));
    }

    let dt = stream.dt();
    let mut ingest = Ingest::new(stream, config.groups.as_ref())?;
    let weights = ingest.weights.clone();

    let first = ingest.next()?.ok_or_else(|| TdbError::Degenerate {
        context: "stream produced no snapshots".into(),
    })?;
    let dims = first.data.dims().to_vec();

    let ranks = match &config.initial_ranks {
        Some(r) => MultiRank::new(r.clone(), &dims)?,
        None => {
            let spectra = full_mode_spectra(&first.data, &weights)?;
            ranks_for_energy(&spectra, config.adaptive.gamma_th, &dims)?
        }
    };
    let mut state = hosvd_truncate(&first.data, &weights, &ranks, first.time)?;
    let mut controller = Controller::new(config.adaptive.clone())?;

    let opts = StepOptions {
        pinv_tol: config.pinv_tol,
        reorth_tol: config.reorth_tol,
    };

    let mut window: Vec<Snapshot> = vec![first];
    let mut logs: Vec<StepLog> = Vec::new();
    let mut reinit_count = 0usize;
    let mut steps = 0usize;

    loop {
        let current = window.last().expect("window is never empty");

        // monitor the state against the snapshot at the same time
        let ranks_before = state.multirank().ranks().to_vec();
        let decision = controller.observe(&current.data, &state)?;
        let (eps, gamma, action) = match decision {
            Some(d) => {
                if let Some(ns) = d.new_state {
                    state = ns;
                }
                if d.action.is_reinit() {
                    reinit_count += 1;
                }
                (d.eps, d.gamma, d.action)
            }
            None => (f64::NAN, vec![f64::NAN; dims.len()], Action::None),
        };
        let ranks_now = state.multirank();
        let cr = compression_ratio(&dims, &ranks_now);
        logs.push(StepLog {
            t: state.time,
            eps,
            gamma,
            ranks: ranks_now.ranks().to_vec(),
            action,
            cr,
        });
        if let Some(w) = writer.as_deref_mut() {
            w.append(
                &state,
                RecordFlags {
                    reinit: action.is_reinit(),
                    rank_changed: ranks_now.ranks() != ranks_before.as_slice(),
                },
                eps,
            )?;
        }

        // stop conditions
        if let Some(max) = config.max_steps {
            if steps >= max {
                break;
            }
        }
        if let Some(t_end) = config.t_end {
            if state.time + dt > t_end + 1e-9 * dt {
                break;
            }
        }

        let Some(next) = ingest.next()? else {
            break;
        };
        let stages = stage_derivatives(&window, &next, config.derivative, dt)?;
        let mut source = |t: f64| stages.lookup(t);
        state = step(&state, &mut source, next.time - state.time, config.integrator, &opts)?;

        window.push(next);
        if window.len() > 3 {
            window.remove(0);
        }
        steps += 1;
    }

    // time-harmonic mean over the per-step intervals
    let weighted_cr = if logs.len() < 2 {
        logs.first().map(|l| l.cr).unwrap_or(f64::NAN)
    } else {
        let intervals: Vec<(f64, f64, f64)> = logs
            .windows(2)
            .map(|pair| (pair[0].t, pair[1].t, pair[0].cr))
            .collect();
        weighted_compression_ratio(&intervals)?
    };

    Ok(RunOutput {
        logs,
        final_state: state,
        dims,
        weights,
        weighted_cr,
        reinit_count,
    })
}
