//! Error monitoring and the rank controller.
//!
//! The controller watches the instantaneous reconstruction error and the
//! captured-detail percentages. When the error exceeds its threshold the
//! state is reinitialized from a fresh HOSVD of the current snapshot, with
//! a rank increase if reinitialization alone does not recover. Ranks are
//! removed when the captured detail is excessive and the error trend over a
//! window of non-reinitialized steps is decreasing.

use std::collections::VecDeque;

use crate::coherent::core_mode_singular_values;
use crate::error::{Result, TdbError};
use crate::hosvd::{full_mode_spectra, hosvd_truncate, ranks_for_energy};
use crate::state::TdbState;
use crate::tensor::{weighted_frobenius, DenseTensor, MultiRank};

/// Thresholds and windows driving rank decisions.
#[derive(Debug, Clone)]
pub struct AdaptiveConfig {
    /// Maximum allowable weighted-Frobenius reconstruction error. An
    /// infinite threshold disables the controller entirely.
    pub eps_th: f64,
    /// Captured-detail percentage target in (0, 100).
    pub gamma_th: f64,
    /// Number of non-reinitialized steps over which the error slope is
    /// measured before a rank removal may fire.
    pub slope_window: usize,
    /// Optional per-mode rank caps (in addition to the mode extents).
    pub max_ranks: Option<Vec<usize>>,
    /// Steps between full error evaluations; 1 checks every step.
    pub check_interval: usize,
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eps_th <= 0.0 {
            return Err(TdbError::Config(format!(
                "eps_th must be positive, got {}",
                self.eps_th
            )));
        }
        if !(0.0 < self.gamma_th && self.gamma_th < 100.0) {
            return Err(TdbError::Config(format!(
                "gamma_th must lie in (0, 100), got {}",
                self.gamma_th
            )));
        }
        if self.slope_window < 2 {
            return Err(TdbError::Config(
                "slope_window must be at least 2".into(),
            ));
        }
        if self.check_interval < 1 {
            return Err(TdbError::Config("check_interval must be >= 1".into()));
        }
        Ok(())
    }

    pub fn inert(&self) -> bool {
        self.eps_th.is_infinite()
    }
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self {
            eps_th: f64::INFINITY,
            gamma_th: 99.999,
            slope_window: 10,
            max_ranks: None,
            check_interval: 1,
        }
    }
}

/// Controller verdict for one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    None,
    ReinitSameRank,
    ReinitAdd,
    ReinitRemove,
}

impl Action {
    pub fn label(&self) -> &'static str {
        match self {
            Action::None => "none",
            Action::ReinitSameRank => "reinit",
            Action::ReinitAdd => "add",
            Action::ReinitRemove => "remove",
        }
    }

    pub fn is_reinit(&self) -> bool {
        !matches!(self, Action::None)
    }
}

/// One monitored step.
#[derive(Debug, Clone)]
pub struct HistoryRecord {
    pub t: f64,
    pub eps: f64,
    pub gamma: Vec<f64>,
    pub ranks: Vec<usize>,
    pub reinit: bool,
}

/// Rolling error trace. Reinit-flagged entries are excluded from slope
/// computation and reset the slope window.
#[derive(Debug, Clone, Default)]
pub struct AdaptiveHistory {
    records: VecDeque<HistoryRecord>,
    capacity: usize,
}

impl AdaptiveHistory {
    pub fn new(capacity: usize) -> Self {
        Self {
            records: VecDeque::new(),
            capacity: capacity.max(2),
        }
    }

    pub fn push(&mut self, rec: HistoryRecord) -> Result<()> {
        if let Some(last) = self.records.back() {
            if rec.t <= last.t {
                return Err(TdbError::UnorderedTime {
                    prev: last.t,
                    t: rec.t,
                });
            }
        }
        self.records.push_back(rec);
        while self.records.len() > self.capacity {
            self.records.pop_front();
        }
        Ok(())
    }

    pub fn records(&self) -> impl Iterator<Item = &HistoryRecord> {
        self.records.iter()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// The trailing run of non-reinit records (the slope window resets at
    /// every reinitialization).
    fn since_last_reinit(&self) -> Vec<&HistoryRecord> {
        let mut run = Vec::new();
        for rec in self.records.iter().rev() {
            if rec.reinit {
                break;
            }
            run.push(rec);
        }
        run.reverse();
        run
    }
}

/// Weighted-Frobenius norm of the reconstruction error.
pub fn compute_error(v: &DenseTensor, state: &TdbState) -> Result<f64> {
    let diff = v.sub(&state.reconstruct())?;
    weighted_frobenius(&diff, &state.weights)
}

/// Captured-detail percentage for mode n:
/// sum(sigma^2) / (sum(sigma^2) + eps^2) * 100 with sigma from the
/// mode-n unfolded core.
pub fn captured_energy(state: &TdbState, eps: f64, n: usize) -> Result<f64> {
    let sv = core_mode_singular_values(&state.core, n)?;
    let energy: f64 = sv.iter().map(|s| s * s).sum();
    if energy == 0.0 && eps == 0.0 {
        return Err(TdbError::Degenerate {
            context: "captured_energy with zero core and zero error".into(),
        });
    }
    Ok(energy / (energy + eps * eps) * 100.0)
}

/// Least-squares slope of eps versus t over the last `m` non-reinit records.
/// Returns None when fewer than `m` such records exist since the last
/// reinitialization (treated as "not ready", i.e. slope >= 0).
pub fn error_slope(history: &AdaptiveHistory, m: usize) -> Option<f64> {
    let run = history.since_last_reinit();
    if run.len() < m {
        return None;
    }
    let tail = &run[run.len() - m..];
    let tbar = tail.iter().map(|r| r.t).sum::<f64>() / m as f64;
    let ebar = tail.iter().map(|r| r.eps).sum::<f64>() / m as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for r in tail {
        num += (r.t - tbar) * (r.eps - ebar);
        den += (r.t - tbar) * (r.t - tbar);
    }
    if den == 0.0 {
        return None;
    }
    Some(num / den)
}

/// Smallest rank capturing `gamma_th` percent under the measured error:
/// min r with sum_{i<=r} sigma_i^2 / (sum_{i<=r_n} sigma_i^2 + eps^2) >= gamma_th/100.
fn reduced_rank(sv: &[f64], eps: f64, gamma_th: f64) -> usize {
    let denom: f64 = sv.iter().map(|s| s * s).sum::<f64>() + eps * eps;
    if denom == 0.0 {
        return 1;
    }
    let mut cum = 0.0;
    for (i, s) in sv.iter().enumerate() {
        cum += s * s;
        if cum / denom * 100.0 >= gamma_th {
            return i + 1;
        }
    }
    sv.len()
}

/// Outcome of one controller evaluation.
#[derive(Debug, Clone)]
pub struct Decision {
    pub action: Action,
    /// Replacement state when a reinitialization fired.
    pub new_state: Option<TdbState>,
    /// Error of the state actually kept (post-reinit when one fired).
    pub eps: f64,
    pub gamma: Vec<f64>,
    /// Error before any action, as monitored.
    pub eps_before: f64,
}

/// The rank controller. Owns the history and the check cadence.
#[derive(Debug, Clone)]
pub struct Controller {
    pub config: AdaptiveConfig,
    pub history: AdaptiveHistory,
    steps_since_check: usize,
}

impl Controller {
    pub fn new(config: AdaptiveConfig) -> Result<Self> {
        config.validate()?;
        let capacity = (config.slope_window * 4).max(64);
        Ok(Self {
            config,
            history: AdaptiveHistory::new(capacity),
            steps_since_check: 0,
        })
    }

    /// Whether the next call to [`Controller::observe`] will run a full
    /// error evaluation.
    pub fn check_due(&self) -> bool {
        (self.steps_since_check + 1) >= self.config.check_interval
    }

    fn clamp_ranks(&self, ranks: Vec<usize>, dims: &[usize]) -> Result<MultiRank> {
        let mut ranks = ranks;
        if let Some(caps) = &self.config.max_ranks {
            for (r, &cap) in ranks.iter_mut().zip(caps) {
                *r = (*r).min(cap.max(1));
            }
        }
        MultiRank::clamped_feasible(ranks, dims)
    }

    /// Monitor one step and apply the decision flowchart:
    /// error breach -> reinit at current ranks, test, add ranks if still
    /// above threshold; excess captured detail with decreasing error trend
    /// -> reinit at reduced ranks; otherwise leave the state alone.
    pub fn observe(&mut self, v: &DenseTensor, state: &TdbState) -> Result<Option<Decision>> {
        self.steps_since_check += 1;
        if self.steps_since_check < self.config.check_interval {
            return Ok(None);
        }
        self.steps_since_check = 0;

        let eps_before = compute_error(v, state)?;
        let p = state.order();
        let gamma_before: Vec<f64> = (0..p)
            .map(|n| captured_energy(state, eps_before, n))
            .collect::<Result<_>>()?;

        let dims = state.dims();
        let current = state.multirank();

        let mut action = Action::None;
        let mut new_state = None;
        let mut eps = eps_before;
        let mut gamma = gamma_before.clone();

        if !self.config.inert() {
            if eps_before > self.config.eps_th {
                // reinitialize at the current multirank, then test
                let reinit = hosvd_truncate(v, &state.weights, &current, state.time)?;
                let eps_reinit = compute_error(v, &reinit)?;
                if eps_reinit > self.config.eps_th {
                    // still above the limit: pick ranks from fresh spectra
                    let spectra = full_mode_spectra(v, &state.weights)?;
                    let energy_ranks =
                        ranks_for_energy(&spectra, self.config.gamma_th, &dims)?;
                    let grown: Vec<usize> = current
                        .ranks()
                        .iter()
                        .zip(energy_ranks.ranks())
                        .map(|(&a, &b)| a.max(b))
                        .collect();
                    let target = self.clamp_ranks(grown, &dims)?;
                    let grown_state =
                        hosvd_truncate(v, &state.weights, &target, state.time)?;
                    eps = compute_error(v, &grown_state)?;
                    gamma = (0..p)
                        .map(|n| captured_energy(&grown_state, eps, n))
                        .collect::<Result<_>>()?;
                    new_state = Some(grown_state);
                    action = Action::ReinitAdd;
                } else {
                    eps = eps_reinit;
                    gamma = (0..p)
                        .map(|n| captured_energy(&reinit, eps, n))
                        .collect::<Result<_>>()?;
                    new_state = Some(reinit);
                    action = Action::ReinitSameRank;
                }
            } else if gamma_before
                .iter()
                .any(|&g| g > self.config.gamma_th)
            {
                let slope = error_slope(&self.history, self.config.slope_window);
                if matches!(slope, Some(s) if s < 0.0) {
                    let mut targets = Vec::with_capacity(p);
                    for n in 0..p {
                        let sv = core_mode_singular_values(&state.core, n)?;
                        let target = reduced_rank(&sv, eps_before, self.config.gamma_th);
                        // the gamma branch only ever removes modes
                        targets.push(target.min(current.ranks()[n]));
                    }
                    let target = self.clamp_ranks(targets, &dims)?;
                    if target.ranks() != current.ranks() {
                        let reduced =
                            hosvd_truncate(v, &state.weights, &target, state.time)?;
                        eps = compute_error(v, &reduced)?;
                        gamma = (0..p)
                            .map(|n| captured_energy(&reduced, eps, n))
                            .collect::<Result<_>>()?;
                        new_state = Some(reduced);
                        action = Action::ReinitRemove;
                    }
                }
            }
        }

        let kept_ranks = new_state
            .as_ref()
            .map(|s| s.multirank())
            .unwrap_or(current);
        self.history.push(HistoryRecord {
            t: state.time,
            eps,
            gamma: gamma.clone(),
            ranks: kept_ranks.ranks().to_vec(),
            reinit: action.is_reinit(),
        })?;

        Ok(Some(Decision {
            action,
            new_state,
            eps,
            gamma,
            eps_before,
        }))
    }
}
