//! Evolution of the core tensor and the time-dependent bases.
//!
//! The core advances by projecting the data derivative onto all bases; each
//! basis advances inside the orthogonal complement of its own span through
//! the pseudoinverse of the unfolded core. The gauge is dynamically
//! orthogonal: basis velocities stay weighted-orthogonal to the basis.

use nalgebra::DMatrix;

use crate::error::{Result, TdbError};
use crate::state::TdbState;
use crate::tensor::{mode_product, unfold, weighted_adjoint, DenseTensor};

/// Default relative singular-value cutoff for the core pseudoinverse.
pub const DEFAULT_PINV_TOL: f64 = 1e-10;
/// Orthonormality defect above which a step re-orthonormalizes the bases.
pub const DEFAULT_REORTH_TOL: f64 = 1e-10;

/// Time integration scheme for the coupled core/basis ODEs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrator {
    Euler,
    Rk2,
}

impl Integrator {
    pub fn id(&self) -> u8 {
        match self {
            Integrator::Euler => 0,
            Integrator::Rk2 => 1,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(Integrator::Euler),
            1 => Some(Integrator::Rk2),
            _ => None,
        }
    }
}

/// Finite-difference scheme for estimating the data derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivScheme {
    /// Backward first-order (V_k - V_{k-1}) / dt.
    Fd1,
    /// Backward second-order (3 V_k - 4 V_{k-1} + V_{k-2}) / (2 dt).
    Fd2,
    /// Central (V_{k+1} - V_{k-1}) / (2 dt); needs lookahead, offline only.
    Fd2Central,
}

/// How a derivative estimate was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivOrder {
    Exact,
    Fd1,
    Fd2,
}

/// Estimated time derivative of the stream at a given time.
#[derive(Debug, Clone)]
pub struct DerivativeEstimate {
    pub vdot: DenseTensor,
    pub order: DerivOrder,
    pub time: f64,
}

/// Supplies the data derivative at requested stage times.
pub trait DerivativeSource {
    fn vdot(&mut self, t: f64) -> Result<DenseTensor>;
}

impl<F> DerivativeSource for F
where
    F: FnMut(f64) -> Result<DenseTensor>,
{
    fn vdot(&mut self, t: f64) -> Result<DenseTensor> {
        self(t)
    }
}

/// Finite-difference derivative estimate from a window of snapshots ordered
/// by strictly increasing time. `Fd1`/`Fd2` estimate at the newest time;
/// `Fd2Central` estimates at the middle of a three-snapshot window.
pub fn estimate_vdot(
    window: &[(f64, &DenseTensor)],
    scheme: DerivScheme,
) -> Result<DerivativeEstimate> {
    let needed = match scheme {
        DerivScheme::Fd1 => 2,
        DerivScheme::Fd2 | DerivScheme::Fd2Central => 3,
    };
    if window.len() < needed {
        return Err(TdbError::InsufficientHistory {
            needed,
            have: window.len(),
        });
    }
    let tail = &window[window.len() - needed..];
    for pair in tail.windows(2) {
        if pair[1].0 <= pair[0].0 {
            return Err(TdbError::UnorderedTime {
                prev: pair[0].0,
                t: pair[1].0,
            });
        }
    }
    match scheme {
        DerivScheme::Fd1 => {
            let (t0, v0) = tail[0];
            let (t1, v1) = tail[1];
            let dt = t1 - t0;
            let mut vdot = v1.clone();
            vdot.axpy(-1.0, v0)?;
            vdot.scale(1.0 / dt);
            Ok(DerivativeEstimate {
                vdot,
                order: DerivOrder::Fd1,
                time: t1,
            })
        }
        DerivScheme::Fd2 => {
            let (t0, v0) = tail[0];
            let (_, v1) = tail[1];
            let (t2, v2) = tail[2];
            let dt = (t2 - t0) / 2.0;
            let mut vdot = v2.clone();
            vdot.scale(3.0);
            vdot.axpy(-4.0, v1)?;
            vdot.axpy(1.0, v0)?;
            vdot.scale(1.0 / (2.0 * dt));
            Ok(DerivativeEstimate {
                vdot,
                order: DerivOrder::Fd2,
                time: t2,
            })
        }
        DerivScheme::Fd2Central => {
            let (t0, v0) = tail[0];
            let (t1, _) = tail[1];
            let (t2, v2) = tail[2];
            let mut vdot = v2.clone();
            vdot.axpy(-1.0, v0)?;
            vdot.scale(1.0 / (t2 - t0));
            Ok(DerivativeEstimate {
                vdot,
                order: DerivOrder::Fd2,
                time: t1,
            })
        }
    }
}

/// Core right-hand side: the derivative contracted against every basis,
/// vdot x_1 (U^(1)^T W^(1)) x_2 ... x_p (U^(p)^T W^(p)).
pub fn project_core_rhs(vdot: &DenseTensor, state: &TdbState) -> Result<DenseTensor> {
    if vdot.dims() != state.dims().as_slice() {
        return Err(TdbError::ShapeMismatch {
            context: format!(
                "project_core_rhs: vdot dims {:?} vs state dims {:?}",
                vdot.dims(),
                state.dims()
            ),
        });
    }
    let mut t = vdot.clone();
    for (n, u) in state.bases.iter().enumerate() {
        t = mode_product(&t, &weighted_adjoint(u, state.weights.mode(n)), n)?;
    }
    Ok(t)
}

/// Moore-Penrose pseudoinverse of the mode-n unfolded core, with singular
/// values below `tol * sigma_max` treated as zero.
pub fn core_pseudoinverse(core: &DenseTensor, n: usize, tol: f64) -> Result<DMatrix<f64>> {
    let unfolded = unfold(core, n)?;
    let svd = unfolded.clone().svd(true, true);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    if sigma_max == 0.0 {
        return Err(TdbError::RankCollapse { mode: n });
    }
    let u = svd.u.as_ref().expect("svd requested u");
    let vt = svd.v_t.as_ref().expect("svd requested v_t");
    // pinv = V * S^+ * U^T, shape (cols x rows)
    let k = svd.singular_values.len();
    let mut sinv_ut = DMatrix::zeros(k, u.nrows());
    for i in 0..k {
        let s = svd.singular_values[i];
        if s > tol * sigma_max {
            for j in 0..u.nrows() {
                sinv_ut[(i, j)] = u[(j, i)] / s;
            }
        }
    }
    Ok(vt.transpose() * sinv_ut)
}

/// Projection of the derivative onto all bases except mode `j`, unfolded so
/// its columns align with the columns of the mode-j unfolded core.
fn partial_projection(vdot: &DenseTensor, state: &TdbState, j: usize) -> Result<DMatrix<f64>> {
    let mut t = vdot.clone();
    for (n, u) in state.bases.iter().enumerate() {
        if n == j {
            continue;
        }
        t = mode_product(&t, &weighted_adjoint(u, state.weights.mode(n)), n)?;
    }
    unfold(&t, j)
}

/// Basis right-hand side for mode `j`:
/// (I - U W U^T-projection) M^(j) T^(j)+, kept weighted-orthogonal to U^(j).
pub fn project_basis_rhs(
    vdot: &DenseTensor,
    state: &TdbState,
    j: usize,
    tol: f64,
) -> Result<DMatrix<f64>> {
    if vdot.dims() != state.dims().as_slice() {
        return Err(TdbError::ShapeMismatch {
            context: format!(
                "project_basis_rhs: vdot dims {:?} vs state dims {:?}",
                vdot.dims(),
                state.dims()
            ),
        });
    }
    let m = partial_projection(vdot, state, j)?;
    let pinv = core_pseudoinverse(&state.core, j, tol)?;
    let p = m * pinv;
    let u = &state.bases[j];
    let coeff = weighted_adjoint(u, state.weights.mode(j)) * &p;
    Ok(p - u * coeff)
}

/// Time-derivative of the full state at one stage.
#[derive(Debug, Clone)]
pub struct StateRhs {
    pub core_dot: DenseTensor,
    pub basis_dots: Vec<DMatrix<f64>>,
}

/// Assemble the core RHS and all basis RHS for the given derivative.
pub fn assemble_rhs(vdot: &DenseTensor, state: &TdbState, pinv_tol: f64) -> Result<StateRhs> {
    let core_dot = project_core_rhs(vdot, state)?;
    let basis_dots = (0..state.order())
        .map(|j| project_basis_rhs(vdot, state, j, pinv_tol))
        .collect::<Result<Vec<_>>>()?;
    Ok(StateRhs {
        core_dot,
        basis_dots,
    })
}

fn advanced(state: &TdbState, rhs: &[(f64, &StateRhs)], dt: f64) -> Result<TdbState> {
    let mut core = state.core.clone();
    let mut bases = state.bases.clone();
    for &(c, r) in rhs {
        core.axpy(c * dt, &r.core_dot)?;
        for (b, d) in bases.iter_mut().zip(&r.basis_dots) {
            *b += d * (c * dt);
        }
    }
    TdbState::new(state.time + dt, core, bases, state.weights.clone())
}

/// Step controls: pseudoinverse cutoff and re-orthonormalization trigger.
#[derive(Debug, Clone, Copy)]
pub struct StepOptions {
    pub pinv_tol: f64,
    pub reorth_tol: f64,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self {
            pinv_tol: DEFAULT_PINV_TOL,
            reorth_tol: DEFAULT_REORTH_TOL,
        }
    }
}

/// Advance the state by one step of size `dt`. The derivative source is
/// queried at the stage times: `t` for Euler, `t` and `t + dt` for the Heun
/// form of RK2.
pub fn step(
    state: &TdbState,
    source: &mut dyn DerivativeSource,
    dt: f64,
    integrator: Integrator,
    opts: &StepOptions,
) -> Result<TdbState> {
    if dt <= 0.0 {
        return Err(TdbError::UnorderedTime {
            prev: state.time,
            t: state.time + dt,
        });
    }
    let next = match integrator {
        Integrator::Euler => {
            let vdot = source.vdot(state.time)?;
            let k1 = assemble_rhs(&vdot, state, opts.pinv_tol)?;
            advanced(state, &[(1.0, &k1)], dt)?
        }
        Integrator::Rk2 => {
            let vdot0 = source.vdot(state.time)?;
            let k1 = assemble_rhs(&vdot0, state, opts.pinv_tol)?;
            let predictor = advanced(state, &[(1.0, &k1)], dt)?;
            let vdot1 = source.vdot(state.time + dt)?;
            let k2 = assemble_rhs(&vdot1, &predictor, opts.pinv_tol)?;
            advanced(state, &[(0.5, &k1), (0.5, &k2)], dt)?
        }
    };
    if !next.core.is_finite() || next.bases.iter().any(|b| b.iter().any(|v| !v.is_finite())) {
        return Err(TdbError::NonFinite {
            context: format!("state after step to t={} (dt too large?)", next.time),
        });
    }
    if next.orthonormality_defect() > opts.reorth_tol {
        reorthonormalize(&next)
    } else {
        Ok(next)
    }
}

/// Replace each basis by its weighted QR factor and absorb the triangular
/// factor into the core so the reconstruction is unchanged.
pub fn reorthonormalize(state: &TdbState) -> Result<TdbState> {
    let mut core = state.core.clone();
    let mut bases = Vec::with_capacity(state.order());
    for (n, u) in state.bases.iter().enumerate() {
        let (q, r) = weighted_qr(u, state.weights.mode(n))
            .map_err(|_| TdbError::Degenerate {
                context: format!("rank-deficient basis in mode {n}; remove modes"),
            })?;
        core = mode_product(&core, &r, n)?;
        bases.push(q);
    }
    TdbState::new(state.time, core, bases, state.weights.clone())
}

/// Modified Gram-Schmidt with one reorthogonalization pass under the
/// weighted inner product. Returns (Q, R) with A = Q R and Q^T W Q = I.
pub fn weighted_qr(a: &DMatrix<f64>, w: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n, r) = (a.nrows(), a.ncols());
    let mut q = a.clone();
    let mut rr = DMatrix::zeros(r, r);
    let wdot = |x: &DMatrix<f64>, i: usize, j: usize| {
        let mut acc = 0.0;
        for k in 0..n {
            acc += x[(k, i)] * x[(k, j)] * w[k];
        }
        acc
    };
    for j in 0..r {
        for _pass in 0..2 {
            for i in 0..j {
                let c = wdot(&q, i, j);
                rr[(i, j)] += c;
                for k in 0..n {
                    let qi = q[(k, i)];
                    q[(k, j)] -= c * qi;
                }
            }
        }
        let norm = wdot(&q, j, j).max(0.0).sqrt();
        // column scale sets the breakdown threshold
        let col_scale = (0..n)
            .map(|k| a[(k, j)].abs())
            .fold(0.0f64, f64::max)
            .max(1e-300);
        if norm <= 1e-13 * col_scale {
            return Err(TdbError::Degenerate {
                context: format!("QR breakdown at column {j}"),
            });
        }
        rr[(j, j)] = norm;
        for k in 0..n {
            q[(k, j)] /= norm;
        }
    }
    Ok((q, rr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hosvd::hosvd_truncate;
    use crate::tensor::{weighted_frobenius, ModeWeights, MultiRank};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_tensor(dims: &[usize], seed: u64) -> DenseTensor {
        let mut rng = StdRng::seed_from_u64(seed);
        DenseTensor::from_fn(dims, |_| rng.random_range(-1.0..1.0))
    }

    fn random_weights(dims: &[usize], seed: u64) -> ModeWeights {
        let mut rng = StdRng::seed_from_u64(seed);
        ModeWeights::new(
            dims.iter()
                .map(|&d| (0..d).map(|_| rng.random_range(0.3..1.4)).collect())
                .collect(),
        )
        .unwrap()
    }

    /// Weighted-orthonormal state built by truncated HOSVD of random data.
    fn random_state(dims: &[usize], ranks: &[usize], seed: u64) -> TdbState {
        let t = random_tensor(dims, seed);
        let w = random_weights(dims, seed + 1);
        let mr = MultiRank::new(ranks.to_vec(), dims).unwrap();
        hosvd_truncate(&t, &w, &mr, 0.0).unwrap()
    }

    #[test]
    fn reconstruct_matches_nested_loops() {
        let state = random_state(&[5, 4, 3], &[3, 2, 2], 9);
        let rec = state.reconstruct();
        let r = state.core.dims();
        for i0 in 0..5 {
            for i1 in 0..4 {
                for i2 in 0..3 {
                    let mut acc = 0.0;
                    for a in 0..r[0] {
                        for b in 0..r[1] {
                            for c in 0..r[2] {
                                acc += state.core.get(&[a, b, c])
                                    * state.bases[0][(i0, a)]
                                    * state.bases[1][(i1, b)]
                                    * state.bases[2][(i2, c)];
                            }
                        }
                    }
                    assert!((rec.get(&[i0, i1, i2]) - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn core_rhs_zero_and_delta() {
        let state = random_state(&[5, 4, 3], &[2, 2, 2], 19);
        let zero = DenseTensor::zeros(&[5, 4, 3]);
        let rhs = project_core_rhs(&zero, &state).unwrap();
        assert!(rhs.values().iter().all(|&v| v == 0.0));

        // vdot = first basis vector outer product -> delta at (0,0,0)
        let vdot = DenseTensor::from_fn(&[5, 4, 3], |i| {
            state.bases[0][(i[0], 0)] * state.bases[1][(i[1], 0)] * state.bases[2][(i[2], 0)]
        });
        let rhs = project_core_rhs(&vdot, &state).unwrap();
        for i0 in 0..2 {
            for i1 in 0..2 {
                for i2 in 0..2 {
                    let want = if (i0, i1, i2) == (0, 0, 0) { 1.0 } else { 0.0 };
                    assert!((rhs.get(&[i0, i1, i2]) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn core_rhs_matches_brute_force() {
        let dims = [5usize, 4, 3];
        let state = random_state(&dims, &[3, 2, 2], 29);
        let vdot = random_tensor(&dims, 30);
        let rhs = project_core_rhs(&vdot, &state).unwrap();
        let w = &state.weights;
        for a in 0..3 {
            for b in 0..2 {
                for c in 0..2 {
                    let mut acc = 0.0;
                    for i0 in 0..dims[0] {
                        for i1 in 0..dims[1] {
                            for i2 in 0..dims[2] {
                                acc += vdot.get(&[i0, i1, i2])
                                    * state.bases[0][(i0, a)]
                                    * w.mode(0)[i0]
                                    * state.bases[1][(i1, b)]
                                    * w.mode(1)[i1]
                                    * state.bases[2][(i2, c)]
                                    * w.mode(2)[i2];
                            }
                        }
                    }
                    assert!((rhs.get(&[a, b, c]) - acc).abs() < 1e-11);
                }
            }
        }
    }

    #[test]
    fn pseudoinverse_diagonal_and_orthogonal_rows() {
        // diag(2, 1) padded into a 2 x 6 unfolding
        let mut core = DenseTensor::zeros(&[2, 3, 2]);
        core.set(&[0, 0, 0], 2.0);
        core.set(&[1, 1, 0], 1.0);
        let pinv = core_pseudoinverse(&core, 0, 1e-12).unwrap();
        assert!((pinv[(0, 0)] - 0.5).abs() < 1e-13);
        assert!((pinv[(1, 1)] - 1.0).abs() < 1e-13);
        let t = unfold(&core, 0).unwrap();
        let prod = &t * &pinv;
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((prod[(i, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pseudoinverse_matches_normal_equation_oracle() {
        let core = random_tensor(&[3, 4, 5], 37);
        let pinv = core_pseudoinverse(&core, 0, 1e-12).unwrap();
        let t = unfold(&core, 0).unwrap();
        let gram = &t * t.transpose();
        let oracle = t.transpose() * gram.try_inverse().unwrap();
        let scale = oracle.amax();
        for i in 0..pinv.nrows() {
            for j in 0..pinv.ncols() {
                assert!((pinv[(i, j)] - oracle[(i, j)]).abs() < 1e-10 * scale.max(1.0));
            }
        }
    }

    #[test]
    fn pseudoinverse_zero_core_is_rank_collapse() {
        let core = DenseTensor::zeros(&[2, 2, 2]);
        assert!(matches!(
            core_pseudoinverse(&core, 0, 1e-12),
            Err(TdbError::RankCollapse { mode: 0 })
        ));
    }

    #[test]
    fn basis_rhs_vanishes_for_resolved_derivative() {
        let state = random_state(&[6, 5, 4], &[3, 2, 2], 47);
        // vdot inside the current TDB span: random core against current bases
        let c = random_tensor(&[3, 2, 2], 48);
        let mut vdot = c;
        for (n, u) in state.bases.iter().enumerate() {
            vdot = mode_product(&vdot, u, n).unwrap();
        }
        for j in 0..3 {
            let udot = project_basis_rhs(&vdot, &state, j, 1e-12).unwrap();
            assert!(udot.amax() < 1e-11, "mode {j}: {}", udot.amax());
        }
    }

    #[test]
    fn basis_rhs_is_weighted_tangent() {
        let state = random_state(&[6, 5, 4], &[3, 2, 2], 57);
        let vdot = random_tensor(&[6, 5, 4], 58);
        for j in 0..3 {
            let udot = project_basis_rhs(&vdot, &state, j, 1e-12).unwrap();
            let overlap = weighted_adjoint(&state.bases[j], state.weights.mode(j)) * udot;
            assert!(overlap.amax() < 1e-11, "mode {j}: {}", overlap.amax());
        }
    }

    #[test]
    fn basis_rhs_matches_brute_force() {
        let dims = [5usize, 4, 3];
        let state = random_state(&dims, &[2, 3, 2], 67);
        let vdot = random_tensor(&dims, 68);
        let w = &state.weights;
        for j in 0..3 {
            let got = project_basis_rhs(&vdot, &state, j, 1e-12).unwrap();
            // brute-force M^(j): entrywise weighted contraction
            let rem: Vec<usize> = (0..3).filter(|&m| m != j).collect();
            let r = state.core.dims();
            let cols: usize = rem.iter().map(|&m| r[m]).product();
            let mut m = DMatrix::zeros(dims[j], cols);
            let mut ridx = vec![0usize; rem.len()];
            for col in 0..cols {
                for xj in 0..dims[j] {
                    let mut acc = 0.0;
                    let mut full = [0usize; 3];
                    for i0 in 0..dims[rem[0]] {
                        for i1 in 0..dims[rem[1]] {
                            full[j] = xj;
                            full[rem[0]] = i0;
                            full[rem[1]] = i1;
                            acc += vdot.get(&full)
                                * state.bases[rem[0]][(i0, ridx[0])]
                                * w.mode(rem[0])[i0]
                                * state.bases[rem[1]][(i1, ridx[1])]
                                * w.mode(rem[1])[i1];
                        }
                    }
                    m[(xj, col)] = acc;
                }
                for (pos, &md) in rem.iter().enumerate() {
                    ridx[pos] += 1;
                    if ridx[pos] < r[md] {
                        break;
                    }
                    ridx[pos] = 0;
                }
            }
            // independent pinv via normal equations
            let t = unfold(&state.core, j).unwrap();
            let pinv = t.transpose() * (&t * t.transpose()).try_inverse().unwrap();
            let p = m * pinv;
            let u = &state.bases[j];
            let oracle = &p - u * (weighted_adjoint(u, w.mode(j)) * &p);
            let scale = oracle.amax().max(1.0);
            assert!((got - oracle).amax() < 1e-10 * scale);
        }
    }

    #[test]
    fn fd_schemes_on_polynomials() {
        let dims = [3usize, 2, 2];
        let c = random_tensor(&dims, 71);
        let dt = 0.1;
        let at = |t: f64, pow: u32| {
            let mut v = c.clone();
            v.scale(t.powi(pow as i32));
            v
        };
        // constant stream -> zero derivative
        let v = random_tensor(&dims, 72);
        let win = [(0.0, &v), (dt, &v), (2.0 * dt, &v)];
        let est = estimate_vdot(&win, DerivScheme::Fd1).unwrap();
        assert!(est.vdot.values().iter().all(|&x| x == 0.0));

        // V = t * C: both schemes exact
        let (v0, v1, v2) = (at(0.0, 1), at(dt, 1), at(2.0 * dt, 1));
        let win = [(0.0, &v0), (dt, &v1), (2.0 * dt, &v2)];
        for scheme in [DerivScheme::Fd1, DerivScheme::Fd2] {
            let est = estimate_vdot(&win, scheme).unwrap();
            for (g, w) in est.vdot.values().iter().zip(c.values()) {
                assert!((g - w).abs() < 1e-12);
            }
        }

        // V = t^2 * C: fd2 exact, fd1 error = dt * C
        let (v0, v1, v2) = (at(0.0, 2), at(dt, 2), at(2.0 * dt, 2));
        let win = [(0.0, &v0), (dt, &v1), (2.0 * dt, &v2)];
        let est2 = estimate_vdot(&win, DerivScheme::Fd2).unwrap();
        for (g, w) in est2.vdot.values().iter().zip(c.values()) {
            assert!((g - 2.0 * (2.0 * dt) * w).abs() < 1e-12);
        }
        let est1 = estimate_vdot(&win, DerivScheme::Fd1).unwrap();
        for (g, w) in est1.vdot.values().iter().zip(c.values()) {
            let exact = 2.0 * (2.0 * dt) * w;
            assert!((g - (exact - dt * w)).abs() < 1e-12);
        }

        let short = [(0.0, &v0)];
        assert!(matches!(
            estimate_vdot(&short, DerivScheme::Fd1),
            Err(TdbError::InsufficientHistory { .. })
        ));
    }

    #[test]
    fn zero_derivative_step_only_advances_time() {
        let state = random_state(&[5, 4, 3], &[2, 2, 2], 81);
        let mut src = |_t: f64| Ok(DenseTensor::zeros(&[5, 4, 3]));
        for integ in [Integrator::Euler, Integrator::Rk2] {
            let next = step(&state, &mut src, 0.01, integ, &StepOptions::default()).unwrap();
            assert!((next.time - 0.01).abs() < 1e-15);
            for (a, b) in next.core.values().iter().zip(state.core.values()) {
                assert!((a - b).abs() < 1e-14);
            }
        }
        assert!(step(&state, &mut src, 0.0, Integrator::Euler, &StepOptions::default()).is_err());
    }

    #[test]
    fn reorthonormalize_preserves_reconstruction() {
        let state = random_state(&[6, 5, 4], &[3, 2, 2], 91);

        // already orthonormal: unchanged
        let again = reorthonormalize(&state).unwrap();
        for (a, b) in again.bases.iter().zip(&state.bases) {
            assert!((a - b).amax() < 1e-13);
        }

        // scale a basis by 2: Q recovers orthonormality, core absorbs the factor
        let mut scaled = state.clone();
        scaled.bases[0] *= 2.0;
        let fixed = reorthonormalize(&scaled).unwrap();
        assert!(fixed.orthonormality_defect() < 1e-12);
        let w = &state.weights;
        let before = scaled.reconstruct();
        let after = fixed.reconstruct();
        let diff = weighted_frobenius(&before.sub(&after).unwrap(), w).unwrap();
        assert!(diff < 1e-12);

        // random perturbation: reconstruction invariant
        let mut rng = StdRng::seed_from_u64(92);
        let mut pert = state.clone();
        for b in &mut pert.bases {
            for v in b.iter_mut() {
                *v += rng.random_range(-1e-3..1e-3);
            }
        }
        let fixed = reorthonormalize(&pert).unwrap();
        assert!(fixed.orthonormality_defect() < 1e-12);
        let diff = weighted_frobenius(
            &pert.reconstruct().sub(&fixed.reconstruct()).unwrap(),
            w,
        )
        .unwrap();
        assert!(diff < 1e-11);
    }
}
