//! Per-frame zero-perception distortion minimisation.
//!
//! With `w = (c_1..c_{j-1}, s)` the coefficients on `V = (X̂_1..X̂_{j-1}, X_j)`
//! and `G = Cov(V)`, every program has the same shape:
//!
//! * the perception constraint is a set of linear equalities `A w = b`
//!   (covariance matching), plus `Var(X̂_j) = sigma2`, which pins
//!   `alpha^2 = sigma2 - w'Gw`;
//! * the distortion `2 sigma2 - 2 g'w` is linear in `w`;
//! * the rate constraint becomes `w'Mw <= sigma2` with
//!   `M = G + (v_c / (2^{2R} - 1)) e_s e_s'`, `v_c = Var(X_j | X̂_<j)`.
//!
//! After eliminating the equalities the feasible set is an ellipsoid, so the
//! optimum sits on its boundary where the Lagrange condition has a closed-form
//! multiplier. Degenerate systems fall back to a grid search with local polish.

mod explicit;
mod oracle;

pub use explicit::{explicit_program_residual, ExplicitResidual};
pub use oracle::brute_force_frame;

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{RdpError, Result};
use crate::linalg::{affine_solutions, pinv_sym};
use crate::perception_metrics::{plf_residual, PlfKind};
use crate::scalar::{c, to_f64, tol, tol_f64, Scalar};
use crate::source_model::{
    build_joint, conditional_variance, extend_joint, frame_distortion, frame_rate, recon_labels, FrameCoeffs,
    JointGaussian, Rate, ReconPolicy, SourceSpec, VarLabel,
};

/// Rates below this many bits are raised to it for frames after the first.
pub const RATE_FLOOR_BITS: f64 = 1e-6;
/// Round-trip tolerance on `rate_used - R`, in bits.
pub const RATE_TOL: f64 = 1e-6;
/// Round-trip tolerance on the perception residual, relative to `sigma2`.
pub const RESIDUAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Step of the oracle grid and of the fallback search.
    pub grid_step: f64,
    /// Pattern-search step at which the fallback polish stops.
    pub bisection_tol: f64,
    pub max_polish_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            grid_step: 0.005,
            bisection_tol: 1e-10,
            max_polish_iters: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateProfile<T> {
    pub rates: Vec<Rate<T>>,
}

impl<T: Scalar> RateProfile<T> {
    pub fn new(rates: Vec<Rate<T>>) -> Result<Self> {
        for r in &rates {
            r.validate()?;
        }
        Ok(Self { rates })
    }

    pub fn finite(rates: &[T]) -> Result<Self> {
        Self::new(rates.iter().map(|&r| Rate::Finite(r)).collect())
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    /// Rate of 1-based frame `j`.
    pub fn get(&self, j: usize) -> Result<Rate<T>> {
        self.rates
            .get(j.wrapping_sub(1))
            .copied()
            .ok_or_else(|| RdpError::Shape(format!("no rate for frame {j}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverStatus {
    /// Closed form, or rate constraint inactive.
    Analytic,
    /// Optimum on the active rate boundary.
    BoundaryLagrange,
    /// Grid search with local polish.
    GridPolish,
}

impl fmt::Display for SolverStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverStatus::Analytic => "analytic",
            SolverStatus::BoundaryLagrange => "boundary-lagrange",
            SolverStatus::GridPolish => "grid-polish",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSolution<T: Scalar> {
    /// Perception loss the frame was solved under; selects the residual.
    pub kind: PlfKind,
    pub coeffs: FrameCoeffs<T>,
    pub distortion: T,
    pub rate_used: Rate<T>,
    pub perception_residual: T,
    pub solver_status: SolverStatus,
}

impl<T: Scalar> FrameSolution<T> {
    pub fn frame(&self) -> usize {
        self.coeffs.frame_index
    }
}

/// Effective rate used by the solver for frame `j`.
pub fn effective_rate<T: Scalar>(rate: Rate<T>, j: usize) -> Rate<T> {
    match rate {
        Rate::Finite(r) if j > 1 => Rate::Finite(r.max(c(RATE_FLOOR_BITS))),
        r => r,
    }
}

/// `v_c / (2^{2R} - 1)`: the noise variance per unit `s^2` at which the rate
/// constraint is tight.
fn rate_penalty<T: Scalar>(v_c: T, rate: Rate<T>) -> T {
    match rate {
        Rate::Infinite => T::zero(),
        Rate::Finite(r) => {
            let kappa = (c::<T>(2.0) * r * T::ln_2()).exp_m1();
            if kappa > T::zero() {
                v_c / kappa
            } else {
                T::max_value().unwrap_or_else(|| c(f64::MAX))
            }
        }
    }
}

/// The frame-`j` program in coefficient space.
#[derive(Debug, Clone)]
pub(crate) struct FrameProgram<T: Scalar> {
    pub kind: PlfKind,
    pub j: usize,
    pub sigma2: T,
    pub rate: Rate<T>,
    /// `Cov(V)` with `V = (X̂_1..X̂_{j-1}, X_j)`.
    pub gram: DMatrix<T>,
    /// `Cov(V, X_j)`.
    pub target: DVector<T>,
    pub v_c: T,
    /// `v_c / (2^{2R} - 1)`.
    pub penalty: T,
    pub eq_a: DMatrix<T>,
    pub eq_b: DVector<T>,
    pub joint: JointGaussian<T>,
}

impl<T: Scalar> FrameProgram<T> {
    pub fn build(
        kind: PlfKind,
        j: usize,
        profile: &RateProfile<T>,
        prefix: &ReconPolicy<T>,
        spec: &SourceSpec<T>,
    ) -> Result<Self> {
        spec.validate()?;
        if j < 2 || j > spec.horizon {
            return Err(RdpError::Shape(format!("frame {j} outside 2..={}", spec.horizon)));
        }
        if prefix.len() < j - 1 {
            return Err(RdpError::Shape(format!(
                "frame {j} needs {} solved frames, prefix has {}",
                j - 1,
                prefix.len()
            )));
        }
        let rate = effective_rate(profile.get(j)?, j);
        let joint = build_joint(spec, &prefix.prefix(j - 1))?;

        let past = recon_labels(j - 1);
        let mut basis = past.clone();
        basis.push(VarLabel::Source(j));
        let gram = joint.block(&basis)?;
        let target = gram.column(j - 1).into_owned();
        let v_c = conditional_variance(&joint, VarLabel::Source(j), &past)?;
        let penalty = rate_penalty(v_c, rate);

        let (eq_a, eq_b) = match kind {
            PlfKind::Fmd => (DMatrix::zeros(0, j), DVector::zeros(0)),
            PlfKind::Sa => (gram.rows(0, j - 1).into_owned(), target.rows(0, j - 1).into_owned()),
            PlfKind::Jd => (
                gram.rows(0, j - 1).into_owned(),
                DVector::from_fn(j - 1, |i, _| spec.source_cov(i + 1, j)),
            ),
        };

        Ok(Self {
            kind,
            j,
            sigma2: spec.sigma2,
            rate,
            gram,
            target,
            v_c,
            penalty,
            eq_a,
            eq_b,
            joint,
        })
    }

    /// `M = G + penalty e_s e_s'`.
    pub fn metric(&self) -> DMatrix<T> {
        let mut m = self.gram.clone();
        let s = self.j - 1;
        m[(s, s)] += self.penalty;
        m
    }

    /// Noise variance for weights `w`: the rate-tight value when the rate
    /// constraint binds, otherwise whatever the variance match leaves.
    pub fn noise_for(&self, w: &DVector<T>, rate_active: bool) -> T {
        if rate_active {
            let s = w[self.j - 1];
            self.penalty * s * s
        } else {
            (self.sigma2 - w.dot(&(&self.gram * w))).max(T::zero())
        }
    }

    pub fn rate_binds(&self, w: &DVector<T>) -> bool {
        let s = w[self.j - 1];
        !self.rate.is_infinite() && s * s * self.v_c > tol::<T>(1e-12) * self.sigma2
    }

    /// Evaluate `w` through the joint-law evaluators.
    pub fn finish(&self, w: &DVector<T>, alpha2: T, status: SolverStatus) -> Result<FrameSolution<T>> {
        let coeffs = FrameCoeffs::from_weights(self.j, w, alpha2)?;
        let joint = extend_joint(&self.joint, &coeffs)?;
        Ok(FrameSolution {
            kind: self.kind,
            distortion: frame_distortion(&joint, self.j)?,
            rate_used: frame_rate(&joint, self.j)?,
            perception_residual: plf_residual(self.kind, &joint, self.j)?,
            coeffs,
            solver_status: status,
        })
    }

    pub fn accepts(&self, sol: &FrameSolution<T>) -> bool {
        sol.rate_used.within(&self.rate, tol(1e-9)) && sol.perception_residual <= c::<T>(RESIDUAL_TOL) * self.sigma2
    }
}

/// Closed-form frame 1: `ν = sqrt(1 - 2^{-2R})`, `alpha^2 = 2^{-2R} sigma2`.
pub fn solve_frame1<T: Scalar>(r1: Rate<T>, spec: &SourceSpec<T>) -> Result<FrameSolution<T>> {
    spec.validate()?;
    r1.validate()?;
    let b = r1.two_pow_neg2r();
    let nu = match r1 {
        Rate::Infinite => T::one(),
        Rate::Finite(r) => (-(-c::<T>(2.0) * r * T::ln_2()).exp_m1()).sqrt(),
    };
    let coeffs = FrameCoeffs::new(1, vec![], nu, b * spec.sigma2)?;
    let joint = extend_joint(&crate::source_model::source_covariance(spec)?, &coeffs)?;
    Ok(FrameSolution {
        kind: PlfKind::Fmd,
        distortion: c::<T>(2.0) * spec.sigma2 * (T::one() - nu),
        rate_used: frame_rate(&joint, 1)?,
        perception_residual: plf_residual(PlfKind::Fmd, &joint, 1)?,
        coeffs,
        solver_status: SolverStatus::Analytic,
    })
}

/// Minimum-distortion frame `j` under `kind`'s zero-perception constraint,
/// given the solved frames in `prefix`.
pub fn solve_frame<T: Scalar>(
    kind: PlfKind,
    j: usize,
    profile: &RateProfile<T>,
    prefix: &ReconPolicy<T>,
    spec: &SourceSpec<T>,
    opts: &SolverOptions,
) -> Result<FrameSolution<T>> {
    if j == 1 {
        let mut sol = solve_frame1(profile.get(1)?, spec)?;
        sol.kind = kind;
        return Ok(sol);
    }
    let prog = FrameProgram::build(kind, j, profile, prefix, spec)?;
    match solve_on_ellipsoid(&prog)? {
        Some(sol) if prog.accepts(&sol) => Ok(sol),
        _ => grid_polish(&prog, opts),
    }
}

/// Lagrange solution on the eliminated ellipsoid. `None` means the closed
/// form does not apply and the caller should fall back to the grid.
fn solve_on_ellipsoid<T: Scalar>(prog: &FrameProgram<T>) -> Result<Option<FrameSolution<T>>> {
    let sigma2 = prog.sigma2;
    let aff = affine_solutions(&prog.eq_a, &prog.eq_b, tol_f64::<T>(1e-10));
    if aff.inconsistency > tol::<T>(1e-9) * sigma2 {
        return Err(RdpError::Infeasible {
            constraint: format!(
                "{} covariance match at frame {} (residual {})",
                prog.kind, prog.j, aff.inconsistency
            ),
        });
    }
    let m = prog.metric();
    let w0 = aff.particular;
    let n = aff.null_basis;
    let c0 = w0.dot(&(&m * &w0)) - sigma2;
    let variance_infeasible = |slack: T| RdpError::Infeasible {
        constraint: format!(
            "{} variance match at frame {}: pinned noise variance would be negative ({})",
            prog.kind, prog.j, slack
        ),
    };

    if n.ncols() == 0 {
        if c0 > tol::<T>(1e-10) * sigma2 {
            return Err(variance_infeasible(-c0));
        }
        let active = prog.rate_binds(&w0) && c0 > -tol::<T>(1e-10) * sigma2;
        return prog
            .finish(&w0, prog.noise_for(&w0, active), SolverStatus::Analytic)
            .map(Some);
    }

    let h_mat = n.transpose() * &m * &n;
    let h = n.transpose() * &m * &w0;
    let q = n.transpose() * &prog.target;
    let hp = pinv_sym(&h_mat, tol_f64::<T>(1e-12));

    // The objective must not have a component along flat directions of H.
    let q_range = &h_mat * &hp * &q;
    if (&q - &q_range).norm() > tol::<T>(1e-8) * (q.norm() + sigma2) {
        return Ok(None);
    }

    let centre = -(&hp * &h);
    let r2 = h.dot(&(&hp * &h)) - c0;
    if r2 < -tol::<T>(1e-10) * sigma2 {
        return Err(variance_infeasible(r2));
    }
    // Radii at roundoff level are zero: the square root would otherwise turn
    // 1e-16 of noise into 1e-8 of spurious coefficient.
    let r2 = if r2 <= tol::<T>(1e-14) * sigma2 { T::zero() } else { r2 };
    let dir = &hp * &q;
    let sq = q.dot(&dir);

    let flat = sq <= c::<T>(1e-24) * sigma2 * sigma2;
    let z = if flat {
        centre
    } else {
        // Stationarity q = 2 mu H (z - z*), tight on the ellipsoid.
        centre + dir * (r2 / sq).sqrt()
    };
    let w = w0 + &n * z;
    let active = !flat && prog.rate_binds(&w);
    let status = if active {
        SolverStatus::BoundaryLagrange
    } else {
        SolverStatus::Analytic
    };
    prog.finish(&w, prog.noise_for(&w, active), status).map(Some)
}

/// Coarse grid over the free coordinates, then a pattern search whose
/// infeasible trial points are pulled back toward a feasible centre by
/// bisection, so the search can slide along the curved rate boundary.
fn grid_polish<T: Scalar>(prog: &FrameProgram<T>, opts: &SolverOptions) -> Result<FrameSolution<T>> {
    let aff = affine_solutions(&prog.eq_a, &prog.eq_b, tol_f64::<T>(1e-10));
    if aff.inconsistency > tol::<T>(1e-9) * prog.sigma2 {
        return Err(RdpError::Infeasible {
            constraint: format!("{} covariance match at frame {}", prog.kind, prog.j),
        });
    }
    let k = aff.null_basis.ncols();
    let m = prog.metric();
    let to = |x: &DMatrix<T>| DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| to_f64(x[(r, c)]));
    let col = |x: &DVector<T>| DMatrix::from_iterator(x.len(), 1, x.iter().map(|&v| to_f64(v)));
    let (w0, n, m, g) = (col(&aff.particular), to(&aff.null_basis), to(&m), col(&prog.target));
    let sigma2 = to_f64(prog.sigma2);

    let weights = |z: &[f64]| &w0 + &n * DMatrix::from_column_slice(k, 1, z);
    let excess = |z: &[f64]| {
        let w = weights(z);
        (w.transpose() * &m * &w)[(0, 0)] - sigma2
    };
    let gain = |z: &[f64]| (g.transpose() * weights(z))[(0, 0)];
    let feasible = |z: &[f64]| excess(z) <= 1e-15 * sigma2;

    // Feasible centre of the ellipsoid in z coordinates.
    let h_mat = n.transpose() * &m * &n;
    let h_vec = n.transpose() * &m * &w0;
    let centre: Vec<f64> = (-(pinv_sym(&h_mat, 1e-12) * h_vec)).iter().copied().collect();
    if !feasible(&centre) {
        return Err(RdpError::Infeasible {
            constraint: format!(
                "{} variance match at frame {}: pinned noise variance would be negative",
                prog.kind, prog.j
            ),
        });
    }

    let radius = 1.5 * (prog.j as f64).sqrt();
    let cap = match k {
        0 | 1 => 4000,
        2 => 400,
        _ => 60,
    };
    let steps = ((2.0 * radius / opts.grid_step.max(1e-6)).ceil() as usize).clamp(2, cap);
    let h = 2.0 * radius / steps as f64;

    let mut best = (gain(&centre), centre.clone());
    let mut idx = vec![0usize; k];
    while !idx.is_empty() {
        let z: Vec<f64> = idx.iter().map(|&i| -radius + i as f64 * h).collect();
        if feasible(&z) {
            let v = gain(&z);
            if v > best.0 {
                best = (v, z);
            }
        }
        // Odometer increment over the k-dimensional grid.
        let mut d = 0;
        while d < k {
            idx[d] += 1;
            if idx[d] <= steps {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
        if d == k {
            break;
        }
    }

    // Largest feasible point on the segment from the centre to `z`.
    let pull_back = |z: Vec<f64>| -> Vec<f64> {
        if feasible(&z) {
            return z;
        }
        let at = |t: f64| -> Vec<f64> { centre.iter().zip(&z).map(|(c, p)| c + t * (p - c)).collect() };
        let (mut lo, mut hi) = (0.0, 1.0);
        while hi - lo > opts.bisection_tol {
            let mid = 0.5 * (lo + hi);
            if feasible(&at(mid)) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        at(lo)
    };

    let (mut val, mut z) = best;
    let mut step = h;
    for _ in 0..opts.max_polish_iters {
        if step < opts.bisection_tol {
            break;
        }
        let mut improved = false;
        for d in 0..k {
            for sgn in [1.0, -1.0] {
                let mut cand = z.clone();
                cand[d] += sgn * step;
                let cand = pull_back(cand);
                let v = gain(&cand);
                if v > val {
                    val = v;
                    z = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }

    let w = DVector::from_iterator(prog.j, weights(&z).iter().map(|&x| c::<T>(x)));
    // Feasibility of w'Mw <= sigma2 already makes the variance-matched noise rate-feasible.
    let sol = prog.finish(&w, prog.noise_for(&w, false), SolverStatus::GridPolish)?;
    if prog.accepts(&sol) {
        Ok(sol)
    } else {
        Err(RdpError::NumericalFailure {
            reason: format!(
                "frame {} ({}): rate {} / residual {} outside tolerance",
                prog.j, prog.kind, sol.rate_used, sol.perception_residual
            ),
            best: w.iter().map(|&x| to_f64(x)).collect(),
            best_distortion: to_f64(sol.distortion),
        })
    }
}

/// Greedy sequential solve of frames `1..=T`.
pub fn solve_horizon<T: Scalar>(
    kind: PlfKind,
    profile: &RateProfile<T>,
    spec: &SourceSpec<T>,
    opts: &SolverOptions,
) -> Result<(ReconPolicy<T>, Vec<FrameSolution<T>>)> {
    spec.validate()?;
    if profile.len() != spec.horizon {
        return Err(RdpError::Shape(format!(
            "{} rates for horizon {}",
            profile.len(),
            spec.horizon
        )));
    }
    let mut policy = ReconPolicy::default();
    let mut sols = Vec::with_capacity(spec.horizon);
    for j in 1..=spec.horizon {
        let sol = solve_frame(kind, j, profile, &policy, spec, opts).map_err(|e| e.at_frame(j))?;
        policy.push(sol.coeffs.clone())?;
        sols.push(sol);
    }
    Ok((policy, sols))
}

/// Re-derive rate and residual of `sol` from scratch on `prefix`.
pub fn round_trip_check<T: Scalar>(
    sol: &FrameSolution<T>,
    requested: Rate<T>,
    prefix: &ReconPolicy<T>,
    spec: &SourceSpec<T>,
) -> Result<(bool, Rate<T>, T)> {
    let j = sol.frame();
    let joint = extend_joint(&build_joint(spec, &prefix.prefix(j - 1))?, &sol.coeffs)?;
    let rate = frame_rate(&joint, j)?;
    let resid = plf_residual(sol.kind, &joint, j)?;
    let ok = rate.within(&effective_rate(requested, j), c(RATE_TOL)) && resid <= c::<T>(RESIDUAL_TOL) * spec.sigma2;
    Ok((ok, rate, resid))
}

#[cfg(test)]
mod tests;
