//! Leading-order closed forms for the low-rate (`R_1 = eps`) and high-rate
//! (`R_1 -> inf`) regimes, and a regression that measures how far the numeric
//! greedy solves sit from them.
//!
//! Coefficient expansions are written `K + delta * e` with
//! `e = sqrt(2 eps ln 2)`, the small-rate approximation of
//! `sqrt(1 - 2^{-2 eps})`. Remainder terms are never included in returned
//! values; [`asymptotic_gap`] is how they are bounded.

use std::fmt;

use nalgebra::{Matrix2, Vector2};

use crate::error::{RdpError, Result};
use crate::perception_metrics::PlfKind;
use crate::rdp_solver::{solve_horizon, RateProfile, SolverOptions, RATE_FLOOR_BITS};
use crate::scalar::{c, to_f64, Scalar};
use crate::source_model::{FrameCoeffs, Rate, SourceSpec};

/// Largest `eps` for which the expansions are evaluated.
pub const MAX_EPS: f64 = 0.05;
/// Smallest `eps` accepted by [`asymptotic_gap`].
pub const MIN_GAP_EPS: f64 = 1e-6;
/// FMD branch selection treats `rho` within this factor of `e` as ambiguous.
pub const BRANCH_BAND: f64 = 3.0;
/// Growth of `gap / sqrt(eps)` across the list beyond which the gap is
/// declared not to shrink like `sqrt(eps)`.
pub const MAX_RATIO_GROWTH: f64 = 3.0;
/// Gaps below this multiple of `sigma2` are reported as zero.
pub const GAP_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    LowR1,
    HighR1LowRest,
    HighR1EpsInf,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::LowR1 => "low_R1",
            Regime::HighR1LowRest => "high_R1_low_rest",
            Regime::HighR1EpsInf => "high_R1_eps_inf",
        })
    }
}

impl std::str::FromStr for Regime {
    type Err = RdpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low_R1" => Ok(Regime::LowR1),
            "high_R1_low_rest" => Ok(Regime::HighR1LowRest),
            "high_R1_eps_inf" => Ok(Regime::HighR1EpsInf),
            other => Err(RdpError::ParameterDomain(format!(
                "unknown regime {other:?} (expected low_R1, high_R1_low_rest or high_R1_eps_inf)"
            ))),
        }
    }
}

/// Rate of frame 3 in the high-rate regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum R3Mode {
    Infinite,
    Eps,
}

impl R3Mode {
    pub fn regime(self) -> Regime {
        match self {
            R3Mode::Infinite => Regime::HighR1EpsInf,
            R3Mode::Eps => Regime::HighR1LowRest,
        }
    }
}

/// FMD solutions differ qualitatively depending on whether `rho` dominates
/// `sqrt(eps)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FmdBranch {
    LargeRho,
    SmallRho,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticExpansion<T> {
    /// `K_i`, in the order `(past reconstructions..., source)`.
    pub constant_part: Vec<T>,
    /// `delta_i`, multiplying `sqrt(2 eps ln 2)`.
    pub sqrt_eps_part: Vec<T>,
    pub regime: Regime,
}

impl<T: Scalar> AsymptoticExpansion<T> {
    fn new(constant_part: Vec<T>, sqrt_eps_part: Vec<T>, regime: Regime) -> Self {
        debug_assert_eq!(constant_part.len(), sqrt_eps_part.len());
        Self {
            constant_part,
            sqrt_eps_part,
            regime,
        }
    }

    /// `K + delta * sqrt(2 eps ln 2)`.
    pub fn coefficients(&self, eps: T) -> Vec<T> {
        let e = sqrt_eps_scale(eps);
        self.constant_part
            .iter()
            .zip(&self.sqrt_eps_part)
            .map(|(&k, &d)| k + d * e)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameAsymptotic<T> {
    pub frame: usize,
    pub expansion: AsymptoticExpansion<T>,
    pub distortion: T,
}

/// `sqrt(2 eps ln 2)`.
pub fn sqrt_eps_scale<T: Scalar>(eps: T) -> T {
    (c::<T>(2.0) * eps * T::ln_2()).sqrt()
}

fn check_eps<T: Scalar>(eps: T) -> Result<()> {
    if !eps.is_finite() || eps < T::zero() {
        return Err(RdpError::ParameterDomain(format!(
            "eps must be finite and >= 0, got {eps}"
        )));
    }
    if eps > c(MAX_EPS) {
        return Err(RdpError::OutOfRegime(format!("eps = {eps} exceeds {MAX_EPS}")));
    }
    Ok(())
}

fn check_source<T: Scalar>(rho: T, sigma2: T) -> Result<()> {
    SourceSpec::new(rho, sigma2, 1).map(|_| ())
}

/// `sum_{k < n} r^k`, summed directly so `r = 1` needs no special case.
fn geometric<T: Scalar>(r: T, n: usize) -> T {
    let mut term = T::one();
    let mut sum = T::zero();
    for _ in 0..n {
        sum += term;
        term *= r;
    }
    sum
}

/// Frame-2 reconstruction and distortion when `R_1 = eps`, for any `R_2`.
///
/// The noise variance is whatever keeps `Var(X̂_2) = sigma2` for the returned
/// coefficients.
pub fn low_rate_frame2<T: Scalar>(
    kind: PlfKind,
    r2: Rate<T>,
    eps: T,
    rho: T,
    sigma2: T,
) -> Result<(FrameCoeffs<T>, T)> {
    check_eps(eps)?;
    check_source(rho, sigma2)?;
    r2.validate()?;
    let one = T::one();
    let two = c::<T>(2.0);
    let e = sqrt_eps_scale(eps);
    let b2 = one - r2.two_pow_neg2r();
    let b = b2.sqrt();

    let (w1, w2, d) = match kind {
        PlfKind::Sa => (rho * e * (one - b), b, two * (one - b)),
        PlfKind::Fmd => {
            let norm = (b2 + rho * rho * e * e).sqrt();
            if norm > T::zero() {
                (rho * e / norm, b2 / norm, two * (one - norm))
            } else {
                (T::zero(), T::zero(), two)
            }
        }
        PlfKind::Jd => {
            let w2 = (one - rho * rho).sqrt() * b;
            (rho - rho * e * w2, w2, two * (one - w2 - rho * rho * e))
        }
    };
    let noise = (one - w1 * w1 - w2 * w2 - two * rho * e * w1 * w2).max(T::zero()) * sigma2;
    Ok((FrameCoeffs::new(2, vec![w1], w2, noise)?, d * sigma2))
}

/// Resolve the FMD branch from `rho` against `sqrt(2 eps ln 2)`.
pub fn select_fmd_branch<T: Scalar>(rho: T, eps: T) -> Result<FmdBranch> {
    let e = sqrt_eps_scale(eps);
    let band = c::<T>(BRANCH_BAND);
    if rho > band * e {
        Ok(FmdBranch::LargeRho)
    } else if rho * band < e {
        Ok(FmdBranch::SmallRho)
    } else {
        Err(RdpError::BranchAmbiguity(format!(
            "rho = {rho} is within a factor {BRANCH_BAND} of sqrt(2 eps ln 2) = {e}; pass the branch explicitly"
        )))
    }
}

/// Frames 2 and 3 with `X̂_1 = X_1` and `R_2 = eps`; `r3_mode` sets `R_3`.
///
/// `branch` is only read for FMD; `None` selects it from `rho`.
pub fn high_rate_frames<T: Scalar>(
    kind: PlfKind,
    rho: T,
    eps: T,
    r3_mode: R3Mode,
    branch: Option<FmdBranch>,
    sigma2: T,
) -> Result<Vec<FrameAsymptotic<T>>> {
    check_eps(eps)?;
    check_source(rho, sigma2)?;
    let regime = r3_mode.regime();
    let (z, one, two) = (T::zero(), T::one(), c::<T>(2.0));
    let e = sqrt_eps_scale(eps);
    let rho2 = rho * rho;
    let s = (one + rho2).sqrt();
    let exp = |k: Vec<T>, d: Vec<T>| AsymptoticExpansion::new(k, d, regime);
    let frame = |frame, expansion, d: T| FrameAsymptotic {
        frame,
        expansion,
        distortion: d * sigma2,
    };

    let out = match kind {
        PlfKind::Sa | PlfKind::Jd => {
            let f2 = frame(
                2,
                exp(vec![rho, z], vec![-rho, one]),
                frame_j_high_rate(kind, 2, rho, eps, one)?,
            );
            let f3 = match (kind, r3_mode) {
                (PlfKind::Sa, R3Mode::Infinite) => frame(3, exp(vec![z, z, one], vec![z, z, z]), z),
                (_, R3Mode::Infinite) => frame(
                    3,
                    exp(vec![-rho2 / s, rho, one / s], vec![rho2 / s, -rho / s, z]),
                    two * (one - rho2 * rho2) * (one - one / s),
                ),
                (PlfKind::Sa, R3Mode::Eps) => frame(
                    3,
                    exp(vec![rho2, z, z], vec![-two * rho2, rho, one]),
                    frame_j_high_rate(kind, 3, rho, eps, one)?,
                ),
                (_, R3Mode::Eps) => frame(
                    3,
                    exp(vec![z, rho, z], vec![-rho2 / s, z, one / s]),
                    frame_j_high_rate(kind, 3, rho, eps, one)?,
                ),
            };
            vec![f2, f3]
        }
        PlfKind::Fmd => {
            let branch = match branch {
                Some(b) => b,
                None => select_fmd_branch(rho, eps)?,
            };
            let f2 = match branch {
                FmdBranch::LargeRho => frame(2, exp(vec![one, z], vec![z, z]), two * (one - rho)),
                FmdBranch::SmallRho => frame(2, exp(vec![z, z], vec![z, one]), two * (one - e)),
            };
            let f3 = match (r3_mode, branch) {
                (R3Mode::Infinite, _) => frame(3, exp(vec![z, z, one], vec![z, z, z]), z),
                // X̂_1 and X̂_2 nearly coincide, so only their sum is determined.
                (R3Mode::Eps, FmdBranch::LargeRho) => {
                    let half = c::<T>(0.5);
                    frame(3, exp(vec![half, half, z], vec![z, z, z]), two * (one - rho2))
                }
                (R3Mode::Eps, FmdBranch::SmallRho) => frame(3, exp(vec![z, z, z], vec![z, z, one]), two * (one - e)),
            };
            vec![f2, f3]
        }
    };
    Ok(out)
}

/// Frame-`j` distortion with `R_1 -> inf` and `R_2 = .. = R_j = eps`.
pub fn frame_j_high_rate<T: Scalar>(kind: PlfKind, j: usize, rho: T, eps: T, sigma2: T) -> Result<T> {
    check_eps(eps)?;
    check_source(rho, sigma2)?;
    if j < 2 {
        return Err(RdpError::ParameterDomain(format!("frame index must be >= 2, got {j}")));
    }
    let (one, two) = (T::one(), c::<T>(2.0));
    let e = sqrt_eps_scale(eps);
    let rho2 = rho * rho;
    let lead = one - rho2.powi((j - 1) as i32);
    let sum = geometric(rho2, j - 1);
    let bracket = match kind {
        PlfKind::Sa => sum,
        PlfKind::Jd => sum.sqrt() + (sum - one),
        PlfKind::Fmd => {
            return Err(RdpError::ParameterDomain(
                "the frame-j induction covers SA and JD only".into(),
            ))
        }
    };
    Ok(two * sigma2 * (lead - e * (one - rho2) * bracket))
}

/// One setting for [`asymptotic_gap`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapCase<T> {
    pub kind: PlfKind,
    pub frame: usize,
    pub regime: Regime,
    pub rho: T,
    pub sigma2: T,
    /// `R_2` in the low-rate regime; ignored otherwise.
    pub r2: Rate<T>,
    pub fmd_branch: Option<FmdBranch>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapPoint {
    pub eps: f64,
    pub numeric: f64,
    pub asymptotic: f64,
    pub gap: f64,
}

/// `gap ~ C sqrt(eps) + L eps` fitted by least squares.
#[derive(Debug, Clone, PartialEq)]
pub struct GapFit {
    pub c: f64,
    pub linear: f64,
    /// Residual norm relative to the norm of the gaps; zero when all gaps vanish.
    pub residual: f64,
    pub points: Vec<GapPoint>,
}

impl<T: Scalar> GapCase<T> {
    /// Closed-form value at `eps`. In the high-rate regimes `eps` is first
    /// raised to the solver's rate floor so both sides see the same rates.
    pub fn asymptotic(&self, eps: T) -> Result<T> {
        let j = self.frame;
        let floored = eps.max(c(RATE_FLOOR_BITS));
        match self.regime {
            Regime::LowR1 => {
                if j != 2 {
                    return Err(RdpError::OutOfRegime(format!(
                        "the low-rate closed forms cover frame 2 only, got frame {j}"
                    )));
                }
                Ok(low_rate_frame2(self.kind, self.r2, eps, self.rho, self.sigma2)?.1)
            }
            Regime::HighR1EpsInf | Regime::HighR1LowRest => {
                let mode = if self.regime == Regime::HighR1EpsInf {
                    R3Mode::Infinite
                } else {
                    R3Mode::Eps
                };
                match j {
                    2 | 3 => {
                        let frames =
                            high_rate_frames(self.kind, self.rho, floored, mode, self.fmd_branch, self.sigma2)?;
                        Ok(frames[j - 2].distortion)
                    }
                    _ if mode == R3Mode::Eps && self.kind != PlfKind::Fmd => {
                        frame_j_high_rate(self.kind, j, self.rho, floored, self.sigma2)
                    }
                    _ => Err(RdpError::OutOfRegime(format!(
                        "no closed form for {} frame {j} in {}",
                        self.kind, self.regime
                    ))),
                }
            }
        }
    }

    /// Rates the numeric solve uses at `eps`.
    pub fn profile(&self, eps: T) -> Result<RateProfile<T>> {
        let j = self.frame;
        let rates = match self.regime {
            Regime::LowR1 => vec![Rate::Finite(eps), self.r2],
            Regime::HighR1EpsInf => (1..=j)
                .map(|i| match i {
                    2 => Rate::Finite(eps),
                    _ => Rate::Infinite,
                })
                .collect(),
            Regime::HighR1LowRest => (1..=j)
                .map(|i| if i == 1 { Rate::Infinite } else { Rate::Finite(eps) })
                .collect(),
        };
        RateProfile::new(rates)
    }

    /// Greedy numeric distortion of the last frame at `eps`.
    pub fn numeric(&self, eps: T, opts: &SolverOptions) -> Result<T> {
        let profile = self.profile(eps)?;
        let spec = SourceSpec::new(self.rho, self.sigma2, profile.len())?;
        let (_, sols) = solve_horizon(self.kind, &profile, &spec, opts)?;
        Ok(sols[sols.len() - 1].distortion)
    }
}

/// Fit the gap between numeric and closed-form distortions over `eps_list`.
pub fn asymptotic_gap<T: Scalar>(case: &GapCase<T>, eps_list: &[T], opts: &SolverOptions) -> Result<GapFit> {
    if eps_list.len() < 2 {
        return Err(RdpError::ParameterDomain("need at least two eps values".into()));
    }
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(RdpError::ParameterDomain("eps list must be strictly decreasing".into()));
    }
    if eps_list[eps_list.len() - 1] < c(MIN_GAP_EPS) {
        return Err(RdpError::ParameterDomain(format!(
            "eps values must be >= {MIN_GAP_EPS}"
        )));
    }

    let mut points = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let asymptotic = to_f64(case.asymptotic(eps)?);
        let numeric = to_f64(case.numeric(eps, opts)?);
        let gap = (numeric - asymptotic).abs();
        points.push(GapPoint {
            eps: to_f64(eps),
            numeric,
            asymptotic,
            // Roundoff-level gaps are exact agreement.
            gap: if gap <= GAP_FLOOR * to_f64(case.sigma2) {
                0.0
            } else {
                gap
            },
        });
    }

    let sigma2 = to_f64(case.sigma2);
    let ratio = |p: &GapPoint| p.gap / p.eps.sqrt();
    let (first, last) = (&points[0], &points[points.len() - 1]);
    if last.gap > 1e-9 * sigma2 && ratio(last) > MAX_RATIO_GROWTH * ratio(first).max(f64::MIN_POSITIVE) {
        return Err(RdpError::RegimeMismatch(format!(
            "{} frame {} in {}: gap/sqrt(eps) grows from {:.3e} to {:.3e}",
            case.kind,
            case.frame,
            case.regime,
            ratio(first),
            ratio(last)
        )));
    }

    let mut normal = Matrix2::zeros();
    let mut rhs = Vector2::zeros();
    for p in &points {
        let x = Vector2::new(p.eps.sqrt(), p.eps);
        normal += x * x.transpose();
        rhs += x * p.gap;
    }
    let coef = normal
        .try_inverse()
        .map(|inv| inv * rhs)
        .ok_or_else(|| RdpError::NumericalDegeneracy("gap regression is singular".into()))?;
    let (sq, lin): (f64, f64) = points.iter().fold((0.0, 0.0), |(r, g), p| {
        let fit = coef[0] * p.eps.sqrt() + coef[1] * p.eps;
        (r + (p.gap - fit).powi(2), g + p.gap * p.gap)
    });
    let residual = if lin > 0.0 { (sq / lin).sqrt() } else { 0.0 };
    Ok(GapFit {
        c: coef[0],
        linear: coef[1],
        residual,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const LN2: f64 = std::f64::consts::LN_2;

    fn case(kind: PlfKind, frame: usize, regime: Regime, rho: f64) -> GapCase<f64> {
        GapCase {
            kind,
            frame,
            regime,
            rho,
            sigma2: 1.0,
            r2: Rate::Finite(1.0),
            fmd_branch: None,
        }
    }

    #[test]
    fn sa_low_rate_value() {
        let (_, d) = low_rate_frame2(PlfKind::Sa, Rate::Finite(1.0), 1e-3, 0.7, 1.0).unwrap();
        assert_relative_eq!(d, 0.267949, epsilon = 1e-6);
    }

    #[test]
    fn jd_low_rate_copies_first_frame_at_unit_rho() {
        let eps = 1e-3;
        for r2 in [0.0, 0.5, 3.0] {
            let (coeffs, d) = low_rate_frame2(PlfKind::Jd, Rate::Finite(r2), eps, 1.0, 2.0).unwrap();
            assert_eq!(coeffs.past_coeffs, vec![1.0]);
            assert_eq!(coeffs.source_coeff, 0.0);
            assert_eq!(coeffs.noise_var, 0.0);
            assert_relative_eq!(d, 4.0 * (1.0 - (2.0 * eps * LN2).sqrt()), epsilon = 1e-12);
        }
    }

    #[test]
    fn fmd_low_rate_coefficients_are_the_tangent_point() {
        let (eps, rho) = (1e-3, 1.0);
        let b2: f64 = 1.0 - 0.25;
        let e2 = 2.0 * eps * LN2;
        let (coeffs, d) = low_rate_frame2(PlfKind::Fmd, Rate::Finite(1.0), eps, rho, 1.0).unwrap();
        assert_relative_eq!(coeffs.past_coeffs[0], e2.sqrt() / (b2 + e2).sqrt(), epsilon = 1e-12);
        assert_relative_eq!(coeffs.source_coeff, b2 / (b2 + e2).sqrt(), epsilon = 1e-12);
        assert_relative_eq!(d, 2.0 * (1.0 - (b2 + e2).sqrt()), epsilon = 1e-12);
    }

    #[test]
    fn kinds_coincide_at_zero_correlation() {
        for r2 in [0.1, 1.0, 4.0] {
            let sa = low_rate_frame2(PlfKind::Sa, Rate::Finite(r2), 0.0, 0.0, 1.0).unwrap().1;
            for kind in [PlfKind::Jd, PlfKind::Fmd] {
                let d = low_rate_frame2(kind, Rate::Finite(r2), 0.0, 0.0, 1.0).unwrap().1;
                assert_relative_eq!(d, sa, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn regime_guard() {
        assert!(matches!(
            low_rate_frame2(PlfKind::Sa, Rate::Finite(1.0), 0.06, 1.0, 1.0),
            Err(RdpError::OutOfRegime(_))
        ));
        assert!(matches!(
            frame_j_high_rate(PlfKind::Sa, 3, 0.9, 0.1, 1.0),
            Err(RdpError::OutOfRegime(_))
        ));
        assert!(matches!(
            low_rate_frame2(PlfKind::Sa, Rate::Finite(1.0), -1e-3, 1.0, 1.0),
            Err(RdpError::ParameterDomain(_))
        ));
    }

    #[test]
    fn jd_third_frame_at_infinite_rate() {
        let f = high_rate_frames(PlfKind::Jd, 0.9f64, 0.0, R3Mode::Infinite, None, 1.0).unwrap();
        // 2 (1 - 0.6561)(1 - 1/sqrt(1.81))
        assert_relative_eq!(f[1].distortion, 0.1765624, epsilon = 1e-6);
        assert!((f[1].distortion - 0.17660).abs() < 1e-4);
        assert_eq!(f[1].expansion.regime, Regime::HighR1EpsInf);
        let sa = high_rate_frames(PlfKind::Sa, 0.9, 1e-4, R3Mode::Infinite, None, 1.0).unwrap();
        assert_eq!(sa[1].distortion, 0.0);
        assert_eq!(sa[1].expansion.coefficients(1e-4), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn sa_and_jd_share_frame2() {
        for mode in [R3Mode::Infinite, R3Mode::Eps] {
            let sa = high_rate_frames(PlfKind::Sa, 0.6, 1e-3, mode, None, 1.0).unwrap();
            let jd = high_rate_frames(PlfKind::Jd, 0.6, 1e-3, mode, None, 1.0).unwrap();
            assert_eq!(sa[0], jd[0]);
        }
    }

    #[test]
    fn fmd_branches() {
        let eps = 1e-4;
        let e = (2.0 * eps * LN2).sqrt();
        let small = high_rate_frames(PlfKind::Fmd, 0.001, eps, R3Mode::Eps, None, 1.0).unwrap();
        assert_relative_eq!(small[0].distortion, 2.0 * (1.0 - e), epsilon = 1e-12);
        assert_eq!(small[0].expansion.coefficients(eps), vec![0.0, e]);
        let large = high_rate_frames(PlfKind::Fmd, 0.9, eps, R3Mode::Eps, None, 1.0).unwrap();
        assert_relative_eq!(large[0].distortion, 0.2, epsilon = 1e-12);
        assert_relative_eq!(large[1].distortion, 2.0 * (1.0 - 0.81), epsilon = 1e-12);
        assert!(matches!(
            high_rate_frames(PlfKind::Fmd, e, eps, R3Mode::Eps, None, 1.0),
            Err(RdpError::BranchAmbiguity(_))
        ));
        // An explicit branch bypasses the check.
        assert!(high_rate_frames(PlfKind::Fmd, e, eps, R3Mode::Eps, Some(FmdBranch::LargeRho), 1.0).is_ok());
    }

    #[test]
    fn induction_base_case_and_leading_term() {
        let (rho, eps) = (0.7, 1e-3);
        let e = (2.0 * eps * LN2).sqrt();
        let d2 = frame_j_high_rate(PlfKind::Sa, 2, rho, eps, 1.0).unwrap();
        assert_relative_eq!(d2, 2.0 * (1.0 - rho * rho) * (1.0 - e), epsilon = 1e-12);
        let d4 = frame_j_high_rate(PlfKind::Sa, 4, 0.9, 0.0, 1.0).unwrap();
        assert_relative_eq!(d4, 2.0 * (1.0 - 0.531441), epsilon = 1e-12);
        assert_relative_eq!(d4, 0.937118, epsilon = 1e-6);
    }

    #[test]
    fn unit_correlation_is_the_limit() {
        for kind in [PlfKind::Sa, PlfKind::Jd] {
            for j in 2..6 {
                let at_one: f64 = frame_j_high_rate(kind, j, 1.0, 1e-3, 1.0).unwrap();
                let near: f64 = frame_j_high_rate(kind, j, 1.0 - 1e-9, 1e-3, 1.0).unwrap();
                assert!(at_one.abs() < 1e-15);
                assert!((at_one - near).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn jd_third_frame_gains_more_than_sa() {
        // Evaluated, the JD bracket sqrt(1 + rho^2) + rho^2 exceeds SA's 1 + rho^2.
        let (rho, eps) = (0.9, 1e-4);
        let e = (2.0 * eps * LN2).sqrt();
        let sa = frame_j_high_rate(PlfKind::Sa, 3, rho, eps, 1.0).unwrap();
        let jd = frame_j_high_rate(PlfKind::Jd, 3, rho, eps, 1.0).unwrap();
        let expected = 2.0 * e * (1.0 - rho * rho) * ((1.0f64 + rho * rho).sqrt() - 1.0);
        assert_relative_eq!(sa - jd, expected, epsilon = 1e-12);
        assert!(jd < sa);
    }

    #[test]
    fn fmd_has_no_induction() {
        assert!(frame_j_high_rate(PlfKind::Fmd, 3, 0.5, 1e-3, 1.0).is_err());
        assert!(frame_j_high_rate(PlfKind::Sa, 1, 0.5, 1e-3, 1.0).is_err());
    }

    #[test]
    fn sa_low_rate_gap_fits() {
        let fit = asymptotic_gap(
            &case(PlfKind::Sa, 2, Regime::LowR1, 1.0),
            &[1e-2, 1e-3, 1e-4],
            &SolverOptions::default(),
        )
        .unwrap();
        assert!(fit.c.is_finite());
        assert!(fit.residual < 0.1, "{fit:?}");
    }

    #[test]
    fn unit_correlation_high_rate_is_exact() {
        let fit = asymptotic_gap(
            &case(PlfKind::Sa, 2, Regime::HighR1EpsInf, 1.0),
            &[1e-2, 1e-3, 1e-4],
            &SolverOptions::default(),
        )
        .unwrap();
        assert!(fit.points.iter().all(|p| p.gap == 0.0));
        assert_eq!((fit.c, fit.residual), (0.0, 0.0));
    }

    #[test]
    fn exact_row_gap_is_order_eps() {
        let fit = asymptotic_gap(
            &case(PlfKind::Jd, 2, Regime::LowR1, 1.0),
            &[1e-2, 1e-3, 1e-4],
            &SolverOptions::default(),
        )
        .unwrap();
        let last = fit.points.last().unwrap();
        assert!(last.gap <= 5.0 * last.eps, "{fit:?}");
    }

    #[test]
    fn sa_closed_form_is_exact_at_zero_eps() {
        let c = case(PlfKind::Sa, 2, Regime::LowR1, 1.0);
        let numeric = c.numeric(0.0, &SolverOptions::default()).unwrap();
        assert_relative_eq!(numeric, c.asymptotic(0.0).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn wrong_branch_is_a_regime_mismatch() {
        let mut c = case(PlfKind::Fmd, 2, Regime::HighR1EpsInf, 0.9);
        c.fmd_branch = Some(FmdBranch::SmallRho);
        let err = asymptotic_gap(&c, &[1e-2, 1e-3, 1e-4], &SolverOptions::default()).unwrap_err();
        assert!(matches!(err, RdpError::RegimeMismatch(_)), "{err:?}");
    }

    #[test]
    fn gap_input_checks() {
        let c = case(PlfKind::Sa, 2, Regime::LowR1, 1.0);
        let opts = SolverOptions::default();
        assert!(asymptotic_gap(&c, &[1e-3, 1e-2], &opts).is_err());
        assert!(asymptotic_gap(&c, &[1e-3, 1e-7], &opts).is_err());
        assert!(asymptotic_gap(&c, &[1e-3], &opts).is_err());
        let mut c3 = c;
        c3.frame = 3;
        assert!(matches!(c3.asymptotic(1e-3), Err(RdpError::OutOfRegime(_))));
    }

    #[test]
    fn regime_tags_round_trip() {
        for r in [Regime::LowR1, Regime::HighR1LowRest, Regime::HighR1EpsInf] {
            assert_eq!(r.to_string().parse::<Regime>().unwrap(), r);
        }
        assert!("mid".parse::<Regime>().is_err());
    }

    proptest! {
        #[test]
        fn sa_distortion_grows_with_frame(rho in 0.0f64..0.999, eps in 0.0f64..0.05) {
            let mut prev = 0.0;
            for j in 2..8 {
                let d = frame_j_high_rate(PlfKind::Sa, j, rho, eps, 1.0).unwrap();
                prop_assert!(d >= prev - 1e-12);
                prev = d;
            }
        }

        #[test]
        fn low_rate_noise_is_a_variance(rho in 0.0f64..=1.0, eps in 0.0f64..0.05, r2 in 0.0f64..8.0) {
            for kind in PlfKind::ALL {
                let (coeffs, d) = low_rate_frame2(kind, Rate::Finite(r2), eps, rho, 1.0).unwrap();
                prop_assert!(coeffs.noise_var >= 0.0);
                // The dropped remainder is O(eps): FMD can undershoot zero by that much.
                prop_assert!(d >= -4.0 * eps * LN2 && d <= 2.0 + 1e-12);
            }
        }
    }
}
