//! Hand-derived constraint expressions for frames 2 to 4, written in the
//! coefficient names of the closed-form analysis (`ν`, `ω`, `τ`, `λ`). They
//! cross-check the covariance-based construction in the main solver.
//!
//! All quantities are normalised by `sigma2`. The rate slack uses the chain
//! `V_j = rho^2 V_{j-1} 2^{-2R_{j-1}} + (1 - rho^2)` with `V_1 = 1`, which is
//! exact for Gaussian policies when `R_{j-1}` is the rate the prefix frame
//! actually uses.

use super::{effective_rate, RateProfile};
use crate::error::{RdpError, Result};
use crate::perception_metrics::PlfKind;
use crate::scalar::{c, Scalar};
use crate::source_model::{build_joint, frame_rate, FrameCoeffs, ReconPolicy, SourceSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitResidual<T> {
    /// Covariance-match equalities, `lhs - rhs`.
    pub perception: Vec<T>,
    /// `Var(X̂_j) / sigma2 - 1`.
    pub variance: T,
    /// Rate inequality as `rhs - lhs`; nonnegative when satisfied.
    pub rate_slack: T,
}

impl<T: Scalar> ExplicitResidual<T> {
    pub fn max_equality(&self) -> T {
        self.perception.iter().fold(self.variance.abs(), |m, x| m.max(x.abs()))
    }
}

pub fn explicit_program_residual<T: Scalar>(
    kind: PlfKind,
    j: usize,
    coeffs: &FrameCoeffs<T>,
    profile: &RateProfile<T>,
    prefix: &ReconPolicy<T>,
    spec: &SourceSpec<T>,
) -> Result<ExplicitResidual<T>> {
    if !(2..=4).contains(&j) {
        return Err(RdpError::NotImplemented(format!(
            "explicit program for {kind} at frame {j}"
        )));
    }
    if coeffs.frame_index != j || prefix.len() < j - 1 {
        return Err(RdpError::Shape(format!(
            "frame {j} needs matching coefficients and {} prefix frames",
            j - 1
        )));
    }
    let one = T::one();
    let two = c::<T>(2.0);
    let rho = spec.rho;
    let f = &prefix.frames;
    let nu = f[0].source_coeff;
    let a = coeffs.noise_var / spec.sigma2;

    // 2^{-2R} for the prefix frames at their achieved rates.
    let joint = build_joint(spec, &prefix.prefix(j - 1))?;
    let mut decay = Vec::with_capacity(j - 1);
    for i in 1..j {
        decay.push(frame_rate(&joint, i)?.two_pow_neg2r());
    }
    let mut v = one;
    for b in &decay {
        v = rho * rho * v * *b + (one - rho * rho);
    }
    let bj = effective_rate(profile.get(j)?, j).two_pow_neg2r();

    let (perception, quad, s) = match j {
        2 => {
            let (w1, w2) = (coeffs.past_coeffs[0], coeffs.source_coeff);
            let perception = match kind {
                PlfKind::Sa => vec![w1 + nu * w2 * rho - rho * nu],
                PlfKind::Jd => vec![w1 + nu * w2 * rho - rho],
                PlfKind::Fmd => vec![],
            };
            let quad = w1 * w1 + w2 * w2 + two * w1 * w2 * rho * nu;
            (perception, quad, w2)
        }
        3 => {
            let (w1, w2) = (f[1].past_coeffs[0], f[1].source_coeff);
            let (t1, t2, t3) = (coeffs.past_coeffs[0], coeffs.past_coeffs[1], coeffs.source_coeff);
            let m12 = w1 + w2 * rho * nu;
            let c13 = rho * rho * nu;
            let c23 = w1 * rho * rho * nu + rho * w2;
            let perception = match kind {
                PlfKind::Sa => vec![t1 + t2 * rho * nu + t3 * c13 - c13, t1 * rho * nu + t2 + t3 * c23 - c23],
                PlfKind::Jd => vec![t1 + t2 * rho + t3 * c13 - rho * rho, t1 * rho + t2 + t3 * c23 - rho],
                PlfKind::Fmd => vec![],
            };
            let quad = t1 * t1 + t2 * t2 + t3 * t3 + two * t1 * t2 * m12 + two * t1 * t3 * c13 + two * t2 * t3 * c23;
            (perception, quad, t3)
        }
        _ => {
            let (w1, w2) = (f[1].past_coeffs[0], f[1].source_coeff);
            let (t1, t2, t3) = (f[2].past_coeffs[0], f[2].past_coeffs[1], f[2].source_coeff);
            let l = &coeffs.past_coeffs;
            let (l1, l2, l3, l4) = (l[0], l[1], l[2], coeffs.source_coeff);
            let g2 = rho * nu * w1 + w2; // Cov(X̂_2, X_2)
            let m12 = w1 + w2 * rho * nu;
            let m13 = t1 + t2 * m12 + t3 * rho * rho * nu;
            let m23 = t1 * m12 + t2 + t3 * rho * g2;
            let c14 = rho * rho * rho * nu;
            let c24 = rho * rho * g2;
            let c34 = rho * (t1 * rho * rho * nu + t2 * rho * g2 + t3);
            let e1 = l1 + l2 * m12 + l3 * m13 + l4 * c14;
            let e2 = l1 * m12 + l2 + l3 * m23 + l4 * c24;
            let e3 = l1 * m13 + l2 * m23 + l3 + l4 * c34;
            let perception = match kind {
                PlfKind::Sa => vec![e1 - c14, e2 - c24, e3 - c34],
                PlfKind::Jd => vec![e1 - rho * rho * rho, e2 - rho * rho, e3 - rho],
                PlfKind::Fmd => vec![],
            };
            let quad = l1 * l1
                + l2 * l2
                + l3 * l3
                + l4 * l4
                + two * (l1 * l2 * m12 + l1 * l3 * m13 + l2 * l3 * m23)
                + two * l4 * (l1 * c14 + l2 * c24 + l3 * c34);
            (perception, quad, l4)
        }
    };

    Ok(ExplicitResidual {
        perception,
        variance: quad + a - one,
        rate_slack: (one - bj) * (one - quad) - s * s * bj * v,
    })
}
