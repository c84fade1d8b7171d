//! Wasserstein-2 divergences between zero-mean Gaussians and the three
//! zero-perception residuals.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{RdpError, Result};
use crate::linalg::{sqrt_psd, symmetrize, trace_sqrt_psd};
use crate::scalar::{c, Scalar};
use crate::source_model::{recon_labels, source_labels, JointGaussian, VarLabel};

/// Which law a zero-perception constraint pins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PlfKind {
    /// Framewise marginal: `P_{X_j} = P_{X̂_j}`.
    Fmd,
    /// Joint distribution: `P_{X_1..X_j} = P_{X̂_1..X̂_j}`.
    Jd,
    /// Self-adaptive: `P_{X̂_<j, X_j} = P_{X̂_<j, X̂_j}`.
    Sa,
}

impl PlfKind {
    pub const ALL: [PlfKind; 3] = [PlfKind::Fmd, PlfKind::Jd, PlfKind::Sa];

    pub fn tag(&self) -> &'static str {
        match self {
            PlfKind::Fmd => "fmd",
            PlfKind::Jd => "jd",
            PlfKind::Sa => "sa",
        }
    }
}

impl fmt::Display for PlfKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for PlfKind {
    type Err = RdpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fmd" => Ok(PlfKind::Fmd),
            "jd" => Ok(PlfKind::Jd),
            "sa" => Ok(PlfKind::Sa),
            other => Err(RdpError::ParameterDomain(format!(
                "unknown perception loss {other:?} (expected fmd, jd or sa)"
            ))),
        }
    }
}

pub fn w2sq_gaussian_1d<T: Scalar>(var_a: T, var_b: T) -> Result<T> {
    if !(var_a >= T::zero()) || !(var_b >= T::zero()) {
        return Err(RdpError::ParameterDomain(format!(
            "variances must be >= 0, got {var_a} and {var_b}"
        )));
    }
    let d = var_a.sqrt() - var_b.sqrt();
    Ok(d * d)
}

/// Squared W2 distance between `N(0, a)` and `N(0, b)` (Bures formula).
pub fn w2sq_gaussian_multi<T: Scalar>(cov_a: &DMatrix<T>, cov_b: &DMatrix<T>) -> Result<T> {
    if cov_a.shape() != cov_b.shape() || !cov_a.is_square() {
        return Err(RdpError::Shape(format!(
            "covariances must be square and equal-sized, got {:?} and {:?}",
            cov_a.shape(),
            cov_b.shape()
        )));
    }
    if cov_a.nrows() == 1 {
        return w2sq_gaussian_1d(cov_a[(0, 0)].max(T::zero()), cov_b[(0, 0)].max(T::zero()));
    }
    let root_b = sqrt_psd(cov_b);
    let cross = symmetrize(&(&root_b * cov_a * &root_b));
    let d = cov_a.trace() + cov_b.trace() - c::<T>(2.0) * trace_sqrt_psd(&cross);
    Ok(d.max(T::zero()))
}

/// Covariance blocks `(source side, reconstruction side)` whose equality is the
/// zero-perception condition of `kind` at frame `j`.
pub fn plf_blocks<T: Scalar>(kind: PlfKind, joint: &JointGaussian<T>, j: usize) -> Result<(DMatrix<T>, DMatrix<T>)> {
    if j == 0 || j > joint.recon_count() {
        return Err(RdpError::Shape(format!(
            "frame {j} not built (have {} reconstructions)",
            joint.recon_count()
        )));
    }
    let (lhs, rhs) = match kind {
        PlfKind::Fmd => (vec![VarLabel::Source(j)], vec![VarLabel::Recon(j)]),
        PlfKind::Jd => (source_labels(j), recon_labels(j)),
        PlfKind::Sa => {
            let mut lhs = recon_labels(j - 1);
            lhs.push(VarLabel::Source(j));
            (lhs, recon_labels(j))
        }
    };
    Ok((joint.block(&lhs)?, joint.block(&rhs)?))
}

pub fn plf_residual<T: Scalar>(kind: PlfKind, joint: &JointGaussian<T>, j: usize) -> Result<T> {
    let (a, b) = plf_blocks(kind, joint, j)?;
    w2sq_gaussian_multi(&a, &b)
}
