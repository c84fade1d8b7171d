//! Joint Gaussian law of a Gauss-Markov source and its linear-Gaussian reconstructions.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{RdpError, Result};
use crate::linalg::{min_eigenvalue, pinv_sym, symmetrize};
use crate::scalar::{c, tol, tol_f64, Scalar};

/// Largest horizon the dense representation is meant for.
pub const MAX_HORIZON: usize = 16;

/// Finite stand-in for an infinite rate, in bits.
pub const INFINITE_RATE_BITS: f64 = 30.0;

const PSD_REL_TOL: f64 = 1e-10;
const PINV_REL_CUTOFF: f64 = 1e-12;

/// Rate in bits, or the infinite sentinel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rate<T> {
    Finite(T),
    Infinite,
}

impl<T: Scalar> Rate<T> {
    pub fn is_infinite(&self) -> bool {
        matches!(self, Rate::Infinite)
    }

    /// Numeric value with the sentinel mapped to [`INFINITE_RATE_BITS`].
    pub fn bits(&self) -> T {
        match *self {
            Rate::Finite(r) => r,
            Rate::Infinite => c(INFINITE_RATE_BITS),
        }
    }

    /// `2^{-2R}`, exactly zero for the infinite rate.
    pub fn two_pow_neg2r(&self) -> T {
        match *self {
            Rate::Finite(r) => (-c::<T>(2.0) * r * T::ln_2()).exp(),
            Rate::Infinite => T::zero(),
        }
    }

    /// `self <= other + tol`, with the infinite rate above every finite one.
    pub fn within(&self, other: &Rate<T>, tol: T) -> bool {
        match (self, other) {
            (_, Rate::Infinite) => true,
            (Rate::Infinite, Rate::Finite(_)) => false,
            (Rate::Finite(a), Rate::Finite(b)) => *a <= *b + tol,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Rate::Finite(r) if !(r >= T::zero()) || !r.is_finite() => {
                Err(RdpError::ParameterDomain(format!("rate must be >= 0, got {r}")))
            }
            _ => Ok(()),
        }
    }
}

impl<T: Scalar> fmt::Display for Rate<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rate::Finite(r) => write!(f, "{r}"),
            Rate::Infinite => f.write_str("inf"),
        }
    }
}

impl<T: Scalar> FromStr for Rate<T> {
    type Err = RdpError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("inf") {
            return Ok(Rate::Infinite);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| RdpError::ParameterDomain(format!("not a rate: {s:?}")))?;
        if v.is_infinite() && v > 0.0 {
            return Ok(Rate::Infinite);
        }
        let r = Rate::Finite(c::<T>(v));
        r.validate()?;
        Ok(r)
    }
}

/// Gauss-Markov source `X_{j+1} = rho X_j + N_j` with stationary variance `sigma2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceSpec<T> {
    pub rho: T,
    pub sigma2: T,
    pub horizon: usize,
}

impl<T: Scalar> SourceSpec<T> {
    pub fn new(rho: T, sigma2: T, horizon: usize) -> Result<Self> {
        let spec = Self { rho, sigma2, horizon };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho >= T::zero() && self.rho <= T::one()) {
            return Err(RdpError::ParameterDomain(format!(
                "rho must lie in [0, 1], got {}",
                self.rho
            )));
        }
        if !(self.sigma2 > T::zero()) || !self.sigma2.is_finite() {
            return Err(RdpError::ParameterDomain(format!(
                "sigma2 must be positive, got {}",
                self.sigma2
            )));
        }
        if self.horizon == 0 || self.horizon > MAX_HORIZON {
            return Err(RdpError::ParameterDomain(format!(
                "horizon must be in 1..={MAX_HORIZON}, got {}",
                self.horizon
            )));
        }
        Ok(())
    }

    /// `Cov(X_i, X_j)` for 1-based frame indices.
    pub fn source_cov(&self, i: usize, j: usize) -> T {
        self.rho.powi(i.abs_diff(j) as i32) * self.sigma2
    }

    pub fn innovation_var(&self) -> T {
        (T::one() - self.rho * self.rho) * self.sigma2
    }
}

/// `X̂_j = sum_i past_coeffs[i] X̂_{i+1} + source_coeff X_j + Z_j`, `Var(Z_j) = noise_var`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameCoeffs<T> {
    pub frame_index: usize,
    pub past_coeffs: Vec<T>,
    pub source_coeff: T,
    pub noise_var: T,
}

impl<T: Scalar> FrameCoeffs<T> {
    pub fn new(frame_index: usize, past_coeffs: Vec<T>, source_coeff: T, noise_var: T) -> Result<Self> {
        let f = Self {
            frame_index,
            past_coeffs,
            source_coeff,
            noise_var,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_index == 0 {
            return Err(RdpError::ParameterDomain("frame index is 1-based".into()));
        }
        if self.past_coeffs.len() + 1 != self.frame_index {
            return Err(RdpError::Shape(format!(
                "frame {} needs {} past coefficients, got {}",
                self.frame_index,
                self.frame_index - 1,
                self.past_coeffs.len()
            )));
        }
        if !(self.noise_var >= T::zero()) {
            return Err(RdpError::ParameterDomain(format!(
                "noise variance must be >= 0, got {}",
                self.noise_var
            )));
        }
        if self.past_coeffs.iter().any(|x| !x.is_finite()) || !self.source_coeff.is_finite() {
            return Err(RdpError::ParameterDomain("non-finite coefficient".into()));
        }
        Ok(())
    }

    /// Coefficients stacked as `(past..., source)`.
    pub fn weights(&self) -> DVector<T> {
        let mut w = DVector::zeros(self.frame_index);
        for (k, &x) in self.past_coeffs.iter().enumerate() {
            w[k] = x;
        }
        w[self.frame_index - 1] = self.source_coeff;
        w
    }

    pub fn from_weights(frame_index: usize, w: &DVector<T>, noise_var: T) -> Result<Self> {
        if w.len() != frame_index {
            return Err(RdpError::Shape(format!(
                "frame {frame_index} needs {frame_index} weights, got {}",
                w.len()
            )));
        }
        Self::new(
            frame_index,
            w.rows(0, frame_index - 1).iter().copied().collect(),
            w[frame_index - 1],
            noise_var,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconPolicy<T> {
    pub frames: Vec<FrameCoeffs<T>>,
}

impl<T> Default for ReconPolicy<T> {
    fn default() -> Self {
        Self { frames: Vec::new() }
    }
}

impl<T: Scalar> ReconPolicy<T> {
    pub fn new(frames: Vec<FrameCoeffs<T>>) -> Result<Self> {
        let mut p = Self { frames: Vec::new() };
        for f in frames {
            p.push(f)?;
        }
        Ok(p)
    }

    pub fn push(&mut self, f: FrameCoeffs<T>) -> Result<()> {
        f.validate()?;
        if f.frame_index != self.frames.len() + 1 {
            return Err(RdpError::Shape(format!(
                "expected frame {}, got frame {}",
                self.frames.len() + 1,
                f.frame_index
            )));
        }
        self.frames.push(f);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Copy of the first `n` frames.
    pub fn prefix(&self, n: usize) -> Self {
        Self {
            frames: self.frames[..n.min(self.frames.len())].to_vec(),
        }
    }
}

/// 1-based variable name: `X_j` or `X̂_j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarLabel {
    Source(usize),
    Recon(usize),
}

impl fmt::Display for VarLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VarLabel::Source(j) => write!(f, "X{j}"),
            VarLabel::Recon(j) => write!(f, "Xhat{j}"),
        }
    }
}

/// Covariance of `(X_1..X_T, X̂_1..X̂_k)` for the reconstructions built so far.
#[derive(Debug, Clone, PartialEq)]
pub struct JointGaussian<T: Scalar> {
    spec: SourceSpec<T>,
    labels: Vec<VarLabel>,
    cov: DMatrix<T>,
    frames: Vec<FrameCoeffs<T>>,
}

impl<T: Scalar> JointGaussian<T> {
    pub fn spec(&self) -> &SourceSpec<T> {
        &self.spec
    }

    pub fn labels(&self) -> &[VarLabel] {
        &self.labels
    }

    pub fn cov(&self) -> &DMatrix<T> {
        &self.cov
    }

    /// Coefficients of the reconstructions appended so far.
    pub fn frames(&self) -> &[FrameCoeffs<T>] {
        &self.frames
    }

    pub fn recon_count(&self) -> usize {
        self.frames.len()
    }

    pub fn index_of(&self, label: VarLabel) -> Result<usize> {
        let t = self.spec.horizon;
        match label {
            VarLabel::Source(j) if (1..=t).contains(&j) => Ok(j - 1),
            VarLabel::Recon(j) if (1..=self.frames.len()).contains(&j) => Ok(t + j - 1),
            _ => Err(RdpError::UnknownLabel(label.to_string())),
        }
    }

    pub fn covariance(&self, a: VarLabel, b: VarLabel) -> Result<T> {
        Ok(self.cov[(self.index_of(a)?, self.index_of(b)?)])
    }

    /// Covariance sub-matrix over `labels`, in the given order.
    pub fn block(&self, labels: &[VarLabel]) -> Result<DMatrix<T>> {
        let idx = labels.iter().map(|&l| self.index_of(l)).collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_fn(idx.len(), idx.len(), |r, c| {
            self.cov[(idx[r], idx[c])]
        }))
    }

    /// Cross-covariance rows `rows` against columns `cols`.
    pub fn cross(&self, rows: &[VarLabel], cols: &[VarLabel]) -> Result<DMatrix<T>> {
        let ri = rows.iter().map(|&l| self.index_of(l)).collect::<Result<Vec<_>>>()?;
        let ci = cols.iter().map(|&l| self.index_of(l)).collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_fn(ri.len(), ci.len(), |r, c| self.cov[(ri[r], ci[c])]))
    }

    /// Same variables with `cov` substituted, e.g. an empirical estimate.
    pub fn with_covariance(&self, cov: DMatrix<T>) -> Result<Self> {
        let n = self.labels.len();
        if cov.shape() != (n, n) {
            return Err(RdpError::Shape(format!(
                "covariance is {}x{}, expected {n}x{n}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        Ok(Self {
            cov: symmetrize(&cov),
            ..self.clone()
        })
    }

    fn check_frame(&self, j: usize) -> Result<&FrameCoeffs<T>> {
        if j == 0 || j > self.frames.len() {
            return Err(RdpError::Shape(format!(
                "frame {j} not built (have {} reconstructions)",
                self.frames.len()
            )));
        }
        Ok(&self.frames[j - 1])
    }
}

/// Labels `X̂_1..X̂_n`.
pub fn recon_labels(n: usize) -> Vec<VarLabel> {
    (1..=n).map(VarLabel::Recon).collect()
}

/// Labels `X_1..X_n`.
pub fn source_labels(n: usize) -> Vec<VarLabel> {
    (1..=n).map(VarLabel::Source).collect()
}

pub fn source_covariance<T: Scalar>(spec: &SourceSpec<T>) -> Result<JointGaussian<T>> {
    spec.validate()?;
    let t = spec.horizon;
    let cov = DMatrix::from_fn(t, t, |i, j| spec.source_cov(i + 1, j + 1));
    Ok(JointGaussian {
        spec: *spec,
        labels: source_labels(t),
        cov,
        frames: Vec::new(),
    })
}

/// Appends `X̂_j` built from `coeffs`, with `Z_j` independent of everything before.
pub fn extend_joint<T: Scalar>(joint: &JointGaussian<T>, coeffs: &FrameCoeffs<T>) -> Result<JointGaussian<T>> {
    coeffs.validate()?;
    let j = coeffs.frame_index;
    if j != joint.frames.len() + 1 {
        return Err(RdpError::Shape(format!(
            "joint holds {} reconstructions, cannot append frame {j}",
            joint.frames.len()
        )));
    }
    if j > joint.spec.horizon {
        return Err(RdpError::Shape(format!(
            "frame {j} beyond horizon {}",
            joint.spec.horizon
        )));
    }

    let mut basis = recon_labels(j - 1);
    basis.push(VarLabel::Source(j));
    let idx: Vec<usize> = basis.iter().map(|&l| joint.index_of(l)).collect::<Result<_>>()?;
    let w = coeffs.weights();

    let n = joint.cov.nrows();
    let mut row = DVector::zeros(n);
    for (k, &i) in idx.iter().enumerate() {
        row += joint.cov.column(i) * w[k];
    }
    let var_hat = idx
        .iter()
        .enumerate()
        .fold(T::zero(), |acc, (k, &i)| acc + w[k] * row[i])
        + coeffs.noise_var;

    let mut cov = DMatrix::zeros(n + 1, n + 1);
    cov.view_mut((0, 0), (n, n)).copy_from(&joint.cov);
    for i in 0..n {
        cov[(n, i)] = row[i];
        cov[(i, n)] = row[i];
    }
    cov[(n, n)] = var_hat;

    let tr = cov.trace();
    let lam = min_eigenvalue(&cov);
    if lam < -tol::<T>(PSD_REL_TOL) * tr {
        return Err(RdpError::NumericalDegeneracy(format!(
            "covariance after frame {j} has eigenvalue {lam}"
        )));
    }

    let mut labels = joint.labels.clone();
    labels.push(VarLabel::Recon(j));
    let mut frames = joint.frames.clone();
    frames.push(coeffs.clone());
    Ok(JointGaussian {
        spec: joint.spec,
        labels,
        cov,
        frames,
    })
}

/// Joint law of the source and every frame of `policy`.
pub fn build_joint<T: Scalar>(spec: &SourceSpec<T>, policy: &ReconPolicy<T>) -> Result<JointGaussian<T>> {
    if policy.len() > spec.horizon {
        return Err(RdpError::Shape(format!(
            "policy has {} frames, horizon is {}",
            policy.len(),
            spec.horizon
        )));
    }
    policy
        .frames
        .iter()
        .try_fold(source_covariance(spec)?, |j, f| extend_joint(&j, f))
}

/// `Var(target | given)` via the Schur complement, pseudo-inverting singular blocks.
pub fn conditional_variance<T: Scalar>(joint: &JointGaussian<T>, target: VarLabel, given: &[VarLabel]) -> Result<T> {
    let v = joint.covariance(target, target)?;
    if given.is_empty() {
        return Ok(v);
    }
    let s_gg = joint.block(given)?;
    let s_tg = joint.cross(&[target], given)?;
    let p = pinv_sym(&s_gg, tol_f64::<T>(PINV_REL_CUTOFF));
    let explained = (&s_tg * p * s_tg.transpose())[(0, 0)];
    Ok((v - explained).max(T::zero()))
}

/// `I(X_j; X̂_j | X̂_1..X̂_{j-1})` in bits.
pub fn frame_rate<T: Scalar>(joint: &JointGaussian<T>, j: usize) -> Result<Rate<T>> {
    let f = joint.check_frame(j)?;
    let v_c = conditional_variance(joint, VarLabel::Source(j), &recon_labels(j - 1))?;
    let signal = f.source_coeff * f.source_coeff * v_c;
    Ok(rate_from_snr(signal, f.noise_var, joint.spec.sigma2))
}

/// `½ log2(1 + signal / noise)`, zero for a vanishing signal and infinite for
/// a noiseless non-trivial one.
pub(crate) fn rate_from_snr<T: Scalar>(signal: T, noise: T, sigma2: T) -> Rate<T> {
    if noise <= T::zero() {
        // With no noise the rate is infinite unless X_j is already fixed by the past.
        return if signal <= tol::<T>(1e-12) * sigma2 {
            Rate::Finite(T::zero())
        } else {
            Rate::Infinite
        };
    }
    Rate::Finite((signal.max(T::zero()) / noise).ln_1p() / (c::<T>(2.0) * T::ln_2()))
}

/// `E (X_j - X̂_j)^2`.
pub fn frame_distortion<T: Scalar>(joint: &JointGaussian<T>, j: usize) -> Result<T> {
    joint.check_frame(j)?;
    let x = VarLabel::Source(j);
    let xh = VarLabel::Recon(j);
    let d = joint.covariance(x, x)? + joint.covariance(xh, xh)? - c::<T>(2.0) * joint.covariance(x, xh)?;
    Ok(d.max(T::zero()))
}
