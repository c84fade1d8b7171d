//! Exhaustive grid oracle, independent of the ellipsoid algebra in the main solver.

use std::cmp::Ordering;

use nalgebra::DVector;
use rayon::prelude::*;

use super::{FrameProgram, FrameSolution, RateProfile, SolverStatus};
use crate::error::{RdpError, Result};
use crate::perception_metrics::PlfKind;
use crate::scalar::{c, to_f64, Scalar};
use crate::source_model::{ReconPolicy, SourceSpec};

const BOX: f64 = 1.5;

/// `w = base + sum_f z_f dirs[f]` over the free coordinates left after
/// Gauss-Jordan elimination of the covariance-match equalities.
struct Elimination {
    base: Vec<f64>,
    dirs: Vec<Vec<f64>>,
}

/// Pivots on the highest-index past coefficients first, then the source
/// coefficient; whatever is not pivoted stays free.
fn eliminate(a: &[Vec<f64>], b: &[f64], n: usize) -> Option<Elimination> {
    let m = a.len();
    let mut rows: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(r, &bi)| r.iter().copied().chain([bi]).collect())
        .collect();
    let scale = a.iter().flatten().fold(0.0f64, |s, x| s.max(x.abs())).max(1e-300);
    let tol = 1e-9 * scale;

    let order: Vec<usize> = (0..n.saturating_sub(1)).rev().chain([n - 1]).collect();
    let mut pivots: Vec<(usize, usize)> = Vec::new(); // (row, col)
    let mut used = vec![false; m];
    for &col in &order {
        let best = (0..m).filter(|&r| !used[r]).max_by(|&x, &y| {
            rows[x][col]
                .abs()
                .partial_cmp(&rows[y][col].abs())
                .unwrap_or(Ordering::Equal)
        });
        let Some(r) = best else { break };
        if rows[r][col].abs() <= tol {
            continue;
        }
        let p = rows[r][col];
        for v in rows[r].iter_mut() {
            *v /= p;
        }
        for other in 0..m {
            if other != r {
                let f = rows[other][col];
                if f != 0.0 {
                    let pivot_row = rows[r].clone();
                    for (x, p) in rows[other].iter_mut().zip(&pivot_row) {
                        *x -= f * p;
                    }
                }
            }
        }
        used[r] = true;
        pivots.push((r, col));
    }
    // Leftover rows must read 0 = 0.
    if (0..m).any(|r| !used[r] && rows[r][n].abs() > 1e-9 * (1.0 + scale)) {
        return None;
    }

    let pivot_cols: Vec<usize> = pivots.iter().map(|&(_, c)| c).collect();
    let free: Vec<usize> = (0..n).filter(|c| !pivot_cols.contains(c)).collect();
    let mut base = vec![0.0; n];
    for &(r, col) in &pivots {
        base[col] = rows[r][n];
    }
    let dirs = free
        .iter()
        .map(|&f| {
            let mut d = vec![0.0; n];
            d[f] = 1.0;
            for &(r, col) in &pivots {
                d[col] = -rows[r][f];
            }
            d
        })
        .collect();
    Some(Elimination { base, dirs })
}

#[derive(Clone)]
struct Candidate {
    gain: f64,
    w: Vec<f64>,
}

/// Higher gain wins; ties go to the lexicographically smaller coefficient vector.
fn better(a: Candidate, b: Candidate) -> Candidate {
    match a.gain.partial_cmp(&b.gain) {
        Some(Ordering::Greater) => a,
        Some(Ordering::Less) => b,
        _ => {
            if a.w.partial_cmp(&b.w) == Some(Ordering::Greater) {
                b
            } else {
                a
            }
        }
    }
}

/// Best feasible point of the grid `{k * grid_step} ∩ [-1.5, 1.5]` over the
/// free coefficients (at most three), filtered by the rate inequality.
pub fn brute_force_frame<T: Scalar>(
    kind: PlfKind,
    j: usize,
    profile: &RateProfile<T>,
    prefix: &ReconPolicy<T>,
    spec: &SourceSpec<T>,
    grid_step: f64,
) -> Result<FrameSolution<T>> {
    if !(grid_step > 0.0) {
        return Err(RdpError::ParameterDomain(format!(
            "grid step must be positive, got {grid_step}"
        )));
    }
    if j == 1 {
        let mut sol = super::solve_frame1(profile.get(1)?, spec)?;
        sol.kind = kind;
        return Ok(sol);
    }
    if j > 3 {
        return Err(RdpError::ParameterDomain(format!(
            "oracle supports frames <= 3, got {j}"
        )));
    }
    let prog = FrameProgram::build(kind, j, profile, prefix, spec)?;
    let n = j;
    let f = |x: T| to_f64(x);
    let a: Vec<Vec<f64>> = (0..prog.eq_a.nrows())
        .map(|r| (0..n).map(|k| f(prog.eq_a[(r, k)])).collect())
        .collect();
    let b: Vec<f64> = prog.eq_b.iter().map(|&x| f(x)).collect();
    let elim = eliminate(&a, &b, n).ok_or_else(|| RdpError::Infeasible {
        constraint: format!("{kind} covariance match at frame {j}"),
    })?;
    let k = elim.dirs.len();
    if k > 3 {
        return Err(RdpError::ParameterDomain(format!(
            "{k} free coefficients exceed the oracle's 3"
        )));
    }

    let m = prog.metric();
    let m: Vec<Vec<f64>> = (0..n).map(|r| (0..n).map(|c| f(m[(r, c)])).collect()).collect();
    let g: Vec<f64> = prog.target.iter().map(|&x| f(x)).collect();
    let limit = to_f64(prog.sigma2) * (1.0 + 1e-12);
    let half = (BOX / grid_step + 1e-9).floor() as i64;
    let axis: Vec<f64> = (-half..=half).map(|i| i as f64 * grid_step).collect();

    let point = |z: &[f64]| -> Vec<f64> {
        let mut w = elim.base.clone();
        for (d, &zd) in elim.dirs.iter().zip(z) {
            for (wi, di) in w.iter_mut().zip(d) {
                *wi += zd * di;
            }
        }
        w
    };
    let score = |w: &[f64]| -> Option<f64> {
        let mut quad = 0.0;
        for r in 0..n {
            let mut row = 0.0;
            for c in 0..n {
                row += m[r][c] * w[c];
            }
            quad += w[r] * row;
        }
        (quad <= limit).then(|| w.iter().zip(&g).map(|(x, y)| x * y).sum())
    };
    let visit = |z: &[f64]| -> Option<Candidate> {
        let w = point(z);
        score(&w).map(|gain| Candidate { gain, w })
    };

    let best = match k {
        0 => visit(&[]),
        1 => axis.par_iter().filter_map(|&z0| visit(&[z0])).reduce_with(better),
        2 => axis
            .par_iter()
            .filter_map(|&z0| axis.iter().filter_map(|&z1| visit(&[z0, z1])).reduce(better))
            .reduce_with(better),
        _ => axis
            .par_iter()
            .filter_map(|&z0| {
                axis.iter()
                    .flat_map(|&z1| axis.iter().map(move |&z2| [z0, z1, z2]))
                    .filter_map(|z| visit(&z))
                    .reduce(better)
            })
            .reduce_with(better),
    };
    let best = best.ok_or_else(|| RdpError::Infeasible {
        constraint: format!("no grid point satisfies the {kind} rate and variance constraints at frame {j}"),
    })?;

    let w = DVector::from_iterator(n, best.w.iter().map(|&x| c::<T>(x)));
    prog.finish(&w, prog.noise_for(&w, false), SolverStatus::GridPolish)
}
