//! Dense primal simplex for the illumination-compensation LP.
//!
//! The assembled problem always admits the all-zero point as a basic
//! feasible start once every row is oriented as `a.x <= b` with `b >= 0`
//! (auxiliary and rank rows have zero right-hand sides; pixel upper bounds
//! have one). So a single phase with a slack basis suffices: no artificial
//! variables, no phase 1.
//!
//! Pivoting uses Dantzig pricing for speed and switches permanently to
//! Bland's rule after a run of degenerate pivots, which keeps the solver
//! deterministic and cycling-proof.

use rayon::prelude::*;

use super::{check_solution, objective_value, LaicError, LaicProblem, Sense};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct LpSolution<S> {
    /// One value per problem variable (pixels then auxiliaries).
    pub values: Vec<S>,
    pub objective_value: S,
    pub status: LpStatus,
    pub pivots: usize,
}

/// Consecutive degenerate pivots tolerated before switching to Bland's rule.
const STALL_LIMIT: usize = 64;

fn numeric_tol<S: Scalar>() -> S {
    S::of(1e-9).max(S::epsilon() * S::of(64.0))
}

/// Solves the LP to optimality within `tol`, certifying feasibility of the
/// returned point by re-checking every row of the original problem.
pub fn solve_lp<S: Scalar>(p: &LaicProblem<S>, tol: S) -> Result<LpSolution<S>, LaicError> {
    let n = p.n_vars;

    // orient every constraint as a.x <= rhs
    let mut le_rows: Vec<(Vec<(usize, S)>, S)> = Vec::with_capacity(p.rows.len() + n);
    for row in &p.rows {
        match row.sense {
            Sense::Le => le_rows.push((row.coeffs.clone(), row.rhs)),
            Sense::Ge => le_rows.push((negate(&row.coeffs), -row.rhs)),
            Sense::Eq => {
                le_rows.push((row.coeffs.clone(), row.rhs));
                le_rows.push((negate(&row.coeffs), -row.rhs));
            }
        }
    }
    for (j, &(lo, hi)) in p.bounds.iter().enumerate() {
        debug_assert!(lo == S::zero(), "solver assumes zero lower bounds");
        if hi < S::infinity() {
            le_rows.push((vec![(j, S::one())], hi));
        }
    }
    if le_rows.iter().any(|&(_, rhs)| rhs < S::zero()) {
        // the zero point is infeasible; cannot happen for problems built by
        // build_lp, where every rhs is 0 or 1
        return Ok(LpSolution {
            values: vec![S::zero(); n],
            objective_value: S::zero(),
            status: LpStatus::Infeasible,
            pivots: 0,
        });
    }

    let m = le_rows.len();
    let width = n + m + 1;
    let mut tableau = vec![S::zero(); (m + 1) * width];
    for (i, (coeffs, rhs)) in le_rows.iter().enumerate() {
        let row = &mut tableau[i * width..(i + 1) * width];
        for &(j, c) in coeffs {
            row[j] += c;
        }
        row[n + i] = S::one();
        row[n + m] = *rhs;
    }
    // slack basis has zero cost, so reduced costs start as the objective
    tableau[m * width..m * width + n].copy_from_slice(&p.objective);

    let mut basis: Vec<usize> = (n..n + m).collect();
    let eps = numeric_tol::<S>();
    let cap = (50 * n).max(1000);
    let mut use_bland = false;
    let mut stall = 0usize;
    let mut pivots = 0usize;
    let mut pivot_row_buf = vec![S::zero(); width];
    let mut optimal = false;

    while pivots < cap {
        let obj_row = &tableau[m * width..m * width + n + m];
        let entering = if use_bland {
            obj_row.iter().position(|&d| d < -eps)
        } else {
            let mut best: Option<(usize, S)> = None;
            for (j, &d) in obj_row.iter().enumerate() {
                if d < -eps && best.map_or(true, |(_, bd)| d < bd) {
                    best = Some((j, d));
                }
            }
            best.map(|(j, _)| j)
        };
        let Some(enter) = entering else {
            optimal = true;
            break;
        };

        // ratio test; ties broken on the smallest basic variable index
        let mut leave: Option<(S, usize, usize)> = None; // (ratio, basis var, row)
        for i in 0..m {
            let a = tableau[i * width + enter];
            if a > eps {
                let ratio = tableau[i * width + n + m] / a;
                let better = match leave {
                    None => true,
                    Some((r, bv, _)) => {
                        ratio < r - eps || (ratio < r + eps && basis[i] < bv)
                    }
                };
                if better {
                    leave = Some((ratio, basis[i], i));
                }
            }
        }
        let Some((ratio, _, row)) = leave else {
            return Err(LaicError::Numerics(format!(
                "unbounded direction through variable {enter}"
            )));
        };

        if ratio <= eps {
            stall += 1;
            if stall >= STALL_LIMIT {
                use_bland = true;
            }
        } else {
            stall = 0;
        }

        // normalize the pivot row, then eliminate the column everywhere else
        let pivot = tableau[row * width + enter];
        {
            let r = &mut tableau[row * width..(row + 1) * width];
            for v in r.iter_mut() {
                *v /= pivot;
            }
            pivot_row_buf.copy_from_slice(r);
        }
        let eliminate = |(ri, chunk): (usize, &mut [S])| {
            if ri == row {
                return;
            }
            let factor = chunk[enter];
            if factor != S::zero() {
                for (v, &pv) in chunk.iter_mut().zip(&pivot_row_buf) {
                    *v -= factor * pv;
                }
                chunk[enter] = S::zero(); // kill residual rounding noise
            }
        };
        if m >= 64 {
            tableau
                .par_chunks_mut(width)
                .enumerate()
                .for_each(eliminate);
        } else {
            tableau.chunks_mut(width).enumerate().for_each(eliminate);
        }
        basis[row] = enter;
        pivots += 1;
    }

    let mut values = vec![S::zero(); n];
    for (i, &b) in basis.iter().enumerate() {
        if b < n {
            values[b] = tableau[i * width + n + m].max(S::zero());
        }
    }
    let objective = objective_value(p, &values);
    if !optimal {
        return Ok(LpSolution {
            values,
            objective_value: objective,
            status: LpStatus::IterationLimit,
            pivots,
        });
    }
    check_solution(p, &values, tol).map_err(LaicError::Numerics)?;
    Ok(LpSolution {
        values,
        objective_value: objective,
        status: LpStatus::Optimal,
        pivots,
    })
}

fn negate<S: Scalar>(coeffs: &[(usize, S)]) -> Vec<(usize, S)> {
    coeffs.iter().map(|&(j, c)| (j, -c)).collect()
}
