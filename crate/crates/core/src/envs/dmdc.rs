//! Least-squares identification of `x' = A x + B a` from labeled
//! trajectories (dynamic mode decomposition with control).

use nalgebra::DMatrix;

use crate::data::Trajectory;
use crate::error::{KoapError, Result};
use crate::numerics::Mat;

/// Regressor `[x; a]` (one column per transition) and targets `x'`.
fn snapshots(trajs: &[Trajectory]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let first = trajs
        .iter()
        .find(|t| t.actions.is_some())
        .ok_or_else(|| KoapError::Oracle("no labeled trajectories".into()))?;
    let nx = first.state_dim();
    let na = first.action_dim().unwrap_or(0);
    let mut cols_reg = Vec::new();
    let mut cols_tgt = Vec::new();
    for t in trajs {
        let acts = t
            .actions
            .as_ref()
            .ok_or_else(|| KoapError::Oracle("trajectory without action labels".into()))?;
        for (i, a) in acts.iter().enumerate() {
            if t.states[i].len() != nx || a.len() != na {
                return Err(KoapError::Oracle("inconsistent dimensions across trajectories".into()));
            }
            cols_reg.extend_from_slice(&t.states[i]);
            cols_reg.extend_from_slice(a);
            cols_tgt.extend_from_slice(&t.states[i + 1]);
        }
    }
    let n = cols_tgt.len() / nx.max(1);
    Ok((
        DMatrix::from_column_slice(nx + na, n, &cols_reg),
        DMatrix::from_column_slice(nx, n, &cols_tgt),
    ))
}

/// Numerical rank of the stacked `[x; a]` regressor.
pub fn regressor_rank(trajs: &[Trajectory]) -> Result<usize> {
    let (omega, _) = snapshots(trajs)?;
    Ok(omega.rank(1e-9 * omega.norm().max(1.0)))
}

/// Minimise `sum ||x' - A x - B a||^2` through the normal equations.
pub fn dmdc_fit(trajs: &[Trajectory]) -> Result<(Mat, Mat)> {
    let (omega, target) = snapshots(trajs)?;
    let p = omega.nrows();
    let nx = target.nrows();
    if omega.ncols() < p {
        return Err(KoapError::Oracle(format!(
            "{} transitions cannot identify {p} regressors",
            omega.ncols()
        )));
    }
    let gram = &omega * omega.transpose();
    let svals = gram.singular_values();
    let smax = svals.max();
    let smin = svals.min();
    if smin <= 1e-12 * smax.max(1e-300) {
        return Err(KoapError::Oracle(format!(
            "rank-deficient regressor (singular values {smin:.3e} .. {smax:.3e})"
        )));
    }
    let rhs = &omega * target.transpose();
    let chol = gram
        .cholesky()
        .ok_or_else(|| KoapError::Oracle("normal equations are not positive definite".into()))?;
    // sol is p x nx and equals [A B]^T.
    let sol = chol.solve(&rhs);
    let g = sol.transpose();
    let na = p - nx;
    let mut a = Mat::zeros(nx, nx);
    let mut b = Mat::zeros(nx, na);
    for r in 0..nx {
        for c in 0..nx {
            a.data[r * nx + c] = g[(r, c)];
        }
        for c in 0..na {
            b.data[r * na + c] = g[(r, nx + c)];
        }
    }
    Ok((a, b))
}

/// Mean squared one-step prediction error of `(A, B)` on labeled data.
pub fn one_step_error(a: &Mat, b: &Mat, trajs: &[Trajectory]) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for t in trajs {
        let acts = t
            .actions
            .as_ref()
            .ok_or_else(|| KoapError::Oracle("trajectory without action labels".into()))?;
        for (i, act) in acts.iter().enumerate() {
            let pred: Vec<f64> = a
                .matvec(&t.states[i])
                .iter()
                .zip(b.matvec(act))
                .map(|(p, q)| p + q)
                .collect();
            total += pred
                .iter()
                .zip(&t.states[i + 1])
                .map(|(p, q)| (p - q).powi(2))
                .sum::<f64>();
            n += 1;
        }
    }
    if n == 0 {
        return Err(KoapError::Oracle("no transitions to score".into()));
    }
    Ok(total / n as f64)
}
