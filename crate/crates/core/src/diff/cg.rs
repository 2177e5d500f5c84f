//! Conjugate gradients for symmetric positive definite operators.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CgError {
    #[error("conjugate gradient produced a non-finite value at iteration {0}")]
    NonFinite(usize),
}

#[derive(Debug, Clone)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    /// Residual norm after every iteration.
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` starting from zero, stopping once `|r| <= rel_tol * |b|`
/// or after `max_steps` iterations, whichever comes first.
pub fn cg_solve(
    mut apply: impl FnMut(&[f64]) -> Vec<f64>,
    b: &[f64],
    rel_tol: f64,
    max_steps: usize,
) -> Result<CgSolution, CgError> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let bnorm = dot(b, b).sqrt();
    if !bnorm.is_finite() {
        return Err(CgError::NonFinite(0));
    }
    if bnorm == 0.0 {
        return Ok(CgSolution { x, iterations: 0, residual: 0.0, converged: true, history: Vec::new() });
    }
    let tol = rel_tol * bnorm;
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut history = Vec::new();
    for it in 0..max_steps {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !pap.is_finite() || pap <= 0.0 {
            return Err(CgError::NonFinite(it));
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        if !rr_new.is_finite() {
            return Err(CgError::NonFinite(it));
        }
        history.push(rr_new.sqrt());
        if rr_new.sqrt() <= tol {
            return Ok(CgSolution { x, iterations: it + 1, residual: rr_new.sqrt(), converged: true, history });
        }
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    Ok(CgSolution { x, iterations: max_steps, residual: rr.sqrt(), converged: false, history })
}
