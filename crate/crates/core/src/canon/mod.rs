//! Canonicalization of Hartree-Fock coefficients: a unit-determinant mixing
//! of the occupied orbitals that makes each molecular orbital supported on
//! the atoms of its localized orbital, followed by a sign convention.

mod bfgs;
mod hungarian;

pub use bfgs::{bfgs, BfgsResult};
pub use hungarian::hungarian;

use log::warn;
use ndarray::{Array2, Axis};
use thiserror::Error;

use crate::chem::HfSolution;
use crate::diff::linalg::Lu;
use crate::orbitals::{OrbitalSet, OrbitalType};

#[derive(Debug, Error, PartialEq)]
pub enum CanonError {
    #[error("atom {atom} needs {needed} atomic orbitals but the basis provides {available}")]
    BasisTooSmall { atom: usize, needed: usize, available: usize },
    #[error("orbital set has {orbitals} orbitals but the HF solution has {hf}")]
    CountMismatch { orbitals: usize, hf: usize },
}

/// Binary `η × N` matrix: entry `(a, i)` is one when atomic orbital `a` may
/// contribute to molecular orbital `i`.
pub fn build_mask(orbitals: &OrbitalSet, ao_counts: &[usize]) -> Result<Array2<f64>, CanonError> {
    let n = orbitals.len();
    let eta: usize = ao_counts.iter().sum();
    // Per atom, orbital-type groups in insertion order.
    let mut groups: Vec<Vec<(OrbitalType, Vec<usize>)>> = vec![Vec::new(); ao_counts.len()];
    for (i, orb) in orbitals.orbitals.iter().enumerate() {
        let (m, k) = orb.atoms;
        let atoms: &[usize] = if m == k { &[m][..] } else { &[m, k][..] };
        for &a in atoms {
            match groups[a].iter_mut().find(|g| g.0 == orb.kind) {
                Some(g) => g.1.push(i),
                None => groups[a].push((orb.kind, vec![i])),
            }
        }
    }
    let mut mask = Array2::zeros((eta, n));
    let mut offset = 0;
    for (atom, atom_groups) in groups.iter().enumerate() {
        let mut o = offset;
        for (_, mos) in atom_groups {
            let k = mos.len();
            if o + k > offset + ao_counts[atom] {
                let needed = atom_groups.iter().map(|g| g.1.len()).sum();
                return Err(CanonError::BasisTooSmall { atom, needed, available: ao_counts[atom] });
            }
            for a in 0..k {
                for &mo in mos {
                    mask[[o + a, mo]] = 1.0;
                }
            }
            o += k;
        }
        offset += ao_counts[atom];
    }
    Ok(mask)
}

/// Loss and gradient with respect to `B = Ωᵀ A`.
fn column_loss(b: &Array2<f64>, mask: &Array2<f64>) -> (f64, Array2<f64>) {
    let mut loss = 0.0;
    let mut grad = Array2::zeros(b.dim());
    for j in 0..b.ncols() {
        let mut inside = 0.0;
        for a in 0..b.nrows() {
            let v = b[[a, j]];
            if mask[[a, j]] == 0.0 {
                loss += v * v;
                grad[[a, j]] = 2.0 * v;
            } else {
                inside += v * v;
            }
        }
        let norm = inside.sqrt();
        loss += (1.0 - norm).powi(2);
        if norm > 1e-300 {
            let f = -2.0 * (1.0 - norm) / norm;
            for a in 0..b.nrows() {
                if mask[[a, j]] != 0.0 {
                    grad[[a, j]] = f * b[[a, j]];
                }
            }
        }
    }
    (loss, grad)
}

/// `‖ΩᵀA ∘ (1 − M)‖² + Σ_i (1 − ‖(ΩᵀA ∘ M)_i‖)²`.
pub fn locality_loss(omega: &Array2<f64>, a: &Array2<f64>, mask: &Array2<f64>) -> f64 {
    column_loss(&omega.t().dot(a), mask).0
}

/// Masked-out energy `‖ΩᵀA ∘ (1 − M)‖²`.
pub fn masked_out_energy(omega: &Array2<f64>, a: &Array2<f64>, mask: &Array2<f64>) -> f64 {
    let b = omega.t().dot(a);
    b.iter().zip(mask.iter()).filter(|(_, &m)| m == 0.0).map(|(v, _)| v * v).sum()
}

fn single_column_loss(b: ndarray::ArrayView1<f64>, m: ndarray::ArrayView1<f64>) -> f64 {
    let mut out = 0.0;
    let mut inside = 0.0;
    for (v, &k) in b.iter().zip(m.iter()) {
        if k == 0.0 {
            out += v * v;
        } else {
            inside += v * v;
        }
    }
    out + (1.0 - inside.sqrt()).powi(2)
}

#[derive(Debug, Clone, Copy)]
pub struct CanonOptions {
    pub max_outer: usize,
    pub bfgs_max_iter: usize,
    pub bfgs_gtol: f64,
    pub loss_tol: f64,
}

impl Default for CanonOptions {
    fn default() -> Self {
        Self { max_outer: 10, bfgs_max_iter: 500, bfgs_gtol: 1e-9, loss_tol: 1e-10 }
    }
}

#[derive(Debug, Clone)]
pub struct Canonicalized {
    /// Unit-determinant mixing matrix, `N × N`.
    pub a: Array2<f64>,
    /// Diagonal of the sign matrix.
    pub signs: Vec<f64>,
    /// Transformed coefficients `D Aᵀ Ω`, one row per molecular orbital.
    pub coefficients: Array2<f64>,
    pub loss_trace: Vec<f64>,
    pub converged: bool,
}

impl Canonicalized {
    /// Canonical orbital values at `points`, shape `points × N`.
    pub fn eval(&self, hf: &HfSolution, points: &[[f64; 3]]) -> Array2<f64> {
        hf.eval_orbitals(points, Some(&self.coefficients))
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "a": self.a.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>(),
            "signs": self.signs,
            "loss_trace": self.loss_trace,
            "converged": self.converged,
        })
    }
}

/// `A = Â / |det Â|^{1/N}` and the loss gradient with respect to `Â`.
fn normalized_loss(omega: &Array2<f64>, mask: &Array2<f64>, a_hat: &Array2<f64>) -> (f64, Array2<f64>) {
    let n = a_hat.nrows() as f64;
    let lu = Lu::new(a_hat.view());
    let (sign, logdet) = lu.slogdet();
    if sign == 0.0 || !logdet.is_finite() {
        return (f64::INFINITY, Array2::zeros(a_hat.dim()));
    }
    let s = (-logdet / n).exp();
    let a = a_hat * s;
    let (loss, dl_db) = column_loss(&omega.t().dot(&a), mask);
    let g_a = omega.dot(&dl_db);
    let inner = (&g_a * a_hat).sum();
    let inv_t = lu.inverse().reversed_axes();
    let grad = &g_a * s - &(inv_t * (s / n * inner));
    (loss, grad)
}

/// Column-sign convention: flip a molecular orbital when its masked
/// coefficients sum to a negative number.
pub fn sign_canonicalize(omega: &Array2<f64>, a: &Array2<f64>, mask: &Array2<f64>) -> Vec<f64> {
    let b = omega.t().dot(a);
    (&b * mask).sum_axis(Axis(0)).iter().map(|&s| if s < 0.0 { -1.0 } else { 1.0 }).collect()
}

pub fn canonicalize(hf: &HfSolution, mask: &Array2<f64>, opts: &CanonOptions) -> Result<Canonicalized, CanonError> {
    canonicalize_coefficients(&hf.coefficients, mask, opts)
}

/// Canonicalizes an `N × η` coefficient matrix against an `η × N` mask.
pub fn canonicalize_coefficients(omega: &Array2<f64>, mask: &Array2<f64>, opts: &CanonOptions) -> Result<Canonicalized, CanonError> {
    let n = omega.nrows();
    if mask.ncols() != n {
        return Err(CanonError::CountMismatch { orbitals: mask.ncols(), hf: n });
    }
    let mut a = Array2::<f64>::eye(n);
    let mut trace = vec![locality_loss(omega, &a, mask)];
    let mut converged = false;
    for _ in 0..opts.max_outer {
        let x0: Vec<f64> = a.iter().copied().collect();
        let res = bfgs(
            |x| {
                let ah = Array2::from_shape_vec((n, n), x.to_vec()).expect("square");
                let (l, g) = normalized_loss(omega, mask, &ah);
                (l, g.iter().copied().collect())
            },
            &x0,
            opts.bfgs_max_iter,
            opts.bfgs_gtol,
        );
        let ah = Array2::from_shape_vec((n, n), res.x).expect("square");
        let (_, logdet) = Lu::new(ah.view()).slogdet();
        a = &ah * (-logdet / n as f64).exp();

        let b = omega.t().dot(&a);
        let cost: Vec<Vec<f64>> =
            (0..n).map(|i| (0..n).map(|j| single_column_loss(b.column(i), mask.column(j))).collect()).collect();
        let perm = hungarian(&cost);
        let mut permuted = Array2::zeros((n, n));
        for (i, &j) in perm.iter().enumerate() {
            permuted.column_mut(j).assign(&a.column(i));
        }
        a = permuted;
        let loss = locality_loss(omega, &a, mask);
        let prev = *trace.last().expect("non-empty");
        trace.push(loss);
        if (prev - loss).abs() < opts.loss_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("canonicalization stopped after {} rounds (loss {:.3e})", opts.max_outer, trace.last().unwrap_or(&f64::NAN));
    }
    let signs = sign_canonicalize(omega, &a, mask);
    let mut coefficients = a.t().dot(omega);
    for (mut row, s) in coefficients.rows_mut().into_iter().zip(&signs) {
        row *= *s;
    }
    Ok(Canonicalized { a, signs, coefficients, loss_trace: trace, converged })
}
