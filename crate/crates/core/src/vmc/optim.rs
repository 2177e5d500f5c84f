//! Parameter updates: natural gradient through a matrix-free Fisher product
//! and an adaptive-moment optimizer with per-tensor trust ratios.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, Axis};

use crate::diff::cg::{cg_solve, CgSolution};
use crate::diff::ParamStore;

/// One molecule's contribution to the Fisher product and the gradient.
#[derive(Debug, Clone)]
pub struct MoleculeJacobian {
    /// Centered `∂ log|ψ| / ∂ p_moon`, `B × P_moon`.
    pub moon: Array2<f64>,
    /// Centered `∂ log|ψ| / ∂ θ`, `B × R`.
    pub reparam: Array2<f64>,
    /// `∂ θ / ∂ p_globe`, `R × P_globe`.
    pub globe: Array2<f64>,
    /// Per-walker factor, `min(1, 1/s) / (n_molecules · B)`.
    pub weight: f64,
}

impl MoleculeJacobian {
    /// Centers the walker Jacobians in place.
    pub fn new(mut moon: Array2<f64>, mut reparam: Array2<f64>, globe: Array2<f64>, weight: f64) -> Self {
        for a in [&mut moon, &mut reparam] {
            if a.nrows() > 0 {
                let mean = a.mean_axis(Axis(0)).expect("non-empty");
                *a -= &mean;
            }
        }
        Self { moon, reparam, globe, weight }
    }

    fn jvp(&self, xm: ArrayView1<'_, f64>, xg: ArrayView1<'_, f64>) -> Array1<f64> {
        self.moon.dot(&xm) + self.reparam.dot(&self.globe.dot(&xg))
    }

    fn vjp(&self, y: &Array1<f64>, out_m: &mut [f64], out_g: &mut [f64]) {
        let gm = y.dot(&self.moon);
        let gg = y.dot(&self.reparam).dot(&self.globe);
        for (o, v) in out_m.iter_mut().zip(gm.iter()) {
            *o += self.weight * v;
        }
        for (o, v) in out_g.iter_mut().zip(gg.iter()) {
            *o += self.weight * v;
        }
    }
}

/// `Σ_i w_i Jᵢᵀ (E_L − Ē)` over molecules; `centered_energies[i]` has one
/// entry per Jacobian row.
pub fn energy_gradient(mols: &[MoleculeJacobian], centered_energies: &[Array1<f64>]) -> Vec<f64> {
    let (pm, pg) = sizes(mols);
    let mut g = vec![0.0; pm + pg];
    let (gm, gg) = g.split_at_mut(pm);
    for (m, e) in mols.iter().zip(centered_energies) {
        m.vjp(e, gm, gg);
    }
    g
}

fn sizes(mols: &[MoleculeJacobian]) -> (usize, usize) {
    let m = mols.first().expect("at least one molecule");
    (m.moon.ncols(), m.globe.ncols())
}

/// `(F + λ I) v` with `F = Σ_i w_i Jᵢᵀ Jᵢ`.
pub fn fisher_apply(mols: &[MoleculeJacobian], damping: f64, v: &[f64]) -> Vec<f64> {
    let (pm, pg) = sizes(mols);
    let vm = ArrayView1::from(&v[..pm]);
    let vg = ArrayView1::from(&v[pm..pm + pg]);
    let mut out: Vec<f64> = v.iter().map(|x| damping * x).collect();
    let (om, og) = out.split_at_mut(pm);
    for m in mols {
        let y = m.jvp(vm, vg);
        m.vjp(&y, om, og);
    }
    out
}

/// Walker-space Gram matrix `J̃ J̃ᵀ` of the weighted Jacobian
/// `J̃ = [√w_i Jᵢ]` stacked over molecules.
pub fn gram(mols: &[MoleculeJacobian]) -> Array2<f64> {
    let offsets: Vec<usize> = mols
        .iter()
        .scan(0, |acc, m| {
            let o = *acc;
            *acc += m.moon.nrows();
            Some(o)
        })
        .collect();
    let total: usize = mols.iter().map(|m| m.moon.nrows()).sum();
    let mut k = Array2::zeros((total, total));
    for (i, a) in mols.iter().enumerate() {
        for (j, b) in mols.iter().enumerate().skip(i) {
            let scale = (a.weight * b.weight).sqrt();
            let mut block = Array2::zeros((a.moon.nrows(), b.moon.nrows()));
            general_mat_mul(scale, &a.moon, &b.moon.t(), 0.0, &mut block);
            let gg = a.globe.dot(&b.globe.t());
            let left = a.reparam.dot(&gg);
            general_mat_mul(scale, &left, &b.reparam.t(), 1.0, &mut block);
            let (oa, ob) = (offsets[i], offsets[j]);
            k.slice_mut(s![oa..oa + block.nrows(), ob..ob + block.ncols()]).assign(&block);
            if i != j {
                k.slice_mut(s![ob..ob + block.ncols(), oa..oa + block.nrows()]).assign(&block.t());
            }
        }
    }
    k
}

/// Solves `(F + λ I) x = g` for `g = J̃ᵀ ẽ` in walker space:
/// `x = J̃ᵀ z` with `(J̃ J̃ᵀ + λ I) z = ẽ`, where `ẽ_i = √w_i (E_L − Ē)`.
pub fn natural_direction(
    mols: &[MoleculeJacobian],
    centered_energies: &[Array1<f64>],
    damping: f64,
    tol: f64,
    max_steps: usize,
) -> Result<(Vec<f64>, CgSolution), crate::diff::cg::CgError> {
    let k = gram(mols);
    let rhs: Vec<f64> = mols
        .iter()
        .zip(centered_energies)
        .flat_map(|(m, e)| e.iter().map(move |v| m.weight.sqrt() * v))
        .collect();
    let sol = cg_solve(
        |z| {
            let z = ArrayView1::from(z);
            let y = k.dot(&z);
            y.iter().zip(z.iter()).map(|(a, b)| a + damping * b).collect()
        },
        &rhs,
        tol,
        max_steps,
    )?;
    let (pm, pg) = sizes(mols);
    let mut x = vec![0.0; pm + pg];
    let (xm, xg) = x.split_at_mut(pm);
    let mut offset = 0;
    for m in mols {
        let n = m.moon.nrows();
        let z = Array1::from(sol.x[offset..offset + n].to_vec()) * (1.0 / m.weight.sqrt().max(f64::MIN_POSITIVE));
        m.vjp(&z, xm, xg);
        offset += n;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(crate::diff::cg::CgError::NonFinite(sol.iterations));
    }
    Ok((x, sol))
}

/// Adaptive moments with a per-tensor trust ratio `‖p‖ / ‖update‖`.
#[derive(Debug, Clone)]
pub struct Lamb {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Lamb {
    pub fn new(n: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// Updates the concatenation of `stores` in place given the gradient of
    /// their concatenated flat vectors.
    pub fn step(&mut self, stores: &mut [&mut ParamStore], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let mut offset = 0;
        for store in stores.iter_mut() {
            let mut flat = store.flat();
            for spec in store.specs().to_vec() {
                let n = spec.rows * spec.cols;
                let range = spec.offset..spec.offset + n;
                let mut upd = Vec::with_capacity(n);
                for k in range.clone() {
                    let g = grad[offset + k];
                    let m = &mut self.m[offset + k];
                    let v = &mut self.v[offset + k];
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    upd.push((*m / c1) / ((*v / c2).sqrt() + self.eps));
                }
                let pn = flat[range.clone()].iter().map(|x| x * x).sum::<f64>().sqrt();
                let un = upd.iter().map(|x| x * x).sum::<f64>().sqrt();
                let trust = if pn > 0.0 && un > 0.0 { pn / un } else { 1.0 };
                for (p, u) in flat[range].iter_mut().zip(&upd) {
                    *p -= self.lr * trust * u;
                }
            }
            store.set_flat(&flat);
            offset += store.len();
        }
    }
}
