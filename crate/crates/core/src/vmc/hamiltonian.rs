//! Coulomb potential and local energies.

use ndarray::{Array3, ArrayView2, Axis};

use crate::chem::Molecule;
use crate::globe::Reparam;
use crate::model::{LogPsiDerivatives, Model};
use crate::system::System;

/// Electron-electron, electron-nucleus and nucleus-nucleus Coulomb energy of
/// one configuration `(N, 3)`.
pub fn potential(molecule: &Molecule, electrons: ArrayView2<'_, f64>) -> f64 {
    let n = electrons.nrows();
    let r = |i: usize| [electrons[[i, 0]], electrons[[i, 1]], electrons[[i, 2]]];
    let mut v = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            v += 1.0 / dist(r(i), r(j));
        }
        for nuc in &molecule.nuclei {
            v -= nuc.charge as f64 / dist(r(i), nuc.position);
        }
    }
    v + molecule.nuclear_repulsion()
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// `−½ (Δ log|ψ| + |∇ log|ψ||²) + V`.
pub fn local_energy_from(d: &LogPsiDerivatives, v: f64) -> f64 {
    let g2: f64 = d.grad.iter().map(|g| g * g).sum();
    -0.5 * (d.laplacian + g2) + v
}

/// Local energies for a batch of walkers `(B, N, 3)`.
pub fn local_energies(model: &Model, sys: &System, rep: &Reparam<ndarray::Array2<f64>>, electrons: &Array3<f64>, chunk: usize) -> Vec<f64> {
    let d = model.derivatives(sys, rep, electrons, chunk);
    d.iter()
        .zip(electrons.axis_iter(Axis(0)))
        .map(|(d, e)| local_energy_from(d, potential(&sys.molecule, e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn nuclear_repulsion_of_h2() {
        let m = Molecule::from_atoms("h2", &[(1, [0.0, 0.0, 0.0]), (1, [1.4, 0.0, 0.0])]).unwrap();
        let none = ndarray::Array2::<f64>::zeros((0, 3));
        assert!((potential(&m, none.view()) - 1.0 / 1.4).abs() < 1e-15);
    }

    #[test]
    fn electron_proton_at_unit_distance() {
        let m = Molecule::from_atoms("h", &[(1, [0.0, 0.0, 0.0])]).unwrap();
        assert!((potential(&m, array![[0.0, 1.0, 0.0]].view()) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn electron_pair_adds_inverse_distance() {
        let m = Molecule::from_atoms("h", &[(1, [0.0, 0.0, 0.0])]).unwrap();
        let both = potential(&m, array![[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]].view());
        let single_far = potential(&m, array![[0.0, 0.0, 1.0]].view()) + potential(&m, array![[0.0, 0.0, -1.0]].view());
        assert!((both - single_far - 0.5).abs() < 1e-15);
    }

    #[test]
    fn hydrogenic_exponential_is_an_eigenfunction() {
        // log ψ = −r: ∇ = −r̂, Δ = −2/r.
        let m = Molecule::from_atoms("h", &[(1, [0.0, 0.0, 0.0])]).unwrap();
        for p in [[0.3f64, -0.2, 0.9], [2.0, 1.0, -1.5], [0.01, 0.0, 0.02]] {
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            let d = LogPsiDerivatives { sign: 1.0, log_psi: -r, grad: p.iter().map(|x| -x / r).collect(), laplacian: -2.0 / r };
            let e = local_energy_from(&d, potential(&m, array![p].view()));
            assert!((e + 0.5).abs() < 1e-12);
        }
    }
}
