//! Reference tables and randomized cross-checks, written as panicking
//! checks so the unit tests and the acceptance report share them.

use moonlet::canon::{build_mask, canonicalize_coefficients, hungarian, locality_loss, masked_out_energy, CanonOptions};
use moonlet::chem::{build_frame, Molecule, Nucleus};
use moonlet::diff::linalg::det;
use moonlet::orbitals::{localize_orbitals, OrbitalSet, OrbitalType, DEFAULT_C_SELF};
use moonlet::vmc::stats::{clip_norm, rescale_factor};
use moonlet::vmc::clip_energies;
use ndarray::{array, Array2};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::molecule;

pub fn midpoint(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0, (a[2] + b[2]) / 2.0]
}

pub fn near(a: [f64; 3], b: [f64; 3]) -> bool {
    (0..3).all(|k| (a[k] - b[k]).abs() < 1e-12)
}

pub fn localize(m: &Molecule) -> OrbitalSet {
    localize_orbitals(m, &build_frame(m), DEFAULT_C_SELF).unwrap()
}

pub fn h2_orbitals() {
    let o = localize(&molecule("h2"));
    assert_eq!(o.len(), 1);
    assert_eq!(o.orbitals[0].kind, OrbitalType::Valence { order: 1 });
    assert!(near(o.orbitals[0].location, [0.0; 3]));
}

pub fn water_orbitals() {
    let m = molecule("h2o");
    let o = localize(&m);
    let p = m.positions();
    assert_eq!(o.len(), 5);
    for j in 0..3 {
        assert_eq!(o.orbitals[j].kind, OrbitalType::Core { charge: 8, shell: j as u32 + 1 });
        assert!(near(o.orbitals[j].location, p[0]));
    }
    assert!(o.orbitals[3..].iter().all(|x| x.kind == OrbitalType::Valence { order: 1 }));
    let mut bonds: Vec<[f64; 3]> = o.orbitals[3..].iter().map(|x| x.location).collect();
    let mut expected = [midpoint(p[0], p[1]), midpoint(p[0], p[2])];
    bonds.sort_by(|a, b| a[0].total_cmp(&b[0]));
    expected.sort_by(|a, b| a[0].total_cmp(&b[0]));
    assert!(near(bonds[0], expected[0]) && near(bonds[1], expected[1]));
}

pub fn nitrogen_orbitals() {
    let o = localize(&molecule("n2"));
    assert_eq!(o.len(), 7);
    assert_eq!(o.orbitals.iter().filter(|x| matches!(x.kind, OrbitalType::Core { .. })).count(), 4);
    let valence: Vec<_> = o.orbitals.iter().filter(|x| matches!(x.kind, OrbitalType::Valence { .. })).collect();
    let orders: Vec<_> = valence.iter().map(|x| x.kind).collect();
    assert_eq!(
        orders,
        vec![OrbitalType::Valence { order: 1 }, OrbitalType::Valence { order: 2 }, OrbitalType::Valence { order: 3 }]
    );
    assert!(valence.iter().all(|x| near(x.location, [0.0; 3])));
}

/// Nuclei with the given charges at random positions at least 0.5 bohr apart.
pub fn random_molecule(charges: &[u32], seed: u64) -> Molecule {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nuclei: Vec<Nucleus> = Vec::new();
    for &z in charges {
        loop {
            let p = [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
            if nuclei.iter().all(|n| (0..3).map(|k| (n.position[k] - p[k]).powi(2)).sum::<f64>() > 0.25) {
                nuclei.push(Nucleus { position: p, charge: z });
                break;
            }
        }
    }
    Molecule::new("fuzz", nuclei).unwrap()
}

/// Orbital count `⌈ΣZ/2⌉` and midpoint placement for one random molecule.
pub fn orbital_count(charges: &[u32], seed: u64) {
    let m = random_molecule(charges, seed);
    let o = localize(&m);
    let total: u32 = charges.iter().sum();
    assert_eq!(o.len(), total.div_ceil(2) as usize, "charges {charges:?}");
    for orb in &o.orbitals {
        let (a, b) = orb.atoms;
        assert!(near(orb.location, midpoint(m.nuclei[a].position, m.nuclei[b].position)));
    }
}

pub fn orbital_count_fuzz(cases: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..cases {
        let n = rng.random_range(1..8);
        let charges: Vec<u32> = (0..n).map(|_| rng.random_range(1..=10)).collect();
        orbital_count(&charges, rng.random());
    }
}

pub fn water() -> Molecule {
    Molecule::from_atoms("h2o", &[(8, [0.0, 0.0, 0.0]), (1, [1.4305, 1.1093, 0.0]), (1, [-1.4305, 1.1093, 0.0])]).unwrap()
}

pub fn water_mask() -> Array2<f64> {
    build_mask(&localize(&water()), &[5, 1, 1]).unwrap()
}

pub fn water_mask_table() {
    let expected = array![
        [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0],
    ];
    let mask = water_mask();
    // The two O-H bonds are symmetric; either labelling is the same table.
    let mut swapped = expected.clone();
    swapped.swap([3, 5], [4, 5]);
    swapped.swap([3, 6], [4, 6]);
    assert!(mask.t() == expected || mask.t() == swapped, "{mask}");
}

/// Ω′ with support inside the mask and unit rows.
pub fn synthetic_local(mask: &Array2<f64>, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let (eta, n) = mask.dim();
    let mut bt = Array2::<f64>::zeros((eta, n));
    for j in 0..n {
        for a in 0..eta {
            if mask[[a, j]] != 0.0 {
                bt[[a, j]] = rng.random_range(0.2..1.0);
            }
        }
        let norm = bt.column(j).dot(&bt.column(j)).sqrt();
        bt.column_mut(j).mapv_inplace(|v| v / norm);
    }
    bt.reversed_axes()
}

/// Canonicalizing a row-permuted local Ω recovers the permutation. Returns
/// the final locality loss and `||det A| − 1|`.
pub fn permuted_local_restored(seed: u64) -> (f64, f64) {
    let mask = water_mask();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let local = synthetic_local(&mask, &mut rng);
    let n = local.nrows();
    let perm = [3, 0, 4, 1, 2];
    let mut p = Array2::<f64>::zeros((n, n));
    for (i, &j) in perm.iter().enumerate() {
        p[[i, j]] = 1.0;
    }
    // Ωᵀ = Ω′ᵀ Pᵀ, so A = P restores Ω′ᵀ.
    let omega = p.dot(&local);
    let before = masked_out_energy(&omega, &Array2::eye(n), &mask);
    assert!(before > 0.1);
    let c = canonicalize_coefficients(&omega, &mask, &CanonOptions::default()).unwrap();
    let loss = locality_loss(&omega, &c.a, &mask);
    let det_err = (det(c.a.view()).abs() - 1.0).abs();
    assert!(loss <= 1e-8, "{:?}", c.loss_trace);
    assert!(det_err <= 1e-9);
    for i in 0..n {
        for j in 0..n {
            assert!((c.a[[i, j]].abs() - p[[i, j]]).abs() < 1e-5, "{}", c.a);
        }
    }
    (loss, det_err)
}

pub fn brute_force(cost: &[Vec<f64>]) -> f64 {
    fn rec(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
        if row == cost.len() {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for j in 0..cost.len() {
            if !used[j] {
                used[j] = true;
                best = best.min(cost[row][j] + rec(cost, row + 1, used));
                used[j] = false;
            }
        }
        best
    }
    rec(cost, 0, &mut vec![false; cost.len()])
}

/// One random `n × n` assignment problem; integer costs produce ties.
pub fn hungarian_case(n: usize, seed: u64, integer: bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cost: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| if integer { rng.random_range(0..4) as f64 } else { rng.random_range(-5.0..5.0) }).collect())
        .collect();
    let perm = hungarian(&cost);
    let mut seen = perm.clone();
    seen.sort();
    assert_eq!(seen, (0..n).collect::<Vec<_>>());
    let total: f64 = perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
    assert!((total - brute_force(&cost)).abs() < 1e-9, "{cost:?}");
}

pub fn hungarian_trials(trials: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in 0..trials {
        hungarian_case(rng.random_range(1..=6), rng.random(), t % 2 == 0);
    }
}

pub fn clipping_examples() {
    assert_eq!(clip_energies(&[1.5; 6], 5.0).unwrap(), vec![1.5; 6]);
    let x = [0.0, 0.0, 0.0, 0.0, 100.0];
    assert_eq!(clip_energies(&x, 5.0).unwrap(), x.to_vec());
    let x = [0.0, 0.0, 0.0, 0.0, 1000.0];
    assert_eq!(clip_energies(&x, 5.0).unwrap(), x.to_vec());
    let mut x = vec![0.0; 10];
    x[9] = 1000.0;
    let c = clip_energies(&x, 5.0).unwrap();
    assert_eq!(c[9], 500.0);
    assert!(c[..9].iter().all(|&v| v == 0.0));
}

pub fn rescaling_examples() {
    assert_eq!(rescale_factor(2.0), 0.5);
    assert_eq!(rescale_factor(0.5), 1.0);
    assert_eq!(rescale_factor(1.0), 1.0);
    let mut x = vec![3.0, 4.0];
    assert_eq!(clip_norm(&mut x, 1.0), 5.0);
    assert!((x[0] * x[0] + x[1] * x[1] - 1.0).abs() < 1e-15);
}
