mod common;

use common::*;
use moonlet::chem::Molecule;

/// Molecules without point-group symmetry: their frame axes have distinct
/// spreads and geometric signs, so rigid motions carry the frame along.
pub fn asymmetric() -> Vec<Molecule> {
    vec![
        Molecule::from_atoms("h2o", &[(8, [0.0, 0.0, 0.0]), (1, [1.81, 0.0, 0.1]), (1, [-0.5, 1.7, -0.2])]).unwrap(),
        Molecule::from_atoms("h4", &[(1, [0.0, 0.0, 0.0]), (1, [1.5, 0.1, 0.0]), (1, [0.3, 1.7, 0.2]), (1, [1.2, 1.1, 1.6])]).unwrap(),
        Molecule::from_atoms(
            "nh3",
            &[(7, [0.0, 0.0, 0.1]), (1, [1.8, 0.0, -0.6]), (1, [-0.8, 1.6, -0.7]), (1, [-0.9, -1.5, -0.5])],
        )
        .unwrap(),
    ]
}

#[test]
fn same_spin_transpositions_flip_the_sign() {
    let model = model(11);
    for name in ["lih", "h4", "h2o"] {
        let sys = system(molecule(name));
        let (bad, worst) = antisymmetry_violation(&model, &sys, 100, 1);
        assert_eq!(bad, 0, "{name}");
        assert!(worst <= 1e-12, "{name}: {worst:e}");
    }
}

#[test]
fn rigid_motions_and_relabelled_nuclei_leave_psi_and_local_energy_unchanged() {
    let model = model(12);
    for m in asymmetric() {
        let worst = invariance_violation(&model, &m, 16, 4, 2);
        assert!(worst <= 1e-9, "{}: {worst:e}", m.name);
    }
}

#[test]
fn laplacian_matches_finite_differences() {
    let model = model(13);
    for name in ["h2", "h4", "lih"] {
        let worst = laplacian_violation(&model, &system(molecule(name)), 20, 3);
        assert!(worst <= 1e-5, "{name}: {worst:e}");
    }
}

#[test]
fn distant_copy_adds_log_psi_for_one_determinant() {
    // Two H2 copies 100 bohr apart: with one determinant the joint wave
    // function is the product of the parts up to the electron pair terms
    // between copies, which are smooth and nearly constant.
    let mut mc = moonlet::config::MoonConfig::desk();
    mc.determinants = 1;
    let model = moonlet::model::Model::new(mc, moonlet::config::GlobeConfig::desk(), 5);
    let single = system(molecule("h2"));
    let joint = system(molecule("h2x2"));
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(4);
    let a = random_walkers(&single.molecule, 8, &mut rng);
    let b = random_walkers(&single.molecule, 8, &mut rng);
    // Joint layout: up electrons (A, B), then down electrons (A, B).
    let x = ndarray::Array3::from_shape_fn((8, 4, 3), |(w, i, k)| match i {
        0 => a[[w, 0, k]],
        1 => b[[w, 0, k]] + if k == 0 { 100.0 } else { 0.0 },
        2 => a[[w, 1, k]],
        _ => b[[w, 1, k]] + if k == 0 { 100.0 } else { 0.0 },
    });
    let (_, la) = model.log_psi(&single, &model.reparam(&single), &a);
    let (_, lb) = model.log_psi(&single, &model.reparam(&single), &b);
    let (_, lj) = model.log_psi(&joint, &model.reparam(&joint), &x);
    let e_a = moonlet::vmc::local_energies(&model, &single, &model.reparam(&single), &a, 8);
    let e_b = moonlet::vmc::local_energies(&model, &single, &model.reparam(&single), &b, 8);
    let e_j = moonlet::vmc::local_energies(&model, &joint, &model.reparam(&joint), &x, 8);
    let offsets: Vec<f64> = (0..8).map(|w| lj[w] - la[w] - lb[w]).collect();
    for w in 0..8 {
        assert!((offsets[w] - offsets[0]).abs() < 1e-3, "{offsets:?}");
        assert!((e_j[w] - e_a[w] - e_b[w]).abs() < 1e-3, "{} vs {}", e_j[w], e_a[w] + e_b[w]);
    }
}
