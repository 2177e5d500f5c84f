//! Checks shared by the integration tests and the acceptance report.
#![allow(dead_code)]

pub mod golden;

use std::path::PathBuf;

use moonlet::chem::{Molecule, Nucleus};
use moonlet::config::{GlobeConfig, MoonConfig};
use moonlet::model::Model;
use moonlet::orbitals::DEFAULT_C_SELF;
use moonlet::system::System;
use moonlet::vmc::sampler::{walker_rng, Adaptation, WalkerBatch};
use moonlet::vmc::local_energies;
use ndarray::{Array3, Axis};
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

pub fn molecule(name: &str) -> Molecule {
    Molecule::load(data_path(&format!("{name}.json"))).unwrap()
}

pub fn system(m: Molecule) -> System {
    System::new(m, DEFAULT_C_SELF).unwrap()
}

pub fn model(seed: u64) -> Model {
    Model::new(MoonConfig::desk(), GlobeConfig::desk(), seed)
}

/// Electrons at random nuclei with unit Gaussian offsets.
pub fn random_walkers(m: &Molecule, walkers: usize, rng: &mut impl Rng) -> Array3<f64> {
    let n = m.n_electrons();
    let pos = m.positions();
    let mut out = Array3::zeros((walkers, n, 3));
    for mut e in out.lanes_mut(Axis(2)) {
        let c = pos[rng.random_range(0..pos.len())];
        for k in 0..3 {
            let g: f64 = rng.sample(StandardNormal);
            e[k] = c[k] + g;
        }
    }
    out
}

/// Swaps electrons `i` and `j` in every walker.
pub fn swap_electrons(x: &Array3<f64>, i: usize, j: usize) -> Array3<f64> {
    let mut y = x.clone();
    for mut w in y.outer_iter_mut() {
        for k in 0..3 {
            w.swap([i, k], [j, k]);
        }
    }
    y
}

/// Worst violation over all same-spin transpositions: returns the number of
/// sign mismatches and the largest `|log|ψ'| − log|ψ||`.
pub fn antisymmetry_violation(model: &Model, sys: &System, configs: usize, seed: u64) -> (usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_walkers(&sys.molecule, configs, &mut rng);
    let rep = model.reparam(sys);
    let (s0, l0) = model.log_psi(sys, &rep, &x);
    let nu = sys.layout.n_up;
    let n = sys.n_electrons();
    let mut bad_signs = 0;
    let mut worst: f64 = 0.0;
    let groups = [(0, nu), (nu, n)];
    for (lo, hi) in groups {
        for i in lo..hi {
            for j in i + 1..hi {
                let (s1, l1) = model.log_psi(sys, &rep, &swap_electrons(&x, i, j));
                for w in 0..configs {
                    if s1[w] != -s0[w] || s0[w] == 0.0 {
                        bad_signs += 1;
                    }
                    worst = worst.max((l1[w] - l0[w]).abs());
                }
            }
        }
    }
    (bad_signs, worst)
}

/// A proper rotation from a random unit quaternion.
pub fn random_rotation(rng: &mut impl Rng) -> [[f64; 3]; 3] {
    let q: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn apply(q: &[[f64; 3]; 3], t: [f64; 3], p: [f64; 3]) -> [f64; 3] {
    let mut out = t;
    for r in 0..3 {
        for c in 0..3 {
            out[r] += q[r][c] * p[c];
        }
    }
    out
}

/// Largest change of `(sign, log|ψ|, E_L)` under `transforms` random rigid
/// motions of nuclei and electrons together, and under reversing the order
/// of nuclei with equal charge. A sign change counts as infinity.
pub fn invariance_violation(model: &Model, m: &Molecule, configs: usize, transforms: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = system(m.clone());
    let x = random_walkers(m, configs, &mut rng);
    let eval = |sys: &System, x: &Array3<f64>| {
        let rep = model.reparam(sys);
        let (s, l) = model.log_psi(sys, &rep, x);
        (s, l, local_energies(model, sys, &rep, x, 64))
    };
    let reference = eval(&base, &x);
    let compare = |other: (Vec<f64>, Vec<f64>, Vec<f64>)| -> f64 {
        let mut worst: f64 = 0.0;
        for w in 0..configs {
            if other.0[w] != reference.0[w] {
                return f64::INFINITY;
            }
            worst = worst.max((other.1[w] - reference.1[w]).abs()).max((other.2[w] - reference.2[w]).abs());
        }
        worst
    };
    let mut worst: f64 = 0.0;
    for _ in 0..transforms {
        let q = random_rotation(&mut rng);
        let t = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
        let moved = m.transformed(&q, t);
        let mut y = x.clone();
        for mut e in y.lanes_mut(Axis(2)) {
            let p = apply(&q, t, [e[0], e[1], e[2]]);
            e.assign(&ndarray::arr1(&p));
        }
        worst = worst.max(compare(eval(&system(moved), &y)));
    }
    // Reverse the order within each group of equal charges.
    let mut nuclei: Vec<Nucleus> = m.nuclei.clone();
    let mut by_charge: Vec<u32> = nuclei.iter().map(|n| n.charge).collect();
    by_charge.sort();
    by_charge.dedup();
    for z in by_charge {
        let idx: Vec<usize> = (0..nuclei.len()).filter(|&i| nuclei[i].charge == z).collect();
        let rev: Vec<Nucleus> = idx.iter().rev().map(|&i| m.nuclei[i]).collect();
        for (k, &i) in idx.iter().enumerate() {
            nuclei[i] = rev[k];
        }
    }
    let permuted = Molecule::new(m.name.clone(), nuclei).unwrap();
    worst.max(compare(eval(&system(permuted), &x)))
}

/// Largest relative difference between the analytic Laplacian of log|ψ|
/// and central finite differences, Richardson-extrapolated from steps `2h`
/// and `h` (error `O(h⁴)`). `h` shrinks with the closest particle distance
/// of each configuration so no stencil straddles a cusp.
pub fn laplacian_violation(model: &Model, sys: &System, configs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_walkers(&sys.molecule, configs, &mut rng);
    let rep = model.reparam(sys);
    let d = model.derivatives(sys, &rep, &x, 64);
    let (_, l0) = model.log_psi(sys, &rep, &x);
    let nuclei = sys.molecule.positions();
    let n = sys.n_electrons();
    let steps: Vec<f64> = x
        .outer_iter()
        .map(|w| {
            let dist = |a: [f64; 3], b: [f64; 3]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
            let e: Vec<[f64; 3]> = w.outer_iter().map(|p| [p[0], p[1], p[2]]).collect();
            let mut r = f64::INFINITY;
            for i in 0..n {
                for c in &nuclei {
                    r = r.min(dist(e[i], *c));
                }
                for j in i + 1..n {
                    r = r.min(dist(e[i], e[j]));
                }
            }
            (r / 50.0).min(1e-3)
        })
        .collect();
    let fd = |scale: f64| {
        let mut out = vec![0.0; configs];
        for i in 0..n {
            for k in 0..3 {
                let mut plus = x.clone();
                let mut minus = x.clone();
                for w in 0..configs {
                    plus[[w, i, k]] += scale * steps[w];
                    minus[[w, i, k]] -= scale * steps[w];
                }
                let (_, lp) = model.log_psi(sys, &rep, &plus);
                let (_, lm) = model.log_psi(sys, &rep, &minus);
                for w in 0..configs {
                    let h = scale * steps[w];
                    out[w] += (lp[w] - 2.0 * l0[w] + lm[w]) / (h * h);
                }
            }
        }
        out
    };
    let (coarse, fine) = (fd(2.0), fd(1.0));
    (0..configs)
        .map(|w| {
            let oracle = (4.0 * fine[w] - coarse[w]) / 3.0;
            (d[w].laplacian - oracle).abs() / oracle.abs()
        })
        .fold(0.0, f64::max)
}

/// Samples `ψ = exp(−r²/4)` (unit-variance Gaussian density in every
/// coordinate) and tests the histogram of the first coordinate against the
/// standard normal. Returns `(p-value, final acceptance rate)`.
pub fn mh_gaussian_check(walkers: usize, seed: u64) -> (f64, f64) {
    let f = |x: &Array3<f64>| {
        let logs = x.outer_iter().map(|w| -w.iter().map(|v| v * v).sum::<f64>() / 4.0).collect();
        (vec![1.0; x.dim().0], logs)
    };
    let start = Array3::from_elem((walkers, 1, 3), 3.0);
    let mut batch = WalkerBatch::new(start, 0.05, f);
    let mut pmove = 0.0;
    for sweep in 0..60 {
        // Burn-in adapts after every move, later sweeps once per sweep.
        let adapt = if sweep < 5 {
            Adaptation::EachMove { kappa: 0.1, target: 0.5 }
        } else {
            Adaptation::AfterSweep { kappa: 0.1, target: 0.5 }
        };
        let mut rngs: Vec<_> = (0..walkers).map(|w| walker_rng(seed, sweep, 0, w as u64)).collect();
        pmove = batch.sweep(40, &mut rngs, f, adapt);
    }
    let bins = 20;
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut counts = vec![0usize; bins];
    for w in 0..walkers {
        let u = normal.cdf(batch.positions[[w, 0, 0]]);
        counts[((u * bins as f64) as usize).min(bins - 1)] += 1;
    }
    let expected = walkers as f64 / bins as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(chi2);
    (p, pmove)
}
