mod common;

use common::{data_path, mh_gaussian_check, model, molecule, system};
use moonlet::chem::load_hf_solution;
use moonlet::config::TrainConfig;
use moonlet::vmc::optim::{energy_gradient, MoleculeJacobian};
use moonlet::vmc::stats::clip_norm;
use moonlet::vmc::{clip_energies, load_checkpoint, rescale_gradients, save_checkpoint, EnergyEstimate, PretrainTarget, Trainer};
use ndarray::{Array1, Array2};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn metropolis_hastings_samples_a_gaussian() {
    let (p, pmove) = mh_gaussian_check(4000, 11);
    assert!(p > 0.01, "chi-square p = {p}");
    assert!((0.4..=0.6).contains(&pmove), "pmove = {pmove}");
}

/// `ψ = exp(−θ r)` for hydrogen: `E(θ) = θ²/2 − θ`, so `dE/dθ = θ − 1`.
/// Radii under `|ψ|²` follow a Gamma(3, 1/(2θ)) distribution.
fn toy_gradient(theta: f64, samples: usize, rng: &mut ChaCha8Rng) -> f64 {
    let scale = 1.0 / (2.0 * theta);
    let r: Vec<f64> = (0..samples)
        .map(|_| {
            let u: f64 = (0..3).map(|_| 1.0 - rng.random::<f64>()).product();
            -scale * u.ln()
        })
        .collect();
    let e: Vec<f64> = r.iter().map(|r| -0.5 * theta * theta + (theta - 1.0) / r).collect();
    let mean = e.iter().sum::<f64>() / samples as f64;
    let jac = Array2::from_shape_fn((samples, 1), |(i, _)| -r[i]);
    let mol = MoleculeJacobian::new(jac, Array2::zeros((samples, 0)), Array2::zeros((0, 0)), 1.0 / samples as f64);
    let centered: Array1<f64> = e.iter().map(|v| v - mean).collect();
    2.0 * energy_gradient(&[mol], &[centered])[0]
}

#[test]
fn gradient_estimator_is_unbiased_on_the_toy_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let theta = 0.8;
    let batches: Vec<f64> = (0..50).map(|_| toy_gradient(theta, 2000, &mut rng)).collect();
    let n = batches.len() as f64;
    let mean = batches.iter().sum::<f64>() / n;
    let stderr = (batches.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    let exact = theta - 1.0;
    assert!((mean - exact).abs() < 3.0 * stderr, "{mean} vs {exact} (stderr {stderr})");
    assert!(stderr < 0.02, "stderr {stderr}");
}

#[test]
fn clipping_outliers_shrinks_the_gradient() {
    let b = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let jac = Array2::from_shape_fn((b, 2), |_| rng.random_range(-1.0..1.0));
    let mut e: Vec<f64> = (0..b).map(|_| -1.0 + 0.1 * rng.random_range(-1.0..1.0)).collect();
    e[7] = 40.0;
    let grad = |e: &[f64]| {
        let mean = e.iter().sum::<f64>() / e.len() as f64;
        let mol = MoleculeJacobian::new(jac.clone(), Array2::zeros((b, 0)), Array2::zeros((0, 0)), 1.0 / b as f64);
        let c: Array1<f64> = e.iter().map(|v| v - mean).collect();
        let mut g = energy_gradient(&[mol], &[c]);
        clip_norm(&mut g, f64::INFINITY)
    };
    let clipped = clip_energies(&e, 5.0).unwrap();
    assert!(clipped[7] < 40.0);
    assert!(grad(&clipped) < 0.2 * grad(&e), "{} vs {}", grad(&clipped), grad(&e));
}

#[test]
fn worked_clipping_and_rescaling_examples() {
    let mut x = vec![0.0; 10];
    x[9] = 1000.0;
    let est = EnergyEstimate::from_clipped(clip_energies(&x, 5.0).unwrap()).unwrap();
    assert_eq!(est.local_energies[9], 500.0);
    assert_eq!(est.mean, 50.0);
    let g = rescale_gradients(&[vec![2.0, 4.0], vec![1.0, 1.0]], &[2.0, 0.5]);
    assert_eq!(g, vec![1.0, 1.5]);
}

fn small_config(seed: u64) -> TrainConfig {
    TrainConfig { walkers: 64, burn_in: 20, mcmc_steps: 5, chunk: 32, seed, ..TrainConfig::default() }
}

#[test]
fn training_is_deterministic_for_a_seed() {
    let run = || {
        let mut t = Trainer::new(model(4), vec![system(molecule("h2"))], small_config(9));
        let rows: Vec<String> = t.train(3, None, None).unwrap().iter().map(|r| r.csv_row()).collect();
        (rows, t.model.moon_params.to_le_bytes())
    };
    let (a, pa) = run();
    let (b, pb) = run();
    assert_eq!(a, b);
    assert_eq!(pa, pb);
    let mut t = Trainer::new(model(4), vec![system(molecule("h2"))], small_config(10));
    let c: Vec<String> = t.train(3, None, None).unwrap().iter().map(|r| r.csv_row()).collect();
    assert_ne!(a, c);
}

#[test]
fn checkpoints_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(model(2), vec![system(molecule("lih"))], small_config(1));
    t.train(2, None, None).unwrap();
    let path = dir.path().join("ckpt");
    save_checkpoint(&t.model, t.step, 1, &path).unwrap();
    let (back, meta) = load_checkpoint(&path.with_extension("json")).unwrap();
    assert_eq!(meta.step, 2);
    assert_eq!(back.moon_params.to_le_bytes(), t.model.moon_params.to_le_bytes());
    assert_eq!(back.globe_params.to_le_bytes(), t.model.globe_params.to_le_bytes());
    let sys = &t.systems[0];
    let x = &t.batches[0].positions;
    let a = t.model.log_psi(sys, &t.model.reparam(sys), x);
    let b = back.log_psi(sys, &back.reparam(sys), x);
    assert_eq!(a, b);

    std::fs::write(path.with_extension("bin"), [0u8; 16]).unwrap();
    assert!(load_checkpoint(&path).is_err());
}

#[test]
fn pretraining_reduces_the_orbital_loss() {
    let hf = load_hf_solution(data_path("h2.hf.json")).unwrap();
    let sys = system(hf.molecule.clone());
    let target = PretrainTarget::new(hf, &sys).unwrap();
    let cfg = TrainConfig { walkers: 256, pretrain_learning_rate: 1e-2, ..small_config(0) };
    let mut t = Trainer::new(model(0), vec![sys], cfg);
    let targets = [target];
    let losses: Vec<f64> = (0..100).map(|_| t.pretrain_step(&targets)).collect();
    let head = losses[..10].iter().sum::<f64>() / 10.0;
    let tail = losses[90..].iter().sum::<f64>() / 10.0;
    assert!(tail < 0.5 * head, "loss {head} -> {tail}");
}
