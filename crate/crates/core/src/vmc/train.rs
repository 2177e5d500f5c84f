//! The optimization loop over one or more molecules sharing one model.

use std::io::Write;
use std::path::Path;

use log::{debug, warn};
use ndarray::{Array1, Array2, Array3, Axis};
use rand::RngExt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::hamiltonian::local_energies;
use super::optim::{energy_gradient, natural_direction, Lamb, MoleculeJacobian};
use super::sampler::{initial_positions, walker_rng, Adaptation, WalkerBatch};
use super::stats::{clip_energies, clip_norm, rescale_factor, EnergyEstimate};
use crate::canon::{build_mask, canonicalize, CanonError, CanonOptions, Canonicalized};
use crate::chem::HfSolution;
use crate::config::{GlobeConfig, MoonConfig, TrainConfig};
use crate::diff::{Backend, LeafKey, Tape};
use crate::globe::Reparam;
use crate::model::Model;
use crate::system::System;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite energy for {steps} consecutive steps at step {step} (molecule {molecule})")]
    NonFinite { step: usize, steps: usize, molecule: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One row of the training trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub molecule: String,
    pub energy: f64,
    pub std: f64,
    pub pmove: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

impl StepRecord {
    pub const CSV_HEADER: &'static str = "step,molecule,energy,std,pmove,grad_norm,lr";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.10},{:.10},{:.6},{:.10},{:.10}",
            self.step, self.molecule, self.energy, self.std, self.pmove, self.grad_norm, self.lr
        )
    }
}

/// Energy estimate from a fixed-parameter sampling run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub molecule: String,
    pub mean: f64,
    /// Standard error from the spread of per-iteration means.
    pub stderr: f64,
    pub std: f64,
    pub samples: usize,
}

/// Canonicalized Hartree-Fock orbitals used as pretraining targets.
pub struct PretrainTarget {
    pub hf: HfSolution,
    pub canon: Canonicalized,
}

impl PretrainTarget {
    /// Canonicalizes `hf` against the localized orbitals of `sys`.
    pub fn new(hf: HfSolution, sys: &System) -> Result<Self, CanonError> {
        let mask = build_mask(&sys.orbitals, &hf.ao_counts)?;
        let canon = canonicalize(&hf, &mask, &CanonOptions::default())?;
        Ok(Self { hf, canon })
    }
}

pub struct Trainer {
    pub model: Model,
    pub systems: Vec<System>,
    pub config: TrainConfig,
    pub batches: Vec<WalkerBatch>,
    pub step: usize,
    equilibrated: bool,
    nonfinite_streak: usize,
    pretrain_opt: Option<Lamb>,
    pretrain_step: usize,
}

impl Trainer {
    pub fn new(model: Model, systems: Vec<System>, config: TrainConfig) -> Self {
        assert!(!systems.is_empty());
        let per = (config.walkers / systems.len()).max(1);
        let batches = systems
            .iter()
            .enumerate()
            .map(|(i, sys)| {
                let pos = initial_positions(&sys.molecule, per, config.seed, i as u64);
                let rep = model.reparam(sys);
                WalkerBatch::new(pos, config.initial_width, |x| model.log_psi(sys, &rep, x))
            })
            .collect();
        Self {
            model,
            systems,
            config,
            batches,
            step: 0,
            equilibrated: false,
            nonfinite_streak: 0,
            pretrain_opt: None,
            pretrain_step: 0,
        }
    }

    fn sweep(&mut self, mol: usize, rep: &Reparam<Array2<f64>>, substeps: usize, adapt: Adaptation, tag: u64) -> f64 {
        let sys = &self.systems[mol];
        let model = &self.model;
        let batch = &mut self.batches[mol];
        // Cached values go stale whenever parameters change.
        let (s, l) = model.log_psi(sys, rep, &batch.positions);
        batch.signs = s;
        batch.log_psi = l;
        let mut rngs: Vec<_> = (0..batch.len()).map(|w| walker_rng(self.config.seed, tag, mol as u64, w as u64)).collect();
        batch.sweep(substeps, &mut rngs, |x| model.log_psi(sys, rep, x), adapt)
    }

    /// Burn-in sweeps with per-move width adaptation, once per trainer.
    pub fn equilibrate(&mut self) {
        if self.equilibrated {
            return;
        }
        let adapt = Adaptation::EachMove { kappa: self.config.width_adaptation, target: self.config.target_pmove };
        for mol in 0..self.systems.len() {
            let rep = self.model.reparam(&self.systems[mol]);
            self.sweep(mol, &rep, self.config.burn_in, adapt, u64::MAX - 1);
        }
        self.equilibrated = true;
    }

    fn adapt(&self) -> Adaptation {
        Adaptation::AfterSweep { kappa: self.config.width_adaptation, target: self.config.target_pmove }
    }

    /// Replaces walkers with non-finite local energies by copies of finite
    /// ones; returns the indices of finite walkers.
    fn resample_nonfinite(&mut self, mol: usize, e: &[f64], tag: u64) -> Vec<usize> {
        let finite: Vec<usize> = (0..e.len()).filter(|&i| e[i].is_finite()).collect();
        if finite.is_empty() || finite.len() == e.len() {
            return finite;
        }
        let mut rng = walker_rng(self.config.seed, tag, mol as u64, u64::MAX);
        let batch = &mut self.batches[mol];
        for i in 0..e.len() {
            if !e[i].is_finite() {
                let src = finite[rng.random_range(0..finite.len())];
                let row = batch.positions.index_axis(Axis(0), src).to_owned();
                batch.positions.index_axis_mut(Axis(0), i).assign(&row);
                batch.signs[i] = batch.signs[src];
                batch.log_psi[i] = batch.log_psi[src];
            }
        }
        warn!("molecule {mol}: resampled {} walkers with non-finite local energy", e.len() - finite.len());
        finite
    }

    /// One optimization step over all molecules.
    pub fn train_step(&mut self) -> Result<Vec<StepRecord>, TrainError> {
        self.equilibrate();
        let t = self.step;
        let lr = self.config.learning_rate_at(t);
        let n_mol = self.systems.len();
        let mut records = Vec::with_capacity(n_mol);
        let mut mols = Vec::with_capacity(n_mol);
        let mut centered = Vec::with_capacity(n_mol);
        let mut stds = Vec::with_capacity(n_mol);
        let mut failed: Option<String> = None;
        for mol in 0..n_mol {
            let (rep, globe_jac) = self.model.globe_jacobian(&self.systems[mol]);
            let pmove = self.sweep(mol, &rep, self.config.mcmc_steps, self.adapt(), t as u64);
            let raw = local_energies(&self.model, &self.systems[mol], &rep, &self.batches[mol].positions, self.config.chunk);
            let finite = self.resample_nonfinite(mol, &raw, t as u64);
            let est = clip_energies(&raw, self.config.clip_multiplier).ok().and_then(|c| EnergyEstimate::from_clipped(c).ok());
            let Some(est) = est.filter(|e| e.mean.is_finite()) else {
                failed = Some(self.systems[mol].molecule.name.clone());
                records.push(self.record(mol, f64::NAN, f64::NAN, pmove, f64::NAN, lr));
                continue;
            };
            let pos = self.batches[mol].positions.select(Axis(0), &finite);
            let jac = self.model.walker_jacobian(&self.systems[mol], &rep, &pos);
            let e: Array1<f64> = finite.iter().map(|&i| est.local_energies[i] - est.mean).collect();
            let weight = rescale_factor(est.std) / (n_mol as f64 * finite.len() as f64);
            mols.push(MoleculeJacobian::new(jac.moon, jac.reparam, globe_jac, weight));
            centered.push(e);
            stds.push(est.std);
            records.push(self.record(mol, est.mean, est.std, pmove, 0.0, lr));
        }
        if let Some(molecule) = failed {
            self.nonfinite_streak += 1;
            if self.nonfinite_streak >= 3 {
                return Err(TrainError::NonFinite { step: t, steps: self.nonfinite_streak, molecule });
            }
            self.step += 1;
            return Ok(records);
        }
        self.nonfinite_streak = 0;

        let grad = energy_gradient(&mols, &centered);
        let mean_std = stds.iter().sum::<f64>() / stds.len() as f64;
        let damping = (self.config.damping * mean_std).max(1e-8);
        let mut x = match natural_direction(&mols, &centered, damping, self.config.cg_tolerance, self.config.cg_max_steps) {
            Ok((x, sol)) => {
                debug!("step {t}: CG {} iterations, residual {:.3e}", sol.iterations, sol.residual);
                x
            }
            Err(e) => {
                warn!("step {t}: CG failed ({e:?}); using the clipped gradient");
                grad.clone()
            }
        };
        let norm = clip_norm(&mut x, self.config.max_step_norm);
        let pm = self.model.moon_params.len();
        let step: Vec<f64> = x.iter().map(|v| -lr * v).collect();
        self.model.moon_params.add_flat(&step[..pm]);
        self.model.globe_params.add_flat(&step[pm..]);
        for r in &mut records {
            r.grad_norm = norm;
        }
        self.step += 1;
        Ok(records)
    }

    fn record(&self, mol: usize, energy: f64, std: f64, pmove: f64, grad_norm: f64, lr: f64) -> StepRecord {
        StepRecord { step: self.step, molecule: self.systems[mol].molecule.name.clone(), energy, std, pmove, grad_norm, lr }
    }

    /// Runs `steps` training steps, appending rows to `trace` and writing a
    /// checkpoint every `checkpoint_every` steps into `checkpoint_dir`.
    pub fn train(
        &mut self,
        steps: usize,
        mut trace: Option<&mut dyn Write>,
        checkpoint_dir: Option<&Path>,
    ) -> Result<Vec<StepRecord>, TrainError> {
        let mut all = Vec::new();
        for _ in 0..steps {
            let recs = self.train_step()?;
            if let Some(w) = trace.as_deref_mut() {
                for r in &recs {
                    writeln!(w, "{}", r.csv_row())?;
                }
            }
            all.extend(recs);
            if let Some(dir) = checkpoint_dir {
                if self.config.checkpoint_every > 0 && self.step.is_multiple_of(self.config.checkpoint_every) {
                    save_checkpoint(&self.model, self.step, self.config.seed, &dir.join(format!("step{:06}", self.step)))?;
                }
            }
        }
        Ok(all)
    }

    /// Samples with fixed parameters for `iterations` sweeps and reports the
    /// mean local energy per molecule.
    pub fn evaluate(&mut self, iterations: usize) -> Vec<Evaluation> {
        self.equilibrate();
        (0..self.systems.len())
            .map(|mol| {
                let rep = self.model.reparam(&self.systems[mol]);
                let mut means = Vec::with_capacity(iterations);
                let mut all = Vec::new();
                for it in 0..iterations {
                    self.sweep(mol, &rep, self.config.mcmc_steps, self.adapt(), (1u64 << 40) + it as u64);
                    let e = local_energies(&self.model, &self.systems[mol], &rep, &self.batches[mol].positions, self.config.chunk);
                    let finite: Vec<f64> = e.into_iter().filter(|v| v.is_finite()).collect();
                    if !finite.is_empty() {
                        means.push(finite.iter().sum::<f64>() / finite.len() as f64);
                        all.extend(finite);
                    }
                }
                let n = means.len().max(1) as f64;
                let mean = means.iter().sum::<f64>() / n;
                let var_means = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
                let total = all.len().max(1) as f64;
                let mu = all.iter().sum::<f64>() / total;
                let std = (all.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / total).sqrt();
                Evaluation {
                    molecule: self.systems[mol].molecule.name.clone(),
                    mean,
                    stderr: (var_means / n).sqrt(),
                    std,
                    samples: all.len(),
                }
            })
            .collect()
    }

    /// One pretraining step matching network orbitals to the HF targets.
    /// Returns the mean matching loss (without the regularizer).
    pub fn pretrain_step(&mut self, targets: &[PretrainTarget]) -> f64 {
        assert_eq!(targets.len(), self.systems.len());
        self.equilibrate();
        let n_mol = self.systems.len();
        let pm = self.model.moon_params.len();
        let pg = self.model.globe_params.len();
        let mut grad = vec![0.0; pm + pg];
        let mut total = 0.0;
        for mol in 0..n_mol {
            let rep = self.model.reparam(&self.systems[mol]);
            self.sweep(mol, &rep, self.config.mcmc_steps, self.adapt(), (1u64 << 50) + self.pretrain_step as u64);
            let sys = &self.systems[mol];
            let pos = &self.batches[mol].positions;
            let (loss, gm, v) = orbital_matching(&self.model, sys, &rep, pos, &targets[mol]);
            total += loss / n_mol as f64;
            for (g, x) in grad[..pm].iter_mut().zip(gm) {
                *g += x / n_mol as f64;
            }
            let v: Vec<f64> = v.iter().map(|x| x / n_mol as f64).collect();
            let (gg, _) = self.model.globe_vjp(sys, &v, self.config.regularizer_weight / n_mol as f64);
            for (g, x) in grad[pm..].iter_mut().zip(gg) {
                *g += x;
            }
        }
        let lr = self.config.pretrain_learning_rate;
        let opt = self.pretrain_opt.get_or_insert_with(|| Lamb::new(pm + pg, lr));
        let Model { moon_params, globe_params, .. } = &mut self.model;
        opt.step(&mut [moon_params, globe_params], &grad);
        self.pretrain_step += 1;
        total
    }
}

/// Mean over walkers and determinants of `‖Φ^k − Φ̂‖²_F`, with its gradient
/// with respect to Moon parameters and the reparametrized tensors.
pub fn orbital_matching(
    model: &Model,
    sys: &System,
    rep: &Reparam<Array2<f64>>,
    positions: &Array3<f64>,
    target: &PretrainTarget,
) -> (f64, Vec<f64>, Vec<f64>) {
    let (b, n, _) = positions.dim();
    let nu = sys.layout.n_up;
    let points: Vec<[f64; 3]> =
        positions.outer_iter().flat_map(|w| w.outer_iter().map(|p| [p[0], p[1], p[2]]).collect::<Vec<_>>()).collect();
    let hf = target.canon.eval(&target.hf, &points);
    let block = |rows: std::ops::Range<usize>| {
        let k = rows.len();
        Array3::from_shape_fn((b, k, k), |(w, i, j)| hf[[w * n + rows.start + i, j]])
    };
    let targets = [block(0..nu), block(nu..n)];

    let mut t = Tape::new(b);
    let r = rep.leaves(&mut t);
    let e = t.walker_constant(positions.clone());
    let emb = model.moon.embed(&mut t, &model.moon_params, sys, &r, &e);
    let mats = model.moon.orbital_matrices(&mut t, sys, &r, &emb);
    let kdet = mats.len() as f64;
    let mut loss: Option<_> = None;
    for blocks in &mats {
        for (phi, tgt) in blocks.iter().zip(&targets) {
            let c = t.walker_constant(tgt.clone());
            let d = t.sub(phi, &c);
            let d2 = t.unary(&d, crate::diff::Unary::Square);
            let s = t.sum_all(&d2);
            loss = Some(match loss {
                Some(l) => t.add(&l, &s),
                None => s,
            });
        }
    }
    let loss = t.scale(&loss.expect("at least one block"), 1.0 / kdet);
    let value = t.value_ref(&loss).iter().sum::<f64>() / b as f64;
    let grads = t.backward(&[(loss, Array3::from_elem((b, 1, 1), 1.0 / b as f64))]);
    let mut gm = vec![0.0; model.moon_params.len()];
    for (i, spec) in model.moon_params.specs().iter().enumerate() {
        if let Some(g) = grads.get(LeafKey::Param(i)) {
            let s = g.sum_axis(Axis(0));
            for (k, v) in s.iter().enumerate() {
                gm[spec.offset + k] = *v;
            }
        }
    }
    let mut v = Vec::with_capacity(rep.len());
    for (k, a) in rep.as_vec().into_iter().enumerate() {
        match grads.get(LeafKey::External(k)) {
            Some(g) => v.extend(g.sum_axis(Axis(0)).iter().copied()),
            None => v.extend(std::iter::repeat_n(0.0, a.len())),
        }
    }
    (value, gm, v)
}

/// Checkpoint metadata stored next to the parameter blob.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub moon: MoonConfig,
    pub globe: GlobeConfig,
    pub init_seed: u64,
    pub step: usize,
    pub rng_seed: u64,
    pub config_hash: String,
    /// `(name, rows, cols, offset)` of every tensor; Globe offsets follow
    /// the Moon block.
    pub tensors: Vec<(String, usize, usize, usize)>,
}

fn config_hash(moon: &MoonConfig, globe: &GlobeConfig) -> String {
    let text = serde_json::to_string(&(moon, globe)).expect("serializable");
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// Writes `path.json` (metadata) and `path.bin` (little-endian f64 blob:
/// Moon parameters followed by Globe parameters).
pub fn save_checkpoint(model: &Model, step: usize, rng_seed: u64, path: &Path) -> Result<(), TrainError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let pm = model.moon_params.len();
    let mut tensors: Vec<_> =
        model.moon_params.specs().iter().map(|s| (s.name.clone(), s.rows, s.cols, s.offset)).collect();
    tensors.extend(model.globe_params.specs().iter().map(|s| (s.name.clone(), s.rows, s.cols, pm + s.offset)));
    let meta = CheckpointMeta {
        format: "moonlet-checkpoint-1".into(),
        moon: model.moon.config.clone(),
        globe: model.globe.config.clone(),
        init_seed: model.seed,
        step,
        rng_seed,
        config_hash: config_hash(&model.moon.config, &model.globe.config),
        tensors,
    };
    std::fs::write(path.with_extension("json"), serde_json::to_string_pretty(&meta).expect("serializable"))?;
    let mut blob = model.moon_params.to_le_bytes();
    blob.extend(model.globe_params.to_le_bytes());
    std::fs::write(path.with_extension("bin"), blob)?;
    Ok(())
}

/// Restores a model from [`save_checkpoint`] output; `path` may name either
/// file or the common stem.
pub fn load_checkpoint(path: &Path) -> Result<(Model, CheckpointMeta), TrainError> {
    let stem = if matches!(path.extension().and_then(|e| e.to_str()), Some("json") | Some("bin")) {
        path.with_extension("")
    } else {
        path.to_path_buf()
    };
    let text = std::fs::read_to_string(stem.with_extension("json"))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
    if meta.config_hash != config_hash(&meta.moon, &meta.globe) {
        return Err(TrainError::Checkpoint("config hash mismatch".into()));
    }
    let blob = std::fs::read(stem.with_extension("bin"))?;
    let mut model = Model::new(meta.moon.clone(), meta.globe.clone(), meta.init_seed);
    let split = model.moon_params.len() * 8;
    if blob.len() != split + model.globe_params.len() * 8 {
        return Err(TrainError::Checkpoint(format!("blob has {} bytes, expected {}", blob.len(), split + model.globe_params.len() * 8)));
    }
    model.moon_params.load_le_bytes(&blob[..split]).map_err(TrainError::Checkpoint)?;
    model.globe_params.load_le_bytes(&blob[split..]).map_err(TrainError::Checkpoint)?;
    Ok((model, meta))
}
