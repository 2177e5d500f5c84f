//! Variational Monte Carlo: sampling, local energies, gradient estimation
//! and parameter updates.

pub mod hamiltonian;
pub mod optim;
pub mod sampler;
pub mod stats;
pub mod train;

pub use hamiltonian::{local_energies, potential};
pub use sampler::{Adaptation, WalkerBatch};
pub use stats::{clip_energies, rescale_gradients, EnergyEstimate};
pub use train::{load_checkpoint, save_checkpoint, Evaluation, PretrainTarget, StepRecord, TrainError, Trainer};
