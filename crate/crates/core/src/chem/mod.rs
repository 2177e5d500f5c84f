//! Molecular geometry, electron bookkeeping, the equivariant frame and the
//! Hartree-Fock exchange format.

mod frame;
mod hf;
mod molecule;

pub use frame::{build_frame, Frame};
pub use hf::{load_hf_solution, AoFunction, HfFile, HfSolution, Primitive};
pub use molecule::{AtomEntry, ElectronLayout, Molecule, MoleculeFile, Nucleus};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChemError {
    #[error("molecule has no nuclei")]
    Empty,
    #[error("nucleus {index} has invalid charge {charge}")]
    Charge { index: usize, charge: i64 },
    #[error("nuclei {a} and {b} coincide (separation {dist:.3e} bohr)")]
    Coincident { a: usize, b: usize, dist: f64 },
    #[error("invalid field `{field}`: {msg}")]
    Field { field: String, msg: String },
    #[error("coefficient matrix has rank {rank}, expected {expected}")]
    Rank { rank: usize, expected: usize },
    #[error("cannot read {path}: {error}")]
    Io { path: String, error: std::io::Error },
    #[error("cannot parse {path}: {error}")]
    Parse { path: String, error: serde_json::Error },
}

pub(crate) fn field_err(field: &str, msg: impl Into<String>) -> ChemError {
    ChemError::Field { field: field.to_string(), msg: msg.into() }
}
