//! Per-molecule constant geometry consumed by both networks.

use ndarray::Array2;

use crate::chem::{build_frame, ElectronLayout, Frame, Molecule};
use crate::orbitals::{localize_orbitals, OrbitalError, OrbitalSet, OrbitalType};

/// Number of distinct orbital-type embeddings.
pub const N_ORBITAL_TYPES: usize = 56;

/// Index into the orbital-type embedding table.
pub fn orbital_type_index(t: OrbitalType) -> usize {
    match t {
        OrbitalType::Core { charge, shell } => ((charge as usize - 1) * 5 + shell as usize - 1).min(49),
        OrbitalType::Valence { order } => 50 + (order as usize).clamp(1, 6) - 1,
    }
}

#[derive(Debug, Clone)]
pub struct System {
    pub molecule: Molecule,
    pub frame: Frame,
    pub layout: ElectronLayout,
    pub orbitals: OrbitalSet,
    /// Nuclei in frame coordinates, `M × 3`.
    pub nuclei: Array2<f64>,
    pub charges: Vec<f64>,
    /// Orbital locations in frame coordinates, `n_orb × 3`.
    pub orbital_locs: Array2<f64>,
    pub orbital_types: Vec<usize>,
}

impl System {
    pub fn new(molecule: Molecule, c_self: f64) -> Result<Self, OrbitalError> {
        let frame = build_frame(&molecule);
        let orbitals = localize_orbitals(&molecule, &frame, c_self)?;
        let layout = molecule.layout();
        let to_array = |pts: Vec<[f64; 3]>| {
            Array2::from_shape_vec((pts.len(), 3), pts.into_iter().flatten().collect()).expect("rows of 3")
        };
        let nuclei = to_array(frame.to_frame(&molecule.positions()));
        let orbital_locs = to_array(frame.to_frame(&orbitals.locations()));
        let orbital_types = orbitals.orbitals.iter().map(|o| orbital_type_index(o.kind)).collect();
        Ok(Self { charges: molecule.charges(), molecule, frame, layout, orbitals, nuclei, orbital_locs, orbital_types })
    }

    pub fn n_atoms(&self) -> usize {
        self.nuclei.nrows()
    }

    pub fn n_orbitals(&self) -> usize {
        self.orbital_locs.nrows()
    }

    pub fn n_electrons(&self) -> usize {
        self.layout.n_total
    }

    /// Frame rotation as a `3 × 3` array (columns are frame axes).
    pub fn rotation(&self) -> Array2<f64> {
        Array2::from_shape_fn((3, 3), |(r, c)| self.frame.rotation[r][c])
    }

    pub fn origin(&self) -> Array2<f64> {
        Array2::from_shape_vec((1, 3), self.frame.origin.to_vec()).expect("row")
    }
}
