use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ChemError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nucleus {
    pub position: [f64; 3],
    pub charge: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Molecule {
    pub name: String,
    pub nuclei: Vec<Nucleus>,
}

/// One entry of the `atoms` list shared by geometry and HF files.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AtomEntry {
    pub position: [f64; 3],
    pub charge: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_ao: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MoleculeFile {
    #[serde(default)]
    pub name: Option<String>,
    pub atoms: Vec<AtomEntry>,
}

pub const MIN_SEPARATION: f64 = 1e-6;

impl Molecule {
    pub fn new(name: impl Into<String>, nuclei: Vec<Nucleus>) -> Result<Self, ChemError> {
        if nuclei.is_empty() {
            return Err(ChemError::Empty);
        }
        for (i, n) in nuclei.iter().enumerate() {
            if n.charge < 1 {
                return Err(ChemError::Charge { index: i, charge: n.charge as i64 });
            }
            for (j, m) in nuclei.iter().enumerate().skip(i + 1) {
                let dist = dist(&n.position, &m.position);
                if dist <= MIN_SEPARATION {
                    return Err(ChemError::Coincident { a: i, b: j, dist });
                }
            }
        }
        Ok(Self { name: name.into(), nuclei })
    }

    /// Convenience constructor from `(charge, position)` pairs.
    pub fn from_atoms(name: &str, atoms: &[(u32, [f64; 3])]) -> Result<Self, ChemError> {
        Self::new(name, atoms.iter().map(|&(charge, position)| Nucleus { position, charge }).collect())
    }

    pub fn from_file_entries(name: &str, atoms: &[AtomEntry]) -> Result<Self, ChemError> {
        let mut nuclei = Vec::with_capacity(atoms.len());
        for (i, a) in atoms.iter().enumerate() {
            if a.charge < 1 || a.charge > u32::MAX as i64 {
                return Err(ChemError::Charge { index: i, charge: a.charge });
            }
            if a.position.iter().any(|x| !x.is_finite()) {
                return Err(super::field_err(&format!("atoms[{i}].position"), "non-finite coordinate"));
            }
            nuclei.push(Nucleus { position: a.position, charge: a.charge as u32 });
        }
        Self::new(name, nuclei)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ChemError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|error| ChemError::Io { path: path.display().to_string(), error })?;
        let file: MoleculeFile = serde_json::from_str(&text)
            .map_err(|error| ChemError::Parse { path: path.display().to_string(), error })?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("molecule");
        Self::from_file_entries(file.name.as_deref().unwrap_or(stem), &file.atoms)
    }

    pub fn to_file(&self) -> MoleculeFile {
        MoleculeFile {
            name: Some(self.name.clone()),
            atoms: self
                .nuclei
                .iter()
                .map(|n| AtomEntry { position: n.position, charge: n.charge as i64, n_ao: None })
                .collect(),
        }
    }

    pub fn n_atoms(&self) -> usize {
        self.nuclei.len()
    }

    pub fn n_electrons(&self) -> usize {
        self.nuclei.iter().map(|n| n.charge as usize).sum()
    }

    pub fn layout(&self) -> ElectronLayout {
        ElectronLayout::new(self.n_electrons())
    }

    pub fn charges(&self) -> Vec<f64> {
        self.nuclei.iter().map(|n| n.charge as f64).collect()
    }

    pub fn positions(&self) -> Vec<[f64; 3]> {
        self.nuclei.iter().map(|n| n.position).collect()
    }

    /// Applies `x -> q x + t` to every nucleus.
    pub fn transformed(&self, q: &[[f64; 3]; 3], t: [f64; 3]) -> Self {
        let nuclei = self
            .nuclei
            .iter()
            .map(|n| Nucleus { position: apply(q, t, n.position), charge: n.charge })
            .collect();
        Self { name: self.name.clone(), nuclei }
    }

    /// Appends a copy of `other` shifted by `offset`.
    pub fn union_shifted(&self, other: &Molecule, offset: [f64; 3], name: &str) -> Result<Self, ChemError> {
        let mut nuclei = self.nuclei.clone();
        nuclei.extend(other.nuclei.iter().map(|n| Nucleus {
            position: [n.position[0] + offset[0], n.position[1] + offset[1], n.position[2] + offset[2]],
            charge: n.charge,
        }));
        Self::new(name, nuclei)
    }

    /// Nuclear repulsion energy.
    pub fn nuclear_repulsion(&self) -> f64 {
        let mut e = 0.0;
        for (i, a) in self.nuclei.iter().enumerate() {
            for b in &self.nuclei[i + 1..] {
                e += (a.charge * b.charge) as f64 / dist(&a.position, &b.position);
            }
        }
        e
    }
}

pub(crate) fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

pub(crate) fn apply(q: &[[f64; 3]; 3], t: [f64; 3], p: [f64; 3]) -> [f64; 3] {
    let mut out = t;
    for (r, o) in out.iter_mut().enumerate() {
        for c in 0..3 {
            *o += q[r][c] * p[c];
        }
    }
    out
}

/// Spin bookkeeping: the first `n_up` electrons are spin-up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ElectronLayout {
    pub n_total: usize,
    pub n_up: usize,
    pub n_down: usize,
}

impl ElectronLayout {
    pub fn new(n_total: usize) -> Self {
        let n_up = n_total.div_ceil(2);
        Self { n_total, n_up, n_down: n_total - n_up }
    }

    pub fn is_up(&self, i: usize) -> bool {
        i < self.n_up
    }

    /// Number of spatial molecular orbitals, `ceil(N / 2)`.
    pub fn n_orbitals(&self) -> usize {
        self.n_up
    }
}
