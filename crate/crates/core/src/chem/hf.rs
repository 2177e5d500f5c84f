use std::path::Path;

use nalgebra::DMatrix;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::molecule::{AtomEntry, Molecule};
use super::{field_err, ChemError};

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Primitive {
    pub exponent: f64,
    /// Multiplies the unnormalized primitive `x^a y^b z^c exp(-exponent r²)`.
    pub coefficient: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AoFunction {
    pub center: usize,
    pub angular_momentum: u32,
    /// Cartesian component of a p function (`"x"`, `"y"` or `"z"`). When
    /// absent, consecutive p functions of an atom cycle through x, y, z.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub component: Option<String>,
    pub primitives: Vec<Primitive>,
}

/// The on-disk exchange document.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HfFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub atoms: Vec<AtomEntry>,
    pub basis: String,
    pub ao_params: Vec<AoFunction>,
    /// Row-major `N × η`, one row per molecular orbital.
    pub coefficients: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canonicalization: Option<serde_json::Value>,
}

#[derive(Debug, Clone)]
struct Ao {
    center: [f64; 3],
    powers: [i32; 3],
    primitives: Vec<Primitive>,
}

#[derive(Debug, Clone)]
pub struct HfSolution {
    pub molecule: Molecule,
    pub basis: String,
    pub ao_counts: Vec<usize>,
    /// `Ω`, shape `N × η`.
    pub coefficients: Array2<f64>,
    pub energy: Option<f64>,
    params: Vec<AoFunction>,
    aos: Vec<Ao>,
}

pub fn load_hf_solution(path: impl AsRef<Path>) -> Result<HfSolution, ChemError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|error| ChemError::Io { path: path.display().to_string(), error })?;
    let file: HfFile =
        serde_json::from_str(&text).map_err(|error| ChemError::Parse { path: path.display().to_string(), error })?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("molecule");
    HfSolution::from_file(file, stem)
}

impl HfSolution {
    pub fn from_file(file: HfFile, default_name: &str) -> Result<Self, ChemError> {
        let name = file.name.clone().unwrap_or_else(|| default_name.to_string());
        let molecule = Molecule::from_file_entries(&name, &file.atoms)?;
        let mut ao_counts = Vec::with_capacity(file.atoms.len());
        for (i, a) in file.atoms.iter().enumerate() {
            ao_counts.push(a.n_ao.ok_or_else(|| field_err(&format!("atoms[{i}].n_ao"), "missing"))?);
        }
        let eta: usize = ao_counts.iter().sum();
        if file.ao_params.len() != eta {
            return Err(field_err("ao_params", format!("{} entries but the n_ao sum is {eta}", file.ao_params.len())));
        }
        let mut expected_center = Vec::with_capacity(eta);
        for (m, &c) in ao_counts.iter().enumerate() {
            expected_center.extend(std::iter::repeat_n(m, c));
        }
        let mut aos = Vec::with_capacity(eta);
        let mut p_seen = vec![0usize; file.atoms.len()];
        for (k, ao) in file.ao_params.iter().enumerate() {
            let field = format!("ao_params[{k}]");
            if ao.center != expected_center[k] {
                return Err(field_err(&format!("{field}.center"), format!("expected atom {} (blocks ordered by atom)", expected_center[k])));
            }
            if ao.primitives.is_empty() {
                return Err(field_err(&format!("{field}.primitives"), "empty contraction"));
            }
            if ao.primitives.iter().any(|p| p.exponent.is_nan() || p.exponent <= 0.0 || !p.coefficient.is_finite()) {
                return Err(field_err(&format!("{field}.primitives"), "exponents must be positive and coefficients finite"));
            }
            let powers = match (ao.angular_momentum, ao.component.as_deref()) {
                (0, None) => [0, 0, 0],
                (1, comp) => {
                    let axis = match comp {
                        Some("x") => 0,
                        Some("y") => 1,
                        Some("z") => 2,
                        None => p_seen[ao.center] % 3,
                        Some(other) => return Err(field_err(&format!("{field}.component"), format!("unknown component {other:?}"))),
                    };
                    p_seen[ao.center] += 1;
                    let mut p = [0, 0, 0];
                    p[axis] = 1;
                    p
                }
                (l, _) => return Err(field_err(&format!("{field}.angular_momentum"), format!("unsupported angular momentum {l}"))),
            };
            aos.push(Ao { center: molecule.nuclei[ao.center].position, powers, primitives: ao.primitives.clone() });
        }
        let n_orb = molecule.layout().n_orbitals();
        if file.coefficients.len() != n_orb {
            return Err(field_err("coefficients", format!("{} rows, expected {n_orb} molecular orbitals", file.coefficients.len())));
        }
        let mut coefficients = Array2::zeros((n_orb, eta));
        for (i, row) in file.coefficients.iter().enumerate() {
            if row.len() != eta {
                return Err(field_err(&format!("coefficients[{i}]"), format!("{} entries, expected {eta}", row.len())));
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(field_err(&format!("coefficients[{i}][{j}]"), "non-finite"));
                }
                coefficients[[i, j]] = v;
            }
        }
        let rank = matrix_rank(&coefficients);
        if rank < n_orb {
            return Err(ChemError::Rank { rank, expected: n_orb });
        }
        Ok(Self { molecule, basis: file.basis, ao_counts, coefficients, energy: file.energy, params: file.ao_params, aos })
    }

    pub fn n_orbitals(&self) -> usize {
        self.coefficients.nrows()
    }

    pub fn n_ao(&self) -> usize {
        self.aos.len()
    }

    /// Column offset of each atom's block.
    pub fn ao_offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.ao_counts
            .iter()
            .map(|&c| {
                let o = acc;
                acc += c;
                o
            })
            .collect()
    }

    /// Atomic orbital values, shape `points × η`.
    pub fn eval_aos(&self, points: &[[f64; 3]]) -> Array2<f64> {
        let mut out = Array2::zeros((points.len(), self.aos.len()));
        for (i, p) in points.iter().enumerate() {
            for (j, ao) in self.aos.iter().enumerate() {
                let d = [p[0] - ao.center[0], p[1] - ao.center[1], p[2] - ao.center[2]];
                let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
                let mut ang = 1.0;
                for k in 0..3 {
                    ang *= d[k].powi(ao.powers[k]);
                }
                let radial: f64 = ao.primitives.iter().map(|pr| pr.coefficient * (-pr.exponent * r2).exp()).sum();
                out[[i, j]] = ang * radial;
            }
        }
        out
    }

    /// Molecular orbitals `φ(points) · coeffᵀ` for a `N × η` coefficient
    /// matrix (the stored `Ω` when `None`), shape `points × N`.
    pub fn eval_orbitals(&self, points: &[[f64; 3]], coeff: Option<&Array2<f64>>) -> Array2<f64> {
        let c = coeff.unwrap_or(&self.coefficients);
        self.eval_aos(points).dot(&c.t())
    }

    /// Exchange document with the given coefficient rows.
    pub fn to_file(&self, coefficients: &Array2<f64>, canonicalization: Option<serde_json::Value>) -> HfFile {
        HfFile {
            name: Some(self.molecule.name.clone()),
            atoms: self
                .molecule
                .nuclei
                .iter()
                .zip(&self.ao_counts)
                .map(|(n, &c)| AtomEntry { position: n.position, charge: n.charge as i64, n_ao: Some(c) })
                .collect(),
            basis: self.basis.clone(),
            ao_params: self.params.clone(),
            coefficients: coefficients.rows().into_iter().map(|r| r.to_vec()).collect(),
            energy: self.energy,
            canonicalization,
        }
    }
}

pub(crate) fn matrix_rank(a: &Array2<f64>) -> usize {
    let m = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]]);
    let sv = m.singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > 1e-10 * max.max(1e-300)).count()
}
