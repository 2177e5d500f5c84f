//! Locations and categorical types of localized molecular orbitals, derived
//! from the nuclei alone.

use std::fmt;

use thiserror::Error;

use crate::chem::{Frame, Molecule};

/// Self-distance that makes an atom prefer bonding with itself beyond it.
pub const DEFAULT_C_SELF: f64 = 4.0;
const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum OrbitalError {
    #[error("element with charge {0} is not supported (charges 1 to 10 only)")]
    UnsupportedElement(u32),
    #[error("atom {atom} keeps unpaired valence with no admissible partner")]
    InfeasibleValency { atom: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OrbitalType {
    /// `shell` counts from 1.
    Core { charge: u32, shell: u32 },
    /// Bond order of this orbital within its atom pair, counting from 1.
    Valence { order: u32 },
}

impl fmt::Display for OrbitalType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OrbitalType::Core { charge, shell } => write!(f, "core({charge};{shell})"),
            OrbitalType::Valence { order } => write!(f, "valence({order})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Orbital {
    pub location: [f64; 3],
    pub kind: OrbitalType,
    /// Defining atoms `(m, n)` with `m <= n`; core orbitals have `m == n`.
    pub atoms: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrbitalSet {
    pub orbitals: Vec<Orbital>,
    /// Distinct bonded pairs `(m, n, multiplicity)` in selection order.
    pub bonds: Vec<(usize, usize, u32)>,
}

impl OrbitalSet {
    pub fn len(&self) -> usize {
        self.orbitals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orbitals.is_empty()
    }

    pub fn locations(&self) -> Vec<[f64; 3]> {
        self.orbitals.iter().map(|o| o.location).collect()
    }

    /// `index,x,y,z,type` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,x,y,z,type\n");
        for (i, o) in self.orbitals.iter().enumerate() {
            let [x, y, z] = o.location;
            s.push_str(&format!("{i},{x:.10},{y:.10},{z:.10},{}\n", o.kind));
        }
        s
    }
}

/// Number of bonds an element forms.
pub fn valency(charge: u32) -> Result<u32, OrbitalError> {
    const TABLE: [u32; 10] = [1, 0, 1, 2, 3, 4, 3, 2, 1, 0];
    match charge {
        1..=10 => Ok(TABLE[charge as usize - 1]),
        z => Err(OrbitalError::UnsupportedElement(z)),
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    m: usize,
    n: usize,
    score: f64,
    radius: f64,
    polar: f64,
    azimuth: f64,
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_TOL * a.abs().max(b.abs()).max(1.0)
}

impl Candidate {
    /// True when `self` should be preferred over `other`.
    fn beats(&self, other: &Candidate) -> bool {
        if !close(self.score, other.score) {
            return self.score > other.score;
        }
        if !close(self.radius, other.radius) {
            return self.radius > other.radius;
        }
        if !close(self.polar, other.polar) {
            return self.polar < other.polar;
        }
        if !close(self.azimuth, other.azimuth) {
            return self.azimuth < other.azimuth;
        }
        (self.m, self.n) < (other.m, other.n)
    }
}

pub fn localize_orbitals(molecule: &Molecule, frame: &Frame, c_self: f64) -> Result<OrbitalSet, OrbitalError> {
    let nuclei = &molecule.nuclei;
    let m_atoms = nuclei.len();
    let mut valence = Vec::with_capacity(m_atoms);
    let mut orbitals = Vec::new();
    for (i, nuc) in nuclei.iter().enumerate() {
        let v = valency(nuc.charge)?;
        valence.push(v as i64);
        let cores = (nuc.charge - v).div_ceil(2);
        for j in 1..=cores {
            orbitals.push(Orbital {
                location: nuc.position,
                kind: OrbitalType::Core { charge: nuc.charge, shell: j },
                atoms: (i, i),
            });
        }
    }

    let local = frame.to_frame(&molecule.positions());
    let mut dist = vec![vec![c_self; m_atoms]; m_atoms];
    let mut geom = vec![vec![(0.0, 0.0, 0.0); m_atoms]; m_atoms];
    for m in 0..m_atoms {
        for n in m..m_atoms {
            if m != n {
                let d: f64 = (0..3).map(|k| (local[m][k] - local[n][k]).powi(2)).sum::<f64>().sqrt();
                dist[m][n] = d;
                dist[n][m] = d;
            }
            let mid = [(local[m][0] + local[n][0]) / 2.0, (local[m][1] + local[n][1]) / 2.0, (local[m][2] + local[n][2]) / 2.0];
            let r = (mid[0] * mid[0] + mid[1] * mid[1] + mid[2] * mid[2]).sqrt();
            let polar = if r > 0.0 { (mid[2] / r).clamp(-1.0, 1.0).acos() } else { 0.0 };
            let azimuth = if mid[0] == 0.0 && mid[1] == 0.0 { 0.0 } else { mid[1].atan2(mid[0]) };
            geom[m][n] = (r, polar, azimuth);
        }
    }

    let mut bond_type = vec![vec![0u32; m_atoms]; m_atoms];
    let mut bonds: Vec<(usize, usize, u32)> = Vec::new();
    let total_valence: i64 = valence.iter().sum();
    let n_valence = (total_valence as usize).div_ceil(2);
    for _ in 0..n_valence {
        let mut best: Option<Candidate> = None;
        for m in 0..m_atoms {
            if valence[m] <= 0 {
                continue;
            }
            for n in m..m_atoms {
                if valence[n] <= 0 {
                    continue;
                }
                let (radius, polar, azimuth) = geom[m][n];
                let c = Candidate { m, n, score: 1.0 / (dist[m][n] + bond_type[m][n] as f64 / 2.0), radius, polar, azimuth };
                if best.is_none_or(|b| c.beats(&b)) {
                    best = Some(c);
                }
            }
        }
        let Candidate { m, n, .. } = best.ok_or_else(|| OrbitalError::InfeasibleValency {
            atom: valence.iter().position(|&v| v != 0).unwrap_or(0),
        })?;
        valence[m] -= 1;
        valence[n] -= 1;
        bond_type[m][n] += 1;
        bond_type[n][m] = bond_type[m][n];
        match bonds.iter_mut().find(|b| b.0 == m && b.1 == n) {
            Some(b) => b.2 += 1,
            None => bonds.push((m, n, 1)),
        }
        let (a, b) = (nuclei[m].position, nuclei[n].position);
        orbitals.push(Orbital {
            location: [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0, (a[2] + b[2]) / 2.0],
            kind: OrbitalType::Valence { order: bond_type[m][n] },
            atoms: (m, n),
        });
    }
    Ok(OrbitalSet { orbitals, bonds })
}
