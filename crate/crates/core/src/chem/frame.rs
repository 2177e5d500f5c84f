use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use super::molecule::{Molecule, Nucleus};

/// Rigid coordinate frame: columns of `rotation` are the frame axes in lab
/// coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub rotation: [[f64; 3]; 3],
    pub origin: [f64; 3],
}

const DEGENERATE_TOL: f64 = 1e-9;
const SIGN_TOL: f64 = 1e-9;

impl Frame {
    pub fn identity() -> Self {
        Self { rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], origin: [0.0; 3] }
    }

    fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.rotation[r][c])
    }

    /// `rotationᵀ (p - origin)`.
    pub fn to_frame_point(&self, p: [f64; 3]) -> [f64; 3] {
        let d = [p[0] - self.origin[0], p[1] - self.origin[1], p[2] - self.origin[2]];
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.rotation[0][c] * d[0] + self.rotation[1][c] * d[1] + self.rotation[2][c] * d[2];
        }
        out
    }

    pub fn from_frame_point(&self, p: [f64; 3]) -> [f64; 3] {
        let mut out = self.origin;
        for (r, o) in out.iter_mut().enumerate() {
            *o += self.rotation[r][0] * p[0] + self.rotation[r][1] * p[1] + self.rotation[r][2] * p[2];
        }
        out
    }

    pub fn to_frame(&self, points: &[[f64; 3]]) -> Vec<[f64; 3]> {
        points.iter().map(|&p| self.to_frame_point(p)).collect()
    }

    pub fn from_frame(&self, points: &[[f64; 3]]) -> Vec<[f64; 3]> {
        points.iter().map(|&p| self.from_frame_point(p)).collect()
    }

    /// Maximum deviation of `R Rᵀ` from the identity.
    pub fn orthogonality_error(&self) -> f64 {
        let m = self.matrix();
        (m * m.transpose() - Matrix3::identity()).abs().max()
    }
}

fn lex_cmp(a: &[f64; 3], b: &[f64; 3]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Nuclei in a canonical order (charge, then lexicographic position) so that
/// every reduction below is independent of the input order.
fn canonical_nuclei(m: &Molecule) -> Vec<Nucleus> {
    let mut n = m.nuclei.clone();
    n.sort_by(|a, b| a.charge.cmp(&b.charge).then_with(|| lex_cmp(&a.position, &b.position)));
    n
}

/// Charge-weighted principal axes of the nuclei.
pub fn build_frame(molecule: &Molecule) -> Frame {
    let nuclei = canonical_nuclei(molecule);
    let total: f64 = nuclei.iter().map(|n| n.charge as f64).sum();
    let mut origin = Vector3::zeros();
    for n in &nuclei {
        origin += Vector3::from(n.position) * (n.charge as f64);
    }
    origin /= total;
    let rel: Vec<(f64, Vector3<f64>)> =
        nuclei.iter().map(|n| (n.charge as f64, Vector3::from(n.position) - origin)).collect();
    let mut cov = Matrix3::zeros();
    for (z, d) in &rel {
        cov += d * d.transpose() * *z;
    }
    cov /= total;

    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vecs: Vec<Vector3<f64>> = order.iter().map(|&k| eig.eigenvectors.column(k).into_owned()).collect();
    let scale = vals[0].abs().max(1.0);

    let mut axes: Vec<Vector3<f64>> = Vec::with_capacity(3);
    let mut k = 0;
    while k < 3 {
        let mut end = k + 1;
        while end < 3 && (vals[k] - vals[end]).abs() <= DEGENERATE_TOL * scale {
            end += 1;
        }
        if end - k == 1 {
            axes.push(vecs[k]);
        } else {
            // Degenerate eigenspace: project the lab axes into it in order.
            let basis = &vecs[k..end];
            let mut found: Vec<Vector3<f64>> = Vec::new();
            for e in [Vector3::x(), Vector3::y(), Vector3::z()] {
                if found.len() == end - k {
                    break;
                }
                let mut v: Vector3<f64> = basis.iter().map(|b| b * b.dot(&e)).sum();
                for f in axes.iter().chain(found.iter()) {
                    v -= f * f.dot(&v);
                }
                let norm = v.norm();
                if norm > 1e-6 {
                    found.push(v / norm);
                }
            }
            axes.extend(found);
        }
        k = end;
    }

    let reference = reference_nucleus(&nuclei, &rel);
    let mut undetermined = Vec::new();
    for (k, axis) in axes.iter_mut().enumerate() {
        let proj = axis.dot(&reference);
        let s = if proj.abs() > SIGN_TOL {
            proj
        } else {
            let third: f64 = rel.iter().map(|(z, d)| z * axis.dot(d).powi(3)).sum();
            if third.abs() > SIGN_TOL {
                third
            } else {
                undetermined.push(k);
                axis.iter().copied().find(|x| x.abs() > SIGN_TOL).unwrap_or(1.0)
            }
        };
        if s < 0.0 {
            *axis = -*axis;
        }
    }
    // The last axis without a geometric sign (e.g. the normal of a planar
    // molecule) is oriented to make the frame right-handed.
    if let Some(&k) = undetermined.last() {
        if axes[0].cross(&axes[1]).dot(&axes[2]) < 0.0 {
            axes[k] = -axes[k];
        }
    }

    let mut rotation = [[0.0; 3]; 3];
    for (c, axis) in axes.iter().enumerate() {
        for r in 0..3 {
            rotation[r][c] = axis[r];
        }
    }
    Frame { rotation, origin: [origin[0], origin[1], origin[2]] }
}

/// Displacement of the sign reference nucleus: highest charge, then farthest
/// from the centroid, then lexicographically smallest position.
fn reference_nucleus(nuclei: &[Nucleus], rel: &[(f64, Vector3<f64>)]) -> Vector3<f64> {
    let mut best = 0;
    for i in 1..nuclei.len() {
        let (a, b) = (&nuclei[i], &nuclei[best]);
        let (da, db) = (rel[i].1.norm(), rel[best].1.norm());
        let better = a.charge > b.charge
            || (a.charge == b.charge
                && (da > db + SIGN_TOL || ((da - db).abs() <= SIGN_TOL && lex_cmp(&a.position, &b.position).is_lt())));
        if better {
            best = i;
        }
    }
    rel[best].1
}
