//! Local-energy statistics: outlier clipping, estimates and rescaling.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("no finite local energies")]
    Empty,
}

pub fn median(x: &[f64]) -> Option<f64> {
    if x.is_empty() {
        return None;
    }
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Clips finite entries to `median ± c · mean|x − median|`. Non-finite
/// entries are ignored for the statistics and passed through unchanged.
pub fn clip_energies(x: &[f64], c: f64) -> Result<Vec<f64>, StatsError> {
    let finite: Vec<f64> = x.iter().copied().filter(|v| v.is_finite()).collect();
    let m = median(&finite).ok_or(StatsError::Empty)?;
    let d = finite.iter().map(|v| (v - m).abs()).sum::<f64>() / finite.len() as f64;
    let (lo, hi) = (m - c * d, m + c * d);
    Ok(x.iter().map(|&v| if v.is_finite() { v.clamp(lo, hi) } else { v }).collect())
}

/// Mean, standard deviation and the clipped local energies they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyEstimate {
    pub mean: f64,
    pub std: f64,
    pub local_energies: Vec<f64>,
}

impl EnergyEstimate {
    /// Statistics over the finite entries of `clipped`.
    pub fn from_clipped(clipped: Vec<f64>) -> Result<Self, StatsError> {
        let finite: Vec<f64> = clipped.iter().copied().filter(|v| v.is_finite()).collect();
        if finite.is_empty() {
            return Err(StatsError::Empty);
        }
        let n = finite.len() as f64;
        let mean = finite.iter().sum::<f64>() / n;
        let var = finite.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Ok(Self { mean, std: var.sqrt(), local_energies: clipped })
    }
}

/// Per-molecule gradient factor `min(1, 1/s)`; `s = 0` gives 1.
pub fn rescale_factor(s: f64) -> f64 {
    if s <= 1.0 {
        1.0
    } else {
        1.0 / s
    }
}

/// Scales each molecule's gradient by [`rescale_factor`] and averages.
pub fn rescale_gradients(grads: &[Vec<f64>], stds: &[f64]) -> Vec<f64> {
    assert_eq!(grads.len(), stds.len());
    let n = grads.first().map_or(0, Vec::len);
    let mut out = vec![0.0; n];
    for (g, &s) in grads.iter().zip(stds) {
        let f = rescale_factor(s) / grads.len() as f64;
        for (o, v) in out.iter_mut().zip(g) {
            *o += f * v;
        }
    }
    out
}

/// Scales `x` in place so that its norm is at most `max_norm`; returns the
/// norm before scaling.
pub fn clip_norm(x: &mut [f64], max_norm: f64) -> f64 {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > max_norm {
        let f = max_norm / n;
        x.iter_mut().for_each(|v| *v *= f);
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_vector_unchanged() {
        assert_eq!(clip_energies(&[1.5; 6], 5.0).unwrap(), vec![1.5; 6]);
    }

    #[test]
    fn outlier_on_the_boundary_is_kept() {
        let x = [0.0, 0.0, 0.0, 0.0, 100.0];
        assert_eq!(clip_energies(&x, 5.0).unwrap(), x.to_vec());
        let x = [0.0, 0.0, 0.0, 0.0, 1000.0];
        assert_eq!(clip_energies(&x, 5.0).unwrap(), x.to_vec());
    }

    #[test]
    fn lone_outlier_is_clipped() {
        let mut x = vec![0.0; 10];
        x[9] = 1000.0;
        let c = clip_energies(&x, 5.0).unwrap();
        assert_eq!(c[9], 500.0);
        assert!(c[..9].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn second_pass_tightens_the_band() {
        let mut x = vec![0.0; 10];
        x[9] = 1000.0;
        let once = clip_energies(&x, 5.0).unwrap();
        assert_eq!(clip_energies(&once, 5.0).unwrap()[9], 250.0);
    }

    #[test]
    fn empty_input_errors() {
        assert_eq!(clip_energies(&[], 5.0), Err(StatsError::Empty));
        assert_eq!(clip_energies(&[f64::NAN], 5.0), Err(StatsError::Empty));
    }

    #[test]
    fn rescaling_factors() {
        assert_eq!(rescale_factor(2.0), 0.5);
        assert_eq!(rescale_factor(0.5), 1.0);
        assert_eq!(rescale_factor(1.0), 1.0);
        assert_eq!(rescale_factor(0.0), 1.0);
        let g = rescale_gradients(&[vec![2.0, 4.0], vec![1.0, 1.0]], &[2.0, 0.5]);
        assert_eq!(g, vec![1.0, 1.5]);
    }

    #[test]
    fn norm_clip() {
        let mut x = vec![3.0, 4.0];
        assert_eq!(clip_norm(&mut x, 1.0), 5.0);
        assert!((x[0] - 0.6).abs() < 1e-15 && (x[1] - 0.8).abs() < 1e-15);
        let mut y = vec![0.3, 0.4];
        clip_norm(&mut y, 1.0);
        assert_eq!(y, vec![0.3, 0.4]);
    }

    proptest! {
        #[test]
        fn clipping_is_order_free_and_contracting(v in prop::collection::vec(-1e3f64..1e3, 1..40), seed in 0u64..1000) {
            let once = clip_energies(&v, 5.0).unwrap();
            let m = median(&v).unwrap();
            for (a, b) in v.iter().zip(&once) {
                prop_assert!((b - m).abs() <= (a - m).abs());
            }
            let mut perm: Vec<usize> = (0..v.len()).collect();
            let k = (seed as usize) % v.len();
            perm.rotate_left(k);
            let pv: Vec<f64> = perm.iter().map(|&i| v[i]).collect();
            let pc = clip_energies(&pv, 5.0).unwrap();
            for (j, &i) in perm.iter().enumerate() {
                prop_assert_eq!(pc[j], once[i]);
            }
        }
    }
}
