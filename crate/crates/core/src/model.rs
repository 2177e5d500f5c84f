//! Globe and Moon together with their parameters, and the evaluation entry
//! points used by the sampler and the optimizer.

use ndarray::{s, Array2, Array3, Axis};
use rand::SeedableRng;
use rayon::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::config::{GlobeConfig, MoonConfig};
use crate::diff::{Backend, JetBackend, LeafKey, ParamStore, Tape};
use crate::globe::{moment_regularizer, Globe, Reparam, ReparamLayout};
use crate::moon::Moon;
use crate::system::System;

pub struct Model {
    pub moon: Moon,
    pub globe: Globe,
    pub moon_params: ParamStore,
    pub globe_params: ParamStore,
    /// Seed the parameters were initialized from.
    pub seed: u64,
}

/// `log|ψ|` with its electron gradient and Laplacian for one walker.
#[derive(Debug, Clone)]
pub struct LogPsiDerivatives {
    pub sign: f64,
    pub log_psi: f64,
    /// `∇ log|ψ|`, flattened as `3i + k`.
    pub grad: Vec<f64>,
    /// `Δ log|ψ|`.
    pub laplacian: f64,
}

/// Per-walker derivatives of `log|ψ|` with respect to Moon parameters and
/// the reparametrized tensors.
#[derive(Debug, Clone)]
pub struct WalkerJacobian {
    pub log_psi: Vec<f64>,
    /// `B × P_moon`.
    pub moon: Array2<f64>,
    /// `B × R` in [`Reparam::flat`] order.
    pub reparam: Array2<f64>,
}

impl Model {
    pub fn new(moon_config: MoonConfig, globe_config: GlobeConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut moon_params = ParamStore::new();
        let moon = Moon::new(&mut moon_params, &mut rng, moon_config);
        let mut globe_params = ParamStore::new();
        let layout = ReparamLayout::from(&moon.config);
        let globe = Globe::new(&mut globe_params, &mut rng, globe_config, layout);
        Self { moon, globe, moon_params, globe_params, seed }
    }

    pub fn n_params(&self) -> usize {
        self.moon_params.len() + self.globe_params.len()
    }

    /// Reparametrized tensors for one molecule.
    pub fn reparam(&self, sys: &System) -> Reparam<Array2<f64>> {
        let mut t = Tape::values_only(1);
        let out = self.globe.forward(&mut t, &self.globe_params, sys);
        out.reparam.map(|x| first(t.value_ref(x)))
    }

    /// Reparametrized tensors and their Jacobian `R × P_globe`.
    pub fn globe_jacobian(&self, sys: &System) -> (Reparam<Array2<f64>>, Array2<f64>) {
        let mut t = Tape::new(1);
        let out = self.globe.forward(&mut t, &self.globe_params, sys);
        let values = out.reparam.map(|x| first(t.value_ref(x)));
        let total = values.len();
        let mut seeds = Vec::with_capacity(Reparam::<()>::COUNT);
        let mut offset = 0;
        for (var, val) in out.reparam.as_vec().into_iter().zip(values.as_vec()) {
            let (r, c) = val.dim();
            let mut seed = Array3::zeros((total, r, c));
            for q in 0..r * c {
                seed[[offset + q, q / c, q % c]] = 1.0;
            }
            offset += r * c;
            seeds.push((*var, seed));
        }
        let grads = t.backward(&seeds);
        (values, flatten_grads(&grads, &self.globe_params, total, LeafKey::Param))
    }

    /// `vᵀ ∂θ/∂p_globe` for a cotangent on the flat reparametrized tensors,
    /// plus an optional weight on the moment regularizer.
    pub fn globe_vjp(&self, sys: &System, v: &[f64], regularizer_weight: f64) -> (Vec<f64>, f64) {
        let mut t = Tape::new(1);
        let out = self.globe.forward(&mut t, &self.globe_params, sys);
        let mut seeds = Vec::new();
        let mut offset = 0;
        for var in out.reparam.as_vec() {
            let (r, c) = t.shape(var);
            let seed = Array3::from_shape_vec((1, r, c), v[offset..offset + r * c].to_vec()).expect("shape");
            offset += r * c;
            seeds.push((*var, seed));
        }
        assert_eq!(offset, v.len(), "cotangent length");
        let mut reg_value = 0.0;
        if regularizer_weight != 0.0 {
            if let Some(reg) = moment_regularizer(&mut t, &out.heads, self.globe.config.p_max) {
                reg_value = t.value_ref(&reg)[[0, 0, 0]];
                seeds.push((reg, Array3::from_elem((1, 1, 1), regularizer_weight)));
            }
        }
        let grads = t.backward(&seeds);
        let g = flatten_grads(&grads, &self.globe_params, 1, LeafKey::Param);
        (g.into_raw_vec_and_offset().0, reg_value)
    }

    /// Values only: `(signs, log|ψ|)` for electrons `(B, N, 3)`, split
    /// across the worker threads.
    pub fn log_psi(&self, sys: &System, rep: &Reparam<Array2<f64>>, electrons: &Array3<f64>) -> (Vec<f64>, Vec<f64>) {
        let b = electrons.dim().0;
        let threads = rayon::current_num_threads();
        if threads <= 1 || b < 2 * threads {
            return self.log_psi_serial(sys, rep, electrons);
        }
        let chunk = b.div_ceil(threads);
        let parts: Vec<(Vec<f64>, Vec<f64>)> = (0..b)
            .step_by(chunk)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|start| {
                let end = (start + chunk).min(b);
                self.log_psi_serial(sys, rep, &electrons.slice(s![start..end, .., ..]).to_owned())
            })
            .collect();
        let mut signs = Vec::with_capacity(b);
        let mut logs = Vec::with_capacity(b);
        for (s, l) in parts {
            signs.extend(s);
            logs.extend(l);
        }
        (signs, logs)
    }

    fn log_psi_serial(&self, sys: &System, rep: &Reparam<Array2<f64>>, electrons: &Array3<f64>) -> (Vec<f64>, Vec<f64>) {
        let b = electrons.dim().0;
        let mut t = Tape::values_only(b);
        let r = rep.constants(&mut t);
        let e = t.walker_constant(electrons.clone());
        let (s, l) = self.moon.log_psi(&mut t, &self.moon_params, sys, &r, &e);
        let v = t.value_ref(&l);
        let logs = (0..b).map(|i| v[[if v.dim().0 == 1 { 0 } else { i }, 0, 0]]).collect();
        (expand(s, b), logs)
    }

    /// Electron gradient and Laplacian of `log|ψ|`, evaluated in chunks.
    pub fn derivatives(
        &self,
        sys: &System,
        rep: &Reparam<Array2<f64>>,
        electrons: &Array3<f64>,
        chunk: usize,
    ) -> Vec<LogPsiDerivatives> {
        let (b, n, _) = electrons.dim();
        let chunk = chunk.max(1);
        let starts: Vec<usize> = (0..b).step_by(chunk).collect();
        let parts: Vec<Vec<LogPsiDerivatives>> = starts
            .into_par_iter()
            .map(|start| {
                let end = (start + chunk).min(b);
                let nb = end - start;
                let mut be = JetBackend::new(nb, 3 * n);
                let r = rep.constants(&mut be);
                let e = be.electrons(electrons.slice(s![start..end, .., ..]).to_owned());
                let (signs, l) = self.moon.log_psi(&mut be, &self.moon_params, sys, &r, &e);
                let signs = expand(signs, nb);
                let at = |d: usize, i: usize| if d == 1 { 0 } else { i };
                (0..nb)
                    .map(|i| {
                        let (grad, laplacian) = match &l.deriv {
                            Some((g, lap)) => (
                                (0..3 * n).map(|d| g[[at(g.dim().0, i), d, 0, 0]]).collect(),
                                lap[[at(lap.dim().0, i), 0, 0]],
                            ),
                            None => (vec![0.0; 3 * n], 0.0),
                        };
                        let log_psi = l.val[[at(l.val.dim().0, i), 0, 0]];
                        LogPsiDerivatives { sign: signs[i], log_psi, grad, laplacian }
                    })
                    .collect()
            })
            .collect();
        parts.into_iter().flatten().collect()
    }

    /// Per-walker gradients of `log|ψ|` with respect to Moon parameters and
    /// the reparametrized tensors.
    pub fn walker_jacobian(&self, sys: &System, rep: &Reparam<Array2<f64>>, electrons: &Array3<f64>) -> WalkerJacobian {
        let b = electrons.dim().0;
        let mut t = Tape::new(b);
        let r = rep.leaves(&mut t);
        let e = t.walker_constant(electrons.clone());
        let (_, l) = self.moon.log_psi(&mut t, &self.moon_params, sys, &r, &e);
        let v = t.value_ref(&l);
        let log_psi = (0..b).map(|i| v[[if v.dim().0 == 1 { 0 } else { i }, 0, 0]]).collect();
        let grads = t.backward(&[(l, Array3::ones((b, 1, 1)))]);
        let moon = flatten_grads(&grads, &self.moon_params, b, LeafKey::Param);
        let mut reparam = Array2::zeros((b, rep.len()));
        let mut offset = 0;
        for (k, a) in rep.as_vec().into_iter().enumerate() {
            let n = a.len();
            if let Some(g) = grads.get(LeafKey::External(k)) {
                for i in 0..b {
                    let gi = g.index_axis(Axis(0), if g.dim().0 == 1 { 0 } else { i });
                    for (q, v) in gi.iter().enumerate() {
                        reparam[[i, offset + q]] = *v;
                    }
                }
            }
            offset += n;
        }
        WalkerJacobian { log_psi, moon, reparam }
    }
}

fn first(a: &Array3<f64>) -> Array2<f64> {
    a.index_axis(Axis(0), 0).to_owned()
}

fn expand(s: Vec<f64>, b: usize) -> Vec<f64> {
    if s.len() == b {
        s
    } else {
        vec![s[0]; b]
    }
}

/// Assembles leaf gradients of a parameter store into a `rows × P` matrix.
fn flatten_grads(
    grads: &crate::diff::tape::LeafGrads,
    store: &ParamStore,
    rows: usize,
    key: impl Fn(usize) -> LeafKey,
) -> Array2<f64> {
    let mut out = Array2::zeros((rows, store.len()));
    for (i, spec) in store.specs().iter().enumerate() {
        let Some(g) = grads.get(key(i)) else { continue };
        let n = spec.rows * spec.cols;
        for r in 0..rows {
            let gr = g.index_axis(Axis(0), if g.dim().0 == 1 { 0 } else { r });
            let mut row = out.slice_mut(s![r, spec.offset..spec.offset + n]);
            for (dst, src) in row.iter_mut().zip(gr.iter()) {
                *dst = *src;
            }
        }
    }
    out
}
