//! The wave function: electron and nuclei message passing, restricted
//! orbitals with exponential envelopes, Jastrow factor and a signed
//! log-sum-exp over determinants.

use ndarray::{Array2, Array3};
use rand::Rng;

use crate::config::MoonConfig;
use crate::diff::backend::softplus_inv;
use crate::diff::{Backend, ParamId, ParamStore, Unary};
use crate::globe::Reparam;
use crate::nn::{inv_var_from_raw, normal_matrix, sq_norm, FilterBasis, FilterHead, FilterShared, Linear, Mlp};
use crate::system::System;

/// Intermediate results shared by the determinant and Jastrow parts.
pub struct Embedding<T> {
    /// Final electron embeddings `(N, H)`.
    pub h: T,
    /// Electron distances to each nucleus, `(N, 1)` per nucleus.
    pub en_r: Vec<T>,
    pub jastrow: T,
}

pub struct Moon {
    pub config: MoonConfig,
    /// Normalization ranges for μ, ν_e (aggregation), ν_R and ν_e (diffusion).
    sigma_norm: [ParamId; 4],
    ee_w: [ParamId; 2],
    ee_filter: [FilterBasis; 2],
    ee_out: [ParamId; 2],
    ee_proj: ParamId,
    en_filter: FilterShared,
    /// Output projections for the nuclei, electron and diffusion steps.
    en_out: [ParamId; 3],
    update: Vec<Linear>,
    diff_w: ParamId,
    diff_msg: Linear,
    jastrow: Mlp,
    alpha: [ParamId; 2],
    beta: [ParamId; 2],
    det_w: ParamId,
}

/// Spin class of an electron pair.
const SAME: usize = 0;
const DIFF: usize = 1;

impl Moon {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, config: MoonConfig) -> Self {
        let (h, e, f, d) = (config.hidden, config.ee_dim, config.filter_hidden, config.filter_ranges);
        let one = || Array2::from_elem((1, 1), softplus_inv(1.0));
        let sigma_norm = std::array::from_fn(|k| store.add(format!("moon.sigma_norm{k}"), one()));
        let names = ["same", "diff"];
        let ee_w = names.map(|n| store.add(format!("moon.ee_{n}.w"), normal_matrix(rng, 4, e, 0.5)));
        let ee_filter = names.map(|n| FilterBasis::new(store, rng, &format!("moon.ee_{n}.filter"), f, d));
        let ee_out = names.map(|n| store.add(format!("moon.ee_{n}.out"), normal_matrix(rng, d, e, 1.0 / (d as f64).sqrt())));
        let ee_proj = store.add("moon.ee_proj", normal_matrix(rng, e, h, 1.0 / (e as f64).sqrt()));
        let en_filter = FilterShared::new(store, rng, "moon.en_filter", f, d);
        let en_out = ["nuc", "elec", "diff"]
            .map(|n| store.add(format!("moon.en_{n}.out"), normal_matrix(rng, d, h, 1.0 / (d as f64).sqrt())));
        let update = (0..config.layers).map(|l| Linear::new(store, rng, &format!("moon.update{l}"), 2 * h, h, true)).collect();
        let diff_w = store.add("moon.diff.w", normal_matrix(rng, h, h, 1.0 / (h as f64).sqrt()));
        let diff_msg = Linear::new(store, rng, "moon.diff.msg", 2 * h, h, true);
        let mut jd = vec![h; config.jastrow_layers.max(1)];
        jd.push(1);
        let jastrow = Mlp::new(store, rng, "moon.jastrow", &jd, true);
        let alpha = names.map(|n| store.add(format!("moon.alpha_{n}"), one()));
        let beta = names.map(|n| store.add(format!("moon.beta_{n}"), Array2::ones((1, 1))));
        let det_w = store.add("moon.det_w", Array2::ones((1, config.determinants)));
        Self {
            config,
            sigma_norm,
            ee_w,
            ee_filter,
            ee_out,
            ee_proj,
            en_filter,
            en_out,
            update,
            diff_w,
            diff_msg,
            jastrow,
            alpha,
            beta,
            det_w,
        }
    }

    /// `(α, β)` of the same-spin and opposite-spin Jastrow pair terms.
    pub fn jastrow_pair_coefficients(&self, p: &ParamStore) -> [(f64, f64); 2] {
        [SAME, DIFF].map(|c| {
            (crate::diff::backend::softplus(p.get(self.alpha[c])[[0, 0]]), p.get(self.beta[c])[[0, 0]])
        })
    }

    /// `(sign, log|ψ|)` per walker for lab-frame electrons `(N, 3)`.
    ///
    /// The log is a `(1, 1)` tensor; a configuration where every determinant
    /// vanishes has sign 0 and log `-inf`.
    pub fn log_psi<B: Backend>(
        &self,
        be: &mut B,
        p: &ParamStore,
        sys: &System,
        rep: &Reparam<B::T>,
        electrons: &B::T,
    ) -> (Vec<f64>, B::T) {
        let emb = self.embed(be, p, sys, rep, electrons);
        let mut signs: Vec<Vec<f64>> = Vec::new();
        let mut logs = Vec::new();
        for blocks in self.orbital_matrices(be, sys, rep, &emb) {
            let mut sign = vec![1.0];
            let mut log: Option<B::T> = None;
            for phi in &blocks {
                let (s, l) = be.slogdet(phi);
                sign = broadcast_mul(&sign, &s);
                log = Some(match log {
                    Some(a) => be.add(&a, &l),
                    None => l,
                });
            }
            signs.push(sign);
            logs.push(log.expect("at least one block"));
        }
        let (sign, log) = self.combine(be, p, &signs, &logs);
        let log = be.add(&log, &emb.jastrow);
        (sign, log)
    }

    /// Per determinant, the spin-up orbital block and (if any) the spin-down
    /// block, rows indexed by electrons and columns by orbitals.
    pub fn orbital_matrices<B: Backend>(
        &self,
        be: &mut B,
        sys: &System,
        rep: &Reparam<B::T>,
        emb: &Embedding<B::T>,
    ) -> Vec<Vec<B::T>> {
        let n = sys.n_electrons();
        let nu = sys.layout.n_up;
        let up: Vec<usize> = (0..nu).collect();
        let down: Vec<usize> = (nu..n).collect();
        (0..self.config.determinants)
            .map(|k| {
                let mut blocks = vec![self.block(be, sys, rep, &emb.h, &emb.en_r, &up, 2 * k + SAME)];
                if !down.is_empty() {
                    blocks.push(self.block(be, sys, rep, &emb.h, &emb.en_r, &down, 2 * k + DIFF));
                }
                blocks
            })
            .collect()
    }

    /// Final electron embeddings, electron-nucleus distances and the Jastrow
    /// factor.
    pub fn embed<B: Backend>(
        &self,
        be: &mut B,
        p: &ParamStore,
        sys: &System,
        rep: &Reparam<B::T>,
        electrons: &B::T,
    ) -> Embedding<B::T> {
        let n = sys.n_electrons();
        let m = sys.n_atoms();
        let nu = sys.layout.n_up;
        let nd = sys.layout.n_down;
        let hdim = self.config.hidden;
        let up: Vec<usize> = (0..nu).collect();
        let down: Vec<usize> = (nu..n).collect();
        let sqrt_half = std::f64::consts::FRAC_1_SQRT_2;

        let origin = be.constant(sys.origin());
        let rot = be.constant(sys.rotation());
        let x = be.sub(electrons, &origin);
        let x = be.matmul(&x, &rot);

        let iv: Vec<B::T> = self
            .sigma_norm
            .iter()
            .map(|&id| {
                let raw = p.leaf(be, id);
                inv_var_from_raw(be, &raw)
            })
            .collect();

        // Electron-nucleus geometry.
        let mut en_d = Vec::with_capacity(m);
        let mut en_r2 = Vec::with_capacity(m);
        let mut en_r = Vec::with_capacity(m);
        let mut en_g = Vec::with_capacity(m);
        for a in 0..m {
            let r = be.constant(sys.nuclei.slice(ndarray::s![a..a + 1, ..]).to_owned());
            let d = be.sub(&x, &r);
            let r2 = sq_norm(be, &d);
            let rr = be.unary(&r2, Unary::Sqrt);
            en_g.push(rescaled(be, &d, &rr));
            en_d.push(d);
            en_r2.push(r2);
            en_r.push(rr);
        }
        let weighted: Vec<f64> = sys.charges.iter().map(|z| z / 2.0).collect();
        let mu = electron_normalizer(be, &en_r2, &iv[0], &weighted);
        let ones = vec![1.0; m];
        let nu_e = electron_normalizer(be, &en_r2, &iv[1], &ones);
        let nu_diff = electron_normalizer(be, &en_r2, &iv[3], &ones);
        let nu_r = {
            let (_, r2) = crate::globe::displacements(&sys.nuclei, &sys.nuclei);
            let r2 = be.constant(r2);
            let e = be.mul(&r2, &iv[2]);
            let e = be.neg(&e);
            let e = be.unary(&e, Unary::Exp);
            let idx: Vec<usize> = (0..m * m).map(|q| q / m).collect();
            let s = be.scatter_rows(&e, &idx, m);
            be.offset(&s, 1.0)
        };

        // Electron-electron message passing.
        let mut pair_r: [Option<B::T>; 2] = [None, None];
        let mut acc: Option<B::T> = None;
        for class in [SAME, DIFF] {
            let (ii, jj) = pair_lists(n, nu, class);
            if ii.is_empty() {
                continue;
            }
            let xi = be.gather_rows(&x, &ii);
            let xj = be.gather_rows(&x, &jj);
            let d = be.sub(&xi, &xj);
            let r2 = sq_norm(be, &d);
            let r = be.unary(&r2, Unary::Sqrt);
            let g = rescaled(be, &d, &r);
            let w = p.leaf(be, self.ee_w[class]);
            let s = be.matmul(&g, &w);
            let s = be.silu(&s);
            let beta = self.ee_filter[class].beta(be, p, &d, &r2);
            let wo = p.leaf(be, self.ee_out[class]);
            let gamma = be.matmul(&beta, &wo);
            let msg = be.mul(&s, &gamma);
            let msg = be.scatter_rows(&msg, &ii, n);
            acc = Some(match acc {
                Some(a) => be.add(&a, &msg),
                None => msg,
            });
            pair_r[class] = Some(r);
        }
        let h0 = match acc {
            Some(a) => {
                let w = p.leaf(be, self.ee_proj);
                let h = be.matmul(&a, &w);
                be.div(&h, &mu)
            }
            None => be.constant(Array2::zeros((n, hdim))),
        };

        // Electron-nucleus pairs and aggregation.
        let mut nuc = [Vec::with_capacity(m), Vec::with_capacity(m)];
        let mut h1: Option<B::T> = None;
        let mut gamma_diff = Vec::with_capacity(m);
        let wn = p.leaf(be, self.en_out[0]);
        let we = p.leaf(be, self.en_out[1]);
        let wd = p.leaf(be, self.en_out[2]);
        let (fh, nr) = (self.config.filter_hidden, self.config.filter_ranges);
        for a in 0..m {
            let z = be.gather_rows(&rep.z, &[a]);
            let wm = be.gather_rows(&rep.w_en, &[a]);
            let wm = be.reshape(&wm, 4, hdim);
            let pre = be.matmul(&en_g[a], &wm);
            let pre = be.add(&pre, &h0);
            let pre = be.add(&pre, &z);
            let hen = be.silu(&pre);

            let vs = be.gather_rows(&rep.varsigma, &[a]);
            let vs2 = be.unary(&vs, Unary::Square);
            let w1 = be.gather_rows(&rep.w1, &[a]);
            let head = FilterHead {
                inv_var: be.unary(&vs2, Unary::Recip),
                w1: be.reshape(&w1, 3, fh),
                b1: be.gather_rows(&rep.b1, &[a]),
            };
            debug_assert_eq!(be.shape(&head.inv_var), (1, nr));
            let beta = self.en_filter.beta(be, p, &head, &en_d[a], &en_r2[a]);

            let gn = be.matmul(&beta, &wn);
            let t = be.mul(&hen, &gn);
            let tu = be.gather_rows(&t, &up);
            nuc[0].push(be.sum_rows(&tu));
            if nd > 0 {
                let td = be.gather_rows(&t, &down);
                nuc[1].push(be.sum_rows(&td));
            }

            let ge = be.matmul(&beta, &we);
            let t = be.mul(&hen, &ge);
            h1 = Some(match h1 {
                Some(h) => be.add(&h, &t),
                None => t,
            });
            gamma_diff.push(be.matmul(&beta, &wd));
        }
        let h1 = be.div(&h1.expect("at least one nucleus"), &nu_e);
        let [nuc_up, nuc_down] = nuc;
        let mut hu = be.concat_rows(&nuc_up);
        hu = be.div(&hu, &nu_r);
        let mut hd = if nd > 0 {
            let h = be.concat_rows(&nuc_down);
            be.div(&h, &nu_r)
        } else {
            be.constant(Array2::zeros((m, hdim)))
        };

        for layer in &self.update {
            let cu = be.concat_cols(&[hu.clone(), hd.clone()]);
            let cd = be.concat_cols(&[hd.clone(), hu.clone()]);
            let du = layer.apply(be, p, &cu);
            let du = be.silu(&du);
            let dd = layer.apply(be, p, &cd);
            let dd = be.silu(&dd);
            let nu_ = be.add(&hu, &du);
            let nd_ = be.add(&hd, &dd);
            hu = be.scale(&nu_, sqrt_half);
            hd = be.scale(&nd_, sqrt_half);
        }

        // Diffusion back to the electrons.
        let cu = be.concat_cols(&[hu.clone(), hd.clone()]);
        let cd = be.concat_cols(&[hd, hu]);
        let pu = self.diff_msg.apply(be, p, &cu);
        let pd = self.diff_msg.apply(be, p, &cd);
        let stacked = be.concat_rows(&[pu, pd]);
        let mut msg: Option<B::T> = None;
        for (a, gd) in gamma_diff.iter().enumerate() {
            let idx: Vec<usize> = (0..n).map(|i| if i < nu { a } else { m + a }).collect();
            let rows = be.gather_rows(&stacked, &idx);
            let t = be.mul(&rows, gd);
            msg = Some(match msg {
                Some(s) => be.add(&s, &t),
                None => t,
            });
        }
        let msg = be.div(&msg.expect("at least one nucleus"), &nu_diff);
        let w = p.leaf(be, self.diff_w);
        let hl = be.matmul(&h1, &w);
        let hl = be.add(&hl, &msg);
        let hl = be.silu(&hl);
        let hl = be.add(&hl, &h0);
        let hl = be.scale(&hl, sqrt_half);

        // Jastrow factor.
        let j = self.jastrow.apply(be, p, &hl);
        let mut jastrow = be.sum_all(&j);
        for (class, coef) in [(SAME, -0.25), (DIFF, -0.5)] {
            let Some(r) = &pair_r[class] else { continue };
            let raw = p.leaf(be, self.alpha[class]);
            let alpha = be.unary(&raw, Unary::Softplus);
            let t = be.add(r, &alpha);
            let t = be.unary(&t, Unary::Recip);
            let t = be.sum_all(&t);
            let a2 = be.unary(&alpha, Unary::Square);
            let t = be.mul(&t, &a2);
            let b = p.leaf(be, self.beta[class]);
            let t = be.mul(&t, &b);
            // Ordered pair lists count every unordered pair twice.
            let t = be.scale(&t, coef * 0.5);
            jastrow = be.add(&jastrow, &t);
        }

        Embedding { h: hl, en_r, jastrow }
    }

    /// Orbital matrix of one spin block for parameter column `c`.
    #[allow(clippy::too_many_arguments)]
    fn block<B: Backend>(
        &self,
        be: &mut B,
        sys: &System,
        rep: &Reparam<B::T>,
        hl: &B::T,
        en_r: &[B::T],
        rows: &[usize],
        c: usize,
    ) -> B::T {
        let m = sys.n_atoms();
        let hdim = self.config.hidden;
        let nb = rows.len();
        let orbs: Vec<usize> = (0..nb).collect();
        let h = be.gather_rows(hl, rows);
        let w = be.gather_rows(&rep.orb_w, &orbs);
        let w = be.slice_cols(&w, c * hdim, hdim);
        let w = be.transpose(&w);
        let b = be.gather_rows(&rep.orb_b, &orbs);
        let b = be.slice_cols(&b, c, 1);
        let b = be.transpose(&b);
        let lin = be.matmul(&h, &w);
        let lin = be.add(&lin, &b);
        let mut env: Option<B::T> = None;
        for (a, r) in en_r.iter().enumerate() {
            let pairs: Vec<usize> = (0..nb).map(|i| i * m + a).collect();
            let s = be.gather_rows(&rep.sigma, &pairs);
            let s = be.slice_cols(&s, c, 1);
            let s = be.transpose(&s);
            let pi = be.gather_rows(&rep.pi, &pairs);
            let pi = be.slice_cols(&pi, c, 1);
            let pi = be.transpose(&pi);
            let r = be.gather_rows(r, rows);
            let e = be.matmul(&r, &s);
            let e = be.neg(&e);
            let e = be.unary(&e, Unary::Exp);
            let e = be.mul(&e, &pi);
            env = Some(match env {
                Some(v) => be.add(&v, &e),
                None => e,
            });
        }
        be.mul(&lin, &env.expect("at least one nucleus"))
    }

    /// `log|Σ_k w_k s_k exp(l_k)|` with a per-walker shift.
    fn combine<B: Backend>(&self, be: &mut B, p: &ParamStore, signs: &[Vec<f64>], logs: &[B::T]) -> (Vec<f64>, B::T) {
        let vals: Vec<Array3<f64>> = logs.iter().map(|l| be.value(l)).collect();
        let nw = signs.iter().map(Vec::len).chain(vals.iter().map(|v| v.dim().0)).max().unwrap_or(1);
        let pick = |v: &[f64], i: usize| if v.len() == 1 { v[0] } else { v[i] };
        let shift: Vec<f64> = (0..nw)
            .map(|i| {
                let mx = vals
                    .iter()
                    .zip(signs)
                    .filter(|(_, s)| pick(s, i) != 0.0)
                    .map(|(v, _)| v[[if v.dim().0 == 1 { 0 } else { i }, 0, 0]])
                    .fold(f64::NEG_INFINITY, f64::max);
                if mx.is_finite() { mx } else { 0.0 }
            })
            .collect();
        let shift_t = be.walker_constant(Array3::from_shape_vec((nw, 1, 1), shift.clone()).expect("shape"));
        let w = p.leaf(be, self.det_w);
        let mut total: Option<B::T> = None;
        for (k, (s, l)) in signs.iter().zip(logs).enumerate() {
            let sk: Vec<f64> = (0..nw).map(|i| pick(s, i)).collect();
            let st = be.walker_constant(Array3::from_shape_vec((nw, 1, 1), sk).expect("shape"));
            let e = be.sub(l, &shift_t);
            let e = be.unary(&e, Unary::Exp);
            let wk = be.slice_cols(&w, k, 1);
            let e = be.mul(&e, &wk);
            let e = be.mul(&e, &st);
            total = Some(match total {
                Some(t) => be.add(&t, &e),
                None => e,
            });
        }
        let total = total.expect("at least one determinant");
        let tv = be.value(&total);
        let sign: Vec<f64> = (0..nw)
            .map(|i| {
                let v = tv[[if tv.dim().0 == 1 { 0 } else { i }, 0, 0]];
                if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 }
            })
            .collect();
        let flip = be.walker_constant(Array3::from_shape_vec((nw, 1, 1), sign.clone()).expect("shape"));
        let abs = be.mul(&total, &flip);
        let log = be.unary(&abs, Unary::Log);
        let log = be.add(&log, &shift_t);
        (sign, log)
    }
}

/// `[d, r] · log(1 + r) / r`.
fn rescaled<B: Backend>(be: &mut B, d: &B::T, r: &B::T) -> B::T {
    let g = be.concat_cols(&[d.clone(), r.clone()]);
    let s = be.unary(r, Unary::Log1pOverX);
    be.mul(&g, &s)
}

/// `1 + Σ_m c_m exp(−r²_m / σ²)` as an `(N, 1)` tensor.
fn electron_normalizer<B: Backend>(be: &mut B, r2: &[B::T], iv: &B::T, coef: &[f64]) -> B::T {
    let mut acc: Option<B::T> = None;
    for (r2, &c) in r2.iter().zip(coef) {
        let e = be.mul(r2, iv);
        let e = be.neg(&e);
        let e = be.unary(&e, Unary::Exp);
        let e = be.scale(&e, c);
        acc = Some(match acc {
            Some(a) => be.add(&a, &e),
            None => e,
        });
    }
    be.offset(&acc.expect("at least one nucleus"), 1.0)
}

/// Ordered pairs `(i, j)`, `i ≠ j`, of one spin class.
fn pair_lists(n: usize, n_up: usize, class: usize) -> (Vec<usize>, Vec<usize>) {
    let mut ii = Vec::new();
    let mut jj = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let same = (i < n_up) == (j < n_up);
            if i != j && same == (class == SAME) {
                ii.push(i);
                jj.push(j);
            }
        }
    }
    (ii, jj)
}

fn broadcast_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len().max(b.len());
    (0..n).map(|i| a[if a.len() == 1 { 0 } else { i }] * b[if b.len() == 1 { 0 } else { i }]).collect()
}
