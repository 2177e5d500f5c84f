//! Layers shared by both networks, written once against [`Backend`].

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::diff::{Backend, ParamId, ParamStore, Unary};

pub fn normal_matrix(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    let n = Normal::new(0.0, std).expect("positive std");
    Array2::from_shape_simple_fn((rows, cols), || n.sample(rng))
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, d_in: usize, d_out: usize, bias: bool) -> Self {
        let w = store.add(format!("{name}.w"), normal_matrix(rng, d_in, d_out, 1.0 / (d_in as f64).sqrt()));
        let b = bias.then(|| store.add(format!("{name}.b"), Array2::zeros((1, d_out))));
        Self { w, b, d_in, d_out }
    }

    pub fn apply<B: Backend>(&self, be: &mut B, p: &ParamStore, x: &B::T) -> B::T {
        let w = p.leaf(be, self.w);
        let y = be.matmul(x, &w);
        match self.b {
            Some(b) => {
                let b = p.leaf(be, b);
                be.add(&y, &b)
            }
            None => y,
        }
    }
}

/// Dense layers with SiLU between them and a linear last layer.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, dims: &[usize], bias_last: bool) -> Self {
        assert!(dims.len() >= 2);
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|k| Linear::new(store, rng, &format!("{name}.{k}"), dims[k], dims[k + 1], k + 1 < n || bias_last))
            .collect();
        Self { layers }
    }

    /// Like [`Mlp::new`] without any bias, so a zero input maps to zero.
    pub fn bias_free(store: &mut ParamStore, rng: &mut impl Rng, name: &str, dims: &[usize]) -> Self {
        let layers = (0..dims.len() - 1)
            .map(|k| Linear::new(store, rng, &format!("{name}.{k}"), dims[k], dims[k + 1], false))
            .collect();
        Self { layers }
    }

    pub fn apply<B: Backend>(&self, be: &mut B, p: &ParamStore, x: &B::T) -> B::T {
        let mut h = x.clone();
        for (k, l) in self.layers.iter().enumerate() {
            h = l.apply(be, p, &h);
            if k + 1 < self.layers.len() {
                h = be.silu(&h);
            }
        }
        h
    }

    pub fn d_out(&self) -> usize {
        self.layers.last().expect("non-empty").d_out
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gain = store.add(format!("{name}.gain"), Array2::ones((1, dim)));
        let bias = store.add(format!("{name}.bias"), Array2::zeros((1, dim)));
        Self { gain, bias, dim }
    }

    /// Normalizes each row.
    pub fn apply<B: Backend>(&self, be: &mut B, p: &ParamStore, x: &B::T) -> B::T {
        let inv = 1.0 / self.dim as f64;
        let s = be.sum_cols(x);
        let mean = be.scale(&s, inv);
        let c = be.sub(x, &mean);
        let sq = be.unary(&c, Unary::Square);
        let v = be.sum_cols(&sq);
        let v = be.scale(&v, inv);
        let v = be.offset(&v, Self::EPS);
        let sd = be.unary(&v, Unary::Sqrt);
        let n = be.div(&c, &sd);
        let g = p.leaf(be, self.gain);
        let b = p.leaf(be, self.bias);
        let n = be.mul(&n, &g);
        be.add(&n, &b)
    }
}

/// Log-spaced initial envelope ranges in `[0.5, 10]` bohr.
pub fn envelope_ranges(d: usize) -> Vec<f64> {
    if d == 1 {
        return vec![(0.5f64 * 10.0).sqrt()];
    }
    (0..d).map(|i| (0.5f64.ln() + (20f64.ln()) * i as f64 / (d - 1) as f64).exp()).collect()
}

/// Shared part of a spatial filter: envelope mixing and the second
/// perceptron layer. The envelope ranges and first layer are either owned
/// ([`FilterBasis`]) or supplied per atom by the reparametrization network.
#[derive(Debug, Clone)]
pub struct FilterShared {
    pub w_env: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub hidden: usize,
    pub ranges: usize,
}

/// Per-filter inputs that may be reparametrized: `1/ς²` as a `(1, D)` row,
/// first-layer weights `(3, F)` and bias `(1, F)`.
pub struct FilterHead<T> {
    pub inv_var: T,
    pub w1: T,
    pub b1: T,
}

impl FilterShared {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, hidden: usize, ranges: usize) -> Self {
        let w_env = store.add(format!("{name}.w_env"), normal_matrix(rng, ranges, ranges, 1.0 / (ranges as f64).sqrt()));
        let w2 = store.add(format!("{name}.w2"), normal_matrix(rng, hidden, ranges, 1.0 / (hidden as f64).sqrt()));
        let b2 = store.add(format!("{name}.b2"), Array2::zeros((1, ranges)));
        Self { w_env, w2, b2, hidden, ranges }
    }

    /// `β(x)` for displacements `x (P, 3)` with squared norms `r2 (P, 1)`.
    pub fn beta<B: Backend>(&self, be: &mut B, p: &ParamStore, head: &FilterHead<B::T>, x: &B::T, r2: &B::T) -> B::T {
        let e = be.matmul(r2, &head.inv_var);
        let e = be.neg(&e);
        let e = be.unary(&e, Unary::Exp);
        let w_env = p.leaf(be, self.w_env);
        let env = be.matmul(&e, &w_env);
        let h = be.matmul(x, &head.w1);
        let h = be.add(&h, &head.b1);
        let h = be.silu(&h);
        let w2 = p.leaf(be, self.w2);
        let b2 = p.leaf(be, self.b2);
        let h = be.matmul(&h, &w2);
        let h = be.add(&h, &b2);
        be.mul(&env, &h)
    }
}

/// A spatial filter basis with its own envelope ranges and first layer.
#[derive(Debug, Clone)]
pub struct FilterBasis {
    pub shared: FilterShared,
    pub varsigma: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
}

impl FilterBasis {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, hidden: usize, ranges: usize) -> Self {
        let shared = FilterShared::new(store, rng, name, hidden, ranges);
        let raw: Vec<f64> = envelope_ranges(ranges).into_iter().map(crate::diff::backend::softplus_inv).collect();
        let varsigma = store.add(format!("{name}.varsigma"), Array2::from_shape_vec((1, ranges), raw).expect("row"));
        let w1 = store.add(format!("{name}.w1"), normal_matrix(rng, 3, hidden, 1.0 / 3f64.sqrt()));
        let b1 = store.add(format!("{name}.b1"), normal_matrix(rng, 1, hidden, 1.0));
        Self { shared, varsigma, w1, b1 }
    }

    pub fn head<B: Backend>(&self, be: &mut B, p: &ParamStore) -> FilterHead<B::T> {
        let raw = p.leaf(be, self.varsigma);
        FilterHead { inv_var: inv_var_from_raw(be, &raw), w1: p.leaf(be, self.w1), b1: p.leaf(be, self.b1) }
    }

    pub fn beta<B: Backend>(&self, be: &mut B, p: &ParamStore, x: &B::T, r2: &B::T) -> B::T {
        let head = self.head(be, p);
        self.shared.beta(be, p, &head, x, r2)
    }
}

/// `1 / softplus(raw)²`.
pub fn inv_var_from_raw<B: Backend>(be: &mut B, raw: &B::T) -> B::T {
    let s = be.unary(raw, Unary::Softplus);
    let s2 = be.unary(&s, Unary::Square);
    be.unary(&s2, Unary::Recip)
}

/// Squared row norms of a `(P, 3)` tensor as `(P, 1)`.
pub fn sq_norm<B: Backend>(be: &mut B, x: &B::T) -> B::T {
    let s = be.unary(x, Unary::Square);
    be.sum_cols(&s)
}
