use ndarray::{Array2, Array3};

/// Elementwise nonlinearities with their first two derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Silu,
    Sigmoid,
    Tanh,
    Softplus,
    Exp,
    Log,
    Sqrt,
    Square,
    Recip,
    /// `log(1 + x) / x`, continuous through `x = 0` where it equals 1.
    Log1pOverX,
}

impl Unary {
    /// Returns `(f(x), f'(x), f''(x))`.
    pub fn eval(self, x: f64) -> (f64, f64, f64) {
        match self {
            Unary::Silu => {
                let s = sigmoid(x);
                let d = s + x * s * (1.0 - s);
                let dd = s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s));
                (x * s, d, dd)
            }
            Unary::Sigmoid => {
                let s = sigmoid(x);
                (s, s * (1.0 - s), s * (1.0 - s) * (1.0 - 2.0 * s))
            }
            Unary::Tanh => {
                let t = x.tanh();
                let d = 1.0 - t * t;
                (t, d, -2.0 * t * d)
            }
            Unary::Softplus => {
                let s = sigmoid(x);
                (softplus(x), s, s * (1.0 - s))
            }
            Unary::Exp => {
                let e = x.exp();
                (e, e, e)
            }
            Unary::Log => (x.ln(), 1.0 / x, -1.0 / (x * x)),
            Unary::Sqrt => {
                let r = x.sqrt();
                (r, 0.5 / r, -0.25 / (r * x))
            }
            Unary::Square => (x * x, 2.0 * x, 2.0),
            Unary::Recip => {
                let r = 1.0 / x;
                (r, -r * r, 2.0 * r * r * r)
            }
            Unary::Log1pOverX => log1p_over_x(x),
        }
    }

    pub fn value(self, x: f64) -> f64 {
        match self {
            Unary::Silu => x * sigmoid(x),
            Unary::Sigmoid => sigmoid(x),
            Unary::Tanh => x.tanh(),
            Unary::Softplus => softplus(x),
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Sqrt => x.sqrt(),
            Unary::Square => x * x,
            Unary::Recip => 1.0 / x,
            Unary::Log1pOverX => log1p_over_x(x).0,
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        self.eval(x).1
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for positive arguments.
pub fn softplus_inv(y: f64) -> f64 {
    assert!(y > 0.0);
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

fn log1p_over_x(r: f64) -> (f64, f64, f64) {
    if r.abs() < 0.05 {
        // Alternating series of log(1+r)/r = sum (-r)^k / (k+1).
        let (mut f, mut d, mut dd) = (0.0, 0.0, 0.0);
        let mut pk = 1.0; // r^k
        let mut pk1 = 0.0; // r^(k-1)
        let mut pk2 = 0.0; // r^(k-2)
        for k in 0..24 {
            let sgn = if k % 2 == 0 { 1.0 } else { -1.0 };
            let kf = k as f64;
            f += sgn * pk / (kf + 1.0);
            if k >= 1 {
                d += sgn * kf * pk1 / (kf + 1.0);
            }
            if k >= 2 {
                dd += sgn * kf * (kf - 1.0) * pk2 / (kf + 1.0);
            }
            pk2 = pk1;
            pk1 = if k == 0 { 1.0 } else { pk1 * r };
            pk *= r;
        }
        (f, d, dd)
    } else {
        let l = r.ln_1p();
        let f = l / r;
        let d = 1.0 / (r * (1.0 + r)) - l / (r * r);
        let dd = -(1.0 + 2.0 * r) / (r * r * (1.0 + r) * (1.0 + r)) - 1.0 / (r * r * (1.0 + r))
            + 2.0 * l / (r * r * r);
        (f, d, dd)
    }
}

/// Tensor operations shared by every evaluation strategy.
///
/// All tensors are matrices from the point of view of one walker; backends
/// carry an implicit leading batch axis (size 1 for values shared by every
/// walker). Elementwise binary ops broadcast rows and columns of extent 1.
pub trait Backend {
    type T: Clone;

    /// Number of walkers evaluated together.
    fn batch(&self) -> usize;

    /// A value shared by all walkers with no derivative.
    fn constant(&mut self, v: Array2<f64>) -> Self::T;
    /// A per-walker value with no derivative, shaped `(batch, rows, cols)`.
    fn walker_constant(&mut self, v: Array3<f64>) -> Self::T;
    /// A shared differentiable leaf (parameter). `key` identifies the leaf
    /// when gradients are collected.
    fn leaf(&mut self, key: LeafKey, v: &Array2<f64>) -> Self::T;

    fn shape(&self, x: &Self::T) -> (usize, usize);
    /// Current values, `(1 | batch, rows, cols)`.
    fn value(&self, x: &Self::T) -> Array3<f64>;

    fn add(&mut self, a: &Self::T, b: &Self::T) -> Self::T;
    fn sub(&mut self, a: &Self::T, b: &Self::T) -> Self::T;
    fn mul(&mut self, a: &Self::T, b: &Self::T) -> Self::T;
    fn div(&mut self, a: &Self::T, b: &Self::T) -> Self::T;
    fn scale(&mut self, a: &Self::T, s: f64) -> Self::T;
    fn offset(&mut self, a: &Self::T, s: f64) -> Self::T;
    fn unary(&mut self, a: &Self::T, f: Unary) -> Self::T;

    fn matmul(&mut self, a: &Self::T, b: &Self::T) -> Self::T;
    fn transpose(&mut self, a: &Self::T) -> Self::T;
    /// Row-major reshape.
    fn reshape(&mut self, a: &Self::T, rows: usize, cols: usize) -> Self::T;
    /// `(r, c) -> (1, c)`.
    fn sum_rows(&mut self, a: &Self::T) -> Self::T;
    /// `(r, c) -> (r, 1)`.
    fn sum_cols(&mut self, a: &Self::T) -> Self::T;
    /// Output row `k` is input row `idx[k]`.
    fn gather_rows(&mut self, a: &Self::T, idx: &[usize]) -> Self::T;
    /// Output row `idx[k]` accumulates input row `k`; output has `n` rows.
    fn scatter_rows(&mut self, a: &Self::T, idx: &[usize], n: usize) -> Self::T;
    fn slice_cols(&mut self, a: &Self::T, start: usize, len: usize) -> Self::T;
    fn concat_cols(&mut self, parts: &[Self::T]) -> Self::T;
    fn concat_rows(&mut self, parts: &[Self::T]) -> Self::T;
    /// Per-walker `(sign, log|det a|)`; the log is a `(1, 1)` tensor.
    fn slogdet(&mut self, a: &Self::T) -> (Vec<f64>, Self::T);

    fn silu(&mut self, a: &Self::T) -> Self::T {
        self.unary(a, Unary::Silu)
    }

    fn sum_all(&mut self, a: &Self::T) -> Self::T {
        let r = self.sum_rows(a);
        self.sum_cols(&r)
    }

    fn neg(&mut self, a: &Self::T) -> Self::T {
        self.scale(a, -1.0)
    }
}

/// Identifies a differentiable leaf: a slot of the flat parameter vector or
/// an externally supplied tensor (e.g. a reparametrized parameter block).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LeafKey {
    Param(usize),
    External(usize),
}
