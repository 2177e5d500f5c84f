//! Reverse-mode evaluation over batched tensors.
//!
//! Values are stored as `(batch, rows, cols)` arrays where shared values have
//! batch extent 1. A backward pass is seeded with an arbitrary batch of
//! adjoints; every adjoint keeps that batch axis, so gradients with respect to
//! shared leaves come out per walker (one Jacobian row per seed).

use std::collections::BTreeMap;
use std::rc::Rc;

use ndarray::{s, Array2, Array3, Axis, Zip};

use super::backend::{Backend, LeafKey, Unary};
use super::linalg::{batched_slogdet, bmm, broadcast3, broadcast_shape, reduce_to};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Const,
    Leaf(LeafKey),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    Unary(usize, Unary),
    MatMul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    SumRows(usize),
    SumCols(usize),
    Gather(usize, Rc<[usize]>),
    Scatter(usize, Rc<[usize]>),
    SliceCols(usize, usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    /// Stores the transposed inverse of the argument.
    Logdet(usize, Array3<f64>),
}

struct Node {
    value: Array3<f64>,
    op: Op,
}

/// Evaluation tape. With `record == false` it only computes values.
pub struct Tape {
    batch: usize,
    record: bool,
    nodes: Vec<Node>,
}

/// Adjoints of differentiable leaves, one `(seed_batch, rows, cols)` array per key.
#[derive(Debug, Default)]
pub struct LeafGrads {
    pub grads: BTreeMap<LeafKey, Array3<f64>>,
}

impl LeafGrads {
    pub fn get(&self, key: LeafKey) -> Option<&Array3<f64>> {
        self.grads.get(&key)
    }
}

impl Tape {
    pub fn new(batch: usize) -> Self {
        Self { batch, record: true, nodes: Vec::new() }
    }

    /// Value-only evaluation; `backward` is unavailable.
    pub fn values_only(batch: usize) -> Self {
        Self { batch, record: false, nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array3<f64>, op: Op) -> Var {
        let b = value.dim().0;
        debug_assert!(b == 1 || b == self.batch, "batch {b} on a tape of batch {}", self.batch);
        let op = if self.record { op } else { Op::Const };
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: &Var) -> &Array3<f64> {
        &self.nodes[v.0].value
    }

    pub fn value_ref(&self, v: &Var) -> &Array3<f64> {
        self.val(v)
    }

    /// Runs the reverse pass. Seeds are `(node, adjoint)` pairs whose adjoints
    /// share a batch extent; returned leaf gradients carry that extent.
    pub fn backward(&self, seeds: &[(Var, Array3<f64>)]) -> LeafGrads {
        assert!(self.record, "backward on a value-only tape");
        let seed_batch = seeds.first().map(|s| s.1.dim().0).unwrap_or(1);
        let mut adj: Vec<Option<Array3<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            let (_, r, c) = self.val(v).dim();
            assert_eq!(g.dim(), (seed_batch, r, c), "seed shape");
            accumulate(&mut adj[v.0], g.clone());
        }
        let mut out = LeafGrads::default();
        for i in (0..self.nodes.len()).rev() {
            let Some(g) = adj[i].take() else { continue };
            let shape_of = |k: usize| {
                let (_, r, c) = self.nodes[k].value.dim();
                (r, c)
            };
            match &self.nodes[i].op {
                Op::Const => {}
                Op::Leaf(key) => {
                    match out.grads.get_mut(key) {
                        Some(acc) => *acc += &g,
                        None => {
                            out.grads.insert(*key, g);
                        }
                    }
                }
                Op::Add(a, b) => {
                    let (ra, ca) = shape_of(*a);
                    let (rb, cb) = shape_of(*b);
                    accumulate(&mut adj[*a], reduce_to(g.clone(), ra, ca));
                    accumulate(&mut adj[*b], reduce_to(g, rb, cb));
                }
                Op::Sub(a, b) => {
                    let (ra, ca) = shape_of(*a);
                    let (rb, cb) = shape_of(*b);
                    accumulate(&mut adj[*a], reduce_to(g.clone(), ra, ca));
                    accumulate(&mut adj[*b], reduce_to(-g, rb, cb));
                }
                Op::Mul(a, b) => {
                    let (ra, ca) = shape_of(*a);
                    let (rb, cb) = shape_of(*b);
                    let ga = &g * &self.nodes[*b].value;
                    let gb = &g * &self.nodes[*a].value;
                    accumulate(&mut adj[*a], reduce_to(ga, ra, ca));
                    accumulate(&mut adj[*b], reduce_to(gb, rb, cb));
                }
                Op::Div(a, b) => {
                    let (ra, ca) = shape_of(*a);
                    let (rb, cb) = shape_of(*b);
                    let bv = &self.nodes[*b].value;
                    let ga = &g / bv;
                    let gb = -(&ga * &self.nodes[i].value);
                    accumulate(&mut adj[*a], reduce_to(ga, ra, ca));
                    accumulate(&mut adj[*b], reduce_to(gb, rb, cb));
                }
                Op::Scale(a, s) => accumulate(&mut adj[*a], g * *s),
                Op::Offset(a) => accumulate(&mut adj[*a], g),
                Op::Unary(a, f) => {
                    let x = &self.nodes[*a].value;
                    let d = x.mapv(|v| f.derivative(v));
                    accumulate(&mut adj[*a], g * &d);
                }
                Op::MatMul(a, b) => {
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    let ga = bmm(&g, bv, false, true);
                    let gb = bmm(av, &g, true, false);
                    accumulate(&mut adj[*a], ga);
                    accumulate(&mut adj[*b], gb);
                }
                Op::Transpose(a) => {
                    let t = g.permuted_axes([0, 2, 1]).as_standard_layout().into_owned();
                    accumulate(&mut adj[*a], t);
                }
                Op::Reshape(a) => {
                    let (r, c) = shape_of(*a);
                    let b = g.dim().0;
                    let g = g.as_standard_layout().into_owned();
                    accumulate(&mut adj[*a], g.into_shape_with_order((b, r, c)).expect("reshape"));
                }
                Op::SumRows(a) => {
                    let (r, c) = shape_of(*a);
                    let b = g.dim().0;
                    accumulate(&mut adj[*a], broadcast3(&g, (b, r, c)));
                }
                Op::SumCols(a) => {
                    let (r, c) = shape_of(*a);
                    let b = g.dim().0;
                    accumulate(&mut adj[*a], broadcast3(&g, (b, r, c)));
                }
                Op::Gather(a, idx) => {
                    let (r, c) = shape_of(*a);
                    accumulate(&mut adj[*a], scatter(&g, idx, r, c));
                }
                Op::Scatter(a, idx) => {
                    accumulate(&mut adj[*a], g.select(Axis(1), idx));
                }
                Op::SliceCols(a, start) => {
                    let (r, c) = shape_of(*a);
                    let b = g.dim().0;
                    let len = g.dim().2;
                    let mut full = Array3::zeros((b, r, c));
                    full.slice_mut(s![.., .., *start..*start + len]).assign(&g);
                    accumulate(&mut adj[*a], full);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let (_, c) = shape_of(*p);
                        let piece = g.slice(s![.., .., off..off + c]).to_owned();
                        accumulate(&mut adj[*p], piece);
                        off += c;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let (r, _) = shape_of(*p);
                        let piece = g.slice(s![.., off..off + r, ..]).to_owned();
                        accumulate(&mut adj[*p], piece);
                        off += r;
                    }
                }
                Op::Logdet(a, inv_t) => {
                    // g: (B, 1, 1); d log|det A| / dA = A^{-T}.
                    let gb = g.dim().0;
                    let (_, n, _) = inv_t.dim();
                    let mut ga = broadcast3(inv_t, (gb.max(inv_t.dim().0), n, n));
                    Zip::from(ga.outer_iter_mut())
                        .and(g.outer_iter())
                        .for_each(|mut m, gi| m *= gi[[0, 0]]);
                    accumulate(&mut adj[*a], ga);
                }
            }
        }
        out
    }
}

fn accumulate(slot: &mut Option<Array3<f64>>, g: Array3<f64>) {
    match slot {
        Some(acc) => {
            if acc.dim() == g.dim() {
                *acc += &g;
            } else {
                let shape = broadcast_shape(acc.dim(), g.dim());
                let mut full = broadcast3(acc, shape);
                full += &g;
                *acc = full;
            }
        }
        None => *slot = Some(g),
    }
}

fn scatter(x: &Array3<f64>, idx: &[usize], n: usize, cols: usize) -> Array3<f64> {
    let b = x.dim().0;
    let mut out = Array3::zeros((b, n, cols));
    for (k, &dst) in idx.iter().enumerate() {
        let src = x.slice(s![.., k, ..]);
        let mut d = out.slice_mut(s![.., dst, ..]);
        d += &src;
    }
    out
}

fn concat(values: &[&Array3<f64>], axis: usize) -> Array3<f64> {
    let batch = values.iter().map(|v| v.dim().0).max().unwrap_or(1);
    let full: Vec<Array3<f64>> = values
        .iter()
        .map(|v| {
            let (_, r, c) = v.dim();
            broadcast3(v, (batch, r, c))
        })
        .collect();
    let views: Vec<_> = full.iter().map(|v| v.view()).collect();
    ndarray::concatenate(Axis(axis), &views).expect("concat shapes")
}

impl Backend for Tape {
    type T = Var;

    fn batch(&self) -> usize {
        self.batch
    }

    fn constant(&mut self, v: Array2<f64>) -> Var {
        self.push(v.insert_axis(Axis(0)), Op::Const)
    }

    fn walker_constant(&mut self, v: Array3<f64>) -> Var {
        assert_eq!(v.dim().0, self.batch);
        self.push(v, Op::Const)
    }

    fn leaf(&mut self, key: LeafKey, v: &Array2<f64>) -> Var {
        self.push(v.clone().insert_axis(Axis(0)), Op::Leaf(key))
    }

    fn shape(&self, x: &Var) -> (usize, usize) {
        let (_, r, c) = self.val(x).dim();
        (r, c)
    }

    fn value(&self, x: &Var) -> Array3<f64> {
        self.val(x).clone()
    }

    fn add(&mut self, a: &Var, b: &Var) -> Var {
        let v = self.val(a) + self.val(b);
        self.push(v, Op::Add(a.0, b.0))
    }

    fn sub(&mut self, a: &Var, b: &Var) -> Var {
        let v = self.val(a) - self.val(b);
        self.push(v, Op::Sub(a.0, b.0))
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Var {
        let v = self.val(a) * self.val(b);
        self.push(v, Op::Mul(a.0, b.0))
    }

    fn div(&mut self, a: &Var, b: &Var) -> Var {
        let v = self.val(a) / self.val(b);
        self.push(v, Op::Div(a.0, b.0))
    }

    fn scale(&mut self, a: &Var, s: f64) -> Var {
        let v = self.val(a) * s;
        self.push(v, Op::Scale(a.0, s))
    }

    fn offset(&mut self, a: &Var, s: f64) -> Var {
        let v = self.val(a) + s;
        self.push(v, Op::Offset(a.0))
    }

    fn unary(&mut self, a: &Var, f: Unary) -> Var {
        let v = self.val(a).mapv(|x| f.value(x));
        self.push(v, Op::Unary(a.0, f))
    }

    fn matmul(&mut self, a: &Var, b: &Var) -> Var {
        let v = bmm(self.val(a), self.val(b), false, false);
        self.push(v, Op::MatMul(a.0, b.0))
    }

    fn transpose(&mut self, a: &Var) -> Var {
        let v = self.val(a).clone().permuted_axes([0, 2, 1]).as_standard_layout().into_owned();
        self.push(v, Op::Transpose(a.0))
    }

    fn reshape(&mut self, a: &Var, rows: usize, cols: usize) -> Var {
        let x = self.val(a);
        let b = x.dim().0;
        let v = x.as_standard_layout().into_owned().into_shape_with_order((b, rows, cols)).expect("reshape size");
        self.push(v, Op::Reshape(a.0))
    }

    fn sum_rows(&mut self, a: &Var) -> Var {
        let v = self.val(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(v, Op::SumRows(a.0))
    }

    fn sum_cols(&mut self, a: &Var) -> Var {
        let v = self.val(a).sum_axis(Axis(2)).insert_axis(Axis(2));
        self.push(v, Op::SumCols(a.0))
    }

    fn gather_rows(&mut self, a: &Var, idx: &[usize]) -> Var {
        let v = self.val(a).select(Axis(1), idx);
        self.push(v, Op::Gather(a.0, idx.into()))
    }

    fn scatter_rows(&mut self, a: &Var, idx: &[usize], n: usize) -> Var {
        let x = self.val(a);
        assert_eq!(x.dim().1, idx.len());
        let v = scatter(x, idx, n, x.dim().2);
        self.push(v, Op::Scatter(a.0, idx.into()))
    }

    fn slice_cols(&mut self, a: &Var, start: usize, len: usize) -> Var {
        let v = self.val(a).slice(s![.., .., start..start + len]).to_owned();
        self.push(v, Op::SliceCols(a.0, start))
    }

    fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let vals: Vec<&Array3<f64>> = parts.iter().map(|p| self.val(p)).collect();
        let v = concat(&vals, 2);
        self.push(v, Op::ConcatCols(parts.iter().map(|p| p.0).collect()))
    }

    fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let vals: Vec<&Array3<f64>> = parts.iter().map(|p| self.val(p)).collect();
        let v = concat(&vals, 1);
        self.push(v, Op::ConcatRows(parts.iter().map(|p| p.0).collect()))
    }

    fn slogdet(&mut self, a: &Var) -> (Vec<f64>, Var) {
        let x = self.val(a);
        let (signs, logs, inv) = batched_slogdet(x);
        let b = logs.len();
        let v = Array3::from_shape_vec((b, 1, 1), logs).expect("shape");
        let op = if self.record {
            Op::Logdet(a.0, inv.permuted_axes([0, 2, 1]).as_standard_layout().into_owned())
        } else {
            Op::Const
        };
        let node = self.push(v, op);
        (signs, node)
    }
}
