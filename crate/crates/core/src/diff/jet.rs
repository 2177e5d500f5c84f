//! Forward propagation of value, gradient and Laplacian with respect to the
//! electron coordinates.
//!
//! Each tensor carries `val (B, r, c)`, `grad (B, D, r, c)` and
//! `lap (B, r, c)` where `D = 3N`. Tensors that do not depend on the
//! electrons (parameters, nuclei) carry no derivative arrays at all.

use std::rc::Rc;

use ndarray::{s, Array2, Array3, Array4, Axis, Zip};

use super::backend::{Backend, LeafKey, Unary};
use super::linalg::{batched_slogdet, bmm, broadcast3, broadcast_shape};

#[derive(Debug, Clone)]
pub struct JetData {
    pub val: Array3<f64>,
    pub deriv: Option<(Array4<f64>, Array3<f64>)>,
}

pub type Jet = Rc<JetData>;

pub struct JetBackend {
    batch: usize,
    dim: usize,
}

impl JetBackend {
    pub fn new(batch: usize, dim: usize) -> Self {
        Self { batch, dim }
    }

    /// Seeds the electron coordinates `(B, N, 3)` as independent variables.
    pub fn electrons(&mut self, e: Array3<f64>) -> Jet {
        let (b, n, three) = e.dim();
        assert_eq!(three, 3);
        assert_eq!(b, self.batch);
        assert_eq!(3 * n, self.dim);
        let mut grad = Array4::zeros((b, 3 * n, n, 3));
        for bi in 0..b {
            for i in 0..n {
                for k in 0..3 {
                    grad[[bi, 3 * i + k, i, k]] = 1.0;
                }
            }
        }
        Rc::new(JetData { val: e, deriv: Some((grad, Array3::zeros((b, n, 3)))) })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn full4(&self, g: &Array4<f64>, r: usize, c: usize) -> Array4<f64> {
        let shape = (self.batch, self.dim, r, c);
        if g.dim() == shape {
            g.clone()
        } else {
            g.broadcast(shape).expect("grad broadcast").to_owned()
        }
    }

    fn full3(&self, l: &Array3<f64>, r: usize, c: usize) -> Array3<f64> {
        broadcast3(l, (self.batch, r, c))
    }

    /// Applies a map that acts independently on each matrix of a batch to
    /// value, gradient slices and Laplacian.
    fn linear(&self, a: &Jet, f: impl Fn(&Array3<f64>) -> Array3<f64>) -> Jet {
        let val = f(&a.val);
        let deriv = a.deriv.as_ref().map(|(g, l)| {
            let (b, d, r, c) = g.dim();
            let g3 = g.as_standard_layout().into_owned().into_shape_with_order((b * d, r, c)).expect("grad layout");
            let g3 = f(&g3);
            let (_, r2, c2) = g3.dim();
            let g4 = g3.as_standard_layout().into_owned().into_shape_with_order((b, d, r2, c2)).expect("grad layout");
            (g4, f(l))
        });
        Rc::new(JetData { val, deriv })
    }

    fn expand_for_grad(&self, x: &Array3<f64>) -> Array3<f64> {
        // (Bx, r, c) -> (B * D, r, c) with each walker repeated D times.
        let (bx, r, c) = x.dim();
        if bx == 1 {
            return x.clone();
        }
        let rep = x.view().insert_axis(Axis(1));
        let rep = rep.broadcast((bx, self.dim, r, c)).expect("expand").to_owned();
        rep.into_shape_with_order((bx * self.dim, r, c)).expect("layout")
    }

    fn grad_as3(&self, g: &Array4<f64>) -> Array3<f64> {
        let (b, d, r, c) = g.dim();
        g.as_standard_layout().into_owned().into_shape_with_order((b * d, r, c)).expect("layout")
    }

    fn grad_from3(&self, g: Array3<f64>) -> Array4<f64> {
        let (bd, r, c) = g.dim();
        g.into_shape_with_order((bd / self.dim, self.dim, r, c)).expect("layout")
    }
}

fn sum_sq_over_d(g: &Array4<f64>) -> Array3<f64> {
    let (b, _, r, c) = g.dim();
    let mut out = Array3::zeros((b, r, c));
    for gd in g.axis_iter(Axis(1)) {
        Zip::from(&mut out).and(&gd).for_each(|o, &x| *o += x * x);
    }
    out
}

fn sum_prod_over_d(a: &Array4<f64>, b: &Array4<f64>) -> Array3<f64> {
    let shape = broadcast_shape(
        (a.dim().0, a.dim().2, a.dim().3),
        (b.dim().0, b.dim().2, b.dim().3),
    );
    let mut out = Array3::zeros(shape);
    for (ad, bd) in a.axis_iter(Axis(1)).zip(b.axis_iter(Axis(1))) {
        out += &(&ad * &bd);
    }
    out
}

impl Backend for JetBackend {
    type T = Jet;

    fn batch(&self) -> usize {
        self.batch
    }

    fn constant(&mut self, v: Array2<f64>) -> Jet {
        Rc::new(JetData { val: v.insert_axis(Axis(0)), deriv: None })
    }

    fn walker_constant(&mut self, v: Array3<f64>) -> Jet {
        Rc::new(JetData { val: v, deriv: None })
    }

    fn leaf(&mut self, _key: LeafKey, v: &Array2<f64>) -> Jet {
        self.constant(v.clone())
    }

    fn shape(&self, x: &Jet) -> (usize, usize) {
        let (_, r, c) = x.val.dim();
        (r, c)
    }

    fn value(&self, x: &Jet) -> Array3<f64> {
        x.val.clone()
    }

    fn add(&mut self, a: &Jet, b: &Jet) -> Jet {
        let val = &a.val + &b.val;
        let (_, r, c) = val.dim();
        let deriv = match (&a.deriv, &b.deriv) {
            (None, None) => None,
            (Some((g, l)), None) | (None, Some((g, l))) => Some((self.full4(g, r, c), self.full3(l, r, c))),
            (Some((ga, la)), Some((gb, lb))) => Some((self.full4(&(ga + gb), r, c), self.full3(&(la + lb), r, c))),
        };
        Rc::new(JetData { val, deriv })
    }

    fn sub(&mut self, a: &Jet, b: &Jet) -> Jet {
        let nb = self.scale(b, -1.0);
        self.add(a, &nb)
    }

    fn mul(&mut self, a: &Jet, b: &Jet) -> Jet {
        let val = &a.val * &b.val;
        let (_, r, c) = val.dim();
        let av4 = a.val.view().insert_axis(Axis(1));
        let bv4 = b.val.view().insert_axis(Axis(1));
        let deriv = match (&a.deriv, &b.deriv) {
            (None, None) => None,
            (Some((g, l)), None) => Some((self.full4(&(g * &bv4), r, c), self.full3(&(l * &b.val), r, c))),
            (None, Some((g, l))) => Some((self.full4(&(g * &av4), r, c), self.full3(&(l * &a.val), r, c))),
            (Some((ga, la)), Some((gb, lb))) => {
                let g = &(ga * &bv4) + &(gb * &av4);
                let cross = sum_prod_over_d(ga, gb);
                let l = &(&(la * &b.val) + &(lb * &a.val)) + &(cross * 2.0);
                Some((self.full4(&g, r, c), self.full3(&l, r, c)))
            }
        };
        Rc::new(JetData { val, deriv })
    }

    fn div(&mut self, a: &Jet, b: &Jet) -> Jet {
        let rb = self.unary(b, Unary::Recip);
        self.mul(a, &rb)
    }

    fn scale(&mut self, a: &Jet, s: f64) -> Jet {
        Rc::new(JetData {
            val: &a.val * s,
            deriv: a.deriv.as_ref().map(|(g, l)| (g * s, l * s)),
        })
    }

    fn offset(&mut self, a: &Jet, s: f64) -> Jet {
        Rc::new(JetData { val: &a.val + s, deriv: a.deriv.clone() })
    }

    fn unary(&mut self, a: &Jet, f: Unary) -> Jet {
        match &a.deriv {
            None => Rc::new(JetData { val: a.val.mapv(|x| f.value(x)), deriv: None }),
            Some((g, l)) => {
                let shape = a.val.dim();
                let mut val = Array3::zeros(shape);
                let mut d1 = Array3::zeros(shape);
                let mut d2 = Array3::zeros(shape);
                Zip::from(&mut val).and(&mut d1).and(&mut d2).and(&a.val).for_each(|v, p, q, &x| {
                    let (f0, f1, f2) = f.eval(x);
                    *v = f0;
                    *p = f1;
                    *q = f2;
                });
                let grad = g * &d1.view().insert_axis(Axis(1));
                let lap = &(l * &d1) + &(sum_sq_over_d(g) * &d2);
                Rc::new(JetData { val, deriv: Some((grad, lap)) })
            }
        }
    }

    fn matmul(&mut self, a: &Jet, b: &Jet) -> Jet {
        let val = bmm(&a.val, &b.val, false, false);
        let (_, r, c) = val.dim();
        let mut grad: Option<Array3<f64>> = None;
        let mut lap: Option<Array3<f64>> = None;
        let add3 = |slot: &mut Option<Array3<f64>>, x: Array3<f64>| match slot {
            Some(acc) => *acc += &x,
            None => *slot = Some(x),
        };
        if let Some((ga, la)) = &a.deriv {
            let bx = self.expand_for_grad(&b.val);
            add3(&mut grad, bmm(&self.grad_as3(ga), &bx, false, false));
            add3(&mut lap, bmm(la, &b.val, false, false));
        }
        if let Some((gb, lb)) = &b.deriv {
            let ax = self.expand_for_grad(&a.val);
            add3(&mut grad, bmm(&ax, &self.grad_as3(gb), false, false));
            add3(&mut lap, bmm(&a.val, lb, false, false));
        }
        if let (Some((ga, _)), Some((gb, _))) = (&a.deriv, &b.deriv) {
            let cross = bmm(&self.grad_as3(ga), &self.grad_as3(gb), false, false);
            let cross = self.grad_from3(cross).sum_axis(Axis(1));
            add3(&mut lap, cross * 2.0);
        }
        let deriv = match (grad, lap) {
            (Some(g), Some(l)) => Some((self.grad_from3(g), self.full3(&l, r, c))),
            _ => None,
        };
        Rc::new(JetData { val, deriv })
    }

    fn transpose(&mut self, a: &Jet) -> Jet {
        self.linear(a, |x| x.clone().permuted_axes([0, 2, 1]).as_standard_layout().into_owned())
    }

    fn reshape(&mut self, a: &Jet, rows: usize, cols: usize) -> Jet {
        self.linear(a, |x| {
            let b = x.dim().0;
            x.as_standard_layout().into_owned().into_shape_with_order((b, rows, cols)).expect("reshape size")
        })
    }

    fn sum_rows(&mut self, a: &Jet) -> Jet {
        self.linear(a, |x| x.sum_axis(Axis(1)).insert_axis(Axis(1)))
    }

    fn sum_cols(&mut self, a: &Jet) -> Jet {
        self.linear(a, |x| x.sum_axis(Axis(2)).insert_axis(Axis(2)))
    }

    fn gather_rows(&mut self, a: &Jet, idx: &[usize]) -> Jet {
        self.linear(a, |x| x.select(Axis(1), idx))
    }

    fn scatter_rows(&mut self, a: &Jet, idx: &[usize], n: usize) -> Jet {
        self.linear(a, |x| {
            let (b, _, c) = x.dim();
            let mut out = Array3::zeros((b, n, c));
            for (k, &dst) in idx.iter().enumerate() {
                let mut d = out.slice_mut(s![.., dst, ..]);
                d += &x.slice(s![.., k, ..]);
            }
            out
        })
    }

    fn slice_cols(&mut self, a: &Jet, start: usize, len: usize) -> Jet {
        self.linear(a, |x| x.slice(s![.., .., start..start + len]).to_owned())
    }

    fn concat_cols(&mut self, parts: &[Jet]) -> Jet {
        self.concat(parts, 2)
    }

    fn concat_rows(&mut self, parts: &[Jet]) -> Jet {
        self.concat(parts, 1)
    }

    fn slogdet(&mut self, a: &Jet) -> (Vec<f64>, Jet) {
        let (signs, logs, inv) = batched_slogdet(&a.val);
        let b = logs.len();
        let val = Array3::from_shape_vec((b, 1, 1), logs).expect("shape");
        let deriv = a.deriv.as_ref().map(|(g, l)| {
            let g = self.full4(g, a.val.dim().1, a.val.dim().2);
            let l = self.full3(l, a.val.dim().1, a.val.dim().2);
            let mut grad = Array4::zeros((self.batch, self.dim, 1, 1));
            let mut lap = Array3::zeros((self.batch, 1, 1));
            for bi in 0..self.batch {
                let ib = inv.index_axis(Axis(0), if inv.dim().0 == 1 { 0 } else { bi });
                // tr(A^-1 L)
                let mut acc = (&ib * &l.index_axis(Axis(0), bi).t()).sum();
                for d in 0..self.dim {
                    let gd = g.slice(s![bi, d, .., ..]);
                    let m = ib.dot(&gd);
                    grad[[bi, d, 0, 0]] = m.diag().sum();
                    acc -= (&m * &m.t()).sum();
                }
                lap[[bi, 0, 0]] = acc;
            }
            (grad, lap)
        });
        (signs, Rc::new(JetData { val, deriv }))
    }
}

impl JetBackend {
    fn concat(&self, parts: &[Jet], axis: usize) -> Jet {
        let batch = parts.iter().map(|p| p.val.dim().0).max().unwrap_or(1);
        let vals: Vec<Array3<f64>> = parts
            .iter()
            .map(|p| {
                let (_, r, c) = p.val.dim();
                broadcast3(&p.val, (batch, r, c))
            })
            .collect();
        let views: Vec<_> = vals.iter().map(|v| v.view()).collect();
        let val = ndarray::concatenate(Axis(axis), &views).expect("concat");
        if parts.iter().all(|p| p.deriv.is_none()) {
            return Rc::new(JetData { val, deriv: None });
        }
        let mut grads = Vec::with_capacity(parts.len());
        let mut laps = Vec::with_capacity(parts.len());
        for p in parts {
            let (_, r, c) = p.val.dim();
            match &p.deriv {
                Some((g, l)) => {
                    grads.push(self.full4(g, r, c));
                    laps.push(self.full3(l, r, c));
                }
                None => {
                    grads.push(Array4::zeros((self.batch, self.dim, r, c)));
                    laps.push(Array3::zeros((self.batch, r, c)));
                }
            }
        }
        let gv: Vec<_> = grads.iter().map(|g| g.view()).collect();
        let lv: Vec<_> = laps.iter().map(|l| l.view()).collect();
        let grad = ndarray::concatenate(Axis(axis + 1), &gv).expect("concat grad");
        let lap = ndarray::concatenate(Axis(axis), &lv).expect("concat lap");
        let val = broadcast3(&val, (self.batch, val.dim().1, val.dim().2));
        Rc::new(JetData { val, deriv: Some((grad, lap)) })
    }
}
