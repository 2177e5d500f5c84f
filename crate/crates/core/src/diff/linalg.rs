//! Small dense kernels: LU factorization, signed log-determinants, inverses
//! and batched matrix products over `(batch, rows, cols)` arrays.

use ndarray::{linalg::general_mat_mul, s, Array2, Array3, ArrayView2, Axis};

/// LU factorization with partial pivoting of a square matrix.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
    parity: f64,
    singular: bool,
}

impl Lu {
    pub fn new(a: ArrayView2<'_, f64>) -> Self {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "LU of a non-square matrix");
        let mut lu: Vec<f64> = a.iter().copied().collect();
        if !a.is_standard_layout() {
            lu = (0..n * n).map(|k| a[[k / n, k % n]]).collect();
        }
        let mut perm: Vec<usize> = (0..n).collect();
        let mut parity = 1.0;
        let mut singular = false;
        for k in 0..n {
            let mut piv = k;
            let mut best = lu[k * n + k].abs();
            for r in k + 1..n {
                let v = lu[r * n + k].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best == 0.0 {
                singular = true;
                continue;
            }
            if piv != k {
                for c in 0..n {
                    lu.swap(k * n + c, piv * n + c);
                }
                perm.swap(k, piv);
                parity = -parity;
            }
            let d = lu[k * n + k];
            for r in k + 1..n {
                let f = lu[r * n + k] / d;
                lu[r * n + k] = f;
                if f != 0.0 {
                    for c in k + 1..n {
                        lu[r * n + c] -= f * lu[k * n + c];
                    }
                }
            }
        }
        Self { n, lu, perm, parity, singular }
    }

    pub fn is_singular(&self) -> bool {
        self.singular
    }

    /// `(sign, log|det|)`; a singular matrix gives `(0, -inf)`.
    pub fn slogdet(&self) -> (f64, f64) {
        if self.singular {
            return (0.0, f64::NEG_INFINITY);
        }
        let mut sign = self.parity;
        let mut log = 0.0;
        for k in 0..self.n {
            let d = self.lu[k * self.n + k];
            if d < 0.0 {
                sign = -sign;
            }
            log += d.abs().ln();
        }
        (sign, log)
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for r in 0..n {
            let mut acc = y[r];
            for c in 0..r {
                acc -= self.lu[r * n + c] * y[c];
            }
            y[r] = acc;
        }
        for r in (0..n).rev() {
            let mut acc = y[r];
            for c in r + 1..n {
                acc -= self.lu[r * n + c] * y[c];
            }
            y[r] = acc / self.lu[r * n + r];
        }
        b.copy_from_slice(&y);
    }

    pub fn inverse(&self) -> Array2<f64> {
        let n = self.n;
        let mut inv = Array2::zeros((n, n));
        let mut col = vec![0.0; n];
        for j in 0..n {
            col.iter_mut().for_each(|v| *v = 0.0);
            col[j] = 1.0;
            self.solve_in_place(&mut col);
            for i in 0..n {
                inv[[i, j]] = col[i];
            }
        }
        inv
    }
}

pub fn slogdet(a: ArrayView2<'_, f64>) -> (f64, f64) {
    Lu::new(a).slogdet()
}

pub fn det(a: ArrayView2<'_, f64>) -> f64 {
    let (s, l) = slogdet(a);
    s * l.exp()
}

/// Batched matrix product with batch broadcasting: each operand has batch
/// size 1 or a common size `B`.
pub fn bmm(a: &Array3<f64>, b: &Array3<f64>, ta: bool, tb: bool) -> Array3<f64> {
    let (ba, ar, ac) = a.dim();
    let (bb, br, bc) = b.dim();
    let (m, k1) = if ta { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if tb { (bc, br) } else { (br, bc) };
    assert_eq!(k1, k2, "bmm inner dimension mismatch: {:?} x {:?}", a.dim(), b.dim());
    assert!(ba == bb || ba == 1 || bb == 1, "bmm batch mismatch");
    let batch = ba.max(bb);

    // Batched left operand against a shared right operand collapses into one GEMM.
    if !ta && bb == 1 && ba > 1 {
        let a2 = a.as_standard_layout();
        let a2 = a2.view().into_shape_with_order((ba * ar, ac)).expect("contiguous");
        let b2 = b.index_axis(Axis(0), 0);
        let b2 = if tb { b2.t() } else { b2 };
        let mut out = Array2::zeros((ba * ar, n));
        general_mat_mul(1.0, &a2, &b2, 0.0, &mut out);
        return out.into_shape_with_order((ba, ar, n)).expect("contiguous");
    }

    let mut out = Array3::zeros((batch, m, n));
    for i in 0..batch {
        let av = a.index_axis(Axis(0), if ba == 1 { 0 } else { i });
        let bv = b.index_axis(Axis(0), if bb == 1 { 0 } else { i });
        let av = if ta { av.t() } else { av };
        let bv = if tb { bv.t() } else { bv };
        let mut o = out.index_axis_mut(Axis(0), i);
        general_mat_mul(1.0, &av, &bv, 0.0, &mut o);
    }
    out
}

/// Sums `x` down to `(x.batch, rows, cols)`, collapsing row/column axes that
/// were broadcast. The batch axis is never reduced.
pub fn reduce_to(x: Array3<f64>, rows: usize, cols: usize) -> Array3<f64> {
    let (_, r, c) = x.dim();
    let mut x = x;
    if rows == 1 && r != 1 {
        x = x.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    if cols == 1 && c != 1 {
        x = x.sum_axis(Axis(2)).insert_axis(Axis(2));
    }
    debug_assert_eq!((x.dim().1, x.dim().2), (rows, cols));
    x
}

/// Broadcast `(b, r, c)` to an explicit shape and materialize it.
pub fn broadcast3(x: &Array3<f64>, shape: (usize, usize, usize)) -> Array3<f64> {
    if x.dim() == shape {
        return x.clone();
    }
    x.broadcast(shape)
        .unwrap_or_else(|| panic!("cannot broadcast {:?} to {:?}", x.dim(), shape))
        .to_owned()
}

/// Broadcast shape of two `(b, r, c)` operands.
pub fn broadcast_shape(a: (usize, usize, usize), b: (usize, usize, usize)) -> (usize, usize, usize) {
    fn one(x: usize, y: usize) -> usize {
        if x == y || y == 1 {
            x
        } else if x == 1 {
            y
        } else {
            panic!("incompatible broadcast {x} vs {y}")
        }
    }
    (one(a.0, b.0), one(a.1, b.1), one(a.2, b.2))
}

/// Per-walker signed log-determinant and inverse of a batch of square matrices.
pub fn batched_slogdet(a: &Array3<f64>) -> (Vec<f64>, Vec<f64>, Array3<f64>) {
    let (b, n, _) = a.dim();
    let mut signs = Vec::with_capacity(b);
    let mut logs = Vec::with_capacity(b);
    let mut inv = Array3::zeros((b, n, n));
    for i in 0..b {
        let lu = Lu::new(a.index_axis(Axis(0), i));
        let (s, l) = lu.slogdet();
        signs.push(s);
        logs.push(l);
        if s != 0.0 {
            inv.slice_mut(s![i, .., ..]).assign(&lu.inverse());
        } else {
            inv.slice_mut(s![i, .., ..]).fill(f64::NAN);
        }
    }
    (signs, logs, inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn slogdet_matches_closed_form() {
        let a = array![[0.0, 2.0, 1.0], [1.0, 1.0, 0.0], [3.0, 0.0, 1.0]];
        // det = 0*(1) - 2*(1-0) + 1*(0-3) = -5
        let (s, l) = slogdet(a.view());
        assert_eq!(s, -1.0);
        assert!((l - 5f64.ln()).abs() < 1e-14);
        assert!((det(a.view()) + 5.0).abs() < 1e-12);
    }

    #[test]
    fn singular_matrix_reports_zero_sign() {
        let a = array![[1.0, 2.0], [2.0, 4.0]];
        let (s, l) = slogdet(a.view());
        assert_eq!(s, 0.0);
        assert_eq!(l, f64::NEG_INFINITY);
    }

    #[test]
    fn inverse_roundtrip() {
        let a = array![[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]];
        let inv = Lu::new(a.view()).inverse();
        let eye = a.dot(&inv);
        for i in 0..3 {
            for j in 0..3 {
                let t = if i == j { 1.0 } else { 0.0 };
                assert!((eye[[i, j]] - t).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn bmm_broadcasts_and_transposes() {
        let a = Array3::from_shape_fn((3, 2, 4), |(b, i, j)| (b * 8 + i * 4 + j) as f64 * 0.1);
        let w = Array3::from_shape_fn((1, 4, 5), |(_, i, j)| (i as f64) - 0.3 * j as f64);
        let fast = bmm(&a, &w, false, false);
        for b in 0..3 {
            let expect = a.index_axis(Axis(0), b).dot(&w.index_axis(Axis(0), 0));
            assert!((&fast.index_axis(Axis(0), b) - &expect).iter().all(|d| d.abs() < 1e-12));
        }
        let wt = bmm(&w, &a, true, true);
        for b in 0..3 {
            let expect = w.index_axis(Axis(0), 0).t().dot(&a.index_axis(Axis(0), b).t());
            assert!((&wt.index_axis(Axis(0), b) - &expect).iter().all(|d| d.abs() < 1e-12));
        }
    }
}
