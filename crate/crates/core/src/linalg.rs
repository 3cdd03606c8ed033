//! Small dense kernels used by the model.
//!
//! Every output entry is accumulated over the inner dimension in ascending
//! order, independently of the entry's row or column position. The decoder's
//! label-permutation equivariance relies on that (a row's result must not
//! depend on where the row sits in the matrix).

use ndarray::{Array2, ArrayView2};

fn contiguous<'a>(a: &'a ArrayView2<'a, f64>) -> ndarray::CowArray<'a, f64, ndarray::Ix2> {
    a.as_standard_layout()
}

/// `a · b`
pub fn matmul(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let (n, k) = a.dim();
    let (k2, m) = b.dim();
    assert_eq!(k, k2, "matmul inner dimensions differ");
    let a = contiguous(&a);
    let b = contiguous(&b);
    let (a, b) = (a.as_slice().unwrap(), b.as_slice().unwrap());
    let mut out = vec![0.0; n * m];
    for (i, out_row) in out.chunks_exact_mut(m.max(1)).enumerate().take(n) {
        for (kk, &aik) in a[i * k..(i + 1) * k].iter().enumerate() {
            let b_row = &b[kk * m..(kk + 1) * m];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
    Array2::from_shape_vec((n, m), out).unwrap()
}

/// `aᵀ · b`, accumulating over rows of both operands.
pub fn matmul_tn(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let (r, p) = a.dim();
    let (r2, q) = b.dim();
    assert_eq!(r, r2, "matmul_tn row counts differ");
    let a = contiguous(&a);
    let b = contiguous(&b);
    let (a, b) = (a.as_slice().unwrap(), b.as_slice().unwrap());
    let mut out = vec![0.0; p * q];
    for row in 0..r {
        let b_row = &b[row * q..(row + 1) * q];
        for (kk, &av) in a[row * p..(row + 1) * p].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in out[kk * q..(kk + 1) * q].iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    Array2::from_shape_vec((p, q), out).unwrap()
}

/// `a · bᵀ`
pub fn matmul_nt(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    assert_eq!(a.ncols(), b.ncols(), "matmul_nt inner dimensions differ");
    matmul(a, b.t())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn naive(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((a.nrows(), b.ncols()));
        for i in 0..a.nrows() {
            for j in 0..b.ncols() {
                for k in 0..a.ncols() {
                    out[[i, j]] += a[[i, k]] * b[[k, j]];
                }
            }
        }
        out
    }

    #[test]
    fn products_agree_with_naive_loops() {
        let a = array![[1.0, 2.0, -1.0], [0.5, 0.0, 3.0]];
        let b = array![[2.0, 1.0], [0.0, -1.0], [4.0, 0.25]];
        let expect = naive(&a, &b);
        assert_eq!(matmul(a.view(), b.view()), expect);
        assert_eq!(matmul_tn(a.t(), b.view()), expect);
        assert_eq!(matmul_nt(a.view(), b.t()), expect);
    }

    #[test]
    fn rows_do_not_depend_on_position() {
        let a = array![[0.1, 0.7, -0.3], [1e-3, 2.5, 0.9], [3.0, -1.0, 0.2]];
        let b = array![[0.3, 1.1], [-0.7, 0.2], [0.5, 0.5]];
        let full = matmul(a.view(), b.view());
        let swapped = matmul(a.select(ndarray::Axis(0), &[2, 0, 1]).view(), b.view());
        assert_eq!(full.row(2), swapped.row(0));
        assert_eq!(full.row(0), swapped.row(1));
    }
}
