use ndarray::Array1;

use super::EncoderParams;
use crate::data_io::SparseRow;

/// Hidden pre-activation for a sparse row: `b1 + Σ_k x_k · W1[k]`, summed in
/// ascending feature order.
pub(crate) fn hidden_preactivation(row: &SparseRow, enc: &EncoderParams) -> Array1<f64> {
    let mut pre = enc.b1.clone();
    for (k, x) in row.iter() {
        pre.scaled_add(x, &enc.w1.row(k));
    }
    pre
}

pub(crate) fn relu(pre: &Array1<f64>) -> Array1<f64> {
    pre.mapv(|v| v.max(0.0))
}

/// Latent vector `z = relu(x·W1 + b1)·W2 + b2`.
pub fn encode(row: &SparseRow, enc: &EncoderParams) -> Array1<f64> {
    let hidden = relu(&hidden_preactivation(row, enc));
    hidden.dot(&enc.w2) + &enc.b2
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array1, Array2};

    fn params(s: usize, h: usize, d: usize) -> EncoderParams {
        EncoderParams {
            w1: Array2::from_shape_fn((s, h), |(i, j)| ((i * h + j) as f64 * 0.37).sin()),
            b1: Array1::zeros(h),
            w2: Array2::from_shape_fn((h, d), |(i, j)| ((i * d + j) as f64 * 0.11).cos()),
            b2: Array1::zeros(d),
        }
    }

    #[test]
    fn zero_row_with_zero_biases_encodes_to_zero() {
        let enc = params(4, 3, 2);
        let z = encode(&SparseRow::default(), &enc);
        assert_eq!(z, Array1::<f64>::zeros(2));
    }

    #[test]
    fn encoding_is_deterministic() {
        let enc = params(5, 4, 3);
        let row = SparseRow::from_pairs(vec![(1, 0.5), (4, -2.0)]).unwrap();
        assert_eq!(encode(&row, &enc), encode(&row, &enc));
    }

    #[test]
    fn first_layer_is_linear() {
        let enc = params(5, 4, 3);
        let row = SparseRow::from_pairs(vec![(0, 0.25), (3, 1.5)]).unwrap();
        let doubled = SparseRow::from_pairs(vec![(0, 0.5), (3, 3.0)]).unwrap();
        let a = hidden_preactivation(&row, &enc);
        let b = hidden_preactivation(&doubled, &enc);
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((2.0 * x - y).abs() < 1e-12);
        }
    }
}
