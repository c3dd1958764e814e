use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Probabilities are clamped to `[BCE_EPSILON, 1 - BCE_EPSILON]` before the log.
pub const BCE_EPSILON: f64 = 1e-12;

/// Sample-weighted binary cross-entropy.
///
/// Returns the weighted mean `1/N Σ w_i·−[y_i ln p_i + (1−y_i) ln(1−p_i)]`
/// and its gradient with respect to each prediction.
pub fn bce_loss(predictions: &Matrix, labels: &Matrix, sample_weights: &Matrix) -> Result<(f64, Matrix)> {
    let shape = predictions.shape();
    labels.expect_shape("labels", shape.0, shape.1)?;
    sample_weights.expect_shape("sample_weights", shape.0, shape.1)?;
    if let Some(bad) = labels.as_slice().iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::Validation(format!("label {bad} is not 0 or 1")));
    }
    let n = predictions.len();
    if n == 0 {
        return Err(Error::Validation("empty prediction batch".into()));
    }
    let nf = n as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(shape.0, shape.1);
    for (((g, &p), &y), &w) in grad
        .as_mut_slice()
        .iter_mut()
        .zip(predictions.as_slice())
        .zip(labels.as_slice())
        .zip(sample_weights.as_slice())
    {
        let p = p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
        if y == 1.0 {
            loss -= w * p.ln();
            *g = -w / (p * nf);
        } else {
            loss -= w * (1.0 - p).ln();
            *g = w / ((1.0 - p) * nf);
        }
    }
    Ok((loss / nf, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn col(v: &[f64]) -> Matrix {
        Matrix::from_vec(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn half_everywhere_is_ln2() {
        let (l, _) = bce_loss(&col(&[0.5; 4]), &col(&[1.0, 0.0, 1.0, 0.0]), &col(&[1.0; 4])).unwrap();
        assert!((l - LN_2).abs() < 1e-15);
    }

    #[test]
    fn perfect_predictions_near_zero() {
        let y = col(&[1.0, 0.0, 0.0, 1.0]);
        let (l, _) = bce_loss(&y, &y, &col(&[1.0; 4])).unwrap();
        assert!(l <= 1e-11, "{l}");
    }

    #[test]
    fn class_weights_hand_computed() {
        let (l, _) = bce_loss(&col(&[0.5, 0.5]), &col(&[1.0, 0.0]), &col(&[3.0, 1.0])).unwrap();
        assert!((l - (3.0 * LN_2 + LN_2) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let p = [0.2, 0.7, 0.45];
        let y = col(&[1.0, 0.0, 1.0]);
        let w = col(&[2.0, 0.5, 1.0]);
        let (_, g) = bce_loss(&col(&p), &y, &w).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let mut up = p;
            up[i] += h;
            let mut dn = p;
            dn[i] -= h;
            let fd = (bce_loss(&col(&up), &y, &w).unwrap().0 - bce_loss(&col(&dn), &y, &w).unwrap().0) / (2.0 * h);
            assert!((fd - g.get(i, 0)).abs() < 1e-7);
        }
    }

    #[test]
    fn rejects_non_binary_labels() {
        assert!(matches!(
            bce_loss(&col(&[0.5]), &col(&[0.5]), &col(&[1.0])),
            Err(Error::Validation(_))
        ));
    }
}
