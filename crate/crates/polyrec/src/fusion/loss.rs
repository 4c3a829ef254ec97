//! Masked multitask mean-squared-error.
//!
//! The loss averages squared errors over present (record, task) entries
//! only; masked positions contribute nothing to the value or the gradient.

use crate::nn::matrix::Matrix;

use super::FusionError;

fn check_shapes(preds: &Matrix, labels: &Matrix, mask: &Matrix) -> Result<(), FusionError> {
    if preds.rows() != labels.rows()
        || preds.cols() != labels.cols()
        || preds.rows() != mask.rows()
        || preds.cols() != mask.cols()
    {
        return Err(FusionError::Shape(format!(
            "preds {}x{}, labels {}x{}, mask {}x{}",
            preds.rows(),
            preds.cols(),
            labels.rows(),
            labels.cols(),
            mask.rows(),
            mask.cols()
        )));
    }
    Ok(())
}

/// Mean squared error over entries with a nonzero mask.
pub fn masked_mse(preds: &Matrix, labels: &Matrix, mask: &Matrix) -> Result<f64, FusionError> {
    check_shapes(preds, labels, mask)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((p, y), m) in preds.data().iter().zip(labels.data()).zip(mask.data()) {
        if *m != 0.0 {
            let d = p - y;
            sum += d * d;
            count += 1;
        }
    }
    if count == 0 {
        return Err(FusionError::AllMasked);
    }
    Ok(sum / count as f64)
}

/// Loss plus its gradient w.r.t. the predictions: `2 (p - y) / n_present`
/// at present entries, exactly zero elsewhere.
pub fn masked_mse_with_grad(
    preds: &Matrix,
    labels: &Matrix,
    mask: &Matrix,
) -> Result<(f64, Matrix), FusionError> {
    check_shapes(preds, labels, mask)?;
    let count = mask.data().iter().filter(|m| **m != 0.0).count();
    if count == 0 {
        return Err(FusionError::AllMasked);
    }
    let scale = 2.0 / count as f64;
    let mut sum = 0.0;
    let mut grad = Matrix::zeros(preds.rows(), preds.cols());
    for (i, ((p, y), m)) in preds.data().iter().zip(labels.data()).zip(mask.data()).enumerate() {
        if *m != 0.0 {
            let d = p - y;
            sum += d * d;
            grad.data_mut()[i] = scale * d;
        }
    }
    Ok((sum / count as f64, grad))
}
