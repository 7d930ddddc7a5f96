use crate::error::{NnError, Result};
use crate::tensor::{Scalar, Tensor};

/// Mean squared error over every element, and its gradient `2 (pred - target) / N`.
pub fn l2_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(NnError::Shape(format!(
            "loss: prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len().max(1) as f64;
    let mut sum = 0.0f64;
    let mut grad = Tensor::zeros(pred.shape());
    let scale = T::from_f64_lossy(2.0 / n);
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - t;
        sum += d.to_f64_lossy() * d.to_f64_lossy();
        *g = scale * d;
    }
    Ok((T::from_f64_lossy(sum / n), grad))
}
