use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Elementwise `max(0, x)`.
pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Passes the upstream gradient where `input > 0`; zero at exactly 0.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if input.shape() != grad_out.shape() {
        return Err(Error::shape("relu gradient does not match its input"));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

/// `1 / (1 + exp(-x))` without overflow for large `|x|`.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logistic(input: &Tensor) -> Tensor {
    input.map(sigmoid)
}

/// Backward through the logistic given its forward output.
pub fn logistic_backward(output: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if output.shape() != grad_out.shape() {
        return Err(Error::shape("logistic gradient does not match its output"));
    }
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&p, &g)| g * p * (1.0 - p))
        .collect();
    Tensor::from_vec(output.shape(), data)
}
