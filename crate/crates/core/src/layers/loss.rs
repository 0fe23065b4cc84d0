use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside the logs.
pub const PROB_CLAMP: f64 = 1e-12;

/// Mean binary cross-entropy over the `q` logistic outputs.
///
/// Returns the loss and its gradient with respect to the logistic
/// pre-activations, `(p - t) / q`.
pub fn cross_entropy_loss(probs: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    validate_target(target, probs.len())?;
    let q = probs.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(probs.len());
    for (&p, &t) in probs.data().iter().zip(target.data()) {
        let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        loss -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
        grad.push((p - t) / q);
    }
    Ok((loss / q, Tensor::from_vec(probs.shape(), grad)?))
}

/// Exactly one component equal to 1, all others 0.
pub fn validate_target(target: &Tensor, q: usize) -> Result<()> {
    if target.len() != q {
        return Err(Error::validation(format!(
            "target has {} components, expected {q}",
            target.len()
        )));
    }
    let ones = target.data().iter().filter(|&&v| v == 1.0).count();
    let zeros = target.data().iter().filter(|&&v| v == 0.0).count();
    if ones != 1 || ones + zeros != q {
        return Err(Error::validation(format!(
            "target {:?} is not one-hot",
            target.data()
        )));
    }
    Ok(())
}

/// One-hot target for class `index` out of `q`.
pub fn one_hot(index: usize, q: usize) -> Tensor {
    let mut v = vec![0.0; q];
    v[index] = 1.0;
    Tensor::from_vec(&[q], v).expect("q >= 1")
}
