//! Fully connected layer.

use crate::error::{Error, Result};
use crate::numerics::{axpy, dot4, init_uniform_scaled, Rng, Tensor};

use super::ParamGrads;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FcSpec {
    pub num_units: usize,
}

/// `out = W x + b` with `W` of shape `(units, inputs)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    weights: Tensor,
    bias: Tensor,
}

impl Dense {
    pub fn new(inputs: usize, spec: FcSpec, rng: &mut Rng) -> Result<Self> {
        if spec.num_units == 0 || inputs == 0 {
            return Err(Error::validation(
                "fully connected layer needs at least one input and unit",
            ));
        }
        let weights = init_uniform_scaled(&[spec.num_units, inputs], inputs, spec.num_units, rng)?;
        let bias = Tensor::zeros(&[spec.num_units])?;
        Ok(Dense { weights, bias })
    }

    pub fn from_params(weights: Tensor, bias: Tensor) -> Result<Self> {
        match (weights.shape(), bias.shape()) {
            ([units, _], [b]) if units == b => Ok(Dense { weights, bias }),
            (w, b) => Err(Error::shape(format!(
                "dense parameters {w:?}/{b:?} are inconsistent"
            ))),
        }
    }

    pub fn units(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn inputs(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub(crate) fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (self.weights.data_mut(), self.bias.data_mut())
    }

    pub fn row(&self, unit: usize) -> &[f64] {
        let n = self.inputs();
        &self.weights.data()[unit * n..(unit + 1) * n]
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.len() != self.inputs() {
            return Err(Error::shape(format!(
                "fully connected layer expects {} inputs, got {}",
                self.inputs(),
                input.len()
            )));
        }
        Ok(())
    }

    /// Accepts any input shape and treats it as flattened.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let out = (0..self.units())
            .map(|u| unit_preactivation(self.row(u), self.bias.data()[u], input.data()))
            .collect();
        Tensor::from_vec(&[self.units()], out)
    }

    pub fn backward(
        &self,
        input: &Tensor,
        grad_out: &Tensor,
        grads: &mut ParamGrads,
        need_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        self.check_input(input)?;
        if grad_out.len() != self.units() {
            return Err(Error::shape(format!(
                "fully connected grad has {} elements, layer has {} units",
                grad_out.len(),
                self.units()
            )));
        }
        let n = self.inputs();
        for (u, &g) in grad_out.data().iter().enumerate() {
            grads.bias[u] += g;
            if g != 0.0 {
                axpy(g, input.data(), &mut grads.weights[u * n..(u + 1) * n]);
            }
        }
        if !need_input_grad {
            return Ok(None);
        }
        let mut gi = vec![0.0; n];
        for (u, &g) in grad_out.data().iter().enumerate() {
            if g != 0.0 {
                axpy(g, self.row(u), &mut gi);
            }
        }
        Ok(Some(Tensor::from_vec(input.shape(), gi)?))
    }
}

#[inline]
pub(crate) fn unit_preactivation(row: &[f64], bias: f64, input: &[f64]) -> f64 {
    dot4(row, input) + bias
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_passes_through() {
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let d = Dense::from_params(
            Tensor::from_vec(&[3, 3], eye).unwrap(),
            Tensor::zeros(&[3]).unwrap(),
        )
        .unwrap();
        let x = Tensor::from_vec(&[3], vec![0.5, -2.0, 9.0]).unwrap();
        assert_eq!(d.forward(&x).unwrap().data(), x.data());
    }

    #[test]
    fn matrix_vector_product() {
        let w = vec![1.0, 2.0, 3.0, 4.0];
        // Oracle: explicit row-by-column sums.
        let expected: Vec<f64> = (0..2)
            .map(|r| (0..2).map(|c| w[r * 2 + c] * 1.0).sum())
            .collect();
        assert_eq!(expected, vec![3.0, 7.0]);
        let d = Dense::from_params(
            Tensor::from_vec(&[2, 2], w).unwrap(),
            Tensor::zeros(&[2]).unwrap(),
        )
        .unwrap();
        let out = d
            .forward(&Tensor::from_vec(&[2], vec![1.0, 1.0]).unwrap())
            .unwrap();
        assert_eq!(out.data(), &expected[..]);
    }

    #[test]
    fn dimension_mismatch() {
        let d = Dense::new(4, FcSpec { num_units: 2 }, &mut Rng::new(0)).unwrap();
        assert!(matches!(
            d.forward(&Tensor::zeros(&[5]).unwrap()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn finite_differences_on_random_layer() {
        let mut rng = Rng::new(31);
        let mut d = Dense::new(10, FcSpec { num_units: 5 }, &mut rng).unwrap();
        for b in d.params_mut().1 {
            *b = rng.normal();
        }
        let x = Tensor::from_vec(&[10], (0..10).map(|_| rng.normal()).collect()).unwrap();
        let probe: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let mut grads = ParamGrads::zeros(50, 5);
        let gi = d
            .backward(
                &x,
                &Tensor::from_vec(&[5], probe.clone()).unwrap(),
                &mut grads,
                true,
            )
            .unwrap()
            .unwrap();
        let f = |layer: &Dense, input: &Tensor| -> f64 {
            layer
                .forward(input)
                .unwrap()
                .data()
                .iter()
                .zip(&probe)
                .map(|(a, b)| a * b)
                .sum()
        };
        let eps = 1e-5;
        let check =
            |a: f64, fd: f64| assert!((a - fd).abs() / a.abs().max(fd.abs()).max(1e-8) < 1e-6);
        for idx in 0..50 {
            let (mut p, mut m) = (d.clone(), d.clone());
            p.params_mut().0[idx] += eps;
            m.params_mut().0[idx] -= eps;
            check(grads.weights[idx], (f(&p, &x) - f(&m, &x)) / (2.0 * eps));
        }
        for idx in 0..5 {
            let (mut p, mut m) = (d.clone(), d.clone());
            p.params_mut().1[idx] += eps;
            m.params_mut().1[idx] -= eps;
            check(grads.bias[idx], (f(&p, &x) - f(&m, &x)) / (2.0 * eps));
        }
        for idx in 0..10 {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data_mut()[idx] += eps;
            xm.data_mut()[idx] -= eps;
            check(gi.data()[idx], (f(&d, &xp) - f(&d, &xm)) / (2.0 * eps));
        }
    }
}
