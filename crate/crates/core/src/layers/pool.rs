//! Non-overlapping max pooling.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Window `(s, t)`; the stride equals the window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolSpec {
    pub window_height: usize,
    pub window_width: usize,
}

impl PoolSpec {
    /// `(c, floor(h/s), floor(w/t))`; trailing rows and columns that do not
    /// fill a window are dropped.
    pub fn output_dims(&self, [c, h, w]: [usize; 3]) -> Result<[usize; 3]> {
        if self.window_height == 0 || self.window_width == 0 {
            return Err(Error::validation(
                "pooling window extents must be at least 1",
            ));
        }
        if self.window_height > h || self.window_width > w {
            return Err(Error::shape(format!(
                "{}x{} pooling window exceeds a {h}x{w} input",
                self.window_height, self.window_width
            )));
        }
        Ok([c, h / self.window_height, w / self.window_width])
    }
}

/// Result of a forward pass: the pooled maps and, for each output element,
/// the flat input index that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Pooled {
    pub output: Tensor,
    pub argmax: Vec<usize>,
}

fn dims3(t: &Tensor) -> Result<[usize; 3]> {
    match *t.shape() {
        [c, h, w] => Ok([c, h, w]),
        ref other => Err(Error::shape(format!(
            "pooling input must be (c, h, w), got {other:?}"
        ))),
    }
}

/// Ties go to the first maximum in row-major window order.
pub fn maxpool_forward(input: &Tensor, spec: &PoolSpec) -> Result<Pooled> {
    let dims = dims3(input)?;
    let out_dims = spec.output_dims(dims)?;
    let mut output = Vec::with_capacity(out_dims.iter().product());
    let mut argmax = Vec::with_capacity(output.capacity());
    for c in 0..dims[0] {
        pool_plane(input.data(), dims, c, spec, &mut output, &mut argmax);
    }
    Ok(Pooled {
        output: Tensor::from_vec(&out_dims, output)?,
        argmax,
    })
}

pub(crate) fn pool_plane(
    x: &[f64],
    [_, h, w]: [usize; 3],
    c: usize,
    spec: &PoolSpec,
    output: &mut Vec<f64>,
    argmax: &mut Vec<usize>,
) {
    let (s, t) = (spec.window_height, spec.window_width);
    for oy in 0..h / s {
        for ox in 0..w / t {
            let mut best_idx = (c * h + oy * s) * w + ox * t;
            let mut best = x[best_idx];
            for dy in 0..s {
                let row = (c * h + oy * s + dy) * w + ox * t;
                for dx in 0..t {
                    if x[row + dx] > best {
                        best = x[row + dx];
                        best_idx = row + dx;
                    }
                }
            }
            output.push(best);
            argmax.push(best_idx);
        }
    }
}

/// Routes each upstream gradient to the input position that won the window.
pub fn maxpool_backward(
    grad_out: &Tensor,
    argmax: &[usize],
    input_dims: [usize; 3],
) -> Result<Tensor> {
    if grad_out.len() != argmax.len() {
        return Err(Error::State(format!(
            "pooling cache holds {} winners but the gradient has {} elements",
            argmax.len(),
            grad_out.len()
        )));
    }
    let mut gi = vec![0.0; input_dims.iter().product()];
    for (&g, &idx) in grad_out.data().iter().zip(argmax) {
        gi[idx] += g;
    }
    Tensor::from_vec(&input_dims, gi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    const TWO: PoolSpec = PoolSpec {
        window_height: 2,
        window_width: 2,
    };

    #[test]
    fn takes_window_max() {
        let x = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = maxpool_forward(&x, &TWO).unwrap();
        assert_eq!(p.output.data(), &[4.0]);
        assert_eq!(p.argmax, vec![3]);
    }

    #[test]
    fn drops_remainder() {
        let x = Tensor::zeros(&[1, 5, 5]).unwrap();
        assert_eq!(
            maxpool_forward(&x, &TWO).unwrap().output.shape(),
            &[1, 2, 2]
        );
    }

    #[test]
    fn ties_pick_top_left() {
        let x = Tensor::alloc(&[2, 4, 4], 7.0).unwrap();
        let p = maxpool_forward(&x, &TWO).unwrap();
        assert!(p.output.data().iter().all(|&v| v == 7.0));
        assert_eq!(p.argmax, vec![0, 2, 8, 10, 16, 18, 24, 26]);
    }

    #[test]
    fn window_larger_than_input() {
        let x = Tensor::zeros(&[1, 1, 3]).unwrap();
        assert!(matches!(maxpool_forward(&x, &TWO), Err(Error::Shape(_))));
    }

    #[test]
    fn backward_routes_to_winner() {
        let x = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = maxpool_forward(&x, &TWO).unwrap();
        let g = Tensor::from_vec(&[1, 1, 1], vec![2.5]).unwrap();
        let gi = maxpool_backward(&g, &p.argmax, [1, 2, 2]).unwrap();
        assert_eq!(gi.data(), &[0.0, 0.0, 0.0, 2.5]);
    }

    #[test]
    fn backward_without_matching_cache() {
        let g = Tensor::zeros(&[1, 2, 2]).unwrap();
        assert!(matches!(
            maxpool_backward(&g, &[0], [1, 4, 4]),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn gradient_is_conserved_and_matches_differences() {
        let mut rng = Rng::new(21);
        let x = Tensor::from_vec(&[3, 8, 8], (0..192).map(|_| rng.normal()).collect()).unwrap();
        let p = maxpool_forward(&x, &TWO).unwrap();
        let probe: Vec<f64> = (0..48).map(|_| rng.normal()).collect();
        let g = Tensor::from_vec(&[3, 4, 4], probe.clone()).unwrap();
        let gi = maxpool_backward(&g, &p.argmax, [3, 8, 8]).unwrap();
        assert_eq!(gi.data().iter().sum::<f64>(), probe.iter().sum::<f64>());

        let eps = 1e-5;
        let f = |t: &Tensor| -> f64 {
            let out = maxpool_forward(t, &TWO).unwrap().output;
            out.data().iter().zip(&probe).map(|(a, b)| a * b).sum()
        };
        for idx in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[idx] += eps;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= eps;
            let fd = (f(&xp) - f(&xm)) / (2.0 * eps);
            let a = gi.data()[idx];
            assert!(
                (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8) < 1e-5,
                "index {idx}"
            );
        }
    }
}
