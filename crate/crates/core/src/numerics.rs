//! Dense tensors and the elementary arithmetic the layers are built from.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Dense row-major array of `f64` (last index fastest).
///
/// Image-like tensors use the `(channels, height, width)` layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn checked_len(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::shape("tensor shape must have at least one extent"));
    }
    let mut len = 1usize;
    for (axis, &extent) in shape.iter().enumerate() {
        if extent == 0 {
            return Err(Error::shape(format!("extent {axis} of {shape:?} is zero")));
        }
        len = len
            .checked_mul(extent)
            .ok_or_else(|| Error::shape(format!("shape {shape:?} overflows")))?;
    }
    Ok(len)
}

impl Tensor {
    /// Tensor of the given shape with every element equal to `fill`.
    pub fn alloc(shape: &[usize], fill: f64) -> Result<Self> {
        let len = checked_len(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![fill; len],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::alloc(shape, 0.0)
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len = checked_len(shape)?;
        if len != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Same data viewed under a new shape with the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        self.clone().into_shape(shape)
    }

    pub fn into_shape(self, shape: &[usize]) -> Result<Tensor> {
        Tensor::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Value at a multi-index; panics when out of range.
    pub fn at(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        index.iter().zip(&self.shape).fold(0, |acc, (&i, &n)| {
            assert!(i < n, "index {i} out of range for extent {n}");
            acc * n + i
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Sum of `a[i] * b[i]`, accumulated strictly in ascending flat index.
pub fn dot(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "dot of {} and {} elements",
            a.len(),
            b.len()
        )));
    }
    Ok(a.data
        .iter()
        .zip(&b.data)
        .fold(0.0, |acc, (x, y)| acc + x * y))
}

/// Glorot-style initialization: i.i.d. uniform on `[-L, L]` with
/// `L = sqrt(6 / (fan_in + fan_out))`.
pub fn init_uniform_scaled(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut Rng,
) -> Result<Tensor> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::validation("fan_in and fan_out must be at least 1"));
    }
    let len = checked_len(shape)?;
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..len).map(|_| rng.uniform_range(-limit, limit)).collect();
    Tensor::from_vec(shape, data)
}

/// Deterministic random stream.
///
/// Backed by ChaCha8 seeded through `SeedableRng::seed_from_u64`, which is
/// specified bit-for-bit and does not depend on the platform's endianness
/// or word size.
#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform on `[lo, hi]`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `0..n`; `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}

/// `y += alpha * x` over equal-length slices.
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Runs `$body` through a copy compiled for AVX2 when the CPU has it. Only
/// vector width changes; there is no FMA contraction, so both copies round
/// identically.
macro_rules! avx2_dispatch {
    ($name:ident, $fast:ident, $body:ident, ($($arg:ident: $ty:ty),*)) => {
        pub(crate) fn $name($($arg: $ty),*) {
            #[cfg(target_arch = "x86_64")]
            if std::is_x86_feature_detected!("avx2") {
                // SAFETY: AVX2 support was checked just above.
                return unsafe { $fast($($arg),*) };
            }
            $body($($arg),*)
        }

        #[cfg(target_arch = "x86_64")]
        #[target_feature(enable = "avx2")]
        unsafe fn $fast($($arg: $ty),*) {
            $body($($arg),*)
        }
    };
}

avx2_dispatch!(correlate_row, correlate_row_avx2, correlate_row_body, (taps: &[f64], src: &[f64], out: &mut [f64]));
avx2_dispatch!(correlate_taps, correlate_taps_avx2, correlate_taps_body, (g: &[f64], src: &[f64], acc: &mut [f64]));

/// `out[x] += sum_j taps[j] * src[x + j]`. Taps are applied four at a time,
/// each group summed left to right before it is added to `out`.
#[inline(always)]
fn correlate_row_body(taps: &[f64], src: &[f64], out: &mut [f64]) {
    let n = out.len();
    assert!(src.len() + 1 >= n + taps.len(), "source row too short");
    let mut j = 0;
    while j + 4 <= taps.len() {
        let t = [taps[j], taps[j + 1], taps[j + 2], taps[j + 3]];
        let (s0, s1, s2, s3) = (
            &src[j..j + n],
            &src[j + 1..j + 1 + n],
            &src[j + 2..j + 2 + n],
            &src[j + 3..j + 3 + n],
        );
        for ((((o, a), b), c), d) in out.iter_mut().zip(s0).zip(s1).zip(s2).zip(s3) {
            *o += t[0] * a + t[1] * b + t[2] * c + t[3] * d;
        }
        j += 4;
    }
    for (k, &t) in taps[j..].iter().enumerate() {
        axpy(t, &src[j + k..j + k + n], out);
    }
}

/// `acc[j] += sum_x g[x] * src[x + j]` for every `j < acc.len()`.
#[inline(always)]
fn correlate_taps_body(g: &[f64], src: &[f64], acc: &mut [f64]) {
    let n = g.len();
    assert!(src.len() + 1 >= n + acc.len(), "source row too short");
    let mut j = 0;
    // The two halves of `x` feed separate partial sums, added at the end.
    let half = n / 2;
    while j + 8 <= acc.len() {
        let (mut s, mut t) = ([0.0f64; 8], [0.0f64; 8]);
        let (lo, hi) = (&src[j..j + half + 7], &src[j + half..j + n + 7]);
        for x in 0..half {
            let a: &[f64; 8] = lo[x..x + 8].try_into().unwrap();
            let b: &[f64; 8] = hi[x..x + 8].try_into().unwrap();
            for k in 0..8 {
                s[k] += g[x] * a[k];
                t[k] += g[half + x] * b[k];
            }
        }
        if n % 2 == 1 {
            let w = &hi[n - half - 1..n - half + 7];
            for k in 0..8 {
                t[k] += g[n - 1] * w[k];
            }
        }
        for k in 0..8 {
            acc[j + k] += s[k] + t[k];
        }
        j += 8;
    }
    while j + 4 <= acc.len() {
        let (mut s, mut t) = ([0.0f64; 4], [0.0f64; 4]);
        let (lo, hi) = (&src[j..j + half + 3], &src[j + half..j + n + 3]);
        for x in 0..half {
            let a: &[f64; 4] = lo[x..x + 4].try_into().unwrap();
            let b: &[f64; 4] = hi[x..x + 4].try_into().unwrap();
            for k in 0..4 {
                s[k] += g[x] * a[k];
                t[k] += g[half + x] * b[k];
            }
        }
        if n % 2 == 1 {
            let w = &hi[n - half - 1..n - half + 3];
            for k in 0..4 {
                t[k] += g[n - 1] * w[k];
            }
        }
        for k in 0..4 {
            acc[j + k] += s[k] + t[k];
        }
        j += 4;
    }
    for a in &mut acc[j..] {
        *a += dot4(g, &src[j..j + n]);
        j += 1;
    }
}

/// Dot product with four interleaved partial sums (lane `i % 4`), combined
/// as `(s0 + s1) + (s2 + s3)` and then the tail in ascending order.
#[inline]
pub(crate) fn dot4(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut s = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        s[0] += x[0] * y[0];
        s[1] += x[1] * y[1];
        s[2] += x[2] * y[2];
        s[3] += x[3] * y[3];
    }
    let mut total = (s[0] + s[1]) + (s[2] + s[3]);
    for (x, y) in ra.iter().zip(rb) {
        total += x * y;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::Rng;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn alloc_fills_every_element() {
        let t = Tensor::alloc(&[2, 2], 0.0).unwrap();
        assert_eq!(t.data(), &[0.0; 4]);
        let t = Tensor::alloc(&[1], 3.5).unwrap();
        assert_eq!(t.data(), &[3.5]);
        let t = Tensor::alloc(&[3, 2, 4], 1.0).unwrap();
        assert_eq!(t.shape(), &[3, 2, 4]);
        assert_eq!(t.len(), 24);
        assert!(t.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn alloc_rejects_zero_extent() {
        assert!(matches!(Tensor::alloc(&[2, 0], 1.0), Err(Error::Shape(_))));
        assert!(matches!(Tensor::alloc(&[], 1.0), Err(Error::Shape(_))));
    }

    #[test]
    fn dot_matches_scalar_loop() {
        let a = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let b = Tensor::from_vec(&[3], vec![4.0, 5.0, 6.0]).unwrap();
        let mut expected = 0.0;
        for i in 0..3 {
            expected += a.data()[i] * b.data()[i];
        }
        assert_eq!(expected, 32.0);
        assert_eq!(dot(&a, &b).unwrap(), expected);
    }

    #[test]
    fn dot_with_zeros_and_selector() {
        let x = Tensor::from_vec(&[2, 2], vec![1.5, -2.0, 7.0, 0.25]).unwrap();
        let zeros = Tensor::zeros(&[4]).unwrap();
        assert_eq!(dot(&x, &zeros).unwrap(), 0.0);
        for k in 0..4 {
            let mut one_hot = vec![0.0; 4];
            one_hot[k] = 1.0;
            let e = Tensor::from_vec(&[4], one_hot).unwrap();
            assert_eq!(dot(&x, &e).unwrap(), x.data()[k]);
        }
    }

    #[test]
    fn dot_rejects_length_mismatch() {
        let a = Tensor::zeros(&[3]).unwrap();
        let b = Tensor::zeros(&[4]).unwrap();
        assert!(matches!(dot(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn init_bound_and_determinism() {
        let mut rng = Rng::new(11);
        let t = init_uniform_scaled(&[5, 7], 3, 3, &mut rng).unwrap();
        assert!(t.data().iter().all(|v| v.abs() <= 1.0));
        let a = init_uniform_scaled(&[64], 3, 3, &mut Rng::new(5)).unwrap();
        let b = init_uniform_scaled(&[64], 3, 3, &mut Rng::new(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn init_sample_mean_is_centred() {
        let t = init_uniform_scaled(&[100_000], 3, 3, &mut Rng::new(2024)).unwrap();
        let mean = t.data().iter().sum::<f64>() / t.len() as f64;
        // Uniform[-1,1] has std 1/sqrt(3); the standard error of the mean over
        // 1e5 draws is ~1.8e-3, so 0.02 is more than ten sigma.
        assert!(mean.abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn dot4_agrees_with_reference() {
        let mut rng = Rng::new(3);
        for n in [0usize, 1, 3, 4, 5, 17, 64] {
            let a: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
            let reference: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            assert!((dot4(&a, &b) - reference).abs() < 1e-12);
        }
    }

    #[test]
    fn rng_streams_are_reproducible() {
        let mut a = Rng::new(99);
        let mut b = Rng::new(99);
        for _ in 0..32 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    fn vec_strategy() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-1e3f64..1e3, 1..64)
    }

    proptest! {
        #[test]
        fn dot_is_symmetric(a in vec_strategy(), seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let b: Vec<f64> = a.iter().map(|_| rng.uniform_range(-1e3, 1e3)).collect();
            let ta = Tensor::from_vec(&[a.len()], a).unwrap();
            let tb = Tensor::from_vec(&[b.len()], b).unwrap();
            let ab = dot(&ta, &tb).unwrap();
            let ba = dot(&tb, &ta).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12 * ab.abs().max(1.0));
        }

        #[test]
        fn self_dot_nonnegative(a in vec_strategy()) {
            let t = Tensor::from_vec(&[a.len()], a).unwrap();
            prop_assert!(dot(&t, &t).unwrap() >= 0.0);
        }

        #[test]
        fn reshape_keeps_data(rows in 1usize..8, cols in 1usize..8, seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.normal()).collect();
            let t = Tensor::from_vec(&[rows, cols], data).unwrap();
            let r = t.reshape(&[cols, rows]).unwrap().reshape(&[rows * cols]).unwrap();
            prop_assert_eq!(r.data(), t.data());
            prop_assert!(t.reshape(&[rows * cols + 1]).is_err());
        }

        #[test]
        fn init_respects_bound(fan_in in 1usize..500, fan_out in 1usize..500, seed in any::<u64>()) {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let t = init_uniform_scaled(&[50], fan_in, fan_out, &mut Rng::new(seed)).unwrap();
            prop_assert!(t.data().iter().all(|v| v.abs() <= limit));
        }
    }
}
