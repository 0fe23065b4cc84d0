//! Gaussian-process surrogate with a squared-exponential ARD kernel.
//!
//! Losses are standardized before fitting and the posterior is reported
//! back in loss units. Kernel hyperparameters are point estimates from
//! maximizing the log marginal likelihood with a bounded Nelder-Mead search
//! in log space, restarted from a fixed set of starting points so a fit is
//! a pure function of its inputs.

use crate::error::{Error, Result};

/// Smallest admissible observation-noise standard deviation, in
/// standardized loss units.
pub const NOISE_FLOOR: f64 = 1e-6;

const JITTER_LADDER: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

const LENGTH_BOUNDS: (f64, f64) = (1e-2, 1e1);
const SIGNAL_BOUNDS: (f64, f64) = (1e-2, 1e2);
const NOISE_BOUNDS: (f64, f64) = (NOISE_FLOOR * NOISE_FLOOR, 1.0);

#[derive(Clone, Debug, PartialEq)]
pub struct GpHyper {
    pub length_scales: Vec<f64>,
    pub signal_var: f64,
    pub noise_var: f64,
}

impl GpHyper {
    /// Unit signal variance, noise at the floor.
    pub fn isotropic(dim: usize, length_scale: f64) -> Self {
        GpHyper {
            length_scales: vec![length_scale; dim],
            signal_var: 1.0,
            noise_var: NOISE_FLOOR * NOISE_FLOOR,
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.length_scales.len() != dim {
            return Err(Error::validation(format!(
                "{} length scales for {dim} dimensions",
                self.length_scales.len()
            )));
        }
        let ok = self.length_scales.iter().all(|l| l.is_finite() && *l > 0.0)
            && self.signal_var.is_finite()
            && self.signal_var > 0.0
            && self.noise_var.is_finite();
        if !ok {
            return Err(Error::validation(
                "kernel hyperparameters must be positive and finite",
            ));
        }
        Ok(())
    }

    fn to_log(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.length_scales.iter().map(|l| l.ln()).collect();
        t.push(self.signal_var.ln());
        t.push(self.noise_var.ln());
        t
    }

    fn from_log(t: &[f64]) -> Self {
        let d = t.len() - 2;
        GpHyper {
            length_scales: t[..d].iter().map(|v| v.exp()).collect(),
            signal_var: t[d].exp(),
            noise_var: t[d + 1].exp(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct GpModel {
    dim: usize,
    /// Row-major `n x dim`, normalized coordinates.
    points: Vec<f64>,
    losses: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
    hyper: GpHyper,
    inv_len2: Vec<f64>,
    /// Lower Cholesky factor of `K + (noise + jitter) I`, row-major.
    chol: Vec<f64>,
    alpha: Vec<f64>,
    jitter: f64,
}

fn check_inputs(points: &[Vec<f64>], losses: &[f64]) -> Result<usize> {
    if points.is_empty() {
        return Err(Error::validation("a GP needs at least one observation"));
    }
    if points.len() != losses.len() {
        return Err(Error::validation(format!(
            "{} points but {} losses",
            points.len(),
            losses.len()
        )));
    }
    let dim = points[0].len();
    if dim == 0 {
        return Err(Error::validation("points have no coordinates"));
    }
    for p in points {
        if p.len() != dim {
            return Err(Error::validation(format!(
                "point of dimension {} in a {dim}-dimensional fit",
                p.len()
            )));
        }
        if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::validation(
                "observed points must lie in the unit box",
            ));
        }
    }
    if losses.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("observed losses must be finite"));
    }
    Ok(dim)
}

fn standardize(losses: &[f64]) -> (f64, f64) {
    let n = losses.len() as f64;
    let mean = losses.iter().sum::<f64>() / n;
    let var = losses.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
    if losses.len() == 1 || var <= 0.0 {
        (0.0, 1.0)
    } else {
        (mean, var.sqrt())
    }
}

/// In-place Cholesky of a symmetric row-major matrix. Only the lower
/// triangle is read and written. Returns false if a pivot is not positive.
fn cholesky(a: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    true
}

fn forward_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

fn backward_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

fn kernel(a: &[f64], b: &[f64], inv_len2: &[f64], signal_var: f64) -> f64 {
    let mut r2 = 0.0;
    for k in 0..a.len() {
        let d = a[k] - b[k];
        r2 += d * d * inv_len2[k];
    }
    signal_var * (-0.5 * r2).exp()
}

struct Factor {
    chol: Vec<f64>,
    alpha: Vec<f64>,
    jitter: f64,
}

fn factorize(points: &[f64], dim: usize, y: &[f64], hyper: &GpHyper) -> Option<Factor> {
    let n = y.len();
    let inv_len2: Vec<f64> = hyper.length_scales.iter().map(|l| 1.0 / (l * l)).collect();
    let mut base = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            base[i * n + j] = kernel(
                &points[i * dim..(i + 1) * dim],
                &points[j * dim..(j + 1) * dim],
                &inv_len2,
                hyper.signal_var,
            );
        }
    }
    for jitter in JITTER_LADDER {
        let mut a = base.clone();
        for i in 0..n {
            a[i * n + i] += hyper.noise_var + jitter;
        }
        if cholesky(&mut a, n) {
            let mut alpha = y.to_vec();
            forward_solve(&a, n, &mut alpha);
            backward_solve(&a, n, &mut alpha);
            return Some(Factor {
                chol: a,
                alpha,
                jitter,
            });
        }
    }
    None
}

fn neg_log_likelihood(points: &[f64], dim: usize, y: &[f64], hyper: &GpHyper) -> f64 {
    let Some(f) = factorize(points, dim, y, hyper) else {
        return f64::INFINITY;
    };
    let n = y.len();
    let fit: f64 = y.iter().zip(&f.alpha).map(|(a, b)| a * b).sum();
    let logdet: f64 = (0..n).map(|i| f.chol[i * n + i].ln()).sum();
    let v = 0.5 * fit + logdet + 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

/// Minimizes `f` over the box `[lo, hi]` by Nelder-Mead, projecting every
/// trial vertex back into the box.
fn nelder_mead(
    f: &dyn Fn(&[f64]) -> f64,
    x0: &[f64],
    step: f64,
    lo: &[f64],
    hi: &[f64],
    max_evals: usize,
) -> (Vec<f64>, f64) {
    let n = x0.len();
    let clamp = |x: &mut Vec<f64>| {
        for k in 0..n {
            x[k] = x[k].clamp(lo[k], hi[k]);
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let mut start = x0.to_vec();
    clamp(&mut start);
    let fs = f(&start);
    simplex.push((start.clone(), fs));
    for k in 0..n {
        let mut v = start.clone();
        v[k] += if v[k] + step <= hi[k] { step } else { -step };
        clamp(&mut v);
        let fv = f(&v);
        simplex.push((v, fv));
    }
    let mut evals = n + 1;
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[n].1);
        if worst.is_finite() && (worst - best).abs() <= 1e-10 * (1.0 + best.abs()) {
            break;
        }
        let mut centroid = vec![0.0; n];
        for (v, _) in &simplex[..n] {
            for k in 0..n {
                centroid[k] += v[k] / n as f64;
            }
        }
        let toward = |t: f64| -> Vec<f64> {
            let mut p: Vec<f64> = (0..n)
                .map(|k| centroid[k] + t * (simplex[n].0[k] - centroid[k]))
                .collect();
            clamp(&mut p);
            p
        };
        let r = toward(-1.0);
        let fr = f(&r);
        evals += 1;
        if fr < simplex[0].1 {
            let e = toward(-2.0);
            let fe = f(&e);
            evals += 1;
            simplex[n] = if fe < fr { (e, fe) } else { (r, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (r, fr);
        } else {
            let c = if fr < simplex[n].1 {
                toward(-0.5)
            } else {
                toward(0.5)
            };
            let fc = f(&c);
            evals += 1;
            if fc < fr.min(simplex[n].1) {
                simplex[n] = (c, fc);
            } else {
                let b = simplex[0].0.clone();
                for (v, fv) in simplex.iter_mut().skip(1) {
                    for k in 0..n {
                        v[k] = b[k] + 0.5 * (v[k] - b[k]);
                    }
                    *fv = f(v);
                    evals += 1;
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0)
}

fn fit_hyper(points: &[f64], dim: usize, y: &[f64]) -> GpHyper {
    let mut lo: Vec<f64> = vec![LENGTH_BOUNDS.0.ln(); dim];
    let mut hi: Vec<f64> = vec![LENGTH_BOUNDS.1.ln(); dim];
    lo.extend([SIGNAL_BOUNDS.0.ln(), NOISE_BOUNDS.0.ln()]);
    hi.extend([SIGNAL_BOUNDS.1.ln(), NOISE_BOUNDS.1.ln()]);
    let objective = |t: &[f64]| neg_log_likelihood(points, dim, y, &GpHyper::from_log(t));
    let starts = [(0.3, 1e-6), (1.0, 1e-10), (0.1, 1e-3), (3.0, 1e-2)];
    let mut best: Option<(Vec<f64>, f64)> = None;
    for (len, noise) in starts {
        let h = GpHyper {
            length_scales: vec![len; dim],
            signal_var: 1.0,
            noise_var: noise,
        };
        let (t, v) = nelder_mead(&objective, &h.to_log(), 1.0, &lo, &hi, 150 * (dim + 2));
        if best.as_ref().is_none_or(|b| v < b.1) {
            best = Some((t, v));
        }
    }
    match best {
        Some((t, v)) if v.is_finite() => GpHyper::from_log(&t),
        _ => GpHyper::isotropic(dim, 0.3),
    }
}

/// Fits a GP, choosing kernel hyperparameters by marginal likelihood.
pub fn gp_fit(points: &[Vec<f64>], losses: &[f64]) -> Result<GpModel> {
    let dim = check_inputs(points, losses)?;
    let flat: Vec<f64> = points.iter().flatten().copied().collect();
    let (mean, scale) = standardize(losses);
    let y: Vec<f64> = losses.iter().map(|v| (v - mean) / scale).collect();
    let hyper = fit_hyper(&flat, dim, &y);
    build(dim, flat, losses.to_vec(), mean, scale, y, hyper)
}

/// Fits a GP with fixed kernel hyperparameters (in standardized units).
pub fn gp_fit_with(points: &[Vec<f64>], losses: &[f64], hyper: GpHyper) -> Result<GpModel> {
    let dim = check_inputs(points, losses)?;
    hyper.validate(dim)?;
    let hyper = GpHyper {
        noise_var: hyper.noise_var.max(NOISE_BOUNDS.0),
        ..hyper
    };
    let flat: Vec<f64> = points.iter().flatten().copied().collect();
    let (mean, scale) = standardize(losses);
    let y: Vec<f64> = losses.iter().map(|v| (v - mean) / scale).collect();
    build(dim, flat, losses.to_vec(), mean, scale, y, hyper)
}

fn build(
    dim: usize,
    points: Vec<f64>,
    losses: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
    y: Vec<f64>,
    hyper: GpHyper,
) -> Result<GpModel> {
    let f = factorize(&points, dim, &y, &hyper).ok_or_else(|| {
        Error::State("covariance is not positive definite even with maximum jitter".into())
    })?;
    let inv_len2 = hyper.length_scales.iter().map(|l| 1.0 / (l * l)).collect();
    Ok(GpModel {
        dim,
        points,
        losses,
        y_mean,
        y_scale,
        hyper,
        inv_len2,
        chol: f.chol,
        alpha: f.alpha,
        jitter: f.jitter,
    })
}

/// Posterior mean and variance of the latent loss at `x`, in loss units.
pub fn gp_posterior(model: &GpModel, x: &[f64]) -> Result<(f64, f64)> {
    if x.len() != model.dim {
        return Err(Error::validation(format!(
            "query of dimension {} on a {}-dimensional GP",
            x.len(),
            model.dim
        )));
    }
    if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::validation("query point outside the unit box"));
    }
    Ok(model.posterior_unchecked(x))
}

impl GpModel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    pub fn hyper(&self) -> &GpHyper {
        &self.hyper
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn best_loss(&self) -> f64 {
        self.losses.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Refits with the same hyperparameters after adding observations.
    pub fn with_observations(&self, points: &[Vec<f64>], losses: &[f64]) -> Result<GpModel> {
        let mut all: Vec<Vec<f64>> = (0..self.len()).map(|i| self.point(i).to_vec()).collect();
        all.extend(points.iter().cloned());
        let mut ys = self.losses.clone();
        ys.extend_from_slice(losses);
        gp_fit_with(&all, &ys, self.hyper.clone())
    }

    pub(crate) fn posterior_unchecked(&self, x: &[f64]) -> (f64, f64) {
        let n = self.len();
        let s2 = self.hyper.signal_var;
        let mut k: Vec<f64> = (0..n)
            .map(|i| kernel(x, self.point(i), &self.inv_len2, s2))
            .collect();
        let mean: f64 = k.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        forward_solve(&self.chol, n, &mut k);
        let var = s2 - k.iter().map(|v| v * v).sum::<f64>();
        // The latent variance at an observed point never exceeds the nugget;
        // anything at or below it (plus rounding) is treated as resolved.
        let nugget = self.hyper.noise_var + self.jitter + 16.0 * n as f64 * f64::EPSILON * s2;
        let var = if var <= nugget { 0.0 } else { var };
        (
            self.y_mean + self.y_scale * mean,
            var * self.y_scale * self.y_scale,
        )
    }
}
