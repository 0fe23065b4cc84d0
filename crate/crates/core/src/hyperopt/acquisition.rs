use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::numerics::Rng;

use super::gp::GpModel;
use super::space::HyperSpace;

pub const CANDIDATES: usize = 2048;
pub const REFINE_STARTS: usize = 8;
pub const REFINE_STEPS: usize = 50;

const INITIAL_STEP: f64 = 0.05;

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Expected improvement below `best` of a normal with mean `mu` and
/// standard deviation `sigma`.
pub fn ei_closed_form(mu: f64, sigma: f64, best: f64) -> f64 {
    let gap = best - mu;
    if !(sigma > 0.0) {
        return gap.max(0.0);
    }
    let z = gap / sigma;
    (gap * std_normal_cdf(z) + sigma * std_normal_pdf(z)).max(0.0)
}

pub fn expected_improvement(model: &GpModel, x: &[f64], best_loss: f64) -> Result<f64> {
    let (mu, var) = super::gp::gp_posterior(model, x)?;
    Ok(ei_closed_form(mu, var.sqrt(), best_loss))
}

fn ei_at(model: &GpModel, x: &[f64], best: f64) -> f64 {
    let (mu, var) = model.posterior_unchecked(x);
    ei_closed_form(mu, var.sqrt(), best)
}

fn primes(count: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(count);
    let mut c = 2u64;
    while out.len() < count {
        if out
            .iter()
            .take_while(|&&p| p * p <= c)
            .all(|&p| !c.is_multiple_of(p))
        {
            out.push(c);
        }
        c += 1;
    }
    out
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let (mut f, mut r) = (1.0, 0.0);
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Halton point `index` (counted from 1) in `dim` dimensions, rotated by
/// `shift` modulo 1.
pub fn halton_point(index: u64, shift: &[f64]) -> Vec<f64> {
    primes(shift.len())
        .iter()
        .zip(shift)
        .map(|(&p, s)| (radical_inverse(index, p) + s).fract())
        .collect()
}

/// Climbs coordinate-wise from `x`, halving the step whenever no
/// neighbour improves.
fn hill_climb(
    model: &GpModel,
    space: &HyperSpace,
    best: f64,
    mut x: Vec<f64>,
    mut ei: f64,
) -> (Vec<f64>, f64) {
    let unit: Vec<f64> = space
        .dims()
        .iter()
        .map(|d| match d.kind {
            super::space::DimKind::Integer => 1.0 / (d.high - d.low),
            _ => 0.0,
        })
        .collect();
    let mut h = INITIAL_STEP;
    for _ in 0..REFINE_STEPS {
        let mut next: Option<(Vec<f64>, f64)> = None;
        for k in 0..x.len() {
            // Integer coordinates never step by less than one grid cell.
            let step = h.max(unit[k]);
            for dir in [-1.0, 1.0] {
                let mut y = x.clone();
                y[k] = (y[k] + dir * step).clamp(0.0, 1.0);
                space.snap(&mut y);
                if y[k] == x[k] {
                    continue;
                }
                let e = ei_at(model, &y, best);
                if e > next.as_ref().map_or(ei, |n| n.1) {
                    next = Some((y, e));
                }
            }
        }
        match next {
            Some((y, e)) => {
                x = y;
                ei = e;
            }
            None => h *= 0.5,
        }
    }
    (x, ei)
}

/// Picks the next point to evaluate by maximizing expected improvement
/// below the model's best observed loss. The result is in the unit box with
/// integer dimensions on their grid.
pub fn propose_next(model: &GpModel, space: &HyperSpace, rng: &mut Rng) -> Result<Vec<f64>> {
    if model.dim() != space.len() {
        return Err(Error::validation(format!(
            "GP has {} dimensions, space has {}",
            model.dim(),
            space.len()
        )));
    }
    let best = model.best_loss();
    let shift: Vec<f64> = (0..space.len()).map(|_| rng.uniform()).collect();
    let mut cands: Vec<(Vec<f64>, f64)> = (1..=CANDIDATES as u64)
        .map(|i| {
            let mut x = halton_point(i, &shift);
            space.snap(&mut x);
            let e = ei_at(model, &x, best);
            (x, e)
        })
        .collect();
    let mut order: Vec<usize> = (0..cands.len()).collect();
    // Stable: equal scores keep index order.
    order.sort_by(|&a, &b| cands[b].1.total_cmp(&cands[a].1));
    let (mut winner, mut score) = cands[order[0]].clone();
    for &i in order.iter().take(REFINE_STARTS) {
        let (x, e) = std::mem::take(&mut cands[i]);
        let (x, e) = hill_climb(model, space, best, x, e);
        if e > score {
            winner = x;
            score = e;
        }
    }
    Ok(winner)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hyperopt::gp::{gp_fit, gp_fit_with, GpHyper};
    use crate::hyperopt::space::{DimKind, Dimension};

    fn unit_space(d: usize) -> HyperSpace {
        HyperSpace::new(
            (0..d)
                .map(|k| Dimension::new(format!("x{k}"), DimKind::Continuous, 0.0, 1.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn closed_form_values() {
        assert!(
            (ei_closed_form(1.0, 1.0, 1.0) - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs()
                < 1e-12
        );
        assert_eq!(ei_closed_form(1.0, 0.0, 1.0), 0.0);
        assert_eq!(ei_closed_form(0.5, 0.0, 1.0), 0.5);
        assert_eq!(ei_closed_form(1.5, 0.0, 1.0), 0.0);
        assert!(ei_closed_form(1.0, 1e-12, 1.0) < 1e-12);
        assert!(ei_closed_form(50.0, 1.0, 0.0) >= 0.0);
    }

    #[test]
    fn halton_is_space_filling() {
        let shift = [0.0, 0.0];
        assert_eq!(halton_point(1, &shift), vec![0.5, 1.0 / 3.0]);
        assert_eq!(halton_point(2, &shift), vec![0.25, 2.0 / 3.0]);
        let pts: Vec<Vec<f64>> = (1..=256).map(|i| halton_point(i, &[0.7, 0.2])).collect();
        for q in 0..4 {
            let n = pts.iter().filter(|p| (p[0] * 4.0) as usize == q).count();
            assert!((60..=68).contains(&n), "{n}");
        }
    }

    #[test]
    fn moves_away_from_lone_observation() {
        let m = gp_fit(&[vec![0.5, 0.5]], &[1.0]).unwrap();
        assert!(expected_improvement(&m, &[0.5, 0.5], 1.0).unwrap() <= 1e-8);
        let x = propose_next(&m, &unit_space(2), &mut Rng::new(3)).unwrap();
        assert!((x[0] - 0.5).abs() + (x[1] - 0.5).abs() > 1e-3);
    }

    #[test]
    fn all_zero_ei_returns_first_candidate() {
        // A single observation far below anything the posterior can reach.
        let m = gp_fit_with(&[vec![0.5]], &[-1e9], GpHyper::isotropic(1, 0.1)).unwrap();
        let mut rng = Rng::new(9);
        let x = propose_next(&m, &unit_space(1), &mut rng.clone()).unwrap();
        let shift = rng.uniform();
        assert_eq!(x, halton_point(1, &[shift]));
    }

    #[test]
    fn integer_dims_land_on_grid() {
        let space = HyperSpace::default_sgd();
        let pts = vec![
            vec![0.1, 0.2, 0.3, 0.0],
            vec![0.8, 0.5, 0.9, 1.0],
            vec![0.4, 0.4, 0.1, 0.5],
        ];
        let m = gp_fit(&pts, &[1.0, 0.5, 0.8]).unwrap();
        for seed in 0..5 {
            let x = propose_next(&m, &space, &mut Rng::new(seed)).unwrap();
            assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
            let v = space.denormalize(&x).unwrap();
            assert_eq!(v[3].fract(), 0.0);
            assert_eq!(space.normalize(&v).unwrap()[3], x[3]);
        }
    }

    #[test]
    fn deterministic_given_rng() {
        let m = gp_fit(&[vec![0.2], vec![0.9]], &[1.0, 2.0]).unwrap();
        let a = propose_next(&m, &unit_space(1), &mut Rng::new(4)).unwrap();
        let b = propose_next(&m, &unit_space(1), &mut Rng::new(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn quadratic_minimizer_found() {
        let mut hits = 0;
        for seed in 0..20 {
            let mut rng = Rng::new(100 + seed);
            let target = rng.uniform_range(0.2, 0.8);
            let pts: Vec<Vec<f64>> = (0..6).map(|_| vec![rng.uniform()]).collect();
            let ys: Vec<f64> = pts.iter().map(|p| (p[0] - target).powi(2)).collect();
            let m = gp_fit(&pts, &ys).unwrap();
            let x = propose_next(&m, &unit_space(1), &mut rng).unwrap();
            // Oracle: dense-grid EI argmax must agree with the search.
            let best = ys.iter().copied().fold(f64::INFINITY, f64::min);
            let grid_best = (0..=10_000)
                .map(|i| i as f64 / 10_000.0)
                .map(|g| (g, expected_improvement(&m, &[g], best).unwrap()))
                .fold((0.0, -1.0), |a, b| if b.1 > a.1 { b } else { a });
            assert!(expected_improvement(&m, &x, best).unwrap() >= 0.99 * grid_best.1);
            if (x[0] - target).abs() < 0.1 {
                hits += 1;
            }
        }
        assert!(hits >= 18, "{hits}/20");
    }
}
