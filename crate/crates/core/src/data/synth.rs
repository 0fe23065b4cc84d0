//! Synthetic event fields standing in for labeled climate archives.
//!
//! Every field is a smooth random background (a sum of random plane waves)
//! plus, for positives, the event's signature:
//!
//! * tropical cyclone: a compact low-pressure well with a cyclonic vortex in
//!   both wind levels, a warm core aloft and a moisture anomaly;
//! * atmospheric river: a long, narrow, possibly curved moisture corridor
//!   oriented within 40 degrees of meridional;
//! * weather front: a sharp temperature transition with a precipitation strip
//!   running along it and a pressure trough.
//!
//! Negatives carry look-alikes (broad or off-centre weak lows, round moisture
//! blobs, precipitation speckle) or background only, so no single pixel
//! separates the classes.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::numerics::Rng;

use super::field::{extract_patch, BoundingBox, Channel, FieldStack};
use super::{EventKind, Label, PatchDataset};

/// A generated field with its event centroid (row, col).
#[derive(Clone, Debug, PartialEq)]
pub struct SynthField {
    pub stack: FieldStack,
    pub centroid: (usize, usize),
}

struct Grid {
    h: usize,
    w: usize,
}

impl Grid {
    fn for_kind(kind: EventKind) -> Grid {
        match kind {
            EventKind::TropicalCyclone => Grid { h: 48, w: 48 },
            EventKind::AtmosphericRiver => Grid { h: 172, w: 248 },
            EventKind::WeatherFront => Grid { h: 39, w: 76 },
        }
    }

    fn len(&self) -> usize {
        self.h * self.w
    }

    /// Fills a new plane with `f(row, col)`.
    fn plane(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for r in 0..self.h {
            for c in 0..self.w {
                out.push(f(r as f64, c as f64));
            }
        }
        out
    }
}

/// Sum of `modes` random plane waves with wavelengths in
/// `[min_wavelength, max_wavelength]` pixels, scaled to roughly
/// `amplitude` standard deviation.
fn smooth_noise(
    grid: &Grid,
    rng: &mut Rng,
    amplitude: f64,
    min_wavelength: f64,
    max_wavelength: f64,
) -> Vec<f64> {
    const MODES: usize = 6;
    let scale = amplitude * (2.0 / MODES as f64).sqrt();
    let mut out = vec![0.0; grid.len()];
    for _ in 0..MODES {
        let wavelength = rng.uniform_range(min_wavelength, max_wavelength);
        let angle = rng.uniform_range(0.0, 2.0 * PI);
        let phase = rng.uniform_range(0.0, 2.0 * PI);
        let a = scale * rng.uniform_range(0.5, 1.5);
        let k = 2.0 * PI / wavelength;
        let (kr, kc) = (k * angle.sin(), k * angle.cos());
        // cos(kr*r + kc*c + phase) split into separable row and column factors.
        let rows: Vec<(f64, f64)> = (0..grid.h)
            .map(|r| (kr * r as f64 + phase).sin_cos())
            .collect();
        let cols: Vec<(f64, f64)> = (0..grid.w).map(|c| (kc * c as f64).sin_cos()).collect();
        for (r, &(sr, cr)) in rows.iter().enumerate() {
            let row = &mut out[r * grid.w..(r + 1) * grid.w];
            for (v, &(sc, cc)) in row.iter_mut().zip(&cols) {
                *v += a * (cr * cc - sr * sc);
            }
        }
    }
    out
}

fn add(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

fn gaussian(d2: f64, sigma: f64) -> f64 {
    (-d2 / (2.0 * sigma * sigma)).exp()
}

fn channel(kind: EventKind, idx: usize, values: Vec<f64>) -> Channel {
    Channel {
        name: kind.channel_names()[idx].to_string(),
        units: kind.channel_units()[idx].to_string(),
        values,
    }
}

fn jitter_centroid(grid: &Grid, rng: &mut Rng, dr: usize, dc: usize) -> (usize, usize) {
    let r = grid.h / 2 - dr + rng.below(2 * dr + 1);
    let c = grid.w / 2 - dc + rng.below(2 * dc + 1);
    (r, c)
}

/// Tangential wind of a cyclonic vortex at distance `rho`, peaking at
/// `vmax` when `rho == rmax`.
fn vortex_speed(rho: f64, vmax: f64, rmax: f64) -> f64 {
    vmax * (rho / rmax) * (1.0 - rho / rmax).exp()
}

/// Counter-clockwise (northern-hemisphere cyclonic) winds around `centre`,
/// returned as (eastward u, northward v). Rows grow southward.
fn vortex_winds(grid: &Grid, centre: (f64, f64), vmax: f64, rmax: f64) -> (Vec<f64>, Vec<f64>) {
    let mut u = Vec::with_capacity(grid.len());
    let mut v = Vec::with_capacity(grid.len());
    for r in 0..grid.h {
        for c in 0..grid.w {
            let dx = c as f64 - centre.1;
            let dy = -(r as f64 - centre.0);
            let rho = (dx * dx + dy * dy).sqrt();
            if rho == 0.0 {
                u.push(0.0);
                v.push(0.0);
                continue;
            }
            let vt = vortex_speed(rho, vmax, rmax);
            u.push(-vt * dy / rho);
            v.push(vt * dx / rho);
        }
    }
    (u, v)
}

fn cyclone(positive: bool, rng: &mut Rng) -> Result<SynthField> {
    let kind = EventKind::TropicalCyclone;
    let grid = Grid::for_kind(kind);
    let centroid = jitter_centroid(&grid, rng, 6, 6);
    let cf = (centroid.0 as f64, centroid.1 as f64);

    let mut psl = smooth_noise(&grid, rng, 250.0, 20.0, 60.0);
    psl.iter_mut().for_each(|v| *v += 101_000.0);
    let steer = (rng.uniform_range(-5.0, 5.0), rng.uniform_range(-5.0, 5.0));
    let mut ubot = smooth_noise(&grid, rng, 3.0, 10.0, 40.0);
    let mut vbot = smooth_noise(&grid, rng, 3.0, 10.0, 40.0);
    let mut u850 = smooth_noise(&grid, rng, 3.0, 10.0, 40.0);
    let mut v850 = smooth_noise(&grid, rng, 3.0, 10.0, 40.0);
    for i in 0..grid.len() {
        ubot[i] += steer.0;
        vbot[i] += steer.1;
        u850[i] += 1.3 * steer.0;
        v850[i] += 1.3 * steer.1;
    }
    let mut t200 = smooth_noise(&grid, rng, 1.5, 10.0, 50.0);
    t200.iter_mut().for_each(|v| *v += 220.0);
    let mut t500 = smooth_noise(&grid, rng, 1.5, 10.0, 50.0);
    t500.iter_mut().for_each(|v| *v += 260.0);
    let mut tmq = smooth_noise(&grid, rng, 5.0, 10.0, 50.0);
    tmq.iter_mut().for_each(|v| *v += 45.0);

    let low = |psl: &mut Vec<f64>, centre: (f64, f64), depth: f64, radius: f64| {
        let well = grid.plane(|r, c| {
            let d2 = (r - centre.0).powi(2) + (c - centre.1).powi(2);
            -depth * gaussian(d2, radius)
        });
        add(psl, &well);
    };

    if positive {
        let depth = rng.uniform_range(1200.0, 4000.0);
        let radius = rng.uniform_range(2.5, 5.0);
        low(&mut psl, cf, depth, radius);
        let vmax = rng.uniform_range(15.0, 40.0);
        let (u, v) = vortex_winds(&grid, cf, vmax, 1.2 * radius);
        add(&mut ubot, &u);
        add(&mut vbot, &v);
        add(&mut u850, &u.iter().map(|x| 0.8 * x).collect::<Vec<_>>());
        add(&mut v850, &v.iter().map(|x| 0.8 * x).collect::<Vec<_>>());
        let warm = rng.uniform_range(1.0, 4.0);
        let core = grid
            .plane(|r, c| warm * gaussian((r - cf.0).powi(2) + (c - cf.1).powi(2), 1.5 * radius));
        add(&mut t200, &core);
        add(&mut t500, &core.iter().map(|x| 0.6 * x).collect::<Vec<_>>());
        let moist = rng.uniform_range(5.0, 15.0);
        add(
            &mut tmq,
            &grid.plane(|r, c| {
                moist * gaussian((r - cf.0).powi(2) + (c - cf.1).powi(2), 2.0 * radius)
            }),
        );
    } else {
        match rng.below(3) {
            0 => {}
            1 => {
                // Broad, shallow depression without an organised vortex.
                let depth = rng.uniform_range(600.0, 2000.0);
                let radius = rng.uniform_range(7.0, 12.0);
                low(&mut psl, cf, depth, radius);
                let moist = rng.uniform_range(0.0, 10.0);
                add(
                    &mut tmq,
                    &grid.plane(|r, c| {
                        moist * gaussian((r - cf.0).powi(2) + (c - cf.1).powi(2), radius)
                    }),
                );
            }
            _ => {
                // Weak system well away from the patch centre.
                let dist = rng.uniform_range(9.0, 14.0);
                let angle = rng.uniform_range(0.0, 2.0 * PI);
                let centre = (cf.0 + dist * angle.sin(), cf.1 + dist * angle.cos());
                let radius = rng.uniform_range(3.0, 6.0);
                low(&mut psl, centre, rng.uniform_range(500.0, 1500.0), radius);
                let (u, v) =
                    vortex_winds(&grid, centre, rng.uniform_range(3.0, 10.0), 1.2 * radius);
                add(&mut ubot, &u);
                add(&mut vbot, &v);
            }
        }
    }

    let planes = [psl, vbot, ubot, t200, t500, tmq, v850, u850];
    let channels = planes
        .into_iter()
        .enumerate()
        .map(|(i, p)| channel(kind, i, p))
        .collect();
    Ok(SynthField {
        stack: FieldStack::new(grid.h, grid.w, channels)?,
        centroid,
    })
}

fn atmospheric_river(positive: bool, rng: &mut Rng) -> Result<SynthField> {
    let kind = EventKind::AtmosphericRiver;
    let grid = Grid::for_kind(kind);
    let centroid = jitter_centroid(&grid, rng, 8, 8);
    let cf = (centroid.0 as f64, centroid.1 as f64);

    let mut tmq = smooth_noise(&grid, rng, 4.0, 30.0, 120.0);
    let south = rng.uniform_range(5.0, 12.0);
    for r in 0..grid.h {
        let base = 12.0 + south * r as f64 / grid.h as f64;
        tmq[r * grid.w..(r + 1) * grid.w]
            .iter_mut()
            .for_each(|v| *v += base);
    }

    if positive {
        let theta = rng.uniform_range(-40.0, 40.0).to_radians();
        let (st, ct) = theta.sin_cos();
        let curvature = rng.uniform_range(-0.004, 0.004);
        let width = rng.uniform_range(4.0, 8.0);
        let amp = rng.uniform_range(12.0, 25.0);
        let half_len = rng.uniform_range(100.0, 200.0);
        let ripple_phase = rng.uniform_range(0.0, 2.0 * PI);
        let ridge = grid.plane(|r, c| {
            let (dr, dc) = (r - cf.0, c - cf.1);
            let along = dr * ct + dc * st;
            let across = -dr * st + dc * ct - curvature * along * along;
            let taper = 1.0 / (1.0 + ((along.abs() - half_len) / 8.0).exp());
            let ripple = 1.0 + 0.2 * (along / 25.0 + ripple_phase).sin();
            amp * ripple * taper * gaussian(across * across, width)
        });
        add(&mut tmq, &ridge);
    } else if rng.chance(0.5) {
        // Round moisture blob: similar peak, no elongation.
        let amp = rng.uniform_range(12.0, 25.0);
        let sa = rng.uniform_range(10.0, 18.0);
        let sb = sa * rng.uniform_range(1.0 / 1.5, 1.0);
        let phi = rng.uniform_range(0.0, PI);
        let (sp, cp) = phi.sin_cos();
        let blob = grid.plane(|r, c| {
            let (dr, dc) = (r - cf.0, c - cf.1);
            let a = dr * cp + dc * sp;
            let b = -dr * sp + dc * cp;
            amp * (-(a * a) / (2.0 * sa * sa) - (b * b) / (2.0 * sb * sb)).exp()
        });
        add(&mut tmq, &blob);
    }

    // Land to one side of a wavy coastline; unrelated to the label.
    let coast = rng.uniform_range(0.3, 0.7) * grid.w as f64;
    let wiggle = rng.uniform_range(5.0, 25.0);
    let wavelength = rng.uniform_range(40.0, 120.0);
    let phase = rng.uniform_range(0.0, 2.0 * PI);
    let land_east = rng.chance(0.5);
    let mask = grid.plane(|r, c| {
        let edge = coast + wiggle * (2.0 * PI * r / wavelength + phase).sin();
        if (c > edge) == land_east {
            1.0
        } else {
            0.0
        }
    });

    let channels = vec![channel(kind, 0, tmq), channel(kind, 1, mask)];
    Ok(SynthField {
        stack: FieldStack::new(grid.h, grid.w, channels)?,
        centroid,
    })
}

fn weather_front(positive: bool, rng: &mut Rng) -> Result<SynthField> {
    let kind = EventKind::WeatherFront;
    let grid = Grid::for_kind(kind);
    let centroid = jitter_centroid(&grid, rng, 3, 5);
    let cf = (centroid.0 as f64, centroid.1 as f64);

    let mut t2m = smooth_noise(&grid, rng, 1.5, 15.0, 60.0);
    t2m.iter_mut().for_each(|v| *v += 285.0);
    let mut precip: Vec<f64> = smooth_noise(&grid, rng, 1.5, 6.0, 20.0)
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    let mut slp = smooth_noise(&grid, rng, 200.0, 20.0, 80.0);
    slp.iter_mut().for_each(|v| *v += 101_000.0);

    let phi = rng.uniform_range(-50.0, 50.0).to_radians();
    let (sp, cp) = phi.sin_cos();
    let across = |r: f64, c: f64| (r - cf.0) * cp - (c - cf.1) * sp;
    let along = |r: f64, c: f64| (r - cf.0) * sp + (c - cf.1) * cp;
    let warm_side = if rng.chance(0.5) { 1.0 } else { -1.0 };
    let delta_t = rng.uniform_range(6.0, 14.0);

    if positive {
        let sharpness = rng.uniform_range(1.5, 3.0);
        add(
            &mut t2m,
            &grid.plane(|r, c| warm_side * 0.5 * delta_t * (across(r, c) / sharpness).tanh()),
        );
        let amp = rng.uniform_range(8.0, 25.0);
        let width = rng.uniform_range(1.2, 2.5);
        let shift = rng.uniform_range(-1.0, 1.0);
        let cell_phase = rng.uniform_range(0.0, 2.0 * PI);
        let cell_len = rng.uniform_range(6.0, 14.0);
        add(
            &mut precip,
            &grid.plane(|r, c| {
                let t = across(r, c) - shift;
                let cells = 1.0 + 0.7 * (along(r, c) / cell_len + cell_phase).sin();
                amp * cells * gaussian(t * t, width)
            }),
        );
        let trough = rng.uniform_range(200.0, 600.0);
        add(
            &mut slp,
            &grid.plane(|r, c| -trough * gaussian(across(r, c).powi(2), 4.0)),
        );
    } else {
        // Broad temperature gradient without a sharp band.
        let spread = rng.uniform_range(10.0, 20.0);
        add(
            &mut t2m,
            &grid.plane(|r, c| warm_side * 0.5 * delta_t * (across(r, c) / spread).tanh()),
        );
        let near_miss = rng.chance(0.4);
        for k in 0..4 + rng.below(8) {
            // Sometimes a shower sits right at the patch centre.
            let centre = if k == 0 && near_miss {
                (
                    cf.0 + rng.uniform_range(-2.0, 2.0),
                    cf.1 + rng.uniform_range(-2.0, 2.0),
                )
            } else {
                (
                    rng.uniform_range(0.0, grid.h as f64),
                    rng.uniform_range(0.0, grid.w as f64),
                )
            };
            let amp = rng.uniform_range(8.0, 25.0);
            let sigma = rng.uniform_range(1.2, 3.0);
            add(
                &mut precip,
                &grid.plane(|r, c| {
                    amp * gaussian((r - centre.0).powi(2) + (c - centre.1).powi(2), sigma)
                }),
            );
        }
        let depth = rng.uniform_range(0.0, 500.0);
        let centre = (
            rng.uniform_range(0.0, grid.h as f64),
            rng.uniform_range(0.0, grid.w as f64),
        );
        add(
            &mut slp,
            &grid.plane(|r, c| {
                -depth * gaussian((r - centre.0).powi(2) + (c - centre.1).powi(2), 12.0)
            }),
        );
    }

    let channels = vec![
        channel(kind, 0, t2m),
        channel(kind, 1, precip),
        channel(kind, 2, slp),
    ];
    Ok(SynthField {
        stack: FieldStack::new(grid.h, grid.w, channels)?,
        centroid,
    })
}

/// One labeled synthetic field; deterministic given `rng`.
pub fn synth_event_field(kind: EventKind, positive: bool, rng: &mut Rng) -> Result<SynthField> {
    match kind {
        EventKind::TropicalCyclone => cyclone(positive, rng),
        EventKind::AtmosphericRiver => atmospheric_river(positive, rng),
        EventKind::WeatherFront => weather_front(positive, rng),
    }
}

/// `n_pos` positives followed by `n_neg` negatives, each extracted as a
/// centred patch of the kind's dims. Record `i` is generated from seed
/// `base + i` where `base` is drawn from `rng`, so any schedule produces
/// the same dataset.
pub fn build_synthetic_dataset(
    kind: EventKind,
    n_pos: usize,
    n_neg: usize,
    rng: &mut Rng,
) -> Result<PatchDataset> {
    build_synthetic_dataset_with(kind, n_pos, n_neg, rng, Execution::default())
}

pub fn build_synthetic_dataset_with(
    kind: EventKind,
    n_pos: usize,
    n_neg: usize,
    rng: &mut Rng,
    exec: Execution,
) -> Result<PatchDataset> {
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::validation(
            "need at least one positive and one negative record",
        ));
    }
    let base = rng.next_u64();
    let [_, m, n] = kind.patch_dims();
    let records = exec.map_range(n_pos + n_neg, |i| {
        let positive = i < n_pos;
        let mut rec_rng = Rng::new(base.wrapping_add(i as u64));
        let field = synth_event_field(kind, positive, &mut rec_rng)?;
        let bbox = BoundingBox {
            center_row: field.stack.height / 2,
            center_col: field.stack.width / 2,
            height: m,
            width: n,
        };
        let label = if positive {
            Label::Positive
        } else {
            Label::Negative
        };
        extract_patch(
            &field.stack,
            bbox,
            field.centroid,
            kind.channel_names(),
            label,
            &format!("{}-{i:06}", kind.tag()),
        )
    });
    PatchDataset::new(kind, records.into_iter().collect::<Result<Vec<_>>>()?)
}

/// Best accuracy of a single threshold on the centre pixel of any one
/// channel, over both polarities. A weak baseline the CNN should beat.
pub fn threshold_baseline(dataset: &PatchDataset) -> f64 {
    let [p, m, n] = dataset.dims;
    let total = dataset.len();
    if total == 0 {
        return 0.0;
    }
    let positives = dataset.count(Label::Positive);
    let mut best: f64 = 0.0;
    for c in 0..p {
        let mut vals: Vec<(f64, bool)> = dataset
            .records
            .iter()
            .map(|r| (r.patch.at(&[c, m / 2, n / 2]), r.label == Label::Positive))
            .collect();
        vals.sort_by(|a, b| a.0.total_cmp(&b.0));
        // Sweep a cut between distinct values: everything below is one class.
        let mut pos_below = 0usize;
        let mut i = 0;
        best = best.max(positives.max(total - positives) as f64 / total as f64);
        while i < vals.len() {
            let v = vals[i].0;
            while i < vals.len() && vals[i].0 == v {
                pos_below += usize::from(vals[i].1);
                i += 1;
            }
            let below = i;
            let neg_below = below - pos_below;
            let neg_above = (total - positives) - neg_below;
            let pos_above = positives - pos_below;
            let high_is_positive = pos_above + neg_below;
            let low_is_positive = pos_below + neg_above;
            best = best.max(high_is_positive.max(low_is_positive) as f64 / total as f64);
        }
    }
    best
}
