//! The master/worker trial loop.
//!
//! The master owns the GP, the random stream and the store. Workers run on
//! scoped threads, each with its own objective invocation, and report back
//! over a channel. Every state change is appended to the store before the
//! master moves on.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::mpsc;
use std::thread;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::numerics::Rng;

use super::acquisition::{halton_point, propose_next};
use super::gp::{gp_fit, gp_posterior};
use super::space::HyperSpace;
use super::store::{latest_states, unix_now, Trial, TrialStatus, TrialStore};

/// What a worker hands to the objective.
#[derive(Clone, Debug)]
pub struct TrialRequest {
    pub id: u64,
    /// Unit-box coordinates.
    pub point: Vec<f64>,
    /// Natural-unit values in search-space order.
    pub values: Vec<f64>,
    pub seed: u64,
}

/// Number of space-filling trials before the GP takes over.
pub fn initial_design_size(dim: usize) -> usize {
    5.max(dim + 1)
}

struct Master<'a> {
    space: &'a HyperSpace,
    shift: Vec<f64>,
    n_init: usize,
}

impl Master<'_> {
    fn design_point(&self, ordinal: usize) -> Vec<f64> {
        let mut x = halton_point(ordinal as u64 + 1, &self.shift);
        self.space.snap(&mut x);
        x
    }

    fn propose(&self, finished: &[Trial], in_flight: &[Trial], rng: &mut Rng) -> Vec<f64> {
        let ordinal = finished.len() + in_flight.len();
        let done: Vec<&Trial> = finished
            .iter()
            .filter(|t| t.status == TrialStatus::Done)
            .collect();
        if ordinal < self.n_init || done.is_empty() {
            return self.design_point(ordinal);
        }
        let pts: Vec<Vec<f64>> = done.iter().map(|t| t.point.clone()).collect();
        let ys: Vec<f64> = done.iter().filter_map(|t| t.loss).collect();
        let Ok(mut model) = gp_fit(&pts, &ys) else {
            return self.design_point(ordinal);
        };
        if !in_flight.is_empty() {
            // Pending trials are pinned at the current posterior mean.
            let pending: Vec<Vec<f64>> = in_flight.iter().map(|t| t.point.clone()).collect();
            let fantasies: Vec<f64> = pending
                .iter()
                .map(|p| gp_posterior(&model, p).map_or(0.0, |v| v.0))
                .collect();
            match model.with_observations(&pending, &fantasies) {
                Ok(m) => model = m,
                Err(_) => return self.design_point(ordinal),
            }
        }
        propose_next(&model, self.space, rng).unwrap_or_else(|_| self.design_point(ordinal))
    }
}

fn best_trial(finished: &[Trial]) -> Option<Trial> {
    let mut sorted: Vec<&Trial> = finished.iter().collect();
    sorted.sort_by_key(|t| t.id);
    let mut best: Option<&Trial> = None;
    for t in sorted.iter().filter(|t| t.status == TrialStatus::Done) {
        if best.is_none_or(|b| t.loss < b.loss) {
            best = Some(t);
        }
    }
    best.or_else(|| finished.last()).cloned()
}

/// Runs trials until `budget` of them have finished (counting those already
/// in the store) and returns the lowest-loss done trial. If every trial
/// failed, the most recently finished one is returned.
///
/// Trials left running by an interrupted run are evaluated again with
/// their original point and seed. Objective errors, panics and non-finite
/// losses mark the trial failed with an infinite loss.
pub fn run_optimization<F>(
    space: &HyperSpace,
    objective: &F,
    budget: usize,
    parallelism: usize,
    store: &mut TrialStore,
    rng: &mut Rng,
) -> Result<Trial>
where
    F: Fn(&TrialRequest) -> std::result::Result<f64, String> + Sync,
{
    if budget == 0 || parallelism == 0 {
        return Err(Error::validation(
            "budget and parallelism must be at least 1",
        ));
    }
    let (mut finished, mut resume): (Vec<Trial>, Vec<Trial>) = latest_states(store.load()?)
        .into_iter()
        .partition(|t| t.status.is_finished());
    if let Some(t) = finished
        .iter()
        .chain(&resume)
        .find(|t| t.point.len() != space.len())
    {
        return Err(Error::validation(format!(
            "trial {} does not match the search space",
            t.id
        )));
    }
    finished.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp).then(a.id.cmp(&b.id)));
    let mut next_id = finished
        .iter()
        .chain(&resume)
        .map(|t| t.id + 1)
        .max()
        .unwrap_or(0);
    let master = Master {
        space,
        shift: (0..space.len()).map(|_| rng.uniform()).collect(),
        n_init: initial_design_size(space.len()),
    };
    let remaining = budget.saturating_sub(finished.len());
    resume.truncate(remaining);
    resume.reverse();

    let (tx, rx) = mpsc::channel::<(u64, std::result::Result<f64, String>, f64)>();
    thread::scope(|scope| -> Result<()> {
        let mut in_flight: Vec<Trial> = Vec::new();
        let mut launched = 0;
        loop {
            while in_flight.len() < parallelism && launched < remaining {
                let mut trial = match resume.pop() {
                    Some(t) => t,
                    None => {
                        let point = master.propose(&finished, &in_flight, rng);
                        let seed = rng.next_u64();
                        let values = space.denormalize(&point)?;
                        let t = Trial {
                            id: next_id,
                            status: TrialStatus::Proposed,
                            point,
                            values: space
                                .dims()
                                .iter()
                                .map(|d| d.name.clone())
                                .zip(values)
                                .collect::<BTreeMap<_, _>>(),
                            loss: None,
                            seed,
                            wall_time: 0.0,
                            timestamp: unix_now(),
                            error: None,
                        };
                        next_id += 1;
                        store.append(&t)?;
                        t
                    }
                };
                trial.status = TrialStatus::Running;
                trial.timestamp = unix_now();
                store.append(&trial)?;
                let req = TrialRequest {
                    id: trial.id,
                    point: trial.point.clone(),
                    values: space.denormalize(&trial.point)?,
                    seed: trial.seed,
                };
                let tx = tx.clone();
                scope.spawn(move || {
                    let start = Instant::now();
                    let out = catch_unwind(AssertUnwindSafe(|| objective(&req)))
                        .unwrap_or_else(|_| Err("objective panicked".to_string()));
                    let _ = tx.send((req.id, out, start.elapsed().as_secs_f64()));
                });
                in_flight.push(trial);
                launched += 1;
            }
            if in_flight.is_empty() {
                return Ok(());
            }
            let (id, outcome, wall) = rx.recv().expect("a worker is always in flight here");
            let pos = in_flight
                .iter()
                .position(|t| t.id == id)
                .expect("reply from a known trial");
            let mut t = in_flight.remove(pos);
            t.wall_time = wall;
            t.timestamp = unix_now();
            match outcome {
                Ok(l) if l.is_finite() => {
                    t.status = TrialStatus::Done;
                    t.loss = Some(l);
                }
                Ok(l) => {
                    t.status = TrialStatus::Failed;
                    t.loss = Some(f64::INFINITY);
                    t.error = Some(format!("objective returned {l}"));
                }
                Err(msg) => {
                    t.status = TrialStatus::Failed;
                    t.loss = Some(f64::INFINITY);
                    t.error = Some(msg);
                }
            }
            store.append(&t)?;
            finished.push(t);
        }
    })?;
    best_trial(&finished).ok_or_else(|| Error::State("no trial finished".into()))
}
