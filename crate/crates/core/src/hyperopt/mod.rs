//! Bayesian hyperparameter search: a Gaussian-process surrogate of the
//! validation loss, expected improvement over a bounded box, and a
//! master/worker loop that records every trial in an append-only store.

mod acquisition;
mod gp;
mod optimize;
mod space;
mod store;

pub use acquisition::{
    ei_closed_form, expected_improvement, halton_point, propose_next, CANDIDATES, REFINE_STARTS,
    REFINE_STEPS,
};
pub use gp::{gp_fit, gp_fit_with, gp_posterior, GpHyper, GpModel, NOISE_FLOOR};
pub use optimize::{initial_design_size, run_optimization, TrialRequest};
pub use space::{DimKind, Dimension, HyperSpace};
pub use store::{latest_states, Trial, TrialStatus, TrialStore};
