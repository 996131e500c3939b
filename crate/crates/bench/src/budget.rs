//! Matching the budget of a comparator to a reference algorithm.
//!
//! Evaluation counts per step: nested SMC with `N` outer particles and `M`
//! inner particles over `c` components evaluates `N · M · c` component
//! densities; a bootstrap filter with `N_b` particles evaluates `N_b · c`.
//! Equal counts give `N_b = N · M`.

use std::time::{Duration, Instant};

use serde::Serialize;

/// How a comparator's particle count was chosen, recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetRecord {
    pub mode: String,
    pub count_model: String,
    pub reference_particles: usize,
    pub reference_inner: usize,
    pub comparator_particles: usize,
}

/// Bootstrap particle count with the same density-evaluation count as a
/// nested run with `n_particles · m` inner particles per step.
pub fn matched_budget(n_particles: usize, m: usize) -> BudgetRecord {
    BudgetRecord {
        mode: "evaluations".into(),
        count_model: "per step: N*M*components (nested) = N_bootstrap*components (bootstrap)".into(),
        reference_particles: n_particles,
        reference_inner: m,
        comparator_particles: n_particles.saturating_mul(m).max(1),
    }
}

fn time_it(mut f: impl FnMut()) -> Duration {
    let start = Instant::now();
    f();
    start.elapsed()
}

/// Comparator particle count matching the measured time of `reference`.
///
/// The comparator is timed once at `pilot` particles and its cost is taken to
/// be linear in the particle count.
pub fn time_matched_particles(reference: impl FnMut(), mut comparator: impl FnMut(usize), pilot: usize) -> usize {
    let t_ref = time_it(reference).as_secs_f64();
    let t_pilot = time_it(|| comparator(pilot)).as_secs_f64().max(1e-9);
    ((pilot as f64 * t_ref / t_pilot).round() as usize).max(1)
}
