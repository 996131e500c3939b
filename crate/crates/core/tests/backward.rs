mod common;

use common::{assert_within_se, lse};
use nalgebra::{DMatrix, DVector};
use nsmc::backward::{
    backward_simulate_fa, backward_simulate_weighted, nsmc_as_proper_sampler, nsmc_aux_as_proper_sampler,
};
use nsmc::engine::{run_fully_adapted_smc, run_nested_smc_aux, ExactFactory, UnitMultiplier};
use nsmc::history::ParticleHistory;
use nsmc::models::hmm::{HmmOptimal, HmmPrior, HmmTarget};
use nsmc::models::lattice::{
    inner_chain_target, simulate_generating_ssm, ComponentPrior, GaussianLatticeParams, LatticeOptimal, LatticeTarget,
};
use nsmc::sampler::ProperSampler;
use nsmc::target::{Path, SequentialTarget};
use nsmc::weight::Categorical;
use nsmc::{LogWeight, RngStream};

fn all_paths(n: usize) -> Vec<Vec<usize>> {
    (0..1usize << n).map(|c| (0..n).map(|k| (c >> k) & 1).collect()).collect()
}

fn path_code(p: &[usize]) -> usize {
    p.iter().enumerate().map(|(k, &s)| s << k).sum()
}

/// Exact `p(x_{1:n} | y_{1:n})` for every path, indexed by [`path_code`].
fn exact_smoothing(t: &HmmTarget) -> Vec<f64> {
    let logs: Vec<f64> = all_paths(t.horizon()).iter().map(|p| t.log_pi(p)).collect();
    let z = lse(&logs);
    logs.iter().map(|l| (l - z).exp()).collect()
}

/// Path frequencies from several independent histories, checked against the
/// exact smoothing distribution with the between-history standard error (a
/// single history carries its own particle approximation error).
fn assert_frequencies(runs: &[Vec<Vec<usize>>], exact: &[f64]) {
    let per_run: Vec<Vec<f64>> = runs
        .iter()
        .map(|draws| {
            let mut f = vec![0.0; exact.len()];
            for d in draws {
                f[path_code(d)] += 1.0 / draws.len() as f64;
            }
            f
        })
        .collect();
    for (c, p) in exact.iter().enumerate() {
        let xs: Vec<f64> = per_run.iter().map(|f| f[c]).collect();
        assert_within_se(&xs, *p, 3.0, "path frequency");
    }
}

#[test]
fn fully_adapted_backward_draws_match_exact_smoothing() {
    let t = HmmTarget::two_state_example(3);
    let master = RngStream::from_seed(41);
    let runs: Vec<Vec<Vec<usize>>> = (0..20)
        .map(|r| {
            let rng = master.split(r);
            let h = run_fully_adapted_smc(&t, &HmmOptimal, 300, &rng.split(0)).unwrap();
            (0..2000)
                .map(|i| backward_simulate_fa(&h, &t, &mut rng.split(1).split(i)).unwrap().values)
                .collect()
        })
        .collect();
    assert_frequencies(&runs, &exact_smoothing(&t));
}

#[test]
fn weighted_backward_draws_match_exact_smoothing() {
    let t = HmmTarget::two_state_example(3);
    let master = RngStream::from_seed(43);
    let runs: Vec<Vec<Vec<usize>>> = (0..20)
        .map(|r| {
            let rng = master.split(r);
            let h = run_nested_smc_aux(&t, &ExactFactory(HmmPrior), &HmmPrior, &UnitMultiplier, 300, 1, &rng.split(0))
                .unwrap();
            assert!(backward_simulate_fa(&h, &t, &mut rng.split(2)).is_err());
            (0..2000)
                .map(|i| backward_simulate_weighted(&h, &t, &mut rng.split(1).split(i)).unwrap().values)
                .collect()
        })
        .collect();
    assert_frequencies(&runs, &exact_smoothing(&t));
}

#[test]
fn wrapped_runs_are_properly_weighted() {
    let t = HmmTarget::two_state_example(3);
    let exact: Vec<f64> = all_paths(3).iter().map(|p| t.log_pi(p).exp()).collect();
    let master = RngStream::from_seed(44);
    let reps = 3000;
    let mut fa = vec![vec![0.0; reps]; 8];
    let mut aux = vec![vec![0.0; reps]; 8];
    for r in 0..reps {
        let rng = master.split(r as u64);
        let s = nsmc_as_proper_sampler(t.clone(), &ExactFactory(HmmOptimal), 10, 1, &rng.split(0)).unwrap();
        let x = s.simulate(&mut rng.split(1)).unwrap();
        fa[path_code(&x)][r] = s.log_z().linear();
        let s = nsmc_aux_as_proper_sampler(t.clone(), &ExactFactory(HmmPrior), &HmmPrior, &UnitMultiplier, 10, 1, &rng.split(2))
            .unwrap();
        let x = s.simulate(&mut rng.split(3)).unwrap();
        aux[path_code(&x)][r] = s.log_z().linear();
    }
    for c in 0..8 {
        assert_within_se(&fa[c], exact[c], 3.0, "fully adapted wrapper");
        assert_within_se(&aux[c], exact[c], 3.0, "bootstrap wrapper");
    }
}

#[test]
fn inner_component_chain_sampler_is_properly_weighted() {
    // The chain's unnormalized density is exp(log_c - ½ xᵀAx + bᵀx) with
    // A = tridiag(τ_ρ + τ_φ + ψ terms), so E[Z f(X)] has a closed form.
    let p = GaussianLatticeParams::with_default_theta(3).unwrap();
    let x_prev = [0.4, -0.3, 1.1];
    let y = [0.2, 0.5, -0.6];
    let chain = inner_chain_target(&p, Some(&x_prev), &y).unwrap();

    let mut a = DMatrix::zeros(3, 3);
    let mut b = DVector::zeros(3);
    for l in 0..3 {
        a[(l, l)] += p.tau_rho + p.tau_phi;
        b[l] = p.tau_phi * y[l] + p.a * p.tau_rho * x_prev[l];
        if l > 0 {
            a[(l, l)] += p.tau_psi;
            a[(l - 1, l - 1)] += p.tau_psi;
            a[(l, l - 1)] -= p.tau_psi;
            a[(l - 1, l)] -= p.tau_psi;
        }
    }
    let log_c = -0.5 * p.tau_phi * y.iter().map(|v| v * v).sum::<f64>()
        - 0.5 * p.a * p.a * p.tau_rho * x_prev.iter().map(|v| v * v).sum::<f64>();
    let chol = a.clone().cholesky().unwrap();
    let mean = chol.solve(&b);
    let log_z = log_c + 1.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * a.determinant().ln() + 0.5 * b.dot(&mean);

    let master = RngStream::from_seed(45);
    let reps = 4000;
    let mut z = Vec::with_capacity(reps);
    let mut zx: Vec<Vec<f64>> = (0..3).map(|_| Vec::with_capacity(reps)).collect();
    for r in 0..reps {
        let rng = master.split(r as u64);
        let s = nsmc_aux_as_proper_sampler(chain.clone(), &ExactFactory(ComponentPrior), &ComponentPrior, &UnitMultiplier, 20, 1, &rng)
            .unwrap();
        let x = s.simulate(&mut rng.split(1)).unwrap();
        let w = (s.log_z().ln() - log_z).exp();
        z.push(w);
        for l in 0..3 {
            zx[l].push(w * x[l]);
        }
    }
    assert_within_se(&z, 1.0, 3.0, "inner Z");
    for l in 0..3 {
        assert_within_se(&zx[l], mean[l], 3.0, "inner Z·x");
    }
}

/// Trajectory by tracing the ancestors of a uniformly drawn final particle.
fn ancestral_draw<S: Clone>(h: &ParticleHistory<S>, rng: &mut RngStream) -> Vec<usize> {
    let n = h.steps();
    let b = Categorical::new(&vec![LogWeight::ONE; h.n_particles()]).unwrap().sample(rng);
    (0..n).map(|k| h.ancestor_at(n - 1, b, k)).collect()
}

#[test]
fn backward_simulation_keeps_more_diversity_than_ancestral_tracing() {
    let params = GaussianLatticeParams::with_default_theta(2).unwrap();
    let (_, y) = simulate_generating_ssm(&params, 30, &mut RngStream::from_seed(46)).unwrap();
    let t = LatticeTarget::new(params, y).unwrap();
    let h = run_fully_adapted_smc(&t, &LatticeOptimal, 50, &RngStream::from_seed(47)).unwrap();
    let master = RngStream::from_seed(48);
    let mut backward = std::collections::HashSet::new();
    let mut ancestral = std::collections::HashSet::new();
    for i in 0..1000 {
        backward.insert(backward_simulate_fa(&h, &t, &mut master.split(i)).unwrap().indices[0]);
        ancestral.insert(ancestral_draw(&h, &mut master.split(i))[0]);
    }
    assert!(backward.len() >= ancestral.len(), "{} < {}", backward.len(), ancestral.len());
    assert!(ancestral.len() < 50, "history is not path degenerate");
}

/// The example HMM with a coarser declared Markov window.
struct Windowed(HmmTarget, Option<usize>);

impl SequentialTarget for Windowed {
    type State = usize;
    fn horizon(&self) -> usize {
        self.0.horizon()
    }
    fn log_increment(&self, path: &dyn Path<usize>) -> f64 {
        self.0.log_increment(path)
    }
    fn markov_window(&self) -> Option<usize> {
        self.1
    }
}

#[test]
fn markov_window_shortcut_gives_the_same_draws() {
    let t = HmmTarget::two_state_example(6);
    let h = run_fully_adapted_smc(&t, &HmmOptimal, 40, &RngStream::from_seed(49)).unwrap();
    let master = RngStream::from_seed(50);
    for window in [None, Some(2)] {
        let wide = Windowed(t.clone(), window);
        for i in 0..200 {
            let a = backward_simulate_fa(&h, &t, &mut master.split(i)).unwrap();
            let b = backward_simulate_fa(&h, &wide, &mut master.split(i)).unwrap();
            assert_eq!(a.indices, b.indices);
        }
    }
}
