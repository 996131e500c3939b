mod common;

use common::{assert_within_se, chi_square, lse};
use nsmc::engine::{
    run_fully_adapted_smc, run_nested_smc_aux, run_nested_smc_fa, ExactFactory, FullyAdaptedMultiplier,
    OptimalProposal, StepProposalDensity, UnitMultiplier,
};
use nsmc::models::hmm::{HmmOptimal, HmmPrior, HmmTarget};
use nsmc::models::lattice::{
    lattice_nested_factory, simulate_generating_ssm, GaussianLatticeParams, LatticeBootstrap, LatticeOptimal,
    LatticeTarget,
};
use nsmc::oracle::gaussian::gaussian_filter;
use nsmc::target::{Path, SequentialTarget};
use nsmc::{Error, RngStream};

/// `log p(y_{1:n})` of the example HMM by summing over all `2^n` paths.
fn brute_force_log_evidence(t: &HmmTarget) -> f64 {
    let n = t.horizon();
    let terms: Vec<f64> = (0..1usize << n)
        .map(|code| {
            let path: Vec<usize> = (0..n).map(|k| (code >> k) & 1).collect();
            t.log_pi(&path)
        })
        .collect();
    lse(&terms)
}

fn lattice_problem(d: usize, n: usize, seed: u64) -> (LatticeTarget, f64) {
    let params = GaussianLatticeParams::with_default_theta(d).unwrap();
    let (_, y) = simulate_generating_ssm(&params, n, &mut RngStream::from_seed(seed)).unwrap();
    let log_z = *gaussian_filter(&params, &y).unwrap().log_evidence.last().unwrap();
    (LatticeTarget::new(params, y).unwrap(), log_z)
}

#[test]
fn exact_factory_reproduces_fully_adapted_smc_bit_for_bit() {
    let t = HmmTarget::two_state_example(8);
    let rng = RngStream::from_seed(77);
    let a = run_fully_adapted_smc(&t, &HmmOptimal, 30, &rng).unwrap();
    let b = run_nested_smc_fa(&t, &ExactFactory(HmmOptimal), 30, 5, &rng).unwrap();
    for k in 0..8 {
        assert_eq!(a.values(k), b.values(k));
        assert_eq!(a.ancestors(k), b.ancestors(k));
    }
    let bits = |h: &nsmc::history::ParticleHistory<usize>| h.log_z_trace().iter().map(|z| z.ln().to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));

    let (lt, _) = lattice_problem(5, 4, 3);
    let a = run_fully_adapted_smc(&lt, &LatticeOptimal, 12, &rng).unwrap();
    let b = run_nested_smc_fa(&lt, &ExactFactory(LatticeOptimal), 12, 1, &rng).unwrap();
    for k in 0..4 {
        let fa: Vec<Vec<u64>> = a.values(k).iter().map(|v| v.iter().map(|x| x.to_bits()).collect()).collect();
        let fb: Vec<Vec<u64>> = b.values(k).iter().map(|v| v.iter().map(|x| x.to_bits()).collect()).collect();
        assert_eq!(fa, fb);
        assert_eq!(a.ancestors(k), b.ancestors(k));
        assert_eq!(a.log_z_trace()[k].ln().to_bits(), b.log_z_trace()[k].ln().to_bits());
    }
}

#[test]
fn aux_engine_with_optimal_proposal_and_full_adaptation_matches_fa() {
    let t = HmmTarget::two_state_example(6);
    let rng = RngStream::from_seed(5);
    let fa = run_nested_smc_fa(&t, &ExactFactory(HmmOptimal), 25, 1, &rng).unwrap();
    let aux = run_nested_smc_aux(&t, &ExactFactory(HmmOptimal), &OptimalProposal, &FullyAdaptedMultiplier, 25, 1, &rng)
        .unwrap();
    for k in 0..6 {
        assert_eq!(fa.values(k), aux.values(k));
        assert!((fa.log_z_trace()[k].ln() - aux.log_z_trace()[k].ln()).abs() < 1e-12);
        assert!(aux.log_weights(k).iter().all(|w| w.ln().abs() < 1e-12));
    }
}

#[test]
fn fully_adapted_smc_is_unbiased_on_the_hmm() {
    let t = HmmTarget::two_state_example(8);
    let log_z = brute_force_log_evidence(&t);
    let master = RngStream::from_seed(11);
    let ratios: Vec<f64> = (0..3000)
        .map(|r| {
            let h = run_fully_adapted_smc(&t, &HmmOptimal, 5, &master.split(r)).unwrap();
            (h.log_z().ln() - log_z).exp()
        })
        .collect();
    assert_within_se(&ratios, 1.0, 3.0, "fully adapted SMC");
}

#[test]
fn single_particle_runs_are_still_unbiased() {
    let t = HmmTarget::two_state_example(4);
    let log_z = brute_force_log_evidence(&t);
    let master = RngStream::from_seed(12);
    let fa: Vec<f64> = (0..20_000)
        .map(|r| {
            let h = run_fully_adapted_smc(&t, &HmmOptimal, 1, &master.split(r)).unwrap();
            assert!(h.ancestors(3).iter().all(|&a| a == 0));
            (h.log_z().ln() - log_z).exp()
        })
        .collect();
    assert_within_se(&fa, 1.0, 3.0, "N = 1, fully adapted");
    let boot: Vec<f64> = (0..20_000)
        .map(|r| {
            let h = run_nested_smc_aux(&t, &ExactFactory(HmmPrior), &HmmPrior, &UnitMultiplier, 1, 1, &master.split(r))
                .unwrap();
            (h.log_z().ln() - log_z).exp()
        })
        .collect();
    assert_within_se(&boot, 1.0, 3.0, "N = 1, bootstrap");
}

#[test]
fn bootstrap_aux_smc_is_unbiased_and_reports_weights() {
    let t = HmmTarget::two_state_example(8);
    let log_z = brute_force_log_evidence(&t);
    let master = RngStream::from_seed(13);
    let ratios: Vec<f64> = (0..3000)
        .map(|r| {
            let h = run_nested_smc_aux(&t, &ExactFactory(HmmPrior), &HmmPrior, &UnitMultiplier, 8, 1, &master.split(r))
                .unwrap();
            assert!(!h.is_fully_adapted());
            (h.log_z().ln() - log_z).exp()
        })
        .collect();
    assert_within_se(&ratios, 1.0, 3.0, "bootstrap");
}

#[test]
fn nested_lattice_smc_is_unbiased() {
    let (t, log_z) = lattice_problem(3, 3, 21);
    let factory = lattice_nested_factory();
    let master = RngStream::from_seed(14);
    let ratios: Vec<f64> = (0..600)
        .map(|r| {
            let h = run_nested_smc_fa(&t, &factory, 10, 8, &master.split(r)).unwrap();
            (h.log_z().ln() - log_z).exp()
        })
        .collect();
    assert_within_se(&ratios, 1.0, 3.0, "nested lattice");
}

#[test]
fn lattice_bootstrap_pf_is_unbiased() {
    let (t, log_z) = lattice_problem(2, 4, 22);
    let master = RngStream::from_seed(15);
    let ratios: Vec<f64> = (0..2000)
        .map(|r| {
            let h = run_nested_smc_aux(
                &t,
                &ExactFactory(LatticeBootstrap),
                &LatticeBootstrap,
                &UnitMultiplier,
                30,
                1,
                &master.split(r),
            )
            .unwrap();
            (h.log_z().ln() - log_z).exp()
        })
        .collect();
    assert_within_se(&ratios, 1.0, 3.0, "lattice bootstrap");
}

#[test]
fn neutral_multipliers_resample_uniformly_at_the_first_step() {
    let t = HmmTarget::two_state_example(2);
    let n = 5;
    let mut counts = vec![0usize; n];
    let master = RngStream::from_seed(16);
    for r in 0..2000 {
        let h = run_nested_smc_aux(&t, &ExactFactory(HmmPrior), &HmmPrior, &UnitMultiplier, n, 1, &master.split(r))
            .unwrap();
        for &a in h.ancestors(0) {
            counts[a] += 1;
        }
    }
    // 99.9% quantile of χ² with 4 degrees of freedom
    assert!(chi_square(&counts, &vec![1.0 / n as f64; n]) < 18.47, "{counts:?}");
}

#[test]
fn impossible_observation_is_full_degeneracy_at_that_step() {
    let init = [0.5, 0.5];
    let a = vec![vec![0.9, 0.1], vec![0.1, 0.9]];
    let e = vec![vec![1.0, 1.0], vec![0.0, 0.0], vec![1.0, 1.0]];
    let t = HmmTarget::new(&init, &a, &e).unwrap();
    let err = run_fully_adapted_smc(&t, &HmmOptimal, 4, &RngStream::from_seed(1)).unwrap_err();
    assert!(matches!(err, Error::FullDegeneracy { step: 2 }), "{err:?}");
    let err = run_nested_smc_aux(&t, &ExactFactory(HmmPrior), &HmmPrior, &UnitMultiplier, 4, 1, &RngStream::from_seed(1))
        .unwrap_err();
    assert!(err.is_degeneracy(), "{err:?}");
}

struct Blind;

impl StepProposalDensity<HmmTarget> for Blind {
    fn log_density(&self, _t: &HmmTarget, prefix: &dyn Path<usize>, _x: &usize) -> f64 {
        if prefix.len() == 1 {
            f64::NEG_INFINITY
        } else {
            0.0
        }
    }
}

#[test]
fn zero_proposal_density_names_step_and_particle() {
    let t = HmmTarget::two_state_example(3);
    let err = run_nested_smc_aux(&t, &ExactFactory(HmmPrior), &Blind, &UnitMultiplier, 4, 1, &RngStream::from_seed(2))
        .unwrap_err();
    assert!(matches!(err, Error::ZeroProposalDensity { step: 2, particle: 0 }), "{err:?}");
}

#[test]
fn zero_sizes_are_rejected() {
    let t = HmmTarget::two_state_example(3);
    assert!(run_fully_adapted_smc(&t, &HmmOptimal, 0, &RngStream::from_seed(1)).is_err());
    assert!(run_nested_smc_fa(&t, &ExactFactory(HmmOptimal), 3, 0, &RngStream::from_seed(1)).is_err());
}

#[test]
fn runs_are_deterministic_given_the_seed() {
    let (t, _) = lattice_problem(4, 3, 9);
    let factory = lattice_nested_factory();
    let a = run_nested_smc_fa(&t, &factory, 6, 4, &RngStream::from_seed(3)).unwrap();
    let b = run_nested_smc_fa(&t, &factory, 6, 4, &RngStream::from_seed(3)).unwrap();
    assert_eq!(a.values(2), b.values(2));
    assert_eq!(a.log_z().ln().to_bits(), b.log_z().ln().to_bits());
    let c = run_nested_smc_fa(&t, &factory, 6, 4, &RngStream::from_seed(4)).unwrap();
    assert_ne!(a.values(2), c.values(2));
}
