use dpadam_core::accountant::{
    calibrate_sigma, discretized_gaussian, epsilon_to_rho, gaussian_renyi_divergence, kl_divergence, rdp_epsilon,
    rdp_subsampled_gaussian, renyi_divergence_discrete, rho_to_epsilon, sigma0_for_rho, tcdp_budget, uniform_grid,
    CalibrationTarget, TcdpParams, CALIBRATION_TOLERANCE,
};
use proptest::prelude::*;

/// `ln E_{z ~ N(0, s^2)} [((1 - q) + q exp((2z - 1) / (2 s^2)))^a] / (a - 1)`
/// by the trapezoid rule, independent of the binomial expansion.
fn subsampled_rdp_by_quadrature(q: f64, sigma: f64, alpha: u32) -> f64 {
    // the integrand concentrates near z = alpha at high orders
    let (lo, hi, h) = (-12.0 * sigma, 12.0 * sigma + alpha as f64, 1e-4 * sigma);
    let n = ((hi - lo) / h) as usize;
    let mut total = 0.0;
    for i in 0..=n {
        let z = lo + i as f64 * h;
        let density = (-z * z / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        let ratio = ((2.0 * z - 1.0) / (2.0 * sigma * sigma)).exp();
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        total += w * density * ((1.0 - q) + q * ratio).powi(alpha as i32);
    }
    (total * h).ln() / (alpha as f64 - 1.0)
}

#[test]
fn subsampled_gaussian_matches_numerical_integration() {
    for &(q, sigma) in &[(0.01, 1.0), (0.05, 0.8), (0.2, 2.0), (0.004, 1.3)] {
        for alpha in [2u32, 3, 5, 8] {
            let closed = rdp_subsampled_gaussian(q, sigma, alpha as f64).unwrap();
            let numeric = subsampled_rdp_by_quadrature(q, sigma, alpha);
            assert!(
                (closed - numeric).abs() <= 1e-8 * closed.max(1e-12) + 1e-13,
                "q={q} sigma={sigma} alpha={alpha}: {closed} vs {numeric}"
            );
        }
    }
}

#[test]
fn full_batch_reduces_to_the_gaussian_mechanism() {
    for alpha in [2.0, 3.0, 10.0, 32.0] {
        for sigma in [0.5, 1.0, 4.0] {
            let r = rdp_subsampled_gaussian(1.0, sigma, alpha).unwrap();
            assert!((r - alpha / (2.0 * sigma * sigma)).abs() < 1e-12 * r.max(1.0));
        }
    }
}

#[test]
fn discretized_gaussians_reproduce_the_closed_form() {
    for &(mu, sigma) in &[(1.0, 1.0), (0.5, 1.0), (1.0, 2.0)] {
        let grid = uniform_grid(-10.0 * sigma, 10.0 * sigma + mu, 1e-3);
        let p = discretized_gaussian(mu, sigma, &grid);
        let q = discretized_gaussian(0.0, sigma, &grid);
        for alpha in [1.5, 2.0, 4.0, 8.0] {
            let d = renyi_divergence_discrete(&p, &q, alpha).unwrap();
            let exact = gaussian_renyi_divergence(mu, sigma, alpha).unwrap();
            assert!((d - exact).abs() < 1e-3, "mu={mu} sigma={sigma} alpha={alpha}: {d} vs {exact}");
        }
        let kl = kl_divergence(&p, &q).unwrap();
        assert!((kl - mu * mu / (2.0 * sigma * sigma)).abs() < 1e-3);
    }
}

#[test]
fn calibration_round_trips_for_both_accountants() {
    let rdp = CalibrationTarget::Rdp {
        sampling_rate: 64.0 / 16000.0,
        steps_per_epoch: 250,
        epochs: 10,
        decay: 1.0,
    };
    let rdp_decay = CalibrationTarget::Rdp {
        sampling_rate: 64.0 / 16000.0,
        steps_per_epoch: 250,
        epochs: 10,
        decay: 0.99,
    };
    let tcdp = CalibrationTarget::Tcdp {
        batch_size: 64,
        dataset_size: 16000,
        clip: 10.0,
        decay: 0.99,
        epochs: 10,
    };
    for eps in [1.0, 2.0, 5.0, 8.0, 10.0] {
        for target in [rdp, rdp_decay] {
            let c = calibrate_sigma(eps, 1e-5, &target).unwrap();
            let again = rdp_epsilon(&target, c.sigma, 1e-5).unwrap().epsilon;
            assert_eq!(again, c.achieved_epsilon);
            assert!(again <= eps + 1e-12 && eps - again <= CALIBRATION_TOLERANCE, "{eps}: {again}");
        }
        let c = calibrate_sigma(eps, 1e-5, &tcdp).unwrap();
        let (rho, _) = tcdp_budget(&TcdpParams {
            batch_size: 64,
            dataset_size: 16000,
            clip: 10.0,
            decay: 0.99,
            epochs: 10,
            sigma0: c.sigma,
            delta: 1e-5,
        })
        .unwrap();
        assert!((rho_to_epsilon(rho, 1e-5).unwrap() - eps).abs() < 1e-9);
    }
}

#[test]
fn decaying_noise_costs_more_than_constant_noise() {
    let target = |decay| CalibrationTarget::Rdp {
        sampling_rate: 0.01,
        steps_per_epoch: 100,
        epochs: 5,
        decay,
    };
    let flat = rdp_epsilon(&target(1.0), 1.2, 1e-5).unwrap().epsilon;
    let decayed = rdp_epsilon(&target(0.9), 1.2, 1e-5).unwrap().epsilon;
    assert!(decayed > flat);
}

fn params(epochs: u32, sigma0: f64) -> TcdpParams {
    TcdpParams {
        batch_size: 64,
        dataset_size: 6400,
        clip: 1.0,
        decay: 0.99,
        epochs,
        sigma0,
        delta: 1e-5,
    }
}

#[test]
fn tcdp_single_epoch_budget_by_hand() {
    let (rho, omega) = tcdp_budget(&params(1, 1.0)).unwrap();
    // 13 (1/100)^2 / 2 and ln(100) / 2
    assert!((rho - 6.5e-4).abs() < 1e-15);
    assert!((omega - 100f64.ln() / 2.0).abs() < 1e-15);
}

proptest! {
    #[test]
    fn renyi_divergence_is_nondecreasing_in_order(mu in 0.05f64..2.0, sigma in 0.5f64..2.0, a in 1.1f64..10.0, b in 1.1f64..10.0) {
        let grid = uniform_grid(-8.0 * sigma, 8.0 * sigma + mu, 1e-2);
        let p = discretized_gaussian(mu, sigma, &grid);
        let q = discretized_gaussian(0.0, sigma, &grid);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let d_lo = renyi_divergence_discrete(&p, &q, lo).unwrap();
        let d_hi = renyi_divergence_discrete(&p, &q, hi).unwrap();
        prop_assert!(d_hi >= d_lo - 1e-12);
    }

    #[test]
    fn subsampled_rdp_is_monotone(q in 0.001f64..0.5, sigma in 0.6f64..5.0, alpha in 2u32..40) {
        let a = rdp_subsampled_gaussian(q, sigma, alpha as f64).unwrap();
        let b = rdp_subsampled_gaussian(q, sigma, alpha as f64 + 1.0).unwrap();
        let less_noise = rdp_subsampled_gaussian(q, sigma * 0.9, alpha as f64).unwrap();
        let more_sampling = rdp_subsampled_gaussian((q * 1.5).min(1.0), sigma, alpha as f64).unwrap();
        prop_assert!(b >= a * (1.0 - 1e-12));
        prop_assert!(less_noise >= a * (1.0 - 1e-12));
        prop_assert!(more_sampling >= a * (1.0 - 1e-12));
    }

    #[test]
    fn rho_epsilon_maps_are_inverse(rho in 1e-6f64..50.0, delta in 1e-9f64..0.1) {
        let eps = rho_to_epsilon(rho, delta).unwrap();
        let back = epsilon_to_rho(eps, delta).unwrap();
        prop_assert!((back - rho).abs() <= 1e-10 * rho.max(1e-3));
    }

    #[test]
    fn sigma0_solves_the_budget(rho in 1e-4f64..10.0, epochs in 1u32..60, clip in 0.1f64..20.0) {
        let p = TcdpParams { clip, ..params(epochs, 1.0) };
        let s0 = sigma0_for_rho(&p, rho).unwrap();
        let (got, _) = tcdp_budget(&TcdpParams { sigma0: s0, ..p }).unwrap();
        prop_assert!((got - rho).abs() <= 1e-12 * rho);
    }

    #[test]
    fn tcdp_budget_grows_with_epochs(epochs in 1u32..80, sigma0 in 0.1f64..10.0) {
        let (a, _) = tcdp_budget(&params(epochs, sigma0)).unwrap();
        let (b, _) = tcdp_budget(&params(epochs + 1, sigma0)).unwrap();
        prop_assert!(b > a);
    }
}
