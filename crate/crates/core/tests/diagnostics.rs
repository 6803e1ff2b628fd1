mod common;

use common::{gbm_pair, margrabe_model};
use numeraire_core::bessel_reference::{bessel_model, BesselParams};
use numeraire_core::diagnostics::{
    check_degeneracy, check_parity_american, check_parity_european, check_parity_mixed,
    check_ratio_supermartingale, detect_bubble, parity_suite, DiagnosticsError, RhoBasis,
};
use numeraire_core::McConfig;

fn cfg(n_paths: usize, step: f64) -> McConfig {
    McConfig {
        n_paths,
        step,
        seed: 99,
        workers: 1,
    }
}

#[test]
fn same_asset_parities_are_exact() {
    let model = bessel_model(BesselParams::new(1.3)).unwrap();
    let c = cfg(2_000, 1.0 / 32.0);
    let eur = check_parity_european(&model, 1, 1, 1.0, &c).unwrap();
    assert_eq!(eur.residual, 0.0);
    assert!(eur.pass);
    let amer = check_parity_american(&model, 0, 0, 1.0, &c).unwrap();
    assert_eq!(amer.residual, 0.0);
}

#[test]
fn same_asset_mixed_parity_is_skipped() {
    let model = bessel_model(BesselParams::new(1.0)).unwrap();
    let err = check_parity_mixed(&model, 1, 1, 1.0, &cfg(2_000, 1.0 / 32.0)).unwrap_err();
    match err {
        DiagnosticsError::PreconditionFailed(report) => {
            assert!(!report.condition3);
            assert!(!report.pass);
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn margrabe_pair_parities_hold() {
    let model = margrabe_model();
    let suite = parity_suite(&model, 1, 2, 1.0, &cfg(10_000, 1.0 / 16.0), None).unwrap();
    assert!(suite.european.pass, "{:?}", suite.european);
    assert!(suite.american.pass, "{:?}", suite.american);
    assert!(suite.mixed.is_none());
}

#[test]
fn bessel_parities_at_coarse_scale() {
    let model = bessel_model(BesselParams::new(1.0)).unwrap();
    let suite = parity_suite(&model, 0, 1, 1.0, &cfg(10_000, 1.0 / 256.0), None).unwrap();
    // the closed forms give 1.0732 on both sides
    assert!((suite.european.left.mean - 1.0732).abs() < 0.03);
    assert!(suite.european.pass && suite.american.pass);
}

#[test]
fn constant_ratio_fails_rho_condition() {
    // distinct assets with equal loadings make the volatility matrix
    // singular, so the constant-ratio case is the pair (1, 1)
    let model = gbm_pair([0.8, 1.0], [0.25, 0.3], 0.2, [0.0, 0.0]);
    let report = check_degeneracy(&model, 1, 1, &cfg(1_000, 1.0 / 8.0)).unwrap();
    assert_eq!(report.rho_qj.basis, RhoBasis::Horizon);
    assert_eq!(report.rho_qj.mass_at_zero, 0.0);
    assert!(!report.condition4 && !report.pass);
}

#[test]
fn bessel_degeneracy_holds() {
    let model = bessel_model(BesselParams::new(1.0)).unwrap();
    let report = check_degeneracy(&model, 0, 1, &cfg(2_000, 1.0 / 512.0)).unwrap();
    assert_eq!(report.first_level, 2);
    assert_eq!(report.freq_qj.len(), 15);
    assert!(report.condition3);
    assert!(report.rho_qi.exploded > report.rho_qj.exploded);
    assert!(report.condition4, "{:?}", report.rho_qi);
    assert!(report.nonincreasing_qj);
}

#[test]
fn distinct_volatility_pair_ratio_decays() {
    // log R^{12} under Q^2 drifts to -inf, so the mass of R near zero grows
    let model = gbm_pair([1.0, 1.0], [0.2, 1.2], 0.0, [0.0, 0.0]);
    let report = check_degeneracy(&model, 1, 2, &cfg(2_000, 1.0 / 8.0)).unwrap();
    assert_eq!(report.rho_qj.basis, RhoBasis::Horizon);
    assert!(report.rho_qj.mass_at_zero > 0.1);
}

#[test]
fn supermartingale_single_time_passes() {
    let model = bessel_model(BesselParams::new(1.0)).unwrap();
    let r = check_ratio_supermartingale(&model, 0, 1, &[0.5], &cfg(500, 1.0 / 32.0)).unwrap();
    assert!(r.pass);
    assert_eq!(r.means.len(), 1);
}

#[test]
fn martingale_ratio_is_flat() {
    let model = margrabe_model();
    let r = check_ratio_supermartingale(&model, 2, 1, &[0.25, 0.5, 1.0], &cfg(10_000, 1.0 / 16.0))
        .unwrap();
    assert!(r.pass);
    for m in &r.means {
        assert!((m.mean - 1.0).abs() < 4.0 * m.stderr);
    }
}

#[test]
fn bubble_in_constant_asset_not_in_factor_asset() {
    let model = bessel_model(BesselParams::new(1.0)).unwrap();
    let c = cfg(10_000, 1.0 / 128.0);
    let asset0 = detect_bubble(&model, 0, &[1.0], &c).unwrap();
    assert!(asset0.bubble);
    assert!((asset0.rows[0].defect.mean - 0.3173).abs() < 0.03);
    assert!(asset0.rows[0].consistent);
    let control =
        detect_bubble(&margrabe_model(), 1, &[0.5, 1.0], &cfg(10_000, 1.0 / 16.0)).unwrap();
    assert!(!control.bubble);
}
