mod common;

use common::{centred_boxes, expr, margrabe_model};
use numeraire_core::bessel_reference::{bessel_model, BesselParams};
use numeraire_core::sde_engine::{
    batch_simulate, detect_stopping, simulate_path, BatchConfig, EngineError,
};
use numeraire_core::{DomainExhaustion, FactorModel, ModelSpec, RngContract, TimeGrid};
use proptest::prelude::*;

fn one_factor(drift: &str, vol: &str, rate: &str, x0: f64, ex: DomainExhaustion) -> FactorModel {
    FactorModel::new(ModelSpec {
        x0: vec![x0],
        drift: vec![expr(drift, 1)],
        diffusion: vec![vec![expr(vol, 1)]],
        rate: expr(rate, 1),
        excess_return: vec![expr("0", 1)],
        volatility: vec![vec![expr("0", 1)]],
        theta: Some(vec![expr("0", 1)]),
        s0: vec![2.0, 3.0],
        exhaustion: ex,
    })
    .unwrap()
}

fn rng(p: u64) -> RngContract {
    RngContract {
        master_seed: 11,
        path_index: p,
    }
}

#[test]
fn unit_drift_is_integrated_exactly() {
    let model = one_factor("1", "0", "0", 0.5, centred_boxes(1, 10.0, 4));
    let grid = TimeGrid::new(2.0, 0.125).unwrap();
    let path = simulate_path(&model, &grid, rng(0));
    for k in 0..=grid.n_steps() {
        assert!((path.x(k)[0] - (0.5 + grid.time(k))).abs() < 1e-12);
    }
    assert!(!path.exploded());
}

#[test]
fn constant_rate_grows_all_assets() {
    let model = one_factor("0", "0", "0.03", 0.0, centred_boxes(1, 1.0, 3));
    let grid = TimeGrid::new(1.0, 1.0 / 64.0).unwrap();
    let path = simulate_path(&model, &grid, rng(3));
    let n = grid.n_steps();
    let growth = 0.03f64.exp();
    assert!((path.price(n, 0) - 2.0 * growth).abs() < 1e-12);
    assert!((path.price(n, 1) - 3.0 * growth).abs() < 1e-12);
    assert!((path.y(n).unwrap() - 1.0 / growth).abs() < 1e-12);
    assert!((path.ratio(1, 0, n) - 1.5).abs() < 1e-12);
}

#[test]
fn first_step_exit_kills_the_path() {
    // x0 sits on the edge of the deepest level and the drift pushes out
    let ex = DomainExhaustion::boxes(
        vec![f64::NEG_INFINITY],
        vec![f64::INFINITY],
        vec![vec![-1.0], vec![-1.0 - 1e-9]],
        vec![vec![1.0], vec![1.0 + 1e-9]],
    )
    .unwrap();
    let model = one_factor("10", "0", "0.5", 1.0, ex);
    let grid = TimeGrid::new(1.0, 0.25).unwrap();
    let path = simulate_path(&model, &grid, rng(0));
    assert_eq!(path.explosion_index(), Some(1));
    assert_eq!(path.zeta(1), Some(1));
    assert_eq!(path.zeta(2), Some(1));
    assert!(path.alive_at(0) && !path.alive_at(1));
    assert_eq!(path.price(1, 1), 0.0);
    assert_eq!(path.price(4, 0), 0.0);
    assert!(path.x(2)[0].is_nan());
    // the exit sample is the price computed at the exit step
    let exit = path.exit_prices().unwrap();
    assert!((exit[0] - 2.0 * (0.5f64 * 0.25).exp()).abs() < 1e-12);
    assert!((path.stopped_price(1, 1) - exit[1]).abs() < 1e-15);
    assert!((path.rho(1, 0).unwrap() - 1.5).abs() < 1e-12);
    assert_eq!(path.ratio(1, 0, 1), 0.0);
}

#[test]
fn zeta_is_capped_at_calendar_time() {
    let model = one_factor("0", "0", "0", 0.0, centred_boxes(1, 1.0, 5));
    let grid = TimeGrid::new(3.0, 0.25).unwrap();
    let path = simulate_path(&model, &grid, rng(0));
    assert!(!path.exploded());
    assert_eq!(path.zeta(1), Some(4));
    assert_eq!(path.zeta(2), Some(8));
    assert_eq!(path.zeta(3), Some(12));
    assert_eq!(path.zeta(4), None);
    assert_eq!(path.zeta_capped(4), 12);
    assert_eq!(path.zeta_capped(5), 12);
}

#[test]
fn bessel_deflated_asset_is_constant_before_default() {
    let model = bessel_model(BesselParams::new(1.0)).unwrap();
    let grid = TimeGrid::new(1.0, 1.0 / 256.0).unwrap();
    for p in 0..50 {
        let path = simulate_path(&model, &grid, rng(p));
        for k in 0..=grid.n_steps() {
            let v = path.deflated_price(k, 1).unwrap();
            if path.alive_at(k) {
                assert!((v - 1.0).abs() < 1e-9, "path {p} step {k}: {v}");
            } else {
                assert_eq!(v, 0.0);
            }
        }
    }
}

#[test]
fn batch_results_do_not_depend_on_workers() {
    let model = margrabe_model();
    let grid = TimeGrid::new(0.5, 1.0 / 32.0).unwrap();
    let run = |workers| {
        let cfg = BatchConfig {
            n_paths: 1000,
            seed: 5,
            workers,
        };
        batch_simulate(&model, &grid, &cfg, 2, |p, row| {
            row[0] = p.price(p.n_steps(), 1);
            row[1] = p.ratio(2, 1, p.n_steps());
        })
        .unwrap()
    };
    let base = run(1);
    for workers in [2, 3, 0] {
        let other = run(workers);
        for c in 0..2 {
            assert_eq!(base.mean(c).to_bits(), other.mean(c).to_bits());
            assert_eq!(base.stderr(c).to_bits(), other.stderr(c).to_bits());
        }
    }
}

#[test]
fn empty_batch_is_an_error() {
    let model = margrabe_model();
    let grid = TimeGrid::new(1.0, 0.5).unwrap();
    let cfg = BatchConfig {
        n_paths: 0,
        seed: 1,
        workers: 1,
    };
    let err = batch_simulate(&model, &grid, &cfg, 1, |_, _| {}).unwrap_err();
    assert!(matches!(err, EngineError::NoPaths));
}

#[test]
fn grid_must_divide_horizon() {
    assert!(matches!(
        TimeGrid::new(1.0, 0.3),
        Err(EngineError::Step { .. })
    ));
    assert!(matches!(
        TimeGrid::new(-1.0, 0.1),
        Err(EngineError::Horizon(_))
    ));
    assert_eq!(TimeGrid::new(1.0, 1.0 / 1024.0).unwrap().n_steps(), 1024);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn stopping_times_are_monotone_and_reproducible(p in 0u64..10_000, k in 0.5f64..2.0) {
        let model = bessel_model(BesselParams { strike: k, n_max: 6 }).unwrap();
        let grid = TimeGrid::new(2.0, 1.0 / 64.0).unwrap();
        let path = simulate_path(&model, &grid, rng(p));
        let mut last = 0;
        for n in 1..=6 {
            let z = path.zeta_capped(n);
            prop_assert!(z >= last);
            last = z;
        }
        if let Some(e) = path.explosion_index() {
            prop_assert_eq!(path.zeta(6), Some(e));
        }
        let again = simulate_path(&model, &grid, rng(p));
        prop_assert_eq!(again.x(grid.n_steps()).to_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            path.x(grid.n_steps()).iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        // recomputing the stopping times from the stored path agrees
        let mut copy = path.clone();
        detect_stopping(&mut copy, &model, &grid);
        for n in 1..=6 {
            prop_assert_eq!(copy.zeta(n), path.zeta(n));
        }
        prop_assert_eq!(copy.explosion_index(), path.explosion_index());
    }
}
