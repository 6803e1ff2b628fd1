//! Model builders shared by the integration tests.
#![allow(dead_code)]

use numeraire_core::{DomainExhaustion, ExprAst, FactorModel, ModelSpec};

pub fn expr(src: &str, dim: usize) -> ExprAst {
    ExprAst::parse(src, dim).unwrap()
}

/// Boxes `[-w n, w n]^m` inside `E = R^m`.
pub fn centred_boxes(m: usize, width: f64, depth: usize) -> DomainExhaustion {
    let lower = (1..=depth).map(|n| vec![-width * n as f64; m]).collect();
    let upper = (1..=depth).map(|n| vec![width * n as f64; m]).collect();
    DomainExhaustion::boxes(
        vec![f64::NEG_INFINITY; m],
        vec![f64::INFINITY; m],
        lower,
        upper,
    )
    .unwrap()
}

/// Two geometric Brownian assets driven by two Brownian factors, with a
/// zero short rate. `theta` is left for the model to solve.
pub fn gbm_pair(s0: [f64; 2], vol: [f64; 2], corr: f64, excess: [f64; 2]) -> FactorModel {
    let e = |s: String| expr(&s, 2);
    let orth = vol[1] * (1.0 - corr * corr).sqrt();
    FactorModel::new(ModelSpec {
        x0: vec![0.0, 0.0],
        drift: vec![e("0".into()), e("0".into())],
        diffusion: vec![
            vec![e("1".into()), e("0".into())],
            vec![e("0".into()), e("1".into())],
        ],
        rate: e("0".into()),
        excess_return: vec![e(excess[0].to_string()), e(excess[1].to_string())],
        volatility: vec![
            vec![e(vol[0].to_string()), e("0".into())],
            vec![e((vol[1] * corr).to_string()), e(orth.to_string())],
        ],
        theta: None,
        s0: vec![1.0, s0[0], s0[1]],
        exhaustion: centred_boxes(2, 10.0, 8),
    })
    .unwrap()
}

/// The Margrabe pair of the acceptance suite.
pub fn margrabe_model() -> FactorModel {
    gbm_pair([1.0, 1.0], [0.2, 0.3], 0.5, [0.05, 0.08])
}
