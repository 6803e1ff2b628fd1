//! Closed-form prices for the three-dimensional Bessel benchmark.
//!
//! One factor `X` starting at 1 on `E = (0, ∞)` with `dX = dt/X + dW`, zero
//! interest, a constant asset `S^0 = K` and a risky asset `S^1 = X` with
//! volatility and market price of risk `1/X`. Under the physical measure
//! (which is also the valuation measure of asset 1) the factor never hits
//! zero; under the valuation measure of asset 0 it is Brownian motion
//! killed at zero, so the economy defaults with positive probability.

use libm::erfc;

use crate::expr::ExprAst;
use crate::model::{DomainExhaustion, FactorModel, ModelError, ModelSpec};

/// Default exhaustion depth for the benchmark: `E_n = (1/n, n + 1)`.
///
/// Chosen so that, at step `2^-10`, the discrete-monitoring bias of the
/// barrier crossing roughly offsets the bias of stopping at `1/n_max`
/// rather than at zero.
pub const DEFAULT_N_MAX: usize = 72;

/// Parameters of the benchmark economy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BesselParams {
    /// Level of the constant asset `S^0`.
    pub strike: f64,
    /// Exhaustion depth used as the default proxy.
    pub n_max: usize,
}

impl BesselParams {
    pub fn new(strike: f64) -> Self {
        BesselParams {
            strike,
            n_max: DEFAULT_N_MAX,
        }
    }
}

/// Standard normal distribution function.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal survival function `1 - Φ(x)`, accurate in the tail.
pub fn norm_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

fn check(k: f64, t: f64) {
    assert!(k > 0.0 && k.is_finite(), "strike must be positive, got {k}");
    assert!(
        t > 0.0 && t.is_finite(),
        "maturity must be positive, got {t}"
    );
}

/// `EX^{01}(T)`, the European right to exchange `S^1` for `S^0 = K`.
/// Equal to `AX^{01}(T)`: early exercise is never optimal.
pub fn eur_ex_01(k: f64, t: f64) -> f64 {
    check(k, t);
    let st = t.sqrt();
    // sqrt(2T/pi) exp(-(1+K^2)/(2T)) sinh(K/T), written as a difference of
    // Gaussian kernels so that small T does not overflow
    let kernel =
        ((-(1.0 - k).powi(2) / (2.0 * t)).exp() - (-(1.0 + k).powi(2) / (2.0 * t)).exp()) * 0.5;
    (1.0 + k) * norm_sf((1.0 + k) / st)
        + (1.0 - k) * norm_cdf((1.0 - k) / st)
        + (2.0 * t / std::f64::consts::PI).sqrt() * kernel
}

/// `AX^{01}(T) = EX^{01}(T)`.
pub fn amer_ex_01(k: f64, t: f64) -> f64 {
    eur_ex_01(k, t)
}

/// `AX^{10}(T) = AX^{01}(T) - (1 - K)`.
pub fn amer_ex_10(k: f64, t: f64) -> f64 {
    eur_ex_01(k, t) - (1.0 - k)
}

/// Default probability under the valuation measure of asset 0:
/// `Q^0[ζ <= T] = 2 Φ̄(1/√T)`.
pub fn default_prob_q0(t: f64) -> f64 {
    assert!(
        t > 0.0 && t.is_finite(),
        "maturity must be positive, got {t}"
    );
    2.0 * norm_sf(1.0 / t.sqrt())
}

/// `EX^{10}(T) = AX^{10}(T) - 2 K Φ̄(1/√T)`.
pub fn eur_ex_10(k: f64, t: f64) -> f64 {
    amer_ex_10(k, t) - k * default_prob_q0(t)
}

/// Early-exercise premium of `AX^{10}` over `EX^{10}`.
pub fn early_exercise_premium_10(k: f64, t: f64) -> f64 {
    k * default_prob_q0(t)
}

/// `E_{Q^1}[R^{01}_t] = K (2Φ(1/√t) - 1)`: the ratio `K / X` is a strict
/// local martingale under `Q^1`.
pub fn ratio_mean_01(k: f64, t: f64) -> f64 {
    check(k, t);
    k * (1.0 - default_prob_q0(t))
}

/// The benchmark as a [`FactorModel`] under the physical measure.
pub fn bessel_model(params: BesselParams) -> Result<FactorModel, ModelError> {
    let k = params.strike;
    if !(k > 0.0 && k.is_finite()) {
        return Err(ModelError::NonPositivePrice { asset: 0, value: k });
    }
    let e = |s: &str| ExprAst::parse(s, 1).expect("benchmark expressions are well formed");
    let n_var = |s: &str| ExprAst::parse_with_names(s, &["n"]).expect("bound expressions");
    let exhaustion = DomainExhaustion::from_bound_exprs(
        vec![0.0],
        vec![f64::INFINITY],
        &[n_var("1/n")],
        &[n_var("n+1")],
        params.n_max,
    )?;
    FactorModel::new(ModelSpec {
        x0: vec![1.0],
        drift: vec![e("1/x1")],
        diffusion: vec![vec![e("1")]],
        rate: e("0"),
        excess_return: vec![e("1/x1^2")],
        volatility: vec![vec![e("1/x1")]],
        theta: Some(vec![e("1/x1")]),
        s0: vec![k, 1.0],
        exhaustion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values from 50-digit evaluations of the same closed forms.
    const EX01: [(f64, f64, f64); 6] = [
        (1.0, 1.0, 0.390_451_577_784_603_04),
        (0.5, 0.25, 0.541_466_658_135_319_29),
        (2.0, 4.0, 0.336_979_527_277_402_80),
        (1.0, 0.25, 0.199_467_567_571_500_14),
        (0.5, 4.0, 0.810_355_560_702_853_77),
        (2.0, 0.25, 0.004_245_351_230_236_329),
    ];

    #[test]
    fn norm_cdf_reference_points() {
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((norm_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((norm_sf(1.0) - 0.158_655_253_931_457_05).abs() < 1e-16);
        assert!((norm_sf(8.0) - 6.220_960_574_271_784e-16).abs() < 1e-28);
    }

    #[test]
    fn norm_cdf_symmetry_and_quantile() {
        for x in [-6.0, -1.3, -0.2, 0.0, 0.7, 2.5, 9.0] {
            assert!((norm_cdf(x) + norm_cdf(-x) - 1.0).abs() < 1e-15);
            assert_eq!(norm_sf(x), norm_cdf(-x));
        }
        assert!((norm_cdf(1.959_964) - 0.975).abs() < 1e-6);
    }

    #[test]
    fn exchange_01_matches_reference() {
        for (k, t, want) in EX01 {
            let got = eur_ex_01(k, t);
            assert!((got - want).abs() < 1e-14, "K={k} T={t}: {got} vs {want}");
        }
    }

    #[test]
    fn unit_strike_unit_maturity() {
        assert!((eur_ex_01(1.0, 1.0) - 0.390_451_577_784_603_04).abs() < 1e-14);
        assert!((amer_ex_10(1.0, 1.0) - 0.390_451_577_784_603_04).abs() < 1e-14);
        assert!((default_prob_q0(1.0) - 0.317_310_507_862_914_1).abs() < 1e-15);
        assert!((eur_ex_10(1.0, 1.0) - 0.073_141_069_921_688_94).abs() < 1e-14);
    }

    #[test]
    fn short_maturity_limits() {
        // intrinsic values as T -> 0: (1 - K)_+ and (K - 1)_+
        for k in [0.5, 2.0] {
            let t = 1e-6;
            assert!((eur_ex_01(k, t) - (1.0 - k).max(0.0)).abs() < 1e-12);
            assert!((eur_ex_10(k, t) - (k - 1.0).max(0.0)).abs() < 1e-12);
        }
        assert!(eur_ex_01(1.0, 1e-8).is_finite());
        assert!(eur_ex_01(1.0, 1e-8) < 1e-3);
        assert!(default_prob_q0(1e-4) < 1e-20);
    }

    #[test]
    fn long_maturity_limits() {
        // the remainders are of order K / sqrt(T), so at T = 1e6 they sit
        // below 1e-3 only for K up to about 1.25
        let t = 1e6;
        for k in [0.5, 1.0] {
            assert!((eur_ex_01(k, t) - 1.0).abs() < 1e-3);
            assert!((amer_ex_10(k, t) - k).abs() < 1e-3);
            assert!(eur_ex_10(k, t).abs() < 1e-3);
        }
        assert!((default_prob_q0(t) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn model_coefficients() {
        let model = bessel_model(BesselParams::new(1.5)).unwrap();
        assert_eq!(model.factor_drift(&[2.0]).unwrap(), vec![0.5]);
        for x in [0.1, 0.7, 3.0] {
            let theta = model.solve_theta(&[x]).unwrap();
            assert!((theta[0] - 1.0 / x).abs() < 1e-14);
        }
        let (lo, hi) = model.exhaustion().level_bounds(3).unwrap();
        assert!((lo[0] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(hi[0], 4.0);
        assert_eq!(model.s0(), &[1.5, 1.0]);
        assert!(model.validate(&model.default_probes()).unwrap().passed);
    }
}
