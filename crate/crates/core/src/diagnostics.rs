//! Simulation checks of the structural results: ratio supermartingality,
//! bubble detection, the degeneracy conditions behind the mixed parities,
//! and the parity relations themselves.
//!
//! Every check compares Monte Carlo estimates against a fixed threshold of
//! a few standard errors, plus an explicit allowance for time-discretization
//! bias where the quantity involves hitting times.

use thiserror::Error;

use crate::model::{FactorModel, Measure};
use crate::pricing::{
    check_physical, default_probability, deflated_price, ratio_mean, simulate, MCEstimate,
    McConfig, Method, PricingError, Run,
};
use crate::sde_engine::Path;

/// Additive allowance for Euler and hitting-time bias in parity checks.
pub const DISCRETIZATION_ALLOWANCE: f64 = 5e-3;

/// Standard errors tolerated by pass/fail rules on residuals.
pub const RESIDUAL_SIGMAS: f64 = 3.0;

/// Standard errors tolerated by monotonicity rules.
pub const TREND_SIGMAS: f64 = 2.0;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error(transparent)]
    Pricing(#[from] PricingError),
    #[error("mixed parities need the degeneracy conditions, which were rejected")]
    PreconditionFailed(Box<DegeneracyReport>),
}

/// Outcome of checking one parity identity `left = right`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParityReport {
    pub name: &'static str,
    pub left: MCEstimate,
    pub right: MCEstimate,
    /// `left - right`.
    pub residual: f64,
    /// Standard error of the residual, accounting for shared paths.
    pub combined_stderr: f64,
    pub allowance: f64,
    pub pass: bool,
}

impl ParityReport {
    pub fn new(
        name: &'static str,
        left: MCEstimate,
        right: MCEstimate,
        combined_stderr: f64,
        allowance: f64,
    ) -> Self {
        let residual = left.mean - right.mean;
        let pass = residual.abs() <= RESIDUAL_SIGMAS * combined_stderr + allowance;
        ParityReport {
            name,
            left,
            right,
            residual,
            combined_stderr,
            allowance,
            pass,
        }
    }
}

// columns of a parity run under Q^a with the other asset b
const PUT: usize = 0;
const ALIVE: usize = 1;
const PUT_MINUS_ALIVE: usize = 2;
const AMER: usize = 3;
const PARITY_WIDTH: usize = 4;

/// `EX^{ba}`, `Q^a[T < ζ]`, their difference and `AX^{ba}` on `Q^a` paths.
fn parity_columns(p: &Path, b: usize, a: usize, row: &mut [f64]) {
    let n = p.n_steps();
    if p.alive_at(n) {
        row[PUT] = (1.0 - p.ratio(b, a, n)).max(0.0);
        row[ALIVE] = 1.0;
        row[PUT_MINUS_ALIVE] = row[PUT] - 1.0;
    }
    let k = p.zeta_capped(p.n_max());
    row[AMER] = (1.0 - p.stopped_ratio(b, a, k)).max(0.0);
}

/// Estimates from one numéraire run, with option values in currency.
#[derive(Debug, Clone)]
struct Side {
    s0: f64,
    /// `EX^{ba}(T)`.
    eur: MCEstimate,
    /// `Q^a[T < ζ]`.
    alive: MCEstimate,
    /// `EX^{ba}(T) - S^a_0 Q^a[T < ζ]` with its paired standard error.
    eur_minus_alive: MCEstimate,
    /// `AX^{ba}(T)`.
    amer: MCEstimate,
}

impl Side {
    fn simulate(
        model: &FactorModel,
        b: usize,
        a: usize,
        horizon: f64,
        cfg: &McConfig,
    ) -> Result<Side, PricingError> {
        let run = simulate(
            model,
            Measure::Numeraire(a),
            horizon,
            cfg,
            PARITY_WIDTH,
            |p, row| parity_columns(p, b, a, row),
        )?;
        let s0 = model.s0()[a];
        Ok(Side {
            s0,
            eur: run.estimate(PUT, s0, Method::Combination),
            alive: run.estimate(ALIVE, 1.0, Method::Survival),
            eur_minus_alive: run.estimate(PUT_MINUS_ALIVE, s0, Method::Combination),
            amer: run.estimate(AMER, s0, Method::AmericanLadder),
        })
    }
}

/// All parity reports for one pair and maturity, from one run per measure.
#[derive(Debug, Clone, PartialEq)]
pub struct ParitySuite {
    pub european: ParityReport,
    pub american: ParityReport,
    /// Absent when the degeneracy conditions were rejected.
    pub mixed: Option<[ParityReport; 2]>,
}

/// Checks the European, American and (when `degeneracy` passed) mixed
/// parities for `(i, j)` at maturity `horizon`.
pub fn parity_suite(
    model: &FactorModel,
    i: usize,
    j: usize,
    horizon: f64,
    cfg: &McConfig,
    degeneracy: Option<&DegeneracyReport>,
) -> Result<ParitySuite, PricingError> {
    check_physical(model)?;
    model.check_asset(i)?;
    model.check_asset(j)?;
    // side_j prices the (i, j) options under Q^j, side_i the (j, i) ones
    let side_j = Side::simulate(model, i, j, horizon, cfg)?;
    let side_i = if i == j {
        side_j.clone()
    } else {
        Side::simulate(model, j, i, horizon, cfg)?
    };
    let (si0, sj0) = (side_i.s0, side_j.s0);
    let exact = |v: f64| MCEstimate::exact(v, Method::Combination, Measure::Physical);
    let sum = |terms: &[(f64, &MCEstimate)]| MCEstimate::combine(terms, Method::Combination);
    let allowance = DISCRETIZATION_ALLOWANCE;

    let european = ParityReport::new(
        "parity_eur",
        sum(&[(1.0, &side_j.eur), (si0, &side_i.alive)]),
        sum(&[(1.0, &side_i.eur), (sj0, &side_j.alive)]),
        side_j
            .eur_minus_alive
            .combined_stderr(&side_i.eur_minus_alive),
        allowance,
    );
    let american = ParityReport::new(
        "parity_amer",
        sum(&[(1.0, &side_j.amer), (1.0, &exact(si0))]),
        sum(&[(1.0, &side_i.amer), (1.0, &exact(sj0))]),
        side_j.amer.combined_stderr(&side_i.amer),
        allowance,
    );
    let mixed = degeneracy.filter(|d| d.pass).map(|_| {
        [
            ParityReport::new(
                "parity_mixed_amer_eur",
                sum(&[(1.0, &side_j.amer), (si0, &side_i.alive)]),
                sum(&[(1.0, &side_i.eur), (1.0, &exact(sj0))]),
                side_j.amer.combined_stderr(&side_i.eur_minus_alive),
                allowance,
            ),
            ParityReport::new(
                "parity_mixed_eur_amer",
                sum(&[(1.0, &side_j.eur), (1.0, &exact(si0))]),
                sum(&[(1.0, &side_i.amer), (sj0, &side_j.alive)]),
                side_j.eur_minus_alive.combined_stderr(&side_i.amer),
                allowance,
            ),
        ]
    });
    Ok(ParitySuite {
        european,
        american,
        mixed,
    })
}

/// `EX^{ij}(T) + S^i_0 Q^i[T < ζ] = EX^{ji}(T) + S^j_0 Q^j[T < ζ]`.
pub fn check_parity_european(
    model: &FactorModel,
    i: usize,
    j: usize,
    horizon: f64,
    cfg: &McConfig,
) -> Result<ParityReport, PricingError> {
    Ok(parity_suite(model, i, j, horizon, cfg, None)?.european)
}

/// `AX^{ij}(T) + S^i_0 = AX^{ji}(T) + S^j_0`.
pub fn check_parity_american(
    model: &FactorModel,
    i: usize,
    j: usize,
    horizon: f64,
    cfg: &McConfig,
) -> Result<ParityReport, PricingError> {
    Ok(parity_suite(model, i, j, horizon, cfg, None)?.american)
}

/// `AX^{ij} + S^i_0 Q^i[T < ζ] = EX^{ji} + S^j_0` and
/// `EX^{ij} + S^i_0 = AX^{ji} + S^j_0 Q^j[T < ζ]`, after checking the
/// degeneracy conditions these identities rely on.
pub fn check_parity_mixed(
    model: &FactorModel,
    i: usize,
    j: usize,
    horizon: f64,
    cfg: &McConfig,
) -> Result<[ParityReport; 2], DiagnosticsError> {
    let degeneracy = check_degeneracy(model, i, j, cfg)?;
    check_parity_mixed_with(model, i, j, horizon, cfg, &degeneracy)
}

/// [`check_parity_mixed`] with a degeneracy report computed beforehand.
pub fn check_parity_mixed_with(
    model: &FactorModel,
    i: usize,
    j: usize,
    horizon: f64,
    cfg: &McConfig,
    degeneracy: &DegeneracyReport,
) -> Result<[ParityReport; 2], DiagnosticsError> {
    if !degeneracy.pass {
        return Err(DiagnosticsError::PreconditionFailed(Box::new(
            degeneracy.clone(),
        )));
    }
    let suite = parity_suite(model, i, j, horizon, cfg, Some(degeneracy))?;
    Ok(suite.mixed.expect("degeneracy passed"))
}

/// Thresholds of the degeneracy check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegeneracyConfig {
    /// Frequencies are estimated at `ζ_1, ..., ζ_levels`; since `ζ_n` is
    /// capped at calendar time `n`, paths run to time `levels`.
    pub levels: usize,
    /// Path count for the check, overriding the run's; the deep horizon
    /// makes full-size runs expensive.
    pub n_paths: Option<usize>,
    /// A sampled `ρ^{ba}` at or below `rho_epsilon · R^{ba}_0` counts as
    /// zero. Relative, so the verdict does not change with the units of
    /// either asset.
    pub rho_epsilon: f64,
    /// Required mass of `ρ` at zero is `1 - rho_tolerance`.
    pub rho_tolerance: f64,
    /// A final frequency at or below this counts as vanished.
    pub vanish_level: f64,
}

impl Default for DegeneracyConfig {
    fn default() -> Self {
        DegeneracyConfig {
            levels: 16,
            n_paths: None,
            rho_epsilon: 0.05,
            rho_tolerance: 0.05,
            vanish_level: 0.01,
        }
    }
}

/// Where the mass of `ρ` at zero was measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhoBasis {
    /// Among paths that exploded.
    Exploded,
    /// No path exploded: the ratio at the end of the horizon on all paths.
    Horizon,
}

/// Empirical mass of `ρ^{ba}` near zero under `Q^a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoMass {
    pub measure: Measure,
    pub exploded: usize,
    pub total: usize,
    pub basis: RhoBasis,
    /// Fraction of the considered paths with `ρ` counted as zero.
    pub mass_at_zero: f64,
}

/// Evidence on the degeneracy conditions for a pair `(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DegeneracyReport {
    pub config: DegeneracyConfig,
    /// First level of the frequency sequences: 1 if `x0` lies in the
    /// interior of `Ē_1`, else 2 (on the boundary `ζ_1` is immediate).
    pub first_level: usize,
    /// `Q^j[S^j_{ζ_n} <= S^i_{ζ_n}]` for `n = first_level..=levels`.
    pub freq_qj: Vec<MCEstimate>,
    /// `Q^i[S^i_{ζ_n} <= S^j_{ζ_n}]` for `n = first_level..=levels`.
    pub freq_qi: Vec<MCEstimate>,
    pub nonincreasing_qj: bool,
    pub nonincreasing_qi: bool,
    /// Both frequency sequences trend to zero.
    pub condition3: bool,
    pub rho_qj: RhoMass,
    pub rho_qi: RhoMass,
    pub condition4: bool,
    pub pass: bool,
}

/// Pairwise nonincreasing up to `TREND_SIGMAS` combined standard errors.
pub fn nonincreasing(seq: &[MCEstimate]) -> bool {
    seq.windows(2)
        .all(|w| w[1].mean - w[0].mean <= TREND_SIGMAS * w[0].combined_stderr(&w[1]))
}

/// The last value has vanished, or sits significantly below the peak.
fn trends_to_zero(seq: &[MCEstimate], vanish_level: f64) -> bool {
    let Some(last) = seq.last() else {
        return false;
    };
    if last.mean <= vanish_level {
        return true;
    }
    seq.iter()
        .any(|e| last.mean + TREND_SIGMAS * last.combined_stderr(e) < e.mean)
}

/// Runs under `Q^a` and estimates the condition-(3) frequencies for
/// `(b, a)` together with the `ρ^{ba}` mass.
fn degeneracy_side(
    model: &FactorModel,
    b: usize,
    a: usize,
    first: usize,
    levels: usize,
    cfg: &McConfig,
    dc: &DegeneracyConfig,
) -> Result<(Vec<MCEstimate>, RhoMass), PricingError> {
    // columns: frequencies at ζ_1..ζ_levels, exploded, exploded with small
    // rho, small ratio at the horizon
    let width = levels + 3;
    let s0 = model.s0();
    let eps = dc.rho_epsilon * s0[b] / s0[a];
    let run: Run = simulate(
        model,
        Measure::Numeraire(a),
        levels as f64,
        cfg,
        width,
        |p, row| {
            for n in 1..=levels {
                let k = p.zeta_capped(n);
                if p.stopped_price(k, a) <= p.stopped_price(k, b) {
                    row[n - 1] = 1.0;
                }
            }
            if let Some(rho) = p.rho(b, a) {
                row[levels] = 1.0;
                row[levels + 1] = f64::from(u8::from(rho <= eps));
            }
            let k = p.zeta_capped(p.n_max());
            row[levels + 2] = f64::from(u8::from(p.stopped_ratio(b, a, k) <= eps));
        },
    )?;
    let freq = (first - 1..levels)
        .map(|c| run.estimate(c, 1.0, Method::Frequency))
        .collect();
    let total = run.stats.n_valid;
    let exploded_frac = run.stats.mean(levels);
    let exploded = (exploded_frac * total as f64).round() as usize;
    let rho = if exploded > 0 {
        RhoMass {
            measure: run.measure,
            exploded,
            total,
            basis: RhoBasis::Exploded,
            mass_at_zero: run.stats.mean(levels + 1) / exploded_frac,
        }
    } else {
        RhoMass {
            measure: run.measure,
            exploded,
            total,
            basis: RhoBasis::Horizon,
            mass_at_zero: run.stats.mean(levels + 2),
        }
    };
    Ok((freq, rho))
}

fn first_level(model: &FactorModel) -> usize {
    let x0 = model.x0();
    match model.exhaustion().level_bounds(1) {
        Some((lo, hi))
            if x0
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(x, (l, u))| l < x && x < u) =>
        {
            1
        }
        _ => 2,
    }
}

/// Checks conditions (3) and (4) of the degeneracy characterization with
/// the default thresholds.
pub fn check_degeneracy(
    model: &FactorModel,
    i: usize,
    j: usize,
    cfg: &McConfig,
) -> Result<DegeneracyReport, PricingError> {
    check_degeneracy_with(model, i, j, cfg, &DegeneracyConfig::default())
}

/// Checks the degeneracy conditions for `(i, j)`.
///
/// Condition (3) requires both frequency sequences to trend to zero.
/// Condition (4), `ρ^{ij} = 0`, is equivalent to its mirror `ρ^{ji} = 0`;
/// it is judged under whichever of `Q^j`, `Q^i` charges explosion more,
/// since under the other the limit is not observable on a finite horizon.
pub fn check_degeneracy_with(
    model: &FactorModel,
    i: usize,
    j: usize,
    cfg: &McConfig,
    dc: &DegeneracyConfig,
) -> Result<DegeneracyReport, PricingError> {
    check_physical(model)?;
    model.check_asset(i)?;
    model.check_asset(j)?;
    let cfg = &McConfig {
        n_paths: dc.n_paths.unwrap_or(cfg.n_paths),
        ..*cfg
    };
    let depth = model.exhaustion().depth();
    let first = first_level(model).min(depth);
    let levels = dc.levels.clamp(first, depth);
    let (freq_qj, rho_qj) = degeneracy_side(model, i, j, first, levels, cfg, dc)?;
    let (freq_qi, rho_qi) = if i == j {
        (freq_qj.clone(), rho_qj)
    } else {
        degeneracy_side(model, j, i, first, levels, cfg, dc)?
    };
    let condition3 =
        trends_to_zero(&freq_qj, dc.vanish_level) && trends_to_zero(&freq_qi, dc.vanish_level);
    let informative = if rho_qi.exploded > rho_qj.exploded {
        &rho_qi
    } else {
        &rho_qj
    };
    let condition4 = informative.mass_at_zero >= 1.0 - dc.rho_tolerance;
    Ok(DegeneracyReport {
        config: DegeneracyConfig { levels, ..*dc },
        first_level: first,
        nonincreasing_qj: nonincreasing(&freq_qj),
        nonincreasing_qi: nonincreasing(&freq_qi),
        freq_qj,
        freq_qi,
        condition3,
        rho_qj,
        rho_qi,
        condition4,
        pass: condition3 && condition4,
    })
}

/// `E_{Q^j}[R^{ij}_t]` over a time grid, with `R^{ij} = 0` after default.
#[derive(Debug, Clone, PartialEq)]
pub struct SupermartingaleReport {
    pub times: Vec<f64>,
    pub means: Vec<MCEstimate>,
    pub pass: bool,
}

/// Checks that the ratio mean is nonincreasing in time within
/// `TREND_SIGMAS` combined standard errors.
pub fn check_ratio_supermartingale(
    model: &FactorModel,
    i: usize,
    j: usize,
    times: &[f64],
    cfg: &McConfig,
) -> Result<SupermartingaleReport, PricingError> {
    let means = ratio_mean(model, i, j, times, cfg)?;
    Ok(SupermartingaleReport {
        times: times.to_vec(),
        pass: nonincreasing(&means),
        means,
    })
}

/// Martingale defect of one asset at one maturity.
#[derive(Debug, Clone, PartialEq)]
pub struct BubbleRow {
    pub horizon: f64,
    /// `E_P[Y_T S^i_T]`.
    pub deflated: MCEstimate,
    /// `S^i_0 - E_P[Y_T S^i_T]`.
    pub defect: MCEstimate,
    /// `S^i_0 Q^i[ζ <= T]`, the same quantity computed under `Q^i`.
    pub explosion_defect: MCEstimate,
    /// `defect > 3` standard errors.
    pub flagged: bool,
    /// The two defect estimates agree within 3 combined standard errors.
    pub consistent: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BubbleReport {
    pub asset: usize,
    pub rows: Vec<BubbleRow>,
    /// Flagged at some maturity.
    pub bubble: bool,
}

/// Measures the martingale defect of `Y S^i` under `P` at each maturity and
/// cross-checks it against the explosion probability under `Q^i`.
pub fn detect_bubble(
    model: &FactorModel,
    i: usize,
    times: &[f64],
    cfg: &McConfig,
) -> Result<BubbleReport, PricingError> {
    let deflated = deflated_price(model, i, times, cfg)?;
    let si0 = model.s0()[i];
    let mut rows = Vec::with_capacity(times.len());
    for (&t, deflated) in times.iter().zip(deflated) {
        let defect = MCEstimate::combine(
            &[
                (
                    1.0,
                    &MCEstimate::exact(si0, Method::DeflatedPrice, Measure::Physical),
                ),
                (-1.0, &deflated),
            ],
            Method::Combination,
        );
        let explosion = default_probability(model, i, t, cfg)?;
        let explosion_defect =
            MCEstimate::combine(&[(si0, &explosion)], Method::DefaultProbability);
        rows.push(BubbleRow {
            horizon: t,
            flagged: defect.mean > RESIDUAL_SIGMAS * defect.stderr,
            consistent: (defect.mean - explosion_defect.mean).abs()
                <= RESIDUAL_SIGMAS * defect.combined_stderr(&explosion_defect),
            deflated,
            defect,
            explosion_defect,
        });
    }
    Ok(BubbleReport {
        asset: i,
        bubble: rows.iter().any(|r| r.flagged),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn est(mean: f64, stderr: f64) -> MCEstimate {
        let mut e = MCEstimate::exact(mean, Method::Frequency, Measure::Physical);
        e.stderr = stderr;
        e
    }

    #[test]
    fn nonincreasing_tolerates_noise() {
        assert!(nonincreasing(&[
            est(0.5, 0.01),
            est(0.52, 0.01),
            est(0.3, 0.01)
        ]));
        assert!(!nonincreasing(&[est(0.5, 0.01), est(0.6, 0.01)]));
        assert!(nonincreasing(&[est(0.5, 0.01)]));
    }

    #[test]
    fn trend_rule() {
        assert!(trends_to_zero(&[est(0.3, 0.01), est(0.005, 0.001)], 0.01));
        assert!(trends_to_zero(&[est(0.3, 0.01), est(0.2, 0.01)], 0.01));
        assert!(!trends_to_zero(&[est(1.0, 0.0), est(1.0, 0.0)], 0.01));
        assert!(!trends_to_zero(&[], 0.01));
    }

    proptest! {
        #[test]
        fn parity_pass_flag_matches_fields(
            l in -2.0f64..2.0,
            r in -2.0f64..2.0,
            se in 0.0f64..0.5,
            allowance in 0.0f64..0.1,
        ) {
            let rep = ParityReport::new("p", est(l, 0.0), est(r, 0.0), se, allowance);
            prop_assert_eq!(rep.residual, l - r);
            prop_assert_eq!(rep.pass, (l - r).abs() <= 3.0 * se + allowance);
        }
    }
}
