//! Monte Carlo estimators for exchange options.
//!
//! `EX^{ij}(T)` is the European right to receive `S^j_T` in exchange for
//! `S^i_T`; `AX^{ij}(T)` is its American counterpart. All estimators take the
//! model under the physical measure and simulate it under whichever measure
//! the representation needs. Each measure gets its own seed derived from the
//! master seed, so estimates under different measures are independent.

use std::fmt;

use thiserror::Error;

use crate::model::{FactorModel, Measure, ModelError};
use crate::sde_engine::{batch_simulate, BatchConfig, BatchStats, EngineError, Path, TimeGrid};

#[derive(Debug, Error)]
pub enum PricingError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("pricing needs the model under P, got one under {0}")]
    MeasureMismatch(Measure),
    #[error("ladder depth {n} is not in 1..={depth}")]
    LadderDepth { n: usize, depth: usize },
    #[error("observation times must be positive and increasing")]
    Times,
}

/// Monte Carlo settings shared by all estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig {
    pub n_paths: usize,
    pub step: f64,
    pub seed: u64,
    /// Worker threads; 0 means all available.
    pub workers: usize,
}

/// Representation used for a European exchange value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EurMethod {
    /// `E_P[Y_T (S^j_T - S^i_T)_+ ; T < ζ]`.
    PDeflated,
    /// `S^j_0 E_{Q^j}[(1 - R^{ij}_T)_+ ; T < ζ]`.
    QjPut,
    /// `S^j_0 Q^j[S^i_T < S^j_T, T < ζ] - S^i_0 Q^i[S^i_T < S^j_T, T < ζ]`.
    ProbDiff,
    /// `S^i_0 E_{Q^i}[(R^{ji}_T - 1)_+ ; T < ζ] + S^j_0 Q^j[S^i_T = 0, T < ζ]`.
    QiCall,
}

impl EurMethod {
    pub const ALL: [EurMethod; 4] = [
        EurMethod::PDeflated,
        EurMethod::QjPut,
        EurMethod::ProbDiff,
        EurMethod::QiCall,
    ];
}

impl fmt::Display for EurMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EurMethod::PDeflated => "P_DEFLATED",
            EurMethod::QjPut => "QJ_PUT",
            EurMethod::ProbDiff => "PROB_DIFF",
            EurMethod::QiCall => "QI_CALL",
        })
    }
}

/// What an [`MCEstimate`] estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    European(EurMethod),
    AmericanLadder,
    EarlyExercisePremium,
    DefaultProbability,
    DeflatedPrice,
    RatioMean,
    Survival,
    Frequency,
    Combination,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::European(m) => m.fmt(f),
            Method::AmericanLadder => f.write_str("AMERICAN_LADDER"),
            Method::EarlyExercisePremium => f.write_str("EARLY_EXERCISE_PREMIUM"),
            Method::DefaultProbability => f.write_str("DEFAULT_PROBABILITY"),
            Method::DeflatedPrice => f.write_str("DEFLATED_PRICE"),
            Method::RatioMean => f.write_str("RATIO_MEAN"),
            Method::Survival => f.write_str("SURVIVAL"),
            Method::Frequency => f.write_str("FREQUENCY"),
            Method::Combination => f.write_str("COMBINATION"),
        }
    }
}

/// A named auxiliary quantity reported alongside an estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub name: &'static str,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MCEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub method: Method,
    pub measure: Measure,
    pub components: Vec<Component>,
}

impl MCEstimate {
    pub(crate) fn from_column(
        stats: &BatchStats,
        col: usize,
        scale: f64,
        method: Method,
        measure: Measure,
        seed: u64,
    ) -> Self {
        MCEstimate {
            mean: scale * stats.mean(col),
            stderr: scale.abs() * stats.stderr(col),
            n_paths: stats.n_valid,
            seed,
            method,
            measure,
            components: Vec::new(),
        }
    }

    /// Sum of `coef * estimate` over independent estimates.
    pub fn combine(terms: &[(f64, &MCEstimate)], method: Method) -> MCEstimate {
        let mean = terms.iter().map(|(c, e)| c * e.mean).sum();
        let var: f64 = terms.iter().map(|(c, e)| (c * e.stderr).powi(2)).sum();
        let first = terms[0].1;
        MCEstimate {
            mean,
            stderr: var.sqrt(),
            n_paths: first.n_paths,
            seed: first.seed,
            method,
            measure: first.measure,
            components: Vec::new(),
        }
    }

    /// Standard error of `self - other` for independent estimates.
    pub fn combined_stderr(&self, other: &MCEstimate) -> f64 {
        self.stderr.hypot(other.stderr)
    }

    /// Estimate of a known constant.
    pub fn exact(value: f64, method: Method, measure: Measure) -> MCEstimate {
        MCEstimate {
            mean: value,
            stderr: 0.0,
            n_paths: 0,
            seed: 0,
            method,
            measure,
            components: Vec::new(),
        }
    }
}

/// Ratio `R^{ij}` on one path, with the explosion proxy of `ρ^{ij}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioSample {
    pub value: f64,
    pub rho_value: Option<f64>,
}

impl RatioSample {
    pub fn from_path(path: &Path, i: usize, j: usize, k: usize) -> Self {
        RatioSample {
            value: path.ratio(i, j, k),
            rho_value: path.rho(i, j),
        }
    }
}

/// Seed of the simulation under `measure`, derived from the master seed.
pub fn measure_seed(master: u64, measure: Measure) -> u64 {
    let tag = match measure {
        Measure::Physical => 0,
        Measure::Numeraire(j) => j as u64 + 1,
    };
    splitmix64(master ^ splitmix64(tag.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A batch of paths under one measure, with the seed used.
pub(crate) struct Run {
    pub stats: BatchStats,
    pub seed: u64,
    pub measure: Measure,
}

impl Run {
    pub fn estimate(&self, col: usize, scale: f64, method: Method) -> MCEstimate {
        MCEstimate::from_column(&self.stats, col, scale, method, self.measure, self.seed)
    }
}

pub(crate) fn check_physical(model: &FactorModel) -> Result<(), PricingError> {
    match model.measure() {
        Measure::Physical => Ok(()),
        other => Err(PricingError::MeasureMismatch(other)),
    }
}

/// Simulates `model` (given under `P`) under `measure` up to `horizon`.
pub(crate) fn simulate<F>(
    model: &FactorModel,
    measure: Measure,
    horizon: f64,
    cfg: &McConfig,
    width: usize,
    functional: F,
) -> Result<Run, PricingError>
where
    F: Fn(&Path, &mut [f64]) + Sync,
{
    check_physical(model)?;
    let adjusted;
    let sim_model = match measure {
        Measure::Physical => model,
        Measure::Numeraire(j) => {
            adjusted = model.numeraire_adjust(j)?;
            &adjusted
        }
    };
    let grid = TimeGrid::new(horizon, cfg.step)?;
    let seed = measure_seed(cfg.seed, measure);
    let batch = BatchConfig {
        n_paths: cfg.n_paths,
        seed,
        workers: cfg.workers,
    };
    let stats = batch_simulate(sim_model, &grid, &batch, width, functional)?;
    Ok(Run {
        stats,
        seed,
        measure,
    })
}

fn check_pair(model: &FactorModel, i: usize, j: usize) -> Result<(), PricingError> {
    model.check_asset(i)?;
    model.check_asset(j)?;
    Ok(())
}

/// Estimates `EX^{ij}(T)` with the given representation.
///
/// `PROB_DIFF` reports the frequency of exact ties `S^i_T = S^j_T` as
/// components; `QI_CALL` reports its default-of-asset-`i` term separately.
pub fn eur_exchange(
    model: &FactorModel,
    i: usize,
    j: usize,
    horizon: f64,
    method: EurMethod,
    cfg: &McConfig,
) -> Result<MCEstimate, PricingError> {
    check_physical(model)?;
    check_pair(model, i, j)?;
    let (si0, sj0) = (model.s0()[i], model.s0()[j]);
    let tag = Method::European(method);
    match method {
        EurMethod::PDeflated => {
            let run = simulate(model, Measure::Physical, horizon, cfg, 1, |p, row| {
                let n = p.n_steps();
                if p.alive_at(n) {
                    let y = p.y(n).unwrap_or(0.0);
                    row[0] = y * (p.price(n, j) - p.price(n, i)).max(0.0);
                }
            })?;
            Ok(run.estimate(0, 1.0, tag))
        }
        EurMethod::QjPut => {
            let run = simulate(model, Measure::Numeraire(j), horizon, cfg, 1, |p, row| {
                let n = p.n_steps();
                if p.alive_at(n) {
                    row[0] = (1.0 - p.ratio(i, j, n)).max(0.0);
                }
            })?;
            Ok(run.estimate(0, sj0, tag))
        }
        EurMethod::ProbDiff => {
            let below_and_ties = |p: &Path, row: &mut [f64]| {
                let n = p.n_steps();
                if p.alive_at(n) {
                    let (si, sj) = (p.price(n, i), p.price(n, j));
                    row[0] = f64::from(u8::from(si < sj));
                    row[1] = f64::from(u8::from(si == sj));
                }
            };
            let qj = simulate(
                model,
                Measure::Numeraire(j),
                horizon,
                cfg,
                2,
                below_and_ties,
            )?;
            let qi = simulate(
                model,
                Measure::Numeraire(i),
                horizon,
                cfg,
                2,
                below_and_ties,
            )?;
            let a = qj.estimate(0, sj0, tag);
            let b = qi.estimate(0, si0, tag);
            let mut est = MCEstimate::combine(&[(1.0, &a), (-1.0, &b)], tag);
            let (tj, ti) = (
                qj.estimate(1, 1.0, Method::Frequency),
                qi.estimate(1, 1.0, Method::Frequency),
            );
            est.components = vec![
                Component {
                    name: "tie_frequency_qj",
                    mean: tj.mean,
                    stderr: tj.stderr,
                },
                Component {
                    name: "tie_frequency_qi",
                    mean: ti.mean,
                    stderr: ti.stderr,
                },
            ];
            Ok(est)
        }
        EurMethod::QiCall => {
            let qi = simulate(model, Measure::Numeraire(i), horizon, cfg, 1, |p, row| {
                let n = p.n_steps();
                if p.alive_at(n) {
                    row[0] = (p.ratio(j, i, n) - 1.0).max(0.0);
                }
            })?;
            let qj = simulate(model, Measure::Numeraire(j), horizon, cfg, 1, |p, row| {
                let n = p.n_steps();
                if p.alive_at(n) && p.price(n, i) == 0.0 {
                    row[0] = 1.0;
                }
            })?;
            let call = qi.estimate(0, si0, tag);
            let zero = qj.estimate(0, sj0, tag);
            let mut est = MCEstimate::combine(&[(1.0, &call), (1.0, &zero)], tag);
            est.components = vec![Component {
                name: "asset_i_default_term",
                mean: zero.mean,
                stderr: zero.stderr,
            }];
            Ok(est)
        }
    }
}

/// American exchange value with its approximating ladder.
#[derive(Debug, Clone, PartialEq)]
pub struct AmericanEstimate {
    /// `AX^{ij}(T)`, the last rung of the ladder.
    pub value: MCEstimate,
    /// `EX^{ij}(T ∧ ζ_n)` for `n = 1..=n_ladder`.
    pub ladder: Vec<MCEstimate>,
}

/// Payoff `(1 - R^{ij})_+` at `T ∧ ζ_n` on a `Q^j` path, using the exit
/// sample when `ζ_n` is the explosion index.
pub(crate) fn ladder_payoff(p: &Path, i: usize, j: usize, n: usize) -> f64 {
    let k = p.zeta_capped(n);
    (1.0 - p.stopped_ratio(i, j, k)).max(0.0)
}

/// Estimates `EX^{ij}(T ∧ ζ_n)` for `n = 1..=n_ladder` on one set of `Q^j`
/// paths; the last rung is the `AX^{ij}(T)` estimate.
pub fn amer_exchange(
    model: &FactorModel,
    i: usize,
    j: usize,
    horizon: f64,
    n_ladder: usize,
    cfg: &McConfig,
) -> Result<AmericanEstimate, PricingError> {
    check_physical(model)?;
    check_pair(model, i, j)?;
    let depth = model.exhaustion().depth();
    if n_ladder == 0 || n_ladder > depth {
        return Err(PricingError::LadderDepth { n: n_ladder, depth });
    }
    let run = simulate(
        model,
        Measure::Numeraire(j),
        horizon,
        cfg,
        n_ladder,
        |p, row| {
            for (n, v) in row.iter_mut().enumerate() {
                *v = ladder_payoff(p, i, j, n + 1);
            }
        },
    )?;
    let sj0 = model.s0()[j];
    let ladder: Vec<MCEstimate> = (0..n_ladder)
        .map(|c| run.estimate(c, sj0, Method::AmericanLadder))
        .collect();
    Ok(AmericanEstimate {
        value: ladder[n_ladder - 1].clone(),
        ladder,
    })
}

/// `S^j_0 E_{Q^j}[(1 - ρ^{ij})_+ ; ζ <= T]`.
pub fn early_exercise_premium(
    model: &FactorModel,
    i: usize,
    j: usize,
    horizon: f64,
    cfg: &McConfig,
) -> Result<MCEstimate, PricingError> {
    check_physical(model)?;
    check_pair(model, i, j)?;
    let run = simulate(model, Measure::Numeraire(j), horizon, cfg, 1, |p, row| {
        if let Some(rho) = p.rho(i, j) {
            row[0] = (1.0 - rho).max(0.0);
        }
    })?;
    Ok(run.estimate(0, model.s0()[j], Method::EarlyExercisePremium))
}

/// `Q^j[ζ <= T]`.
pub fn default_probability(
    model: &FactorModel,
    j: usize,
    horizon: f64,
    cfg: &McConfig,
) -> Result<MCEstimate, PricingError> {
    check_physical(model)?;
    model.check_asset(j)?;
    let run = simulate(model, Measure::Numeraire(j), horizon, cfg, 1, |p, row| {
        row[0] = f64::from(u8::from(p.exploded()));
    })?;
    Ok(run.estimate(0, 1.0, Method::DefaultProbability))
}

fn check_times(times: &[f64]) -> Result<(), PricingError> {
    let ok = !times.is_empty()
        && times.iter().all(|t| *t > 0.0 && t.is_finite())
        && times.windows(2).all(|w| w[0] < w[1]);
    if ok {
        Ok(())
    } else {
        Err(PricingError::Times)
    }
}

/// Grid indices of `times` on a grid of step `step`.
pub(crate) fn time_indices(times: &[f64], step: f64) -> Result<Vec<usize>, PricingError> {
    times
        .iter()
        .map(|&t| {
            let grid = TimeGrid::new(t, step)?;
            Ok(grid.n_steps())
        })
        .collect()
}

/// `E_P[Y_T S^i_T]` at each of `times`, from one set of `P` paths.
pub fn deflated_price(
    model: &FactorModel,
    i: usize,
    times: &[f64],
    cfg: &McConfig,
) -> Result<Vec<MCEstimate>, PricingError> {
    check_physical(model)?;
    model.check_asset(i)?;
    check_times(times)?;
    let idx = time_indices(times, cfg.step)?;
    let horizon = *times.last().expect("times are non-empty");
    let run = simulate(
        model,
        Measure::Physical,
        horizon,
        cfg,
        idx.len(),
        |p, row| {
            for (c, &k) in idx.iter().enumerate() {
                row[c] = p.deflated_price(k, i).unwrap_or(0.0);
            }
        },
    )?;
    Ok((0..idx.len())
        .map(|c| run.estimate(c, 1.0, Method::DeflatedPrice))
        .collect())
}

/// `E_{Q^j}[R^{ij}_t]` at each of `times`, with `R^{ij} = 0` after default.
pub fn ratio_mean(
    model: &FactorModel,
    i: usize,
    j: usize,
    times: &[f64],
    cfg: &McConfig,
) -> Result<Vec<MCEstimate>, PricingError> {
    check_physical(model)?;
    check_pair(model, i, j)?;
    check_times(times)?;
    let idx = time_indices(times, cfg.step)?;
    let horizon = *times.last().expect("times are non-empty");
    let run = simulate(
        model,
        Measure::Numeraire(j),
        horizon,
        cfg,
        idx.len(),
        |p, row| {
            for (c, &k) in idx.iter().enumerate() {
                row[c] = p.ratio(i, j, k);
            }
        },
    )?;
    Ok((0..idx.len())
        .map(|c| run.estimate(c, 1.0, Method::RatioMean))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn measure_seeds_differ_and_are_stable() {
        let p = measure_seed(7, Measure::Physical);
        let q0 = measure_seed(7, Measure::Numeraire(0));
        let q1 = measure_seed(7, Measure::Numeraire(1));
        assert!(p != q0 && q0 != q1 && p != q1);
        assert_eq!(q1, measure_seed(7, Measure::Numeraire(1)));
        assert_ne!(q1, measure_seed(8, Measure::Numeraire(1)));
    }

    #[test]
    fn combine_adds_variances() {
        let a = MCEstimate::exact(1.0, Method::Frequency, Measure::Physical);
        let mut b = a.clone();
        b.stderr = 0.3;
        let mut c = a.clone();
        c.stderr = 0.4;
        let s = MCEstimate::combine(&[(1.0, &b), (-2.0, &c)], Method::Combination);
        assert_eq!(s.mean, -1.0);
        assert!((s.stderr - (0.09f64 + 0.64).sqrt()).abs() < 1e-15);
    }
}
