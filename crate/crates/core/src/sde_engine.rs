//! Path simulation on a uniform time grid.
//!
//! Factors use Euler–Maruyama; asset prices and the discount factor use the
//! exact-log Euler scheme, so they stay strictly positive until default.
//! Once the factor path leaves the deepest exhaustion set (or produces a
//! non-finite value) the path is killed: every asset price and the discount
//! factor are frozen at 0 from that grid index on. The last finite asset
//! prices computed at the exit step are kept separately as the exit sample.
//!
//! Randomness is counter based: the normal increments of path `p` come from
//! a ChaCha8 stream selected by `p` under a fixed seed, so results do not
//! depend on how paths are split across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{Coefficients, FactorModel, Measure};

/// Paths per work unit; aggregation order is fixed per chunk.
const CHUNK: usize = 256;

/// Largest tolerated fraction of paths with coefficient-evaluation failures.
pub const MAX_INVALID_FRACTION: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("time horizon must be positive and finite, got {0}")]
    Horizon(f64),
    #[error("step {step} does not divide horizon {horizon}")]
    Step { horizon: f64, step: f64 },
    #[error("number of paths must be positive")]
    NoPaths,
    #[error("{invalid} of {total} paths failed coefficient evaluation")]
    TooManyInvalid { invalid: usize, total: usize },
    #[error("discount factor is only simulated under the physical measure, not {0}")]
    DiscountFactorMeasure(Measure),
    #[error("could not build worker pool: {0}")]
    Pool(String),
}

/// Uniform grid `0, h, 2h, ..., N h = T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    step: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, step: f64) -> Result<Self, EngineError> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(EngineError::Horizon(horizon));
        }
        if !(step > 0.0 && step.is_finite()) || step > horizon {
            return Err(EngineError::Step { horizon, step });
        }
        let n = (horizon / step).round();
        if (n * step - horizon).abs() > 1e-9 * horizon.max(1.0) {
            return Err(EngineError::Step { horizon, step });
        }
        Ok(TimeGrid {
            horizon,
            step,
            n_steps: n as usize,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.step
    }

    /// Grid index of calendar time `t`, rounded to the nearest step.
    pub fn index_of(&self, t: f64) -> usize {
        (t / self.step).round() as usize
    }
}

/// Identifies the random stream of one path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngContract {
    pub master_seed: u64,
    pub path_index: u64,
}

impl RngContract {
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.path_index);
        rng
    }
}

/// One simulated path. Grid indices run over `0..=n_steps`.
///
/// Prices and the discount factor are stored as logarithms; a killed path
/// holds `-inf` from the explosion index on, so its prices read as 0.
#[derive(Debug, Clone)]
pub struct Path {
    m: usize,
    n_assets: usize,
    n_steps: usize,
    /// Row-major `(n_steps + 1) x m`; NaN after the explosion index.
    x: Vec<f64>,
    /// Row-major `(n_steps + 1) x n_assets`.
    log_s: Vec<f64>,
    /// Discount factor, only under the physical measure.
    log_y: Option<Vec<f64>>,
    exit_log_s: Vec<f64>,
    explosion_index: Option<usize>,
    /// `zeta[n-1]`: first grid index with `X ∉ Ē_n`, capped at calendar
    /// time `n`; `None` if neither happens on the grid.
    zeta: Vec<Option<usize>>,
    invalid: bool,
}

impl Path {
    pub fn new(m: usize, n_assets: usize, n_steps: usize, with_discount: bool) -> Self {
        Path {
            m,
            n_assets,
            n_steps,
            x: vec![0.0; (n_steps + 1) * m],
            log_s: vec![0.0; (n_steps + 1) * n_assets],
            log_y: with_discount.then(|| vec![0.0; n_steps + 1]),
            exit_log_s: vec![0.0; n_assets],
            explosion_index: None,
            zeta: Vec::new(),
            invalid: false,
        }
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_assets(&self) -> usize {
        self.n_assets
    }

    pub fn x(&self, k: usize) -> &[f64] {
        &self.x[k * self.m..(k + 1) * self.m]
    }

    /// `log S^i` at grid index `k` (`-inf` once killed).
    pub fn log_price(&self, k: usize, i: usize) -> f64 {
        self.log_s[k * self.n_assets + i]
    }

    /// `S^i` at grid index `k` (zero once killed).
    pub fn price(&self, k: usize, i: usize) -> f64 {
        self.log_price(k, i).exp()
    }

    /// All asset prices at grid index `k`.
    pub fn prices(&self, k: usize) -> Vec<f64> {
        (0..self.n_assets).map(|i| self.price(k, i)).collect()
    }

    /// Discount factor `Y` at grid index `k`, if simulated.
    pub fn y(&self, k: usize) -> Option<f64> {
        self.log_y.as_ref().map(|y| y[k].exp())
    }

    /// `Y S^i` at grid index `k`, if `Y` was simulated.
    pub fn deflated_price(&self, k: usize, i: usize) -> Option<f64> {
        self.log_y
            .as_ref()
            .map(|y| (y[k] + self.log_price(k, i)).exp())
    }

    /// True iff the factor path left `Ē_{n_max}` or became non-finite.
    pub fn exploded(&self) -> bool {
        self.explosion_index.is_some()
    }

    pub fn explosion_index(&self) -> Option<usize> {
        self.explosion_index
    }

    /// True iff a coefficient evaluation failed along the path.
    pub fn invalid(&self) -> bool {
        self.invalid
    }

    /// Alive at grid index `k`, i.e. `k < ζ`.
    pub fn alive_at(&self, k: usize) -> bool {
        self.explosion_index.is_none_or(|e| k < e)
    }

    /// Asset prices computed at the exit step, before freezing.
    pub fn exit_prices(&self) -> Option<Vec<f64>> {
        self.explosion_index
            .map(|_| self.exit_log_s.iter().map(|v| v.exp()).collect())
    }

    /// `log S^i` at `k`, substituting the exit sample at the explosion
    /// index. Used for quantities evaluated at stopping times.
    pub fn stopped_log_price(&self, k: usize, i: usize) -> f64 {
        if self.explosion_index == Some(k) {
            self.exit_log_s[i]
        } else {
            self.log_price(k, i)
        }
    }

    pub fn stopped_price(&self, k: usize, i: usize) -> f64 {
        self.stopped_log_price(k, i).exp()
    }

    /// `R^{ij} = S^i / S^j 1{S^j > 0}` at grid index `k`.
    pub fn ratio(&self, i: usize, j: usize, k: usize) -> f64 {
        log_ratio(self.log_price(k, i), self.log_price(k, j))
    }

    /// Ratio at a stopping index, using the exit sample at the explosion.
    pub fn stopped_ratio(&self, i: usize, j: usize, k: usize) -> f64 {
        log_ratio(self.stopped_log_price(k, i), self.stopped_log_price(k, j))
    }

    /// Proxy for `ρ^{ij} = lim R^{ij}_{ζ_n}`: the ratio of the exit sample.
    pub fn rho(&self, i: usize, j: usize) -> Option<f64> {
        self.explosion_index
            .map(|_| log_ratio(self.exit_log_s[i], self.exit_log_s[j]))
    }

    /// `ζ_n` as a grid index, for `1 <= n <= n_max`.
    pub fn zeta(&self, n: usize) -> Option<usize> {
        self.zeta.get(n - 1).copied().flatten()
    }

    /// `ζ_n ∧ T` as a grid index.
    pub fn zeta_capped(&self, n: usize) -> usize {
        self.zeta(n).unwrap_or(self.n_steps).min(self.n_steps)
    }

    pub fn n_max(&self) -> usize {
        self.zeta.len()
    }
}

fn log_ratio(log_a: f64, log_b: f64) -> f64 {
    if log_b == f64::NEG_INFINITY {
        0.0
    } else {
        (log_a - log_b).exp()
    }
}

/// Scratch space reused across paths.
#[derive(Debug, Clone)]
pub struct Workspace {
    coef: Coefficients,
    drift: Vec<f64>,
    rates: Vec<f64>,
    dw: Vec<f64>,
    x_next: Vec<f64>,
}

impl Workspace {
    pub fn new(model: &FactorModel) -> Self {
        let m = model.factors();
        Workspace {
            coef: Coefficients::new(m, model.risky_assets()),
            drift: vec![0.0; m],
            rates: vec![0.0; model.n_assets()],
            dw: vec![0.0; m],
            x_next: vec![0.0; m],
        }
    }
}

/// Largest log-price whose exponential is finite.
const MAX_LOG_PRICE: f64 = 709.78;

/// Simulates one path of `model` (under its own measure) on `grid`.
pub fn simulate_path(model: &FactorModel, grid: &TimeGrid, rng: RngContract) -> Path {
    let mut path = Path::new(
        model.factors(),
        model.n_assets(),
        grid.n_steps(),
        model.measure() == Measure::Physical,
    );
    let mut ws = Workspace::new(model);
    simulate_into(model, grid, rng, &mut path, &mut ws);
    path
}

/// Simulates into a preallocated path. The discount factor is filled only
/// if the path has room for it and the model is under `P`.
pub fn simulate_into(
    model: &FactorModel,
    grid: &TimeGrid,
    rng: RngContract,
    path: &mut Path,
    ws: &mut Workspace,
) {
    let m = model.factors();
    let na = model.n_assets();
    let h = grid.step();
    let sqrt_h = h.sqrt();
    let n_steps = grid.n_steps();
    let exhaustion = model.exhaustion();
    let n_max = exhaustion.depth();
    let track_y = model.measure() == Measure::Physical && path.log_y.is_some();
    let mut rng = rng.rng();

    path.explosion_index = None;
    path.invalid = false;
    path.zeta.clear();
    path.zeta.resize(n_max, None);
    path.x[..m].copy_from_slice(model.x0());
    for (ls, s) in path.log_s[..na].iter_mut().zip(model.s0()) {
        *ls = s.ln();
    }
    let mut log_y = 0.0;
    if let Some(y) = path.log_y.as_mut() {
        y[0] = 0.0;
    }
    // levels already exited; the sets are nested, so a state inside
    // Ē_{exited+1} is inside all deeper ones
    let mut exited = 0usize;
    while exited < n_max && !exhaustion.in_level(exited + 1, model.x0()) {
        exited += 1;
        path.zeta[exited - 1] = Some(0);
    }

    let mut last = n_steps;
    for k in 0..n_steps {
        let x = &path.x[k * m..(k + 1) * m];
        if model.coefficients_into(x, &mut ws.coef).is_err() {
            path.invalid = true;
            last = k;
            break;
        }
        let c = &ws.coef;
        model.factor_drift_from(c, &mut ws.drift);
        model.asset_rates_into(c, &mut ws.rates);
        for dw in ws.dw.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *dw = sqrt_h * z;
        }
        for kk in 0..m {
            let b = c.diffusion_row(kk);
            let noise: f64 = b.iter().zip(&ws.dw).map(|(a, w)| a * w).sum();
            ws.x_next[kk] = x[kk] + ws.drift[kk] * h + noise;
        }
        let (cur, next_row) = path.log_s.split_at_mut((k + 1) * na);
        let (cur, next_row) = (&cur[k * na..], &mut next_row[..na]);
        let mut prices_finite = true;
        for i in 0..na {
            let sig = c.vol_row(i);
            let var: f64 = sig.iter().map(|v| v * v).sum();
            let noise: f64 = sig.iter().zip(&ws.dw).map(|(a, w)| a * w).sum();
            let v = cur[i] + (ws.rates[i] - 0.5 * var) * h + noise;
            prices_finite &= v < MAX_LOG_PRICE;
            next_row[i] = v;
        }
        if track_y {
            let theta = c.theta();
            let th2: f64 = theta.iter().map(|v| v * v).sum();
            let noise: f64 = theta.iter().zip(&ws.dw).map(|(a, w)| a * w).sum();
            log_y += (-c.rate() - 0.5 * th2) * h - noise;
        }

        let next = k + 1;
        let x_out = &mut path.x[next * m..(next + 1) * m];
        x_out.copy_from_slice(&ws.x_next);
        if !prices_finite {
            // overflowing prices count as a non-finite state
            x_out.iter_mut().for_each(|v| *v = f64::NAN);
        }
        while exited < n_max && !exhaustion.in_level(exited + 1, x_out) {
            exited += 1;
            path.zeta[exited - 1] = Some(next);
        }
        if exited == n_max {
            path.explosion_index = Some(next);
            for (e, v) in path.exit_log_s.iter_mut().zip(next_row.iter()) {
                // keep the last finite value if this step overflowed
                *e = if *v < MAX_LOG_PRICE { *v } else { f64::NAN };
            }
            for i in 0..na {
                if path.exit_log_s[i].is_nan() {
                    path.exit_log_s[i] = cur[i];
                }
            }
            last = next;
            break;
        }
        if let Some(y) = path.log_y.as_mut() {
            if track_y {
                y[next] = log_y;
            }
        }
    }

    // freeze everything after the last simulated index
    let frozen_from = if path.explosion_index.is_some() {
        last
    } else {
        last + 1
    };
    for k in frozen_from..=n_steps {
        path.log_s[k * na..(k + 1) * na]
            .iter_mut()
            .for_each(|v| *v = f64::NEG_INFINITY);
        if let Some(y) = path.log_y.as_mut() {
            y[k] = f64::NEG_INFINITY;
        }
    }
    for k in last + 1..=n_steps {
        path.x[k * m..(k + 1) * m]
            .iter_mut()
            .for_each(|v| *v = f64::NAN);
    }
    if path.invalid {
        path.zeta.iter_mut().for_each(|z| *z = None);
    }
    apply_time_caps(path, grid);
}

/// Caps `ζ_n` at the grid index of calendar time `n`.
fn apply_time_caps(path: &mut Path, grid: &TimeGrid) {
    for (idx, z) in path.zeta.iter_mut().enumerate() {
        let cap = grid.index_of((idx + 1) as f64);
        if cap <= path.n_steps && z.is_none_or(|v| v > cap) {
            *z = Some(cap);
        }
    }
}

/// Recomputes `ζ_n` for `n = 1..=n_max` from the stored factor path: the
/// first grid index where `X ∉ Ē_n`, or the index of calendar time `n`,
/// whichever comes first. The explosion index is the first exit of
/// `Ē_{n_max}` (or first non-finite state). [`simulate_into`] already
/// does this while stepping.
pub fn detect_stopping(path: &mut Path, model: &FactorModel, grid: &TimeGrid) {
    let exhaustion = model.exhaustion();
    let n_max = exhaustion.depth();
    let m = path.m;
    path.zeta.clear();
    path.zeta.resize(n_max, None);
    let mut exited = 0usize;
    let mut explosion = None;
    if !path.invalid {
        for k in 0..=path.n_steps {
            let x = &path.x[k * m..(k + 1) * m];
            while exited < n_max && !exhaustion.in_level(exited + 1, x) {
                exited += 1;
                path.zeta[exited - 1] = Some(k);
            }
            if exited == n_max {
                explosion = Some(k);
                break;
            }
        }
    }
    apply_time_caps(path, grid);
    path.explosion_index = explosion;
}

/// Settings for a batch of paths.
#[derive(Debug, Clone, Copy)]
pub struct BatchConfig {
    pub n_paths: usize,
    pub seed: u64,
    /// Worker threads; 0 uses the global rayon pool.
    pub workers: usize,
}

/// Neumaier-compensated sum.
#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Column sums of a per-path functional over a batch.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub n_valid: usize,
    pub n_invalid: usize,
    sums: Vec<f64>,
    sums_sq: Vec<f64>,
}

impl BatchStats {
    pub fn width(&self) -> usize {
        self.sums.len()
    }

    pub fn mean(&self, c: usize) -> f64 {
        self.sums[c] / self.n_valid as f64
    }

    /// Standard error of the column mean.
    pub fn stderr(&self, c: usize) -> f64 {
        let n = self.n_valid as f64;
        if self.n_valid < 2 {
            return f64::INFINITY;
        }
        let mean = self.sums[c] / n;
        let var = ((self.sums_sq[c] - n * mean * mean) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    }
}

struct ChunkStats {
    n_valid: usize,
    n_invalid: usize,
    sums: Vec<CompensatedSum>,
    sums_sq: Vec<CompensatedSum>,
}

/// Simulates `cfg.n_paths` paths and accumulates `functional(path, row)`,
/// which writes `width` values per valid path. Paths with evaluation
/// failures are excluded and counted; more than [`MAX_INVALID_FRACTION`]
/// of them is an error.
pub fn batch_simulate<F>(
    model: &FactorModel,
    grid: &TimeGrid,
    cfg: &BatchConfig,
    width: usize,
    functional: F,
) -> Result<BatchStats, EngineError>
where
    F: Fn(&Path, &mut [f64]) + Sync,
{
    if cfg.n_paths == 0 {
        return Err(EngineError::NoPaths);
    }
    let n_chunks = cfg.n_paths.div_ceil(CHUNK);
    let run_chunk = |chunk: usize| -> ChunkStats {
        let mut path = Path::new(
            model.factors(),
            model.n_assets(),
            grid.n_steps(),
            model.measure() == Measure::Physical,
        );
        let mut ws = Workspace::new(model);
        let mut row = vec![0.0; width];
        let mut stats = ChunkStats {
            n_valid: 0,
            n_invalid: 0,
            sums: vec![CompensatedSum::default(); width],
            sums_sq: vec![CompensatedSum::default(); width],
        };
        let start = chunk * CHUNK;
        let end = (start + CHUNK).min(cfg.n_paths);
        for p in start..end {
            let contract = RngContract {
                master_seed: cfg.seed,
                path_index: p as u64,
            };
            simulate_into(model, grid, contract, &mut path, &mut ws);
            if path.invalid() {
                stats.n_invalid += 1;
                continue;
            }
            row.iter_mut().for_each(|v| *v = 0.0);
            functional(&path, &mut row);
            stats.n_valid += 1;
            for (c, &v) in row.iter().enumerate() {
                stats.sums[c].add(v);
                stats.sums_sq[c].add(v * v);
            }
        }
        stats
    };

    let chunks: Vec<ChunkStats> = if cfg.workers == 1 {
        (0..n_chunks).map(run_chunk).collect()
    } else if cfg.workers == 0 {
        (0..n_chunks).into_par_iter().map(run_chunk).collect()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| EngineError::Pool(e.to_string()))?
            .install(|| (0..n_chunks).into_par_iter().map(run_chunk).collect())
    };

    let mut sums = vec![CompensatedSum::default(); width];
    let mut sums_sq = vec![CompensatedSum::default(); width];
    let (mut n_valid, mut n_invalid) = (0, 0);
    for chunk in &chunks {
        n_valid += chunk.n_valid;
        n_invalid += chunk.n_invalid;
        for c in 0..width {
            sums[c].add(chunk.sums[c].value());
            sums_sq[c].add(chunk.sums_sq[c].value());
        }
    }
    if n_invalid as f64 > MAX_INVALID_FRACTION * cfg.n_paths as f64 || n_valid == 0 {
        return Err(EngineError::TooManyInvalid {
            invalid: n_invalid,
            total: cfg.n_paths,
        });
    }
    Ok(BatchStats {
        n_valid,
        n_invalid,
        sums: sums.iter().map(CompensatedSum::value).collect(),
        sums_sq: sums_sq.iter().map(CompensatedSum::value).collect(),
    })
}
