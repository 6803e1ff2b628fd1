//! Markovian factor models.
//!
//! A [`FactorModel`] describes `m` economic factors `X` on an open state
//! domain `E ⊆ R^m`, driving `d + 1` assets indexed `0..=d`, where asset `0`
//! is locally riskless:
//!
//! ```text
//! dX^k      = a^k(X) dt + <b^k(X), dW>
//! dS^i/S^i  = (r + mu^i)(X) dt + <sigma^i(X), dW>        (mu^0 = 0, sigma^0 = 0)
//! dY/Y      = -r(X) dt - <theta(X), dW>                    (stochastic discount factor)
//! ```
//!
//! with `<sigma^i, theta> = mu^i`. The economy defaults (explodes) when `X`
//! leaves every compact set of a [`DomainExhaustion`].
//!
//! A model carries the [`Measure`] under which it is to be simulated. The
//! base model is under the physical measure; [`FactorModel::numeraire_adjust`]
//! yields the model under the valuation measure `Q^j` of asset `j`, whose
//! factor drift is `a^k + <b^k, sigma^j - theta>` and whose asset growth
//! rates are `r + <sigma^i, sigma^j>`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::expr::{EvalError, ExprAst, ParseError};

/// Tolerance for rank, positive-definiteness and `sigma theta = mu` checks.
pub const VALIDATION_TOLERANCE: f64 = 1e-10;

/// Number of probe states in the default validation grid.
const DEFAULT_PROBE_COUNT: usize = 32;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("risky-asset count d = {d} exceeds factor dimension m = {m}")]
    Dimension { d: usize, m: usize },
    #[error("`{field}` has length {found}, expected {expected}")]
    Shape {
        field: String,
        expected: usize,
        found: usize,
    },
    #[error("initial price of asset {asset} must be strictly positive, got {value}")]
    NonPositivePrice { asset: usize, value: f64 },
    #[error("initial state {state:?} is not in the first exhaustion set")]
    InitialState { state: Vec<f64> },
    #[error("invalid exhaustion: {0}")]
    Exhaustion(String),
    #[error("cannot parse `{field}`: {source}")]
    Parse {
        field: String,
        #[source]
        source: ParseError,
    },
    #[error("evaluating `{field}` at {state:?}: {source}")]
    Eval {
        field: String,
        state: Vec<f64>,
        #[source]
        source: EvalError,
    },
    #[error("volatility matrix has rank {rank} < {d} at {state:?}")]
    RankDeficient {
        rank: usize,
        d: usize,
        state: Vec<f64>,
    },
    #[error("probe state {state:?} lies outside the state domain")]
    ProbeOutsideDomain { state: Vec<f64> },
    #[error("asset index {index} is not in 0..={d}")]
    InvalidAsset { index: usize, d: usize },
    #[error("model is already under {0}; adjust the physical model instead")]
    AlreadyAdjusted(Measure),
}

/// Probability under which a model is simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Measure {
    Physical,
    /// Valuation measure using asset `j` as numéraire.
    Numeraire(usize),
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Measure::Physical => f.write_str("P"),
            Measure::Numeraire(j) => write!(f, "Q{j}"),
        }
    }
}

type LevelPredicate = Arc<dyn Fn(usize, &[f64]) -> bool + Send + Sync>;
type DomainPredicate = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;

#[derive(Clone)]
enum Shape {
    /// Open box `E` and closed boxes `Ē_n = [lower_n, upper_n]`.
    Boxes {
        domain_lower: Vec<f64>,
        domain_upper: Vec<f64>,
        lower: Vec<Vec<f64>>,
        upper: Vec<Vec<f64>>,
    },
    /// `in_level(n, x)` tests `x ∈ Ē_n`; levels must be nested.
    Predicate {
        in_domain: DomainPredicate,
        in_level: LevelPredicate,
    },
}

/// Nested sequence `Ē_1 ⊆ E_2 ⊆ Ē_2 ⊆ ... ⊆ Ē_depth` of compact subsets of
/// the state domain `E`. Leaving `Ē_depth` is treated as default.
#[derive(Clone)]
pub struct DomainExhaustion {
    dim: usize,
    depth: usize,
    shape: Shape,
}

impl fmt::Debug for DomainExhaustion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.shape {
            Shape::Boxes { .. } => "boxes",
            Shape::Predicate { .. } => "predicate",
        };
        f.debug_struct("DomainExhaustion")
            .field("dim", &self.dim)
            .field("depth", &self.depth)
            .field("kind", &kind)
            .finish()
    }
}

impl DomainExhaustion {
    /// Box exhaustion from explicit per-level bounds. `lower[n-1]` and
    /// `upper[n-1]` are the corners of `Ē_n`; `domain_*` bound the open
    /// domain `E` and may be infinite.
    pub fn boxes(
        domain_lower: Vec<f64>,
        domain_upper: Vec<f64>,
        lower: Vec<Vec<f64>>,
        upper: Vec<Vec<f64>>,
    ) -> Result<Self, ModelError> {
        let dim = domain_lower.len();
        let depth = lower.len();
        let bad = |msg: String| Err(ModelError::Exhaustion(msg));
        if dim == 0 || domain_upper.len() != dim {
            return bad("domain bounds must be non-empty and of equal length".into());
        }
        if depth == 0 || upper.len() != depth {
            return bad("need at least one level, with matching lower and upper bounds".into());
        }
        for k in 0..dim {
            if domain_lower[k].is_nan()
                || domain_upper[k].is_nan()
                || domain_lower[k] >= domain_upper[k]
            {
                return bad(format!("empty domain in coordinate {}", k + 1));
            }
        }
        for n in 0..depth {
            if lower[n].len() != dim || upper[n].len() != dim {
                return bad(format!("level {} has the wrong dimension", n + 1));
            }
            for k in 0..dim {
                let (l, u) = (lower[n][k], upper[n][k]);
                if !l.is_finite() || !u.is_finite() || l > u {
                    return bad(format!(
                        "level {} coordinate {} bounds [{l}, {u}] are not a compact interval",
                        n + 1,
                        k + 1
                    ));
                }
                if l <= domain_lower[k] || u >= domain_upper[k] {
                    return bad(format!("level {} is not inside the domain", n + 1));
                }
                if n + 1 < depth && (lower[n + 1][k] >= l || upper[n + 1][k] <= u) {
                    return bad(format!(
                        "level {} is not contained in the interior of level {}",
                        n + 1,
                        n + 2
                    ));
                }
            }
        }
        Ok(DomainExhaustion {
            dim,
            depth,
            shape: Shape::Boxes {
                domain_lower,
                domain_upper,
                lower,
                upper,
            },
        })
    }

    /// Box exhaustion whose level-`n` corners are expressions in the
    /// variable `n`, e.g. `1/n` and `n+1`.
    pub fn from_bound_exprs(
        domain_lower: Vec<f64>,
        domain_upper: Vec<f64>,
        lower: &[ExprAst],
        upper: &[ExprAst],
        depth: usize,
    ) -> Result<Self, ModelError> {
        let level = |exprs: &[ExprAst], name: &str, n: usize| -> Result<Vec<f64>, ModelError> {
            exprs
                .iter()
                .enumerate()
                .map(|(k, e)| {
                    e.eval(&[n as f64]).map_err(|source| ModelError::Eval {
                        field: format!("exhaustion.{name}[{k}]"),
                        state: vec![n as f64],
                        source,
                    })
                })
                .collect()
        };
        let mut lo = Vec::with_capacity(depth);
        let mut hi = Vec::with_capacity(depth);
        for n in 1..=depth {
            lo.push(level(lower, "lower", n)?);
            hi.push(level(upper, "upper", n)?);
        }
        Self::boxes(domain_lower, domain_upper, lo, hi)
    }

    /// Exhaustion given by membership predicates. `in_level(n, x)` must be
    /// monotone in `n` for fixed `x`; this is not checked.
    pub fn from_predicates(
        dim: usize,
        depth: usize,
        in_domain: impl Fn(&[f64]) -> bool + Send + Sync + 'static,
        in_level: impl Fn(usize, &[f64]) -> bool + Send + Sync + 'static,
    ) -> Result<Self, ModelError> {
        if dim == 0 || depth == 0 {
            return Err(ModelError::Exhaustion(
                "dimension and depth must be positive".into(),
            ));
        }
        Ok(DomainExhaustion {
            dim,
            depth,
            shape: Shape::Predicate {
                in_domain: Arc::new(in_domain),
                in_level: Arc::new(in_level),
            },
        })
    }

    /// Number of levels; leaving `Ē_depth` is default.
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `x ∈ E` (open domain).
    pub fn in_domain(&self, x: &[f64]) -> bool {
        if x.iter().any(|v| !v.is_finite()) {
            return false;
        }
        match &self.shape {
            Shape::Boxes {
                domain_lower,
                domain_upper,
                ..
            } => x
                .iter()
                .zip(domain_lower.iter().zip(domain_upper))
                .all(|(v, (l, u))| l < v && v < u),
            Shape::Predicate { in_domain, .. } => in_domain(x),
        }
    }

    /// `x ∈ Ē_n` for `1 <= n <= depth`.
    pub fn in_level(&self, n: usize, x: &[f64]) -> bool {
        debug_assert!(n >= 1 && n <= self.depth);
        if x.iter().any(|v| !v.is_finite()) {
            return false;
        }
        match &self.shape {
            Shape::Boxes { lower, upper, .. } => x
                .iter()
                .zip(lower[n - 1].iter().zip(&upper[n - 1]))
                .all(|(v, (l, u))| l <= v && v <= u),
            Shape::Predicate { in_level, .. } => in_level(n, x),
        }
    }

    /// Number of leading levels that do not contain `x`, i.e. the largest
    /// `n` with `x ∉ Ē_n` (0 if `x ∈ Ē_1`, `depth` if `x ∉ Ē_depth`).
    pub fn levels_exited(&self, x: &[f64]) -> usize {
        if self.in_level(1, x) {
            return 0;
        }
        if !self.in_level(self.depth, x) {
            return self.depth;
        }
        // invariant: x ∉ Ē_lo, x ∈ Ē_hi
        let (mut lo, mut hi) = (1, self.depth);
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.in_level(mid, x) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Corners of `Ē_n` for box exhaustions.
    pub fn level_bounds(&self, n: usize) -> Option<(&[f64], &[f64])> {
        match &self.shape {
            Shape::Boxes { lower, upper, .. } if n >= 1 && n <= self.depth => {
                Some((&lower[n - 1], &upper[n - 1]))
            }
            _ => None,
        }
    }

    /// Same sets truncated to the first `depth` levels.
    pub fn truncated(&self, depth: usize) -> Result<Self, ModelError> {
        if depth == 0 || depth > self.depth {
            return Err(ModelError::Exhaustion(format!(
                "depth {depth} is not in 1..={}",
                self.depth
            )));
        }
        let shape = match &self.shape {
            Shape::Boxes {
                domain_lower,
                domain_upper,
                lower,
                upper,
            } => Shape::Boxes {
                domain_lower: domain_lower.clone(),
                domain_upper: domain_upper.clone(),
                lower: lower[..depth].to_vec(),
                upper: upper[..depth].to_vec(),
            },
            other => other.clone(),
        };
        Ok(DomainExhaustion {
            dim: self.dim,
            depth,
            shape,
        })
    }
}

/// Coefficient expressions and initial data of a factor model.
///
/// Matrices are given row by row: `diffusion[k]` is `b^k`, and
/// `volatility[i-1]` is `sigma^i` for risky asset `i`.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub x0: Vec<f64>,
    pub drift: Vec<ExprAst>,
    pub diffusion: Vec<Vec<ExprAst>>,
    pub rate: ExprAst,
    pub excess_return: Vec<ExprAst>,
    pub volatility: Vec<Vec<ExprAst>>,
    pub theta: Option<Vec<ExprAst>>,
    /// Initial prices of assets `0..=d`.
    pub s0: Vec<f64>,
    pub exhaustion: DomainExhaustion,
}

/// Coefficient values at one state, in one flat buffer. Asset-indexed
/// quantities include the riskless asset at index 0 (`excess(0) = 0`, its
/// volatility row is zero).
#[derive(Debug, Clone, Default)]
pub struct Coefficients {
    m: usize,
    d: usize,
    values: Vec<f64>,
    scratch: Vec<f64>,
}

impl Coefficients {
    pub fn new(m: usize, d: usize) -> Self {
        let len = m + m * m + 1 + (d + 1) + (d + 1) * m + m;
        Coefficients {
            m,
            d,
            values: vec![0.0; len],
            scratch: vec![0.0; d * d + d],
        }
    }

    fn offsets(&self) -> [usize; 6] {
        let (m, d) = (self.m, self.d);
        let drift = 0;
        let diffusion = drift + m;
        let rate = diffusion + m * m;
        let excess = rate + 1;
        let vol = excess + d + 1;
        let theta = vol + (d + 1) * m;
        [drift, diffusion, rate, excess, vol, theta]
    }

    fn index(&self, slot: Slot) -> usize {
        let [drift, diffusion, rate, excess, vol, theta] = self.offsets();
        match slot {
            Slot::Drift(k) => drift + k,
            Slot::Diffusion(k) => diffusion + k,
            Slot::Rate => rate,
            Slot::Excess(i) => excess + i,
            Slot::Vol(k) => vol + k,
            Slot::Theta(k) => theta + k,
        }
    }

    /// Factor drift `a(x)`.
    pub fn drift(&self) -> &[f64] {
        let o = self.offsets();
        &self.values[o[0]..o[1]]
    }

    /// Row-major `m x m` diffusion matrix; row `k` is `b^k`.
    pub fn diffusion(&self) -> &[f64] {
        let o = self.offsets();
        &self.values[o[1]..o[2]]
    }

    pub fn diffusion_row(&self, k: usize) -> &[f64] {
        let o = self.offsets()[1] + k * self.m;
        &self.values[o..o + self.m]
    }

    pub fn rate(&self) -> f64 {
        self.values[self.offsets()[2]]
    }

    /// Excess returns `mu^i` for `i = 0..=d`.
    pub fn excess(&self) -> &[f64] {
        let o = self.offsets();
        &self.values[o[3]..o[4]]
    }

    /// Row-major `(d+1) x m` volatility matrix.
    pub fn vol(&self) -> &[f64] {
        let o = self.offsets();
        &self.values[o[4]..o[5]]
    }

    pub fn vol_row(&self, i: usize) -> &[f64] {
        let o = self.offsets()[4] + i * self.m;
        &self.values[o..o + self.m]
    }

    pub fn theta(&self) -> &[f64] {
        let o = self.offsets()[5];
        &self.values[o..o + self.m]
    }
}

/// Per-state outcome of [`FactorModel::validate`].
#[derive(Debug, Clone)]
pub struct ProbeResult {
    pub state: Vec<f64>,
    pub sigma_rank: usize,
    pub min_c_eigenvalue: f64,
    pub c_asymmetry: f64,
    pub theta_residual: f64,
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub probes: Vec<ProbeResult>,
    pub tolerance: f64,
    pub passed: bool,
}

/// A validated-shape factor model under a fixed measure.
#[derive(Debug, Clone)]
pub struct FactorModel {
    m: usize,
    d: usize,
    spec: ModelSpec,
    measure: Measure,
    table: Table,
}

/// Where a coefficient expression's value goes in [`Coefficients`].
#[derive(Debug, Clone, Copy)]
enum Slot {
    Drift(usize),
    Diffusion(usize),
    Rate,
    Excess(usize),
    Vol(usize),
    Theta(usize),
}

#[derive(Debug, Clone)]
struct Entry {
    slot: Slot,
    field: &'static str,
    expr: ExprAst,
    source: Source,
}

#[derive(Debug, Clone, Copy)]
enum Source {
    Constant(f64),
    /// Same expression as an earlier entry.
    Copy(Slot),
    Eval,
}

/// Coefficient entries in evaluation order, with their buffer indices.
#[derive(Debug, Clone)]
struct Table {
    entries: Vec<Entry>,
    /// `(buffer index, entry index)` of expressions to evaluate.
    evals: Vec<(usize, usize)>,
    /// `(buffer index, value)` of constant entries.
    constants: Vec<(usize, f64)>,
    /// `(buffer index, source index)` of duplicated expressions.
    copies: Vec<(usize, usize)>,
}

fn build_table(spec: &ModelSpec, m: usize, d: usize) -> Table {
    let mut entries: Vec<Entry> = Vec::new();
    let mut push = |slot, field, expr: &ExprAst| {
        let source = match expr.as_constant().filter(|c| c.is_finite()) {
            Some(c) => Source::Constant(c),
            None => entries
                .iter()
                .find(|e| matches!(e.source, Source::Eval) && e.expr == *expr)
                .map_or(Source::Eval, |e| Source::Copy(e.slot)),
        };
        entries.push(Entry {
            slot,
            field,
            expr: expr.clone(),
            source,
        })
    };
    for k in 0..m {
        push(Slot::Drift(k), "drift", &spec.drift[k]);
        for l in 0..m {
            push(
                Slot::Diffusion(k * m + l),
                "diffusion",
                &spec.diffusion[k][l],
            );
        }
    }
    push(Slot::Rate, "rate", &spec.rate);
    for (i, e) in spec.excess_return.iter().enumerate() {
        push(Slot::Excess(i + 1), "excess_return", e);
        for k in 0..m {
            push(
                Slot::Vol((i + 1) * m + k),
                "volatility",
                &spec.volatility[i][k],
            );
        }
    }
    if let Some(theta) = &spec.theta {
        for (k, e) in theta.iter().enumerate() {
            push(Slot::Theta(k), "theta", e);
        }
    }
    let layout = Coefficients::new(m, d);
    let mut table = Table {
        entries: Vec::new(),
        evals: Vec::new(),
        constants: Vec::new(),
        copies: Vec::new(),
    };
    for (idx, e) in entries.iter().enumerate() {
        let at = layout.index(e.slot);
        match e.source {
            Source::Constant(c) => table.constants.push((at, c)),
            Source::Copy(slot) => table.copies.push((at, layout.index(slot))),
            Source::Eval => table.evals.push((at, idx)),
        }
    }
    table.entries = entries;
    table
}

impl FactorModel {
    /// Builds a model under the physical measure, checking shapes, `d <= m`,
    /// positive initial prices and `x0 ∈ Ē_1`.
    pub fn new(spec: ModelSpec) -> Result<Self, ModelError> {
        let m = spec.x0.len();
        let d = spec.volatility.len();
        if d > m {
            return Err(ModelError::Dimension { d, m });
        }
        let shape = |field: &str, expected: usize, found: usize| {
            if expected == found {
                Ok(())
            } else {
                Err(ModelError::Shape {
                    field: field.to_string(),
                    expected,
                    found,
                })
            }
        };
        shape("drift", m, spec.drift.len())?;
        shape("diffusion", m, spec.diffusion.len())?;
        for row in &spec.diffusion {
            shape("diffusion row", m, row.len())?;
        }
        shape("excess_return", d, spec.excess_return.len())?;
        for row in &spec.volatility {
            shape("volatility row", m, row.len())?;
        }
        if let Some(theta) = &spec.theta {
            shape("theta", m, theta.len())?;
        }
        shape("s0", d + 1, spec.s0.len())?;
        shape("exhaustion dimension", m, spec.exhaustion.dim())?;
        let all_exprs = spec
            .drift
            .iter()
            .chain(spec.diffusion.iter().flatten())
            .chain(std::iter::once(&spec.rate))
            .chain(&spec.excess_return)
            .chain(spec.volatility.iter().flatten())
            .chain(spec.theta.iter().flatten());
        for e in all_exprs {
            shape("expression variable count", m, e.dim())?;
        }
        for (asset, &value) in spec.s0.iter().enumerate() {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ModelError::NonPositivePrice { asset, value });
            }
        }
        if !spec.exhaustion.in_domain(&spec.x0) || !spec.exhaustion.in_level(1, &spec.x0) {
            return Err(ModelError::InitialState {
                state: spec.x0.clone(),
            });
        }
        let table = build_table(&spec, m, d);
        Ok(FactorModel {
            m,
            d,
            spec,
            measure: Measure::Physical,
            table,
        })
    }

    /// Factor dimension `m`.
    pub fn factors(&self) -> usize {
        self.m
    }

    /// Number of risky assets `d`; assets are indexed `0..=d`.
    pub fn risky_assets(&self) -> usize {
        self.d
    }

    pub fn n_assets(&self) -> usize {
        self.d + 1
    }

    pub fn measure(&self) -> Measure {
        self.measure
    }

    pub fn x0(&self) -> &[f64] {
        &self.spec.x0
    }

    pub fn s0(&self) -> &[f64] {
        &self.spec.s0
    }

    pub fn exhaustion(&self) -> &DomainExhaustion {
        &self.spec.exhaustion
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn has_theta(&self) -> bool {
        self.spec.theta.is_some()
    }

    /// Replaces the exhaustion (e.g. to change the default proxy depth).
    pub fn with_exhaustion(&self, exhaustion: DomainExhaustion) -> Result<Self, ModelError> {
        let mut spec = self.spec.clone();
        spec.exhaustion = exhaustion;
        let mut model = FactorModel::new(spec)?;
        model.measure = self.measure;
        Ok(model)
    }

    pub fn check_asset(&self, index: usize) -> Result<(), ModelError> {
        if index > self.d {
            Err(ModelError::InvalidAsset { index, d: self.d })
        } else {
            Ok(())
        }
    }

    /// The same model under the valuation measure `Q^j`.
    pub fn numeraire_adjust(&self, j: usize) -> Result<Self, ModelError> {
        if self.measure != Measure::Physical {
            return Err(ModelError::AlreadyAdjusted(self.measure));
        }
        self.check_asset(j)?;
        Ok(FactorModel {
            measure: Measure::Numeraire(j),
            ..self.clone()
        })
    }

    fn eval(&self, field: &str, e: &ExprAst, x: &[f64]) -> Result<f64, ModelError> {
        e.eval(x).map_err(|source| ModelError::Eval {
            field: field.to_string(),
            state: x.to_vec(),
            source,
        })
    }

    /// Evaluates every coefficient at `x`, solving for `theta` when the model
    /// does not specify it.
    pub fn coefficients_into(&self, x: &[f64], out: &mut Coefficients) -> Result<(), ModelError> {
        let (m, d) = (self.m, self.d);
        debug_assert!(out.m == m && out.d == d);
        out.values.iter_mut().for_each(|v| *v = 0.0);
        for &(at, c) in &self.table.constants {
            out.values[at] = c;
        }
        for &(at, idx) in &self.table.evals {
            let entry = &self.table.entries[idx];
            out.values[at] = match entry.expr.eval_fast(x) {
                Some(v) => v,
                None => self.eval(entry.field, &entry.expr, x)?,
            };
        }
        for &(at, from) in &self.table.copies {
            out.values[at] = out.values[from];
        }
        if self.spec.theta.is_none() {
            let [_, _, _, excess, vol, theta] = out.offsets();
            let (head, theta) = out.values.split_at_mut(theta);
            min_norm_theta(
                &head[vol + m..],
                &head[excess + 1..vol],
                m,
                d,
                &mut theta[..m],
                &mut out.scratch,
            )
            .map_err(|rank| ModelError::RankDeficient {
                rank,
                d,
                state: x.to_vec(),
            })?;
        }
        Ok(())
    }

    pub fn coefficients(&self, x: &[f64]) -> Result<Coefficients, ModelError> {
        let mut c = Coefficients::new(self.m, self.d);
        self.coefficients_into(x, &mut c)?;
        Ok(c)
    }

    /// Minimum-norm `theta(x)` with `<sigma^i(x), theta(x)> = mu^i(x)` for
    /// `i = 1..=d`, ignoring any `theta` expressions in the model.
    pub fn solve_theta(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        let (m, d) = (self.m, self.d);
        let mut vol = vec![0.0; d * m];
        let mut mu = vec![0.0; d];
        for i in 0..d {
            mu[i] = self.eval("excess_return", &self.spec.excess_return[i], x)?;
            for k in 0..m {
                vol[i * m + k] = self.eval("volatility", &self.spec.volatility[i][k], x)?;
            }
        }
        let mut theta = vec![0.0; m];
        let mut scratch = vec![0.0; d * d + d];
        min_norm_theta(&vol, &mu, m, d, &mut theta, &mut scratch).map_err(|rank| {
            ModelError::RankDeficient {
                rank,
                d,
                state: x.to_vec(),
            }
        })?;
        Ok(theta)
    }

    /// Factor drift under this model's measure:
    /// `a^k + <b^k, sigma^j - theta>` under `Q^j`, `a^k` under `P`.
    pub fn factor_drift(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        let c = self.coefficients(x)?;
        let mut drift = vec![0.0; self.m];
        self.factor_drift_from(&c, &mut drift);
        Ok(drift)
    }

    #[inline]
    pub(crate) fn factor_drift_from(&self, c: &Coefficients, out: &mut [f64]) {
        let m = self.m;
        match self.measure {
            Measure::Physical => out.copy_from_slice(c.drift()),
            Measure::Numeraire(j) => {
                let sj = c.vol_row(j);
                let (drift, theta) = (c.drift(), c.theta());
                for k in 0..m {
                    let b = c.diffusion_row(k);
                    let adj: f64 = (0..m).map(|l| b[l] * (sj[l] - theta[l])).sum();
                    out[k] = drift[k] + adj;
                }
            }
        }
    }

    /// Instantaneous growth rates of all assets under this model's measure:
    /// `r + mu^i` under `P`, `r + <sigma^i, sigma^j>` under `Q^j`.
    #[inline]
    pub(crate) fn asset_rates_into(&self, c: &Coefficients, out: &mut [f64]) {
        let r = c.rate();
        match self.measure {
            Measure::Physical => {
                for (o, mu) in out.iter_mut().zip(c.excess()) {
                    *o = r + mu;
                }
            }
            Measure::Numeraire(j) => {
                let sj = c.vol_row(j);
                for (i, o) in out.iter_mut().enumerate() {
                    *o = r + dot(c.vol_row(i), sj);
                }
            }
        }
    }

    /// Checks rank of `sigma`, positive-definiteness of `c = b b^T` and
    /// `sigma theta = mu` at each probe state.
    pub fn validate(&self, probes: &[Vec<f64>]) -> Result<ValidationReport, ModelError> {
        if self.d > self.m {
            return Err(ModelError::Dimension {
                d: self.d,
                m: self.m,
            });
        }
        let (m, d) = (self.m, self.d);
        let mut results = Vec::with_capacity(probes.len());
        let mut passed = true;
        for x in probes {
            if x.len() != m || !self.spec.exhaustion.in_domain(x) {
                return Err(ModelError::ProbeOutsideDomain { state: x.clone() });
            }
            let c = self.coefficients(x)?;
            let sigma_rank = if d == 0 {
                0
            } else {
                DMatrix::from_row_slice(d, m, &c.vol()[m..]).rank(VALIDATION_TOLERANCE)
            };
            if sigma_rank < d {
                return Err(ModelError::RankDeficient {
                    rank: sigma_rank,
                    d,
                    state: x.clone(),
                });
            }
            let b = DMatrix::from_row_slice(m, m, c.diffusion());
            let cov = &b * b.transpose();
            let c_asymmetry = (&cov - cov.transpose()).amax();
            let min_c_eigenvalue = cov.clone().symmetric_eigenvalues().min();
            let theta_residual = (1..=d)
                .map(|i| (dot(c.vol_row(i), c.theta()) - c.excess()[i]).abs())
                .fold(0.0, f64::max);
            passed &= min_c_eigenvalue > VALIDATION_TOLERANCE
                && c_asymmetry <= VALIDATION_TOLERANCE
                && theta_residual <= VALIDATION_TOLERANCE;
            results.push(ProbeResult {
                state: x.clone(),
                sigma_rank,
                min_c_eigenvalue,
                c_asymmetry,
                theta_residual,
            });
        }
        Ok(ValidationReport {
            probes: results,
            tolerance: VALIDATION_TOLERANCE,
            passed,
        })
    }

    /// Halton points spread over `Ē_1` (or a unit box around `x0` for
    /// predicate exhaustions), plus `x0` itself.
    pub fn default_probes(&self) -> Vec<Vec<f64>> {
        let m = self.m;
        let (lo, hi): (Vec<f64>, Vec<f64>) = match self.spec.exhaustion.level_bounds(1) {
            Some((l, u)) => (l.to_vec(), u.to_vec()),
            None => (
                self.spec.x0.iter().map(|v| v - 0.5).collect(),
                self.spec.x0.iter().map(|v| v + 0.5).collect(),
            ),
        };
        let mut probes = vec![self.spec.x0.clone()];
        for idx in 1..=DEFAULT_PROBE_COUNT {
            let p: Vec<f64> = (0..m)
                .map(|k| {
                    let u = radical_inverse(idx as u64, PRIMES[k % PRIMES.len()]);
                    lo[k] + u * (hi[k] - lo[k])
                })
                .collect();
            if self.spec.exhaustion.in_domain(&p) {
                probes.push(p);
            }
        }
        probes
    }
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut scale = inv;
    let mut value = 0.0;
    while index > 0 {
        value += (index % base) as f64 * scale;
        index /= base;
        scale *= inv;
    }
    value
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `theta = sigma^T (sigma sigma^T)^{-1} mu` via Cholesky of the `d x d`
/// Gram matrix. `vol` is row-major `d x m`. On failure returns the index of
/// the first vanishing pivot as a rank estimate.
fn min_norm_theta(
    vol: &[f64],
    mu: &[f64],
    m: usize,
    d: usize,
    theta: &mut [f64],
    scratch: &mut [f64],
) -> Result<(), usize> {
    theta.iter_mut().for_each(|t| *t = 0.0);
    if d == 0 {
        return Ok(());
    }
    let (gram, y) = scratch.split_at_mut(d * d);
    for a in 0..d {
        for b in 0..=a {
            gram[a * d + b] = dot(&vol[a * m..(a + 1) * m], &vol[b * m..(b + 1) * m]);
        }
    }
    let scale = (0..d).map(|a| gram[a * d + a]).fold(0.0, f64::max);
    // in-place lower Cholesky
    for a in 0..d {
        for b in 0..=a {
            let mut s = gram[a * d + b];
            for c in 0..b {
                s -= gram[a * d + c] * gram[b * d + c];
            }
            if a == b {
                if s <= VALIDATION_TOLERANCE * scale.max(f64::MIN_POSITIVE) {
                    return Err(a);
                }
                gram[a * d + a] = s.sqrt();
            } else {
                gram[a * d + b] = s / gram[b * d + b];
            }
        }
    }
    // forward then backward substitution: G y = mu
    for a in 0..d {
        let mut s = mu[a];
        for c in 0..a {
            s -= gram[a * d + c] * y[c];
        }
        y[a] = s / gram[a * d + a];
    }
    for a in (0..d).rev() {
        let mut s = y[a];
        for c in a + 1..d {
            s -= gram[c * d + a] * y[c];
        }
        y[a] = s / gram[a * d + a];
    }
    for a in 0..d {
        for k in 0..m {
            theta[k] += vol[a * m + k] * y[a];
        }
    }
    Ok(())
}
