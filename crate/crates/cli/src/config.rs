//! JSON run configuration.
//!
//! A config names a model (the `bessel` preset or inline coefficient
//! expressions), an asset pair, maturities, Monte Carlo settings and a task
//! list. [`load_config`] parses and validates it into a [`PricingRequest`].

use std::fmt;
use std::path::{Path, PathBuf};

use numeraire_core::bessel_reference::{bessel_model, BesselParams};
use numeraire_core::diagnostics::DegeneracyConfig;
use numeraire_core::{
    DomainExhaustion, EurMethod, ExprAst, FactorModel, McConfig, ModelError, ModelSpec,
};
use serde::Deserialize;
use thiserror::Error;

/// Smallest path count accepted for parity tasks.
pub const MIN_PARITY_PATHS: usize = 1000;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("invalid value for `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("expression `{field}` = {source_text:?}: {source}")]
    Expression {
        field: String,
        source_text: String,
        source: numeraire_core::ParseError,
    },
    #[error("model rejected: {0}")]
    Model(#[from] ModelError),
    #[error("model failed validation at {0} probe state(s)")]
    Validation(usize),
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Eur,
    Amer,
    Eep,
    DefaultProb,
    ParityEur,
    ParityAmer,
    ParityMixed,
    Supermartingale,
    Bubble,
    Degeneracy,
}

impl Task {
    pub fn is_parity(self) -> bool {
        matches!(self, Task::ParityEur | Task::ParityAmer | Task::ParityMixed)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Eur => "eur",
            Task::Amer => "amer",
            Task::Eep => "eep",
            Task::DefaultProb => "default_prob",
            Task::ParityEur => "parity_eur",
            Task::ParityAmer => "parity_amer",
            Task::ParityMixed => "parity_mixed",
            Task::Supermartingale => "supermartingale",
            Task::Bubble => "bubble",
            Task::Degeneracy => "degeneracy",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Model with closed-form references.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Preset {
    Bessel { strike: f64 },
}

#[derive(Debug, Clone)]
pub struct OutputSpec {
    /// Standard output when absent.
    pub path: Option<PathBuf>,
    pub format: Format,
}

/// A validated run request.
#[derive(Debug, Clone)]
pub struct PricingRequest {
    pub model: FactorModel,
    pub preset: Option<Preset>,
    pub pair: (usize, usize),
    pub maturities: Vec<f64>,
    pub mc: McConfig,
    pub n_max: usize,
    pub eur_method: EurMethod,
    pub ladder: usize,
    pub degeneracy: DegeneracyConfig,
    pub tasks: Vec<Task>,
    pub output: OutputSpec,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: RawModel,
    pair: [usize; 2],
    maturities: Vec<f64>,
    mc: RawMc,
    tasks: Vec<Task>,
    #[serde(default)]
    eur_method: Option<String>,
    #[serde(default)]
    ladder: Option<usize>,
    #[serde(default)]
    degeneracy: RawDegeneracy,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMc {
    n_paths: usize,
    step: f64,
    seed: u64,
    n_max: usize,
    #[serde(default)]
    workers: usize,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDegeneracy {
    levels: Option<usize>,
    n_paths: Option<usize>,
    rho_epsilon: Option<f64>,
    rho_tolerance: Option<f64>,
    vanish_level: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    path: Option<PathBuf>,
    #[serde(default)]
    format: Format,
}

/// A domain bound: a number, or `"inf"` / `"-inf"`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum Bound {
    Number(f64),
    Text(String),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    preset: Option<String>,
    #[serde(rename = "K")]
    strike: Option<f64>,
    x0: Option<Vec<f64>>,
    drift: Option<Vec<String>>,
    diffusion: Option<Vec<Vec<String>>>,
    rate: Option<String>,
    excess_return: Option<Vec<String>>,
    volatility: Option<Vec<Vec<String>>>,
    theta: Option<Vec<String>>,
    s0: Option<Vec<f64>>,
    exhaustion: Option<RawExhaustion>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExhaustion {
    domain_lower: Vec<Bound>,
    domain_upper: Vec<Bound>,
    /// Level corners as expressions in `n`.
    lower: Vec<String>,
    upper: Vec<String>,
}

fn required<T>(value: Option<T>, field: &str) -> Result<T, ConfigError> {
    value.ok_or_else(|| ConfigError::MissingField(field.to_string()))
}

fn parse_expr(src: &str, field: &str, names: &[&str]) -> Result<ExprAst, ConfigError> {
    ExprAst::parse_with_names(src, names).map_err(|source| ConfigError::Expression {
        field: field.to_string(),
        source_text: src.to_string(),
        source,
    })
}

fn parse_bound(b: &Bound, field: &str) -> Result<f64, ConfigError> {
    match b {
        Bound::Number(v) => Ok(*v),
        Bound::Text(s) => match s.trim() {
            "inf" | "+inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            other => Err(invalid(
                field,
                format!("expected a number or \"inf\", got {other:?}"),
            )),
        },
    }
}

fn inline_model(raw: RawModel, n_max: usize) -> Result<FactorModel, ConfigError> {
    let x0 = required(raw.x0, "model.x0")?;
    let m = x0.len();
    let names: Vec<String> = (1..=m).map(|k| format!("x{k}")).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let vec_of = |v: Vec<String>, field: &str| -> Result<Vec<ExprAst>, ConfigError> {
        v.iter()
            .enumerate()
            .map(|(k, s)| parse_expr(s, &format!("{field}[{k}]"), &names))
            .collect()
    };
    let mat_of = |v: Vec<Vec<String>>, field: &str| -> Result<Vec<Vec<ExprAst>>, ConfigError> {
        v.into_iter()
            .enumerate()
            .map(|(r, row)| vec_of(row, &format!("{field}[{r}]")))
            .collect()
    };
    let drift = vec_of(required(raw.drift, "model.drift")?, "model.drift")?;
    let diffusion = mat_of(
        required(raw.diffusion, "model.diffusion")?,
        "model.diffusion",
    )?;
    let rate = parse_expr(&required(raw.rate, "model.rate")?, "model.rate", &names)?;
    let excess_return = vec_of(
        required(raw.excess_return, "model.excess_return")?,
        "model.excess_return",
    )?;
    let volatility = mat_of(
        required(raw.volatility, "model.volatility")?,
        "model.volatility",
    )?;
    let theta = raw.theta.map(|t| vec_of(t, "model.theta")).transpose()?;
    let s0 = required(raw.s0, "model.s0")?;

    let ex = required(raw.exhaustion, "model.exhaustion")?;
    let bounds = |v: &[Bound], field: &str| -> Result<Vec<f64>, ConfigError> {
        v.iter().map(|b| parse_bound(b, field)).collect()
    };
    let level = |v: &[String], field: &str| -> Result<Vec<ExprAst>, ConfigError> {
        v.iter()
            .enumerate()
            .map(|(k, s)| parse_expr(s, &format!("{field}[{k}]"), &["n"]))
            .collect()
    };
    let exhaustion = DomainExhaustion::from_bound_exprs(
        bounds(&ex.domain_lower, "model.exhaustion.domain_lower")?,
        bounds(&ex.domain_upper, "model.exhaustion.domain_upper")?,
        &level(&ex.lower, "model.exhaustion.lower")?,
        &level(&ex.upper, "model.exhaustion.upper")?,
        n_max,
    )?;
    Ok(FactorModel::new(ModelSpec {
        x0,
        drift,
        diffusion,
        rate,
        excess_return,
        volatility,
        theta,
        s0,
        exhaustion,
    })?)
}

fn build_model(raw: RawModel, n_max: usize) -> Result<(FactorModel, Option<Preset>), ConfigError> {
    match raw.preset.as_deref() {
        Some("bessel") => {
            let strike = required(raw.strike, "model.K")?;
            if !(strike > 0.0 && strike.is_finite()) {
                return Err(invalid("model.K", "must be positive and finite"));
            }
            let model = bessel_model(BesselParams { strike, n_max })?;
            Ok((model, Some(Preset::Bessel { strike })))
        }
        Some(other) => Err(invalid("model.preset", format!("unknown preset {other:?}"))),
        None => Ok((inline_model(raw, n_max)?, None)),
    }
}

fn parse_eur_method(name: Option<&str>) -> Result<EurMethod, ConfigError> {
    let Some(name) = name else {
        return Ok(EurMethod::QjPut);
    };
    EurMethod::ALL
        .into_iter()
        .find(|m| m.to_string().eq_ignore_ascii_case(name))
        .ok_or_else(|| invalid("eur_method", format!("unknown method {name:?}")))
}

/// Parses config text; `path` is only used in messages.
pub fn parse_config(text: &str, path: &Path) -> Result<PricingRequest, ConfigError> {
    let raw: RawConfig = serde_json::from_str(text).map_err(|source| ConfigError::Json {
        path: path.to_path_buf(),
        source,
    })?;

    let mc = raw.mc;
    if mc.n_paths == 0 {
        return Err(invalid("mc.n_paths", "must be positive"));
    }
    if !(mc.step > 0.0 && mc.step.is_finite()) {
        return Err(invalid("mc.step", "must be positive and finite"));
    }
    if mc.n_max == 0 {
        return Err(invalid("mc.n_max", "must be positive"));
    }
    let maturities = raw.maturities;
    if maturities.is_empty()
        || maturities.iter().any(|t| !(*t > 0.0 && t.is_finite()))
        || maturities.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(invalid(
            "maturities",
            "must be non-empty, positive and increasing",
        ));
    }
    if raw.tasks.is_empty() {
        return Err(invalid("tasks", "must list at least one task"));
    }
    if raw.tasks.iter().any(|t| t.is_parity()) && mc.n_paths < MIN_PARITY_PATHS {
        return Err(invalid(
            "mc.n_paths",
            format!("parity tasks need at least {MIN_PARITY_PATHS} paths"),
        ));
    }

    let (model, preset) = build_model(raw.model, mc.n_max)?;
    let report = model.validate(&model.default_probes())?;
    if !report.passed {
        let bad = report
            .probes
            .iter()
            .filter(|p| p.theta_residual > report.tolerance || p.c_asymmetry > report.tolerance)
            .count();
        return Err(ConfigError::Validation(bad.max(1)));
    }
    let (i, j) = (raw.pair[0], raw.pair[1]);
    model.check_asset(i)?;
    model.check_asset(j)?;

    let ladder = raw.ladder.unwrap_or(mc.n_max);
    if ladder == 0 || ladder > mc.n_max {
        return Err(invalid("ladder", format!("must be in 1..={}", mc.n_max)));
    }
    let defaults = DegeneracyConfig::default();
    let dg = raw.degeneracy;
    let degeneracy = DegeneracyConfig {
        levels: dg.levels.unwrap_or(defaults.levels),
        n_paths: dg.n_paths.or(defaults.n_paths),
        rho_epsilon: dg.rho_epsilon.unwrap_or(defaults.rho_epsilon),
        rho_tolerance: dg.rho_tolerance.unwrap_or(defaults.rho_tolerance),
        vanish_level: dg.vanish_level.unwrap_or(defaults.vanish_level),
    };
    if degeneracy.levels == 0 {
        return Err(invalid("degeneracy.levels", "must be positive"));
    }

    Ok(PricingRequest {
        model,
        preset,
        pair: (i, j),
        maturities,
        mc: McConfig {
            n_paths: mc.n_paths,
            step: mc.step,
            seed: mc.seed,
            workers: mc.workers,
        },
        n_max: mc.n_max,
        eur_method: parse_eur_method(raw.eur_method.as_deref())?,
        ladder,
        degeneracy,
        tasks: raw.tasks,
        output: OutputSpec {
            path: raw.output.path,
            format: raw.output.format,
        },
    })
}

/// Reads and validates a config file.
pub fn load_config(path: &Path) -> Result<PricingRequest, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "model": {"preset": "bessel", "K": 1.0},
        "pair": [0, 1],
        "maturities": [1.0],
        "mc": {"n_paths": 1000, "step": 0.0625, "seed": 7, "n_max": 16},
        "tasks": ["eur"]
    }"#;

    fn parse(text: &str) -> Result<PricingRequest, ConfigError> {
        parse_config(text, Path::new("test.json"))
    }

    #[test]
    fn minimal_preset() {
        let req = parse(MINIMAL).unwrap();
        assert_eq!(req.preset, Some(Preset::Bessel { strike: 1.0 }));
        assert_eq!(req.model.factors(), 1);
        assert_eq!(req.model.exhaustion().depth(), 16);
        assert_eq!(req.eur_method, EurMethod::QjPut);
        assert_eq!(req.ladder, 16);
        assert_eq!(req.mc.workers, 0);
        assert_eq!(req.output.format, Format::Csv);
    }

    #[test]
    fn missing_seed_is_named() {
        let text = MINIMAL.replace("\"seed\": 7, ", "");
        let err = parse(&text).unwrap_err().to_string();
        assert!(err.contains("seed"), "{err}");
    }

    #[test]
    fn parity_needs_enough_paths() {
        let text = MINIMAL
            .replace("1000", "500")
            .replace("[\"eur\"]", "[\"parity_eur\"]");
        assert!(matches!(parse(&text), Err(ConfigError::Invalid { .. })));
    }

    #[test]
    fn maturities_must_increase() {
        let text = MINIMAL.replace("[1.0]", "[1.0, 0.5]");
        assert!(parse(&text).unwrap_err().to_string().contains("maturities"));
    }

    #[test]
    fn unknown_task_is_rejected() {
        let text = MINIMAL.replace("[\"eur\"]", "[\"greeks\"]");
        assert!(matches!(parse(&text), Err(ConfigError::Json { .. })));
    }

    #[test]
    fn inline_model_parse_error_has_location() {
        let text = r#"{
            "model": {"x0": [1.0], "drift": ["1/"], "diffusion": [["1"]], "rate": "0",
                      "excess_return": [], "volatility": [], "s0": [1.0],
                      "exhaustion": {"domain_lower": [0], "domain_upper": ["inf"],
                                     "lower": ["1/n"], "upper": ["n+1"]}},
            "pair": [0, 0], "maturities": [1.0],
            "mc": {"n_paths": 1000, "step": 0.0625, "seed": 7, "n_max": 4},
            "tasks": ["eur"]
        }"#;
        let err = parse(text).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("model.drift[0]") && msg.contains("position 2"),
            "{msg}"
        );
    }
}
