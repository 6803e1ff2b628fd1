//! Library side of the `numeraire` command: config loading, task execution
//! and output formatting. The binary is a thin wrapper so the same code path
//! can be driven from tests.

pub mod config;
pub mod output;
pub mod run;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

pub use config::{load_config, parse_config, ConfigError, Format, PricingRequest, Task};
pub use run::{all_pass, run, Row};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Pricing(#[from] numeraire_core::PricingError),
    #[error("cannot write {path}: {source}")]
    Output { path: String, source: io::Error },
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, req: &mut PricingRequest) {
        if let Some(p) = &self.out {
            req.output.path = Some(p.clone());
        }
        if let Some(f) = self.format {
            req.output.format = f;
        }
        if let Some(s) = self.seed {
            req.mc.seed = s;
        }
        if let Some(w) = self.workers {
            req.mc.workers = w;
        }
    }
}

/// Loads, runs and writes. Returns whether every checked row passed.
pub fn execute(config: &std::path::Path, overrides: &Overrides) -> Result<bool, CliError> {
    let mut req = load_config(config)?;
    overrides.apply(&mut req);
    let rows = run(&req)?;
    let out_err = |path: String| move |source| CliError::Output { path, source };
    match &req.output.path {
        Some(p) => {
            let name = p.display().to_string();
            let file = File::create(p).map_err(out_err(name.clone()))?;
            let mut w = BufWriter::new(file);
            output::write_rows(&mut w, &rows, req.output.format).map_err(out_err(name.clone()))?;
            w.flush().map_err(out_err(name))?;
        }
        None => {
            let stdout = io::stdout();
            output::write_rows(stdout.lock(), &rows, req.output.format)
                .map_err(out_err("<stdout>".into()))?;
        }
    }
    Ok(all_pass(&rows))
}
