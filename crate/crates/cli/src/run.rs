//! Executes the tasks of a [`PricingRequest`] and collects result rows.

use numeraire_core::bessel_reference as bessel;
use numeraire_core::diagnostics::{
    check_degeneracy_with, check_ratio_supermartingale, detect_bubble, parity_suite,
    DegeneracyReport, ParityReport, RhoMass, DISCRETIZATION_ALLOWANCE, RESIDUAL_SIGMAS,
};
use numeraire_core::pricing::{
    amer_exchange, default_probability, early_exercise_premium, eur_exchange,
};
use numeraire_core::{MCEstimate, PricingError};

use crate::config::{Preset, PricingRequest, Task};

/// One output line. Empty optional fields are written as blanks.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub task: String,
    pub i: usize,
    pub j: usize,
    /// Maturity, or the level `n` for per-level degeneracy rows.
    pub t: Option<f64>,
    pub estimate: Option<f64>,
    pub stderr: Option<f64>,
    pub reference: Option<f64>,
    pub pass: Option<bool>,
    pub note: String,
}

impl Row {
    fn new(task: impl Into<String>, i: usize, j: usize, t: Option<f64>) -> Self {
        Row {
            task: task.into(),
            i,
            j,
            t,
            estimate: None,
            stderr: None,
            reference: None,
            pass: None,
            note: String::new(),
        }
    }

    fn estimate(mut self, e: &MCEstimate) -> Self {
        self.estimate = Some(e.mean);
        self.stderr = Some(e.stderr);
        self
    }

    /// Attaches a closed-form reference and judges the estimate against it
    /// with the usual threshold.
    fn reference(mut self, r: Option<f64>) -> Self {
        self.reference = r;
        if let (Some(r), Some(e), Some(se)) = (r, self.estimate, self.stderr) {
            let ok = (e - r).abs() <= RESIDUAL_SIGMAS * se + DISCRETIZATION_ALLOWANCE;
            self.pass = Some(self.pass.unwrap_or(true) && ok);
        }
        self
    }

    fn pass(mut self, ok: bool) -> Self {
        self.pass = Some(self.pass.unwrap_or(true) && ok);
        self
    }

    fn note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }
}

/// Closed forms for the preset; `None` where the preset has none.
struct References {
    strike: f64,
}

impl References {
    fn new(preset: Option<Preset>) -> Option<Self> {
        preset.map(|Preset::Bessel { strike }| References { strike })
    }

    fn eur(&self, i: usize, j: usize, t: f64) -> f64 {
        match (i, j) {
            (0, 1) => bessel::eur_ex_01(self.strike, t),
            (1, 0) => bessel::eur_ex_10(self.strike, t),
            _ => 0.0,
        }
    }

    fn amer(&self, i: usize, j: usize, t: f64) -> f64 {
        match (i, j) {
            (0, 1) => bessel::amer_ex_01(self.strike, t),
            (1, 0) => bessel::amer_ex_10(self.strike, t),
            _ => 0.0,
        }
    }

    fn default_prob(&self, j: usize, t: f64) -> f64 {
        if j == 0 {
            bessel::default_prob_q0(t)
        } else {
            0.0
        }
    }

    fn ratio_mean(&self, i: usize, j: usize, t: f64) -> Option<f64> {
        match (i, j) {
            (0, 1) => Some(bessel::ratio_mean_01(self.strike, t)),
            // X is Brownian motion stopped at zero under Q^0
            (1, 0) => Some(1.0 / self.strike),
            _ if i == j => Some(1.0),
            _ => None,
        }
    }

    /// `S^a_0 Q^a[ζ <= T]`.
    fn defect(&self, asset: usize, t: f64) -> f64 {
        if asset == 0 {
            self.strike * bessel::default_prob_q0(t)
        } else {
            0.0
        }
    }
}

fn parity_row(r: &ParityReport, i: usize, j: usize, t: f64) -> Row {
    let mut row = Row::new(r.name, i, j, Some(t));
    row.estimate = Some(r.residual);
    row.stderr = Some(r.combined_stderr);
    row.reference = Some(0.0);
    row.pass(r.pass).note(format!(
        "left={} right={}",
        crate::output::sig10(r.left.mean),
        crate::output::sig10(r.right.mean)
    ))
}

fn rho_note(r: &RhoMass) -> String {
    format!(
        "measure={} exploded={} total={} basis={:?}",
        r.measure, r.exploded, r.total, r.basis
    )
}

fn degeneracy_rows(d: &DegeneracyReport, i: usize, j: usize) -> Vec<Row> {
    let mut rows = Vec::new();
    for (name, seq, nonincreasing) in [
        ("degeneracy_freq_qj", &d.freq_qj, d.nonincreasing_qj),
        ("degeneracy_freq_qi", &d.freq_qi, d.nonincreasing_qi),
    ] {
        for (k, e) in seq.iter().enumerate() {
            let n = d.first_level + k;
            rows.push(
                Row::new(name, i, j, Some(n as f64))
                    .estimate(e)
                    .note(format!("level n={n} nonincreasing={nonincreasing}")),
            );
        }
    }
    for (name, r) in [
        ("degeneracy_rho_qj", &d.rho_qj),
        ("degeneracy_rho_qi", &d.rho_qi),
    ] {
        let mut row = Row::new(name, i, j, None).note(rho_note(r));
        row.estimate = Some(r.mass_at_zero);
        rows.push(row);
    }
    rows.push(
        Row::new("degeneracy", i, j, None)
            .pass(d.pass)
            .note(format!(
                "condition3={} condition4={} levels={}",
                d.condition3, d.condition4, d.config.levels
            )),
    );
    rows
}

/// Runs every task in order. Rows are grouped by task, then maturity.
pub fn run(req: &PricingRequest) -> Result<Vec<Row>, PricingError> {
    let (i, j) = req.pair;
    let model = &req.model;
    let cfg = &req.mc;
    let refs = References::new(req.preset);
    let mut rows = Vec::new();

    let needs_degeneracy =
        req.tasks.contains(&Task::Degeneracy) || req.tasks.contains(&Task::ParityMixed);
    let degeneracy = if needs_degeneracy {
        Some(check_degeneracy_with(model, i, j, cfg, &req.degeneracy)?)
    } else {
        None
    };
    let mut parity_cache = Vec::new();
    let mut parity = |t: f64| -> Result<_, PricingError> {
        if let Some((_, suite)) = parity_cache.iter().find(|(tt, _)| *tt == t) {
            return Ok(Clone::clone(suite));
        }
        let suite = parity_suite(model, i, j, t, cfg, degeneracy.as_ref())?;
        parity_cache.push((t, suite.clone()));
        Ok(suite)
    };

    for &task in &req.tasks {
        match task {
            Task::Eur => {
                for &t in &req.maturities {
                    let e = eur_exchange(model, i, j, t, req.eur_method, cfg)?;
                    rows.push(
                        Row::new("eur", i, j, Some(t))
                            .estimate(&e)
                            .reference(refs.as_ref().map(|r| r.eur(i, j, t)))
                            .note(format!("method={}", req.eur_method)),
                    );
                }
            }
            Task::Amer => {
                for &t in &req.maturities {
                    let a = amer_exchange(model, i, j, t, req.ladder, cfg)?;
                    rows.push(
                        Row::new("amer", i, j, Some(t))
                            .estimate(&a.value)
                            .reference(refs.as_ref().map(|r| r.amer(i, j, t)))
                            .note(format!("ladder={}", req.ladder)),
                    );
                }
            }
            Task::Eep => {
                for &t in &req.maturities {
                    let e = early_exercise_premium(model, i, j, t, cfg)?;
                    rows.push(
                        Row::new("eep", i, j, Some(t))
                            .estimate(&e)
                            .reference(refs.as_ref().map(|r| r.amer(i, j, t) - r.eur(i, j, t))),
                    );
                }
            }
            Task::DefaultProb => {
                for &t in &req.maturities {
                    let e = default_probability(model, j, t, cfg)?;
                    rows.push(
                        Row::new("default_prob", i, j, Some(t))
                            .estimate(&e)
                            .reference(refs.as_ref().map(|r| r.default_prob(j, t)))
                            .note(format!("measure=Q{j}")),
                    );
                }
            }
            Task::ParityEur | Task::ParityAmer => {
                for &t in &req.maturities {
                    let suite = parity(t)?;
                    let r = if task == Task::ParityEur {
                        &suite.european
                    } else {
                        &suite.american
                    };
                    rows.push(parity_row(r, i, j, t));
                }
            }
            Task::ParityMixed => {
                for &t in &req.maturities {
                    match parity(t)?.mixed {
                        Some(reports) => {
                            rows.extend(reports.iter().map(|r| parity_row(r, i, j, t)))
                        }
                        None => rows.push(
                            Row::new("parity_mixed", i, j, Some(t))
                                .note("skipped: degeneracy conditions rejected"),
                        ),
                    }
                }
            }
            Task::Supermartingale => {
                let rep = check_ratio_supermartingale(model, i, j, &req.maturities, cfg)?;
                for (&t, e) in rep.times.iter().zip(&rep.means) {
                    rows.push(
                        Row::new("supermartingale", i, j, Some(t))
                            .estimate(e)
                            .reference(refs.as_ref().and_then(|r| r.ratio_mean(i, j, t)))
                            .pass(rep.pass),
                    );
                }
            }
            Task::Bubble => {
                let assets = if i == j { vec![i] } else { vec![i, j] };
                for a in assets {
                    let rep = detect_bubble(model, a, &req.maturities, cfg)?;
                    for r in &rep.rows {
                        rows.push(
                            Row::new("bubble", a, a, Some(r.horizon))
                                .estimate(&r.defect)
                                .reference(refs.as_ref().map(|x| x.defect(a, r.horizon)))
                                .pass(r.consistent)
                                .note(format!(
                                    "flagged={} explosion_defect={}",
                                    r.flagged,
                                    crate::output::sig10(r.explosion_defect.mean)
                                )),
                        );
                    }
                }
            }
            Task::Degeneracy => {
                let d = degeneracy.as_ref().expect("computed above");
                rows.extend(degeneracy_rows(d, i, j));
            }
        }
    }
    Ok(rows)
}

/// True iff no row carries a failed pass flag.
pub fn all_pass(rows: &[Row]) -> bool {
    rows.iter().all(|r| r.pass != Some(false))
}
