//! Fit, report and validity commands over a results directory.
//!
//! All outputs are pure functions of the stage files, so re-running a
//! command reproduces them byte for byte.

pub mod format;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{default_patterns, LegalityMatcher};
use crate::orchestrator::{
    load_provenance, read_records, read_rows, read_summaries, CellSummary, RECORDS_FILE, ROBUST_DIR,
    ROWS_FILE, SCREEN_DIR, SUMMARY_FILE, SWEEP_DIR,
};
use crate::prompt::{LengthRegime, ThoughtKind};
use crate::stats::{
    build_design, effect_table, fit_logit_named, probability_table, EffectRow, FitOptions, LogitFit,
    Normalization, ProbabilityRow, Stage2Row, PREDICTORS,
};
use format::{fixed, p_value, percent, signed};

pub const FIT_DIR: &str = "fit";
pub const FIT_FILE: &str = "fit.json";
pub const REPORT_DIR: &str = "report";
pub const PLOT_DIR: &str = "plot";
pub const VALIDATE_DIR: &str = "validate";
pub const VALIDITY_FILE: &str = "validity.csv";

const SWEEP_HINT: &str = "run sweep first";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub options: FitOptions,
    pub normalization: Normalization,
    pub fit: LogitFit,
    pub effects: Vec<EffectRow>,
    pub probabilities: Vec<ProbabilityRow>,
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn missing_sweep(dir: &Path) -> Error {
    Error::MissingInput {
        what: "Stage-2 sweep output".into(),
        path: dir.join(SWEEP_DIR),
        hint: SWEEP_HINT.into(),
    }
}

/// Stage-2 rows of a results directory; an absent or empty sweep is a
/// missing-input error.
pub fn load_sweep_rows(dir: &Path) -> Result<Vec<Stage2Row>> {
    let path = dir.join(SWEEP_DIR).join(ROWS_FILE);
    if !path.exists() {
        return Err(missing_sweep(dir));
    }
    let rows = read_rows(&path, SWEEP_HINT)?;
    if rows.is_empty() {
        return Err(missing_sweep(dir));
    }
    Ok(rows)
}

fn normalization_for(dir: &Path) -> Result<Normalization> {
    match load_provenance(dir)? {
        Some(config) => Normalization::from_grid(&config.grid),
        None => Ok(Normalization::default()),
    }
}

/// Fits the Stage-2 logit without writing anything.
pub fn fit_directory(dir: &Path, options: &FitOptions) -> Result<FitReport> {
    let rows = load_sweep_rows(dir)?;
    let normalization = normalization_for(dir)?;
    let design = build_design(&rows, &normalization)?;
    let names: Vec<String> = PREDICTORS.iter().map(|s| (*s).to_owned()).collect();
    let fit = fit_logit_named(&design, &names, options)?;
    let effects = effect_table(&fit)?;
    let probabilities = probability_table(&fit.beta, &fit.names)?;
    Ok(FitReport {
        options: *options,
        normalization,
        fit,
        effects,
        probabilities,
    })
}

/// `care fit`: writes `fit/fit.json` plus unrounded effect and
/// probability tables.
pub fn cmd_fit(dir: &Path, options: &FitOptions) -> Result<FitReport> {
    let report = fit_directory(dir, options)?;
    let out = dir.join(FIT_DIR);
    ensure_dir(&out)?;
    write_text(&out.join(FIT_FILE), &(serde_json::to_string_pretty(&report)? + "\n"))?;

    let effects: Vec<Vec<String>> = report
        .effects
        .iter()
        .map(|e| {
            vec![
                e.name.clone(),
                e.beta.to_string(),
                e.stars.clone(),
                e.odds_ratio.to_string(),
                e.ci_low.to_string(),
                e.ci_high.to_string(),
                e.p_value.to_string(),
            ]
        })
        .collect();
    write_table(
        &out.join("effects.csv"),
        &["predictor", "beta", "stars", "odds_ratio", "ci_low", "ci_high", "p_value"],
        &effects,
    )?;
    let probabilities: Vec<Vec<String>> = report
        .probabilities
        .iter()
        .map(|p| {
            vec![
                p.condition.clone(),
                p.probability.to_string(),
                p.change.map_or_else(String::new, |c| c.to_string()),
            ]
        })
        .collect();
    write_table(&out.join("probabilities.csv"), &["condition", "probability", "change"], &probabilities)?;
    Ok(report)
}

fn load_fit(dir: &Path) -> Result<FitReport> {
    let path = dir.join(FIT_DIR).join(FIT_FILE);
    match std::fs::read_to_string(&path) {
        Ok(text) => Ok(serde_json::from_str(&text)?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => fit_directory(dir, &FitOptions::default()),
        Err(e) => Err(Error::io(&path, e)),
    }
}

pub fn prompt_label(reasons: bool, strategy: ThoughtKind) -> String {
    let mut label = String::from("Role");
    if reasons {
        label.push_str(" + R");
    }
    if strategy != ThoughtKind::NoThought {
        label.push_str(" + ");
        label.push_str(strategy.short_label());
    }
    label
}

/// Effect table with betas, odds ratios and CIs at 3 decimals.
pub fn render_effects(effects: &[EffectRow]) -> Vec<Vec<String>> {
    effects
        .iter()
        .map(|e| {
            vec![
                e.name.clone(),
                fixed(e.beta, 3),
                e.stars.clone(),
                fixed(e.odds_ratio, 3),
                format!("[{}, {}]", fixed(e.ci_low, 3), fixed(e.ci_high, 3)),
                p_value(e.p_value),
            ]
        })
        .collect()
}

/// Probability table in percent at 1 decimal, with signed changes in
/// percentage points.
pub fn render_probabilities(rows: &[ProbabilityRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|p| {
            vec![
                p.condition.clone(),
                percent(p.probability, 1),
                p.change.map_or_else(|| "-".to_owned(), |c| signed(c * 100.0, 1)),
            ]
        })
        .collect()
}

fn screen_rows(summaries: &[CellSummary]) -> Vec<Vec<String>> {
    summaries
        .iter()
        .map(|s| {
            vec![
                prompt_label(s.reasons, s.strategy),
                s.model.clone(),
                s.n_aligned.unwrap_or(s.n_overtake).to_string(),
                s.n_runs.to_string(),
                s.n_failed.to_string(),
            ]
        })
        .collect()
}

fn robust_rows(summaries: &[CellSummary]) -> Vec<Vec<String>> {
    // one row per (scenario, prompt), in first-seen order
    let mut order: Vec<(String, String)> = Vec::new();
    let mut cells: BTreeMap<(String, String, LengthRegime), &CellSummary> = BTreeMap::new();
    for s in summaries {
        let row = (s.scenario.label(), prompt_label(s.reasons, s.strategy));
        if !order.contains(&row) {
            order.push(row.clone());
        }
        cells.insert((row.0, row.1, s.length), s);
    }
    order
        .into_iter()
        .map(|(scenario, prompt)| {
            let mut row = vec![scenario.clone(), prompt.clone()];
            for length in [LengthRegime::NoLimit, LengthRegime::FewSentences] {
                match cells.get(&(scenario.clone(), prompt.clone(), length)) {
                    Some(s) => {
                        row.push(fixed(s.mean_latency_s, 3));
                        row.push(percent(s.overtake_rate, 2));
                    }
                    None => row.extend([String::new(), String::new()]),
                }
            }
            row
        })
        .collect()
}

const SCREEN_HEADER: [&str; 5] = ["prompt", "model", "overtake_count", "n_runs", "n_failed"];
const ROBUST_HEADER: [&str; 6] = [
    "scenario",
    "prompt",
    "no_limit_time_s",
    "no_limit_overtake_pct",
    "few_sentences_time_s",
    "few_sentences_overtake_pct",
];
const EFFECT_HEADER: [&str; 6] = ["predictor", "beta", "significance", "odds_ratio", "ci_95", "p_value"];
const PROBABILITY_HEADER: [&str; 3] = ["condition", "probability_pct", "change_pct_points"];
const PLOT_HEADER: [&str; 5] = ["behind", "urgency", "ttc", "overtake_rate", "n_runs"];

/// Plot-data files: one per (following time, length) panel, holding one
/// curve of overtake rate against ttc per (behind, urgency) combination.
pub fn plot_panels(summaries: &[CellSummary]) -> BTreeMap<String, Vec<Vec<String>>> {
    let mut panels: BTreeMap<(u64, u8), Vec<&CellSummary>> = BTreeMap::new();
    for s in summaries.iter().filter(|s| s.ttc.is_some()) {
        panels.entry((s.following.to_bits(), s.length.flag())).or_default().push(s);
    }
    let mut keys: Vec<(f64, u8)> = panels.keys().map(|&(f, l)| (f64::from_bits(f), l)).collect();
    keys.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keys.into_iter()
        .map(|(following, length)| {
            let mut cells = panels[&(following.to_bits(), length)].clone();
            cells.sort_by(|a, b| {
                (a.behind, a.urgency)
                    .cmp(&(b.behind, b.urgency))
                    .then(a.ttc.unwrap_or(0.0).total_cmp(&b.ttc.unwrap_or(0.0)))
            });
            let rows = cells
                .into_iter()
                .map(|s| {
                    vec![
                        u8::from(s.behind).to_string(),
                        u8::from(s.urgency).to_string(),
                        s.ttc.unwrap_or(f64::NAN).to_string(),
                        s.overtake_rate.to_string(),
                        s.n_runs.to_string(),
                    ]
                })
                .collect();
            (format!("F{following}_L{length}.csv"), rows)
        })
        .collect()
}

fn markdown_table(out: &mut String, header: &[&str], rows: &[Vec<String>]) {
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
    for row in rows {
        let _ = writeln!(out, "| {} |", row.join(" | "));
    }
    out.push('\n');
}

fn optional_summaries(dir: &Path, stage: &str) -> Result<Option<Vec<CellSummary>>> {
    let path = dir.join(stage).join(SUMMARY_FILE);
    if !path.exists() {
        return Ok(None);
    }
    read_summaries(&path, "").map(Some)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
}

/// `care report`: calibration tables, effect and probability tables, a
/// markdown summary and plot data. Stage 2 is required; Stage-1 tables are
/// emitted when their outputs exist.
pub fn cmd_report(dir: &Path) -> Result<ReportBundle> {
    let sweep = match optional_summaries(dir, SWEEP_DIR)? {
        Some(s) if !s.is_empty() => s,
        _ => return Err(missing_sweep(dir)),
    };
    let fit = load_fit(dir)?;
    let screen = optional_summaries(dir, SCREEN_DIR)?;
    let robust = optional_summaries(dir, ROBUST_DIR)?;

    let out = dir.join(REPORT_DIR);
    let plot = dir.join(PLOT_DIR);
    ensure_dir(&out)?;
    ensure_dir(&plot)?;
    let mut files = Vec::new();
    let mut md = String::from("# Results\n\n");

    md.push_str("## Stage 1, step 1: screening\n\n");
    match &screen {
        Some(s) => {
            let rows = screen_rows(s);
            let path = out.join("calibration_screen.csv");
            write_table(&path, &SCREEN_HEADER, &rows)?;
            files.push(path);
            markdown_table(&mut md, &["Prompt configuration", "Model", "Overtake count", "Runs", "Failed"], &rows);
        }
        None => md.push_str("No screening results.\n\n"),
    }

    md.push_str("## Stage 1, step 2: robustness\n\n");
    match &robust {
        Some(s) => {
            let rows = robust_rows(s);
            let path = out.join("calibration_robust.csv");
            write_table(&path, &ROBUST_HEADER, &rows)?;
            files.push(path);
            markdown_table(
                &mut md,
                &[
                    "Scenario",
                    "Prompt",
                    "No-limit time (s)",
                    "No-limit overtake (%)",
                    "Few-sentences time (s)",
                    "Few-sentences overtake (%)",
                ],
                &rows,
            );
        }
        None => md.push_str("No robustness results.\n\n"),
    }

    md.push_str("## Stage 2: binary logit\n\n");
    let effects = render_effects(&fit.effects);
    let path = out.join("effects.csv");
    write_table(&path, &EFFECT_HEADER, &effects)?;
    files.push(path);
    markdown_table(
        &mut md,
        &["Predictor", "Coefficient", "Significance", "Odds ratio", "95% CI", "p-value"],
        &effects,
    );
    let _ = writeln!(
        md,
        "Observations: {}. Log-likelihood: {}. Iterations: {}. Ridge: {}.\n",
        fit.fit.n_obs,
        fixed(fit.fit.log_likelihood, 3),
        fit.fit.n_iterations,
        fit.fit.ridge
    );
    md.push_str("Significance levels: *** p<0.001, ** p<0.01, * p<0.05.\n\n");

    md.push_str("## Predicted overtaking probability\n\n");
    let probabilities = render_probabilities(&fit.probabilities);
    let path = out.join("probabilities.csv");
    write_table(&path, &PROBABILITY_HEADER, &probabilities)?;
    files.push(path);
    markdown_table(&mut md, &["Predictor condition", "Probability (%)", "Change (points)"], &probabilities);

    md.push_str("## Plot data\n\n");
    for (name, rows) in plot_panels(&sweep) {
        let path = plot.join(&name);
        write_table(&path, &PLOT_HEADER, &rows)?;
        let _ = writeln!(md, "- {PLOT_DIR}/{name}");
        files.push(path);
    }

    let path = out.join("report.md");
    write_text(&path, &md)?;
    files.push(path);
    Ok(ReportBundle { dir: out, files })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityRow {
    pub stage: String,
    pub cell_id: String,
    pub n_runs: u32,
    pub n_acknowledged: u32,
    pub legality_rate: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidityReport {
    pub rows: Vec<ValidityRow>,
    /// True when no patterns are configured.
    pub skipped: bool,
    pub threshold: f64,
}

impl ValidityReport {
    pub fn flagged(&self) -> impl Iterator<Item = &ValidityRow> {
        self.rows.iter().filter(|r| r.flagged)
    }
}

/// `care validate`: recomputes legality acknowledgment from the stored
/// explanations and flags cells below `threshold` (default: the
/// configured one, else 1.0).
pub fn cmd_validate(dir: &Path, threshold: Option<f64>) -> Result<ValidityReport> {
    let config = load_provenance(dir)?;
    let (patterns, configured) = match &config {
        Some(c) => (c.validation.patterns.clone(), c.validation.threshold),
        None => (default_patterns(), 1.0),
    };
    let threshold = threshold.unwrap_or(configured);
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Config(format!("threshold {threshold} is outside [0, 1]")));
    }
    if patterns.is_empty() {
        log::warn!("no legality patterns configured; validation skipped");
        return Ok(ValidityReport { rows: Vec::new(), skipped: true, threshold });
    }
    let matcher = LegalityMatcher::new(&patterns)?;

    let mut rows = Vec::new();
    for stage in [SCREEN_DIR, ROBUST_DIR, SWEEP_DIR] {
        let records = read_records(&dir.join(stage).join(RECORDS_FILE))?;
        let mut cells: Vec<(String, u32, u32)> = Vec::new();
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        for r in records.iter().filter(|r| r.is_ok()) {
            let id = r.key.cell_id();
            let i = *index.entry(id.clone()).or_insert_with(|| {
                cells.push((id, 0, 0));
                cells.len() - 1
            });
            cells[i].1 += 1;
            cells[i].2 += u32::from(matcher.matches(&r.explanation));
        }
        for (cell_id, n_runs, n_acknowledged) in cells {
            let legality_rate = f64::from(n_acknowledged) / f64::from(n_runs);
            rows.push(ValidityRow {
                stage: stage.to_owned(),
                cell_id,
                n_runs,
                n_acknowledged,
                legality_rate,
                flagged: legality_rate < threshold - 1e-12,
            });
        }
    }
    if rows.is_empty() {
        log::warn!("{}: no run records found", dir.display());
    }
    let out = dir.join(VALIDATE_DIR);
    ensure_dir(&out)?;
    let mut w = csv::Writer::from_path(out.join(VALIDITY_FILE))?;
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(out.join(VALIDITY_FILE), e))?;
    Ok(ValidityReport { rows, skipped: false, threshold })
}
