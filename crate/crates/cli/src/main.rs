use std::path::{Path, PathBuf};
use std::process::ExitCode;

use care_core::config::ExperimentConfig;
use care_core::gateway::LegalityMatcher;
use care_core::key::ConditionKey;
use care_core::orchestrator::{
    arbitrate, record_provenance, run_stage1_step1, run_stage1_step2, run_stage2, CellSummary,
    RobustPlan, ScreenPlan, StageContext, SweepPlan,
};
use care_core::prompt::{build_instruction, LengthRegime, ReasonSet, ThoughtKind};
use care_core::report::{cmd_fit, cmd_report, cmd_validate, format};
use care_core::scenario::ScenarioId;
use care_core::stats::FitOptions;
use care_core::Error;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "care", version, about = "Reason-responsiveness experiments for driving decisions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stage 1, step 1: screen models and strategies on the baseline scene.
    CalibrateScreen {
        config: PathBuf,
        outdir: PathBuf,
        /// Explanation length regime (no-limit or few-sentences); overrides screen.length.
        #[arg(long)]
        length: Option<LengthRegime>,
    },
    /// Stage 1, step 2: robustness across scenarios and length regimes.
    CalibrateRobust { config: PathBuf, outdir: PathBuf },
    /// Stage 2: full-factorial sweep over the context grid.
    Sweep { config: PathBuf, outdir: PathBuf },
    /// Majority-vote decision for one scene (two queries, three on disagreement).
    Arbitrate {
        config: PathBuf,
        outdir: PathBuf,
        #[arg(long, default_value = "oncoming")]
        scenario: ScenarioId,
        #[arg(long, default_value = "no-limit")]
        length: LengthRegime,
        /// Defaults to sweep.strategy.
        #[arg(long)]
        strategy: Option<ThoughtKind>,
    },
    /// Calibration tables, effect and probability tables, plot data.
    Report { dir: PathBuf },
    /// Legality-acknowledgment rate per cell.
    Validate {
        dir: PathBuf,
        /// Flag cells below this rate (0 to 1).
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Fit the Stage-2 binary logit.
    Fit {
        dir: PathBuf,
        /// L2 penalty on non-intercept coefficients.
        #[arg(long, default_value_t = 0.0)]
        ridge: f64,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::MissingInput { .. } => 2,
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
        e if e.is_numerical() => 3,
        _ => 1,
    }
}

fn print_summaries(summaries: &[CellSummary]) {
    for s in summaries {
        let aligned = s.n_aligned.map_or_else(String::new, |a| format!(" aligned={a}"));
        println!(
            "{}  overtake={}/{} ({}%) failed={}{aligned}",
            s.cell_id,
            s.n_overtake,
            s.n_runs,
            format::percent(s.overtake_rate, 2),
            s.n_failed
        );
    }
}

fn load(config: &Path, outdir: &Path) -> care_core::Result<ExperimentConfig> {
    let config = ExperimentConfig::load(config)?;
    record_provenance(outdir, &config)?;
    Ok(config)
}

fn run(command: Command) -> care_core::Result<()> {
    match command {
        Command::CalibrateScreen { config, outdir, length } => {
            let config = load(&config, &outdir)?;
            let plan = ScreenPlan::from_config(&config, length)?;
            let responder = config.responder()?;
            let ctx = StageContext::from_config(&config, responder.as_ref())?;
            print_summaries(&run_stage1_step1(&ctx, &plan, &outdir)?);
        }
        Command::CalibrateRobust { config, outdir } => {
            let config = load(&config, &outdir)?;
            let plan = RobustPlan::from_config(&config)?;
            let responder = config.responder()?;
            let ctx = StageContext::from_config(&config, responder.as_ref())?;
            print_summaries(&run_stage1_step2(&ctx, &plan, &outdir)?);
        }
        Command::Sweep { config, outdir } => {
            let config = load(&config, &outdir)?;
            let plan = SweepPlan::from_config(&config)?;
            let responder = config.responder()?;
            let ctx = StageContext::from_config(&config, responder.as_ref())?;
            let out = run_stage2(&ctx, &plan, &outdir)?;
            println!("{} cells, {} rows", out.summaries.len(), out.rows.len());
        }
        Command::Arbitrate { config, outdir, scenario, length, strategy } => {
            let config = load(&config, &outdir)?;
            let strategy = strategy.unwrap_or(config.sweep.strategy);
            let scene = config.scene(&scenario)?;
            let fragments = config.fragments();
            let instruction = build_instruction(&fragments, &ReasonSet::full(&fragments), strategy, length)?;
            let model = config.sweep_model();
            let key = ConditionKey::for_scene(&scene, &model, strategy, true, length, 0);
            let legality = if config.validation.patterns.is_empty() {
                None
            } else {
                Some(LegalityMatcher::new(&config.validation.patterns)?)
            };
            let responder = config.responder()?;
            let endpoint = config.model_endpoint().with_model(&model);
            let result = arbitrate(responder.as_ref(), &endpoint, legality.as_ref(), &instruction, &scene, &key)?;
            let votes: Vec<_> = result.votes.iter().map(|d| d.case_number()).collect();
            let record = serde_json::json!({
                "cell_id": key.cell_id(),
                "decision": result.decision,
                "votes": votes,
                "queries": votes.len(),
            });
            let path = outdir.join("arbitration.jsonl");
            let mut line = serde_json::to_string(&record)?;
            line.push('\n');
            use std::io::Write;
            std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .and_then(|mut f| f.write_all(line.as_bytes()))
                .map_err(|source| Error::Io { path: path.clone(), source })?;
            println!("{}", result.decision.decision_line());
        }
        Command::Report { dir } => {
            let bundle = cmd_report(&dir)?;
            for file in bundle.files {
                println!("{}", file.display());
            }
        }
        Command::Validate { dir, threshold } => {
            let report = cmd_validate(&dir, threshold)?;
            if report.skipped {
                println!("validation skipped: no legality patterns configured");
            } else {
                let flagged: Vec<_> = report.flagged().collect();
                println!("{} cells checked, {} below {}", report.rows.len(), flagged.len(), report.threshold);
                for row in flagged {
                    println!(
                        "  {} {}: {}% ({}/{})",
                        row.stage,
                        row.cell_id,
                        format::percent(row.legality_rate, 1),
                        row.n_acknowledged,
                        row.n_runs
                    );
                }
            }
        }
        Command::Fit { dir, ridge } => {
            let options = FitOptions { ridge, ..FitOptions::default() };
            let report = cmd_fit(&dir, &options)?;
            println!(
                "converged in {} iterations, log-likelihood {}",
                report.fit.n_iterations,
                format::fixed(report.fit.log_likelihood, 3)
            );
            for row in care_core::report::render_effects(&report.effects) {
                println!("{}", row.join("  "));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
