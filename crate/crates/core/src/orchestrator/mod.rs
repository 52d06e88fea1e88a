//! Stage execution: repeated queries per cell, resumable persistence,
//! per-cell summaries and majority-vote arbitration.

mod arbitrate;
mod runner;
mod stages;
mod store;
mod summary;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, CONFIG_COPY};
use crate::error::{Error, Result};
use crate::gateway::{LegalityMatcher, ModelEndpoint, Responder};
use crate::prompt::PromptFragments;

pub use arbitrate::{arbitrate, Arbitration, ARBITRATE_STAGE};
pub use runner::{execute, run_slot, Slot};
pub use stages::{
    run_stage1_step1, run_stage1_step2, run_stage2, RobustPlan, ScreenPlan, SweepOutput, SweepPlan,
};
pub use store::{read_records, RecordStore, RunRecord, RunStatus};
pub use summary::{
    read_rows, read_summaries, summarize, verify_summaries, write_rows, write_summaries, CellSummary,
};

pub const SCREEN_DIR: &str = "stage1_screen";
pub const ROBUST_DIR: &str = "stage1_robust";
pub const SWEEP_DIR: &str = "stage2_sweep";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const ROWS_FILE: &str = "rows.csv";
pub const METADATA_FILE: &str = "metadata.json";

/// Everything a stage needs to issue queries.
pub struct StageContext<'a> {
    pub responder: &'a dyn Responder,
    /// Model name is replaced per slot; the other settings apply to all.
    pub endpoint: ModelEndpoint,
    pub fragments: PromptFragments,
    pub legality: Option<LegalityMatcher>,
    pub concurrency: usize,
    pub parse_retries: u32,
}

impl<'a> StageContext<'a> {
    pub fn new(responder: &'a dyn Responder) -> Self {
        StageContext {
            responder,
            endpoint: ModelEndpoint::default(),
            fragments: PromptFragments::default(),
            legality: None,
            concurrency: 1,
            parse_retries: 2,
        }
    }

    pub fn from_config(config: &ExperimentConfig, responder: &'a dyn Responder) -> Result<Self> {
        let legality = if config.validation.patterns.is_empty() {
            None
        } else {
            Some(LegalityMatcher::new(&config.validation.patterns)?)
        };
        Ok(StageContext {
            responder,
            endpoint: config.endpoint.settings.clone(),
            fragments: config.fragments(),
            legality,
            concurrency: config.concurrency,
            parse_retries: config.parse_retries,
        })
    }
}

/// Writes the resolved configuration beside the outputs. A directory that
/// already holds a different configuration is refused so that records from
/// two experiments never mix.
pub fn record_provenance(root: &Path, config: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let path = root.join(CONFIG_COPY);
    let text = config.to_toml()?;
    match std::fs::read_to_string(&path) {
        Ok(existing) if existing == text => Ok(()),
        Ok(_) => Err(Error::Config(format!(
            "{} was written by a different configuration; use a fresh output directory",
            path.display()
        ))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
        }
        Err(e) => Err(Error::io(&path, e)),
    }
}

/// Reads the configuration copy of a results directory, if present.
pub fn load_provenance(root: &Path) -> Result<Option<ExperimentConfig>> {
    let path = root.join(CONFIG_COPY);
    match std::fs::read_to_string(&path) {
        Ok(text) => Ok(Some(ExperimentConfig::from_toml(&text)?)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(&path, e)),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub started: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished: Option<String>,
}

pub(crate) fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Timestamps live in their own file so every other output stays
/// reproducible.
pub(crate) fn stamp(root: &Path, stage: &str, finished: bool) -> Result<()> {
    let path = root.join(METADATA_FILE);
    let mut meta: BTreeMap<String, StageTimes> = match std::fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
        Err(e) => return Err(Error::io(&path, e)),
    };
    let now = now_rfc3339();
    let entry = meta.entry(stage.to_owned()).or_default();
    if finished {
        entry.finished = Some(now);
    } else {
        *entry = StageTimes { started: now, finished: None };
    }
    let text = serde_json::to_string_pretty(&meta)?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}
