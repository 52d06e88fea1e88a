use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::store::RunRecord;
use crate::error::{Error, Result};
use crate::gateway::Decision;
use crate::key::ConditionKey;
use crate::prompt::{LengthRegime, ThoughtKind};
use crate::scenario::ScenarioId;
use crate::stats::Stage2Row;

/// Aggregate of the records of one cell. Rates and the mean latency are
/// NaN when the cell has no successful run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell_id: String,
    pub scenario: ScenarioId,
    pub model: String,
    pub strategy: ThoughtKind,
    pub reasons: bool,
    pub length: LengthRegime,
    pub ttc: Option<f64>,
    pub behind: bool,
    pub urgency: bool,
    pub following: f64,
    /// Successful runs; failed slots are excluded from every rate.
    pub n_runs: u32,
    pub n_failed: u32,
    pub n_overtake: u32,
    pub overtake_rate: f64,
    /// Runs matching the expert reference decision, when one is configured.
    pub n_aligned: Option<u32>,
    pub mean_latency_s: f64,
    pub legality_rate: f64,
}

impl CellSummary {
    pub fn key(&self) -> ConditionKey {
        ConditionKey {
            scenario: self.scenario.clone(),
            model: self.model.clone(),
            strategy: self.strategy,
            reasons: self.reasons,
            length: self.length,
            ttc: self.ttc,
            behind: self.behind,
            urgency: self.urgency,
            following: self.following,
            repetition: 0,
        }
    }
}

fn ratio(num: u32, den: u32) -> f64 {
    if den == 0 {
        f64::NAN
    } else {
        f64::from(num) / f64::from(den)
    }
}

/// One summary per planned cell, in plan order. Records of cells outside
/// the plan are ignored.
pub fn summarize(
    cells: &[ConditionKey],
    records: &[RunRecord],
    expert: Option<Decision>,
) -> Vec<CellSummary> {
    let mut by_cell: HashMap<String, Vec<&RunRecord>> = HashMap::new();
    for r in records {
        by_cell.entry(r.key.cell_id()).or_default().push(r);
    }
    cells
        .iter()
        .map(|key| {
            let cell_id = key.cell_id();
            let rs = by_cell.get(&cell_id).map_or(&[][..], Vec::as_slice);
            let ok: Vec<&RunRecord> = rs.iter().copied().filter(|r| r.is_ok()).collect();
            let n_runs = ok.len() as u32;
            let count = |d: Decision| ok.iter().filter(|r| r.decision == Some(d)).count() as u32;
            let n_overtake = count(Decision::Overtake);
            let n_legal = ok.iter().filter(|r| r.legality_acknowledged).count() as u32;
            let mean_latency_s = if ok.is_empty() {
                f64::NAN
            } else {
                ok.iter().map(|r| r.latency_s).sum::<f64>() / ok.len() as f64
            };
            CellSummary {
                cell_id,
                scenario: key.scenario.clone(),
                model: key.model.clone(),
                strategy: key.strategy,
                reasons: key.reasons,
                length: key.length,
                ttc: key.ttc,
                behind: key.behind,
                urgency: key.urgency,
                following: key.following,
                n_runs,
                n_failed: rs.len() as u32 - n_runs,
                n_overtake,
                overtake_rate: ratio(n_overtake, n_runs),
                n_aligned: expert.map(count),
                mean_latency_s,
                legality_rate: ratio(n_legal, n_runs),
            }
        })
        .collect()
}

/// Checks that every cell holds exactly `n` records and that each summary
/// agrees with a recount of the raw records.
pub fn verify_summaries(summaries: &[CellSummary], records: &[RunRecord], n: u32) -> Result<()> {
    let mut per_cell: HashMap<String, (u32, u32, u32)> = HashMap::new();
    for r in records {
        let e = per_cell.entry(r.key.cell_id()).or_default();
        e.0 += 1;
        if r.is_ok() {
            e.1 += 1;
            if r.decision == Some(Decision::Overtake) {
                e.2 += 1;
            }
        }
    }
    for s in summaries {
        let (total, ok, overtake) = per_cell.get(&s.cell_id).copied().unwrap_or_default();
        if total != n {
            return Err(Error::Validation(format!("{}: {total} records, expected {n}", s.cell_id)));
        }
        let rate_ok = if ok == 0 {
            s.overtake_rate.is_nan()
        } else {
            s.overtake_rate == f64::from(overtake) / f64::from(ok)
        };
        if s.n_runs + s.n_failed != total || s.n_runs != ok || s.n_overtake != overtake || !rate_ok {
            return Err(Error::Validation(format!(
                "{}: summary disagrees with records ({overtake}/{ok} overtakes)",
                s.cell_id
            )));
        }
    }
    Ok(())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(Error::Csv)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path, hint: &str) -> Result<Vec<T>> {
    if !path.exists() {
        return Err(Error::MissingInput {
            what: path
                .file_name()
                .map_or_else(String::new, |n| n.to_string_lossy().into_owned()),
            path: path.to_path_buf(),
            hint: hint.to_owned(),
        });
    }
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?)
}

pub fn write_summaries(path: &Path, summaries: &[CellSummary]) -> Result<()> {
    write_csv(path, summaries)
}

pub fn read_summaries(path: &Path, hint: &str) -> Result<Vec<CellSummary>> {
    read_csv(path, hint)
}

pub fn write_rows(path: &Path, rows: &[Stage2Row]) -> Result<()> {
    write_csv(path, rows)
}

pub fn read_rows(path: &Path, hint: &str) -> Result<Vec<Stage2Row>> {
    read_csv(path, hint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::EndpointSnapshot;
    use crate::orchestrator::RunStatus;
    use crate::scenario::preset_scene;

    fn record(rep: u32, decision: Option<Decision>) -> RunRecord {
        let scene = preset_scene(&ScenarioId::Baseline).unwrap();
        RunRecord {
            key: ConditionKey::for_scene(&scene, "m", ThoughtKind::TreeOfThought, true, LengthRegime::NoLimit, rep),
            status: if decision.is_some() { RunStatus::Ok } else { RunStatus::Failed },
            decision,
            explanation: String::new(),
            legality_acknowledged: rep.is_multiple_of(2),
            latency_s: f64::from(rep),
            word_count: 0,
            attempts: 1,
            raw: String::new(),
            endpoint: EndpointSnapshot { model: "m".into(), temperature: 1.0, top_p: 1.0 },
            timestamp: String::new(),
        }
    }

    #[test]
    fn failed_runs_are_excluded_from_rates() {
        let records = vec![
            record(0, Some(Decision::Overtake)),
            record(1, Some(Decision::StayBehind)),
            record(2, Some(Decision::Overtake)),
            record(3, None),
        ];
        let cells = vec![records[0].key.with_repetition(0)];
        let s = &summarize(&cells, &records, Some(Decision::Overtake))[0];
        assert_eq!((s.n_runs, s.n_failed, s.n_overtake), (3, 1, 2));
        assert_eq!(s.overtake_rate, 2.0 / 3.0);
        assert_eq!(s.n_aligned, Some(2));
        assert_eq!(s.mean_latency_s, 1.0);
        assert_eq!(s.legality_rate, 2.0 / 3.0);
        verify_summaries(std::slice::from_ref(s), &records, 4).unwrap();
        assert!(verify_summaries(std::slice::from_ref(s), &records, 5).is_err());
    }

    #[test]
    fn empty_cell_has_nan_rates() {
        let cells = vec![record(0, None).key];
        let s = &summarize(&cells, &[], None)[0];
        assert_eq!(s.n_runs, 0);
        assert!(s.overtake_rate.is_nan());
        assert_eq!(s.n_aligned, None);
    }

    #[test]
    fn summaries_round_trip_through_csv() {
        let records: Vec<_> = (0..3).map(|i| record(i, Some(Decision::Overtake))).collect();
        let cells = vec![records[0].key.clone()];
        let summaries = summarize(&cells, &records, None);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write_summaries(&path, &summaries).unwrap();
        assert_eq!(read_summaries(&path, "").unwrap(), summaries);
    }

    #[test]
    fn missing_file_names_the_hint() {
        match read_rows(Path::new("/nonexistent/rows.csv"), "run sweep first") {
            Err(Error::MissingInput { hint, .. }) => assert_eq!(hint, "run sweep first"),
            other => panic!("{other:?}"),
        }
    }
}
