use std::path::Path;
use std::sync::atomic::{AtomicU32, Ordering};

use care_core::config::ExperimentConfig;
use care_core::gateway::{QueryRequest, RawReply, Responder};
use care_core::orchestrator::{
    read_records, read_summaries, record_provenance, run_stage1_step1, run_stage1_step2, run_stage2,
    RobustPlan, ScreenPlan, StageContext, SweepPlan, RECORDS_FILE, ROBUST_DIR, SCREEN_DIR, SUMMARY_FILE,
    SWEEP_DIR,
};
use care_core::prompt::LengthRegime;
use care_core::report::{cmd_report, cmd_validate};
use care_core::scenario::ScenarioId;
use care_core::Error;
use proptest::prelude::*;

fn shipped_config() -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/replay.toml");
    ExperimentConfig::load(&path).unwrap()
}

struct Interrupting<'a> {
    inner: &'a dyn Responder,
    limit: u32,
    calls: AtomicU32,
}

impl Responder for Interrupting<'_> {
    fn respond(&self, request: &QueryRequest<'_>) -> care_core::Result<RawReply> {
        if self.calls.fetch_add(1, Ordering::SeqCst) >= self.limit {
            return Err(Error::Transient("connection dropped".into()));
        }
        self.inner.respond(request)
    }
}

#[test]
fn shipped_replay_reproduces_robustness_table() {
    let config = shipped_config();
    let dir = tempfile::tempdir().unwrap();
    let responder = config.responder().unwrap();
    let ctx = StageContext::from_config(&config, responder.as_ref()).unwrap();
    let summaries = run_stage1_step2(&ctx, &RobustPlan::from_config(&config).unwrap(), dir.path()).unwrap();
    let find = |scenario: ScenarioId, strategy: &str, length: LengthRegime| {
        summaries
            .iter()
            .find(|s| s.scenario == scenario && s.strategy.as_str() == strategy && s.length == length)
            .unwrap()
            .clone()
    };
    let s = find(ScenarioId::Oncoming, "tot", LengthRegime::NoLimit);
    assert_eq!((s.n_overtake, s.n_runs), (28, 30));
    assert!((s.mean_latency_s - 19.568).abs() < 1e-9);
    let s = find(ScenarioId::Oncoming, "cot", LengthRegime::FewSentences);
    assert_eq!(s.overtake_rate, 0.0);
    assert_eq!(summaries.iter().map(|s| s.legality_rate).sum::<f64>(), 12.0);
}

#[test]
fn stage_specific_mock_rules_separate_shared_cells() {
    let config = shipped_config();
    let dir = tempfile::tempdir().unwrap();
    let responder = config.responder().unwrap();
    let ctx = StageContext::from_config(&config, responder.as_ref()).unwrap();
    let screen = run_stage1_step1(
        &ctx,
        &ScreenPlan::from_config(&config, Some(LengthRegime::NoLimit)).unwrap(),
        dir.path(),
    )
    .unwrap();
    let robust = run_stage1_step2(&ctx, &RobustPlan::from_config(&config).unwrap(), dir.path()).unwrap();
    // the same condition, recorded under two stages
    let in_screen = screen.iter().find(|s| s.reasons && s.strategy.as_str() == "cot" && s.model == "gpt-4.1").unwrap();
    let in_robust = robust
        .iter()
        .find(|s| s.scenario == ScenarioId::Baseline && s.strategy.as_str() == "cot" && s.length == LengthRegime::NoLimit)
        .unwrap();
    assert_eq!(in_screen.cell_id, in_robust.cell_id);
    assert_eq!((in_screen.n_overtake, in_robust.n_overtake), (30, 15));
    assert!(dir.path().join(SCREEN_DIR).join(RECORDS_FILE).exists());
    assert!(dir.path().join(ROBUST_DIR).join(SUMMARY_FILE).exists());
}

#[test]
fn report_and_validate_over_a_full_replay() {
    let config = shipped_config();
    let dir = tempfile::tempdir().unwrap();
    record_provenance(dir.path(), &config).unwrap();
    let responder = config.responder().unwrap();
    let ctx = StageContext::from_config(&config, responder.as_ref()).unwrap();
    run_stage1_step1(&ctx, &ScreenPlan::from_config(&config, Some(LengthRegime::NoLimit)).unwrap(), dir.path()).unwrap();
    run_stage1_step2(&ctx, &RobustPlan::from_config(&config).unwrap(), dir.path()).unwrap();
    run_stage2(&ctx, &SweepPlan::from_config(&config).unwrap(), dir.path()).unwrap();

    let bundle = cmd_report(dir.path()).unwrap();
    let plots: Vec<_> = bundle.files.iter().filter(|f| f.starts_with(dir.path().join("plot"))).collect();
    assert_eq!(plots.len(), 6);
    for plot in plots {
        let text = std::fs::read_to_string(plot).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "behind,urgency,ttc,overtake_rate,n_runs");
        // 4 (behind, urgency) curves of 5 ttc points
        assert_eq!(lines.len(), 1 + 20);
        let curves: std::collections::BTreeSet<&str> = lines[1..].iter().map(|l| &l[..3]).collect();
        assert_eq!(curves.len(), 4);
    }
    let robust = std::fs::read_to_string(dir.path().join("report/calibration_robust.csv")).unwrap();
    assert!(robust.contains("Scenario 2 (Oncoming),Role + R + ToT,19.568,93.33,5.630,0.00"), "{robust}");
    let screen = std::fs::read_to_string(dir.path().join("report/calibration_screen.csv")).unwrap();
    assert_eq!(screen.lines().count(), 1 + 12);
    assert!(screen.contains("Role + R + CoT,gpt-4.1,30,30,0"));

    let validity = cmd_validate(dir.path(), None).unwrap();
    assert_eq!(validity.rows.len(), 12 + 12 + 120);
    assert_eq!(validity.flagged().count(), 0);
}

#[test]
fn validate_flags_one_missing_acknowledgment() {
    let config = shipped_config();
    let dir = tempfile::tempdir().unwrap();
    record_provenance(dir.path(), &config).unwrap();
    let responder = config.responder().unwrap();
    let ctx = StageContext::from_config(&config, responder.as_ref()).unwrap();
    run_stage1_step2(&ctx, &RobustPlan::from_config(&config).unwrap(), dir.path()).unwrap();

    // strip the acknowledgment from one explanation
    let path = dir.path().join(ROBUST_DIR).join(RECORDS_FILE);
    let mut records = read_records(&path).unwrap();
    records[0].explanation = "Remaining behind the cyclist is the safer choice.".into();
    let text: String = records.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
    std::fs::write(&path, text).unwrap();

    let report = cmd_validate(dir.path(), None).unwrap();
    let flagged: Vec<_> = report.flagged().collect();
    assert_eq!(flagged.len(), 1);
    assert_eq!(flagged[0].cell_id, records[0].key.cell_id());
    assert!((flagged[0].legality_rate - 29.0 / 30.0).abs() < 1e-12);
    assert_eq!(care_core::report::format::percent(flagged[0].legality_rate, 1), "96.7");

    assert_eq!(cmd_validate(dir.path(), Some(0.9)).unwrap().flagged().count(), 0);
}

#[test]
fn validate_without_patterns_is_skipped() {
    let mut config = ExperimentConfig::default();
    config.validation.patterns.clear();
    let dir = tempfile::tempdir().unwrap();
    record_provenance(dir.path(), &config).unwrap();
    let report = cmd_validate(dir.path(), None).unwrap();
    assert!(report.skipped);
    assert!(report.rows.is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Interrupting a sweep anywhere and resuming with any concurrency
    /// yields the same records and summaries as one uninterrupted run.
    #[test]
    fn resume_matches_uninterrupted(limit in 0u32..240, first in 1usize..6, second in 1usize..6) {
        let mut config = shipped_config();
        config.repetitions = 2;
        let plan = SweepPlan::from_config(&config).unwrap();
        let responder = config.responder().unwrap();

        let reference = tempfile::tempdir().unwrap();
        let ctx = StageContext { concurrency: 1, ..StageContext::from_config(&config, responder.as_ref()).unwrap() };
        let expected = run_stage2(&ctx, &plan, reference.path()).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let flaky = Interrupting { inner: responder.as_ref(), limit, calls: AtomicU32::new(0) };
        let mut endpoint_ctx = StageContext::from_config(&config, &flaky).unwrap();
        endpoint_ctx.concurrency = first;
        endpoint_ctx.endpoint.max_retries = 0;
        prop_assert!(run_stage2(&endpoint_ctx, &plan, dir.path()).is_err());

        let ctx = StageContext { concurrency: second, ..StageContext::from_config(&config, responder.as_ref()).unwrap() };
        let resumed = run_stage2(&ctx, &plan, dir.path()).unwrap();
        prop_assert_eq!(&resumed.summaries, &expected.summaries);
        prop_assert_eq!(&resumed.rows, &expected.rows);

        let records = read_records(&dir.path().join(SWEEP_DIR).join(RECORDS_FILE)).unwrap();
        let mut slots: Vec<String> = records.iter().map(|r| r.key.slot_id()).collect();
        slots.sort();
        slots.dedup();
        prop_assert_eq!(slots.len(), 240);
        prop_assert_eq!(records.len(), 240);
        let on_disk = read_summaries(&dir.path().join(SWEEP_DIR).join(SUMMARY_FILE), "").unwrap();
        prop_assert_eq!(on_disk, expected.summaries);
    }
}
