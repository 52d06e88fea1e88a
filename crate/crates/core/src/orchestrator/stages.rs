use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::runner::{execute, Slot};
use super::store::{RecordStore, RunRecord};
use super::summary::{summarize, verify_summaries, write_rows, write_summaries, CellSummary};
use super::{
    stamp, StageContext, RECORDS_FILE, ROBUST_DIR, ROWS_FILE, SCREEN_DIR, SUMMARY_FILE, SWEEP_DIR,
};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::gateway::Decision;
use crate::key::ConditionKey;
use crate::prompt::{build_instruction, DecisionInstruction, LengthRegime, ReasonSet, ThoughtKind};
use crate::scenario::{enumerate_grid, ContextGrid, Scene, ScenarioId};
use crate::stats::Stage2Row;

/// Step 1: every model under each role-only strategy and each strategy
/// with the full reason set, on one scene.
#[derive(Debug, Clone)]
pub struct ScreenPlan {
    pub scene: Scene,
    pub models: Vec<String>,
    pub role_only_strategies: Vec<ThoughtKind>,
    pub strategies: Vec<ThoughtKind>,
    pub length: LengthRegime,
    pub n: u32,
    /// Reference decision for the alignment count.
    pub expert: Option<Decision>,
}

impl ScreenPlan {
    /// `length` overrides `screen.length`; one of the two must be given.
    pub fn from_config(config: &ExperimentConfig, length: Option<LengthRegime>) -> Result<Self> {
        let length = length.or(config.screen.length).ok_or_else(|| {
            Error::Config(
                "the screening length regime has no default: pass --length or set screen.length".into(),
            )
        })?;
        let scenario = &config.screen.scenario;
        Ok(ScreenPlan {
            scene: config.scene(scenario)?,
            models: config.screen.models.clone(),
            role_only_strategies: config.screen.role_only_strategies.clone(),
            strategies: config.screen.strategies.clone(),
            length,
            n: config.repetitions,
            expert: config.expert.get(scenario).copied(),
        })
    }
}

/// Step 2: one model with full reasons across scenes, strategies and lengths.
#[derive(Debug, Clone)]
pub struct RobustPlan {
    pub model: String,
    pub scenes: Vec<Scene>,
    pub strategies: Vec<ThoughtKind>,
    pub lengths: Vec<LengthRegime>,
    pub n: u32,
}

impl RobustPlan {
    pub fn from_config(config: &ExperimentConfig) -> Result<Self> {
        Ok(RobustPlan {
            model: config.robust_model(),
            scenes: config
                .robust
                .scenarios
                .iter()
                .map(|id| config.scene(id))
                .collect::<Result<_>>()?,
            strategies: config.robust.strategies.clone(),
            lengths: config.robust.lengths.clone(),
            n: config.repetitions,
        })
    }
}

/// Stage 2: the full-factorial grid around a base scene.
#[derive(Debug, Clone)]
pub struct SweepPlan {
    pub base: Scene,
    pub grid: ContextGrid,
    pub model: String,
    pub strategy: ThoughtKind,
    pub n: u32,
}

impl SweepPlan {
    pub fn from_config(config: &ExperimentConfig) -> Result<Self> {
        Ok(SweepPlan {
            base: config.scene(&config.sweep.scenario)?,
            grid: config.grid.clone(),
            model: config.sweep_model(),
            strategy: config.sweep.strategy,
            n: config.repetitions,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub summaries: Vec<CellSummary>,
    pub rows: Vec<Stage2Row>,
}

fn check_n(n: u32) -> Result<()> {
    if n == 0 {
        return Err(Error::Config("repetitions must be >= 1".into()));
    }
    Ok(())
}

fn repeat(stage: &'static str, cell: ConditionKey, scene: &Arc<Scene>, instruction: &Arc<DecisionInstruction>, n: u32) -> Vec<Slot> {
    (0..n)
        .map(|rep| Slot {
            stage,
            key: cell.with_repetition(rep),
            scene: scene.clone(),
            instruction: instruction.clone(),
        })
        .collect()
}

/// Runs the planned slots into `root/stage`, then summarizes and verifies.
fn run_cells(
    ctx: &StageContext<'_>,
    root: &Path,
    stage: &str,
    cells: &[ConditionKey],
    slots: &[Slot],
    n: u32,
    expert: Option<Decision>,
) -> Result<(Vec<CellSummary>, Vec<RunRecord>)> {
    let dir: PathBuf = root.join(stage);
    stamp_dir(root, stage, false)?;
    let mut store = RecordStore::open(&dir.join(RECORDS_FILE))?;
    let written = execute(ctx, slots, &mut store)?;
    log::info!("{stage}: {written} new records, {} cells", cells.len());

    let records: Vec<RunRecord> = {
        let wanted: std::collections::HashSet<String> = cells.iter().map(ConditionKey::cell_id).collect();
        store
            .records()
            .iter()
            .filter(|r| wanted.contains(&r.key.cell_id()))
            .cloned()
            .collect()
    };
    let summaries = summarize(cells, &records, expert);
    verify_summaries(&summaries, &records, n)?;
    write_summaries(&dir.join(SUMMARY_FILE), &summaries)?;
    stamp_dir(root, stage, true)?;
    Ok((summaries, records))
}

fn stamp_dir(root: &Path, stage: &str, finished: bool) -> Result<()> {
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    stamp(root, stage, finished)
}

pub fn run_stage1_step1(ctx: &StageContext<'_>, plan: &ScreenPlan, root: &Path) -> Result<Vec<CellSummary>> {
    check_n(plan.n)?;
    if plan.scene.scenario_id != ScenarioId::Baseline {
        log::warn!("screening on '{}' rather than the baseline scene", plan.scene.scenario_id);
    }
    let scene = Arc::new(plan.scene.clone());
    let mut cells = Vec::new();
    let mut slots = Vec::new();
    let conditions = [(false, &plan.role_only_strategies), (true, &plan.strategies)];
    for (with_reasons, strategies) in conditions {
        let reasons = if with_reasons {
            ReasonSet::full(&ctx.fragments)
        } else {
            ReasonSet::empty()
        };
        for &strategy in strategies {
            let instruction = Arc::new(build_instruction(&ctx.fragments, &reasons, strategy, plan.length)?);
            for model in &plan.models {
                let cell = ConditionKey::for_scene(&scene, model, strategy, with_reasons, plan.length, 0);
                slots.extend(repeat(SCREEN_DIR, cell.clone(), &scene, &instruction, plan.n));
                cells.push(cell);
            }
        }
    }
    Ok(run_cells(ctx, root, SCREEN_DIR, &cells, &slots, plan.n, plan.expert)?.0)
}

pub fn run_stage1_step2(ctx: &StageContext<'_>, plan: &RobustPlan, root: &Path) -> Result<Vec<CellSummary>> {
    check_n(plan.n)?;
    let reasons = ReasonSet::full(&ctx.fragments);
    let mut cells = Vec::new();
    let mut slots = Vec::new();
    for scene in &plan.scenes {
        let scene = Arc::new(scene.clone());
        for &strategy in &plan.strategies {
            for &length in &plan.lengths {
                let instruction = Arc::new(build_instruction(&ctx.fragments, &reasons, strategy, length)?);
                let cell = ConditionKey::for_scene(&scene, &plan.model, strategy, true, length, 0);
                slots.extend(repeat(ROBUST_DIR, cell.clone(), &scene, &instruction, plan.n));
                cells.push(cell);
            }
        }
    }
    Ok(run_cells(ctx, root, ROBUST_DIR, &cells, &slots, plan.n, None)?.0)
}

/// Runs the grid and writes `rows.csv`: one Bernoulli row per successful
/// run, in grid order then repetition order.
pub fn run_stage2(ctx: &StageContext<'_>, plan: &SweepPlan, root: &Path) -> Result<SweepOutput> {
    check_n(plan.n)?;
    if plan.base.scenario_id != ScenarioId::Oncoming {
        log::warn!("sweeping around '{}' rather than the oncoming scene", plan.base.scenario_id);
    }
    let reasons = ReasonSet::full(&ctx.fragments);
    let grid = enumerate_grid(&plan.grid, &plan.base)?;
    let mut instructions = Vec::new();
    for length in [LengthRegime::NoLimit, LengthRegime::FewSentences] {
        instructions.push(Arc::new(build_instruction(&ctx.fragments, &reasons, plan.strategy, length)?));
    }
    let mut cells = Vec::with_capacity(grid.len());
    let mut slots = Vec::with_capacity(grid.len() * plan.n as usize);
    for cell in grid {
        let scene = Arc::new(cell.scene);
        let key = ConditionKey::for_scene(&scene, &plan.model, plan.strategy, true, cell.length, 0);
        let instruction = &instructions[usize::from(cell.length.flag())];
        slots.extend(repeat(SWEEP_DIR, key.clone(), &scene, instruction, plan.n));
        cells.push(key);
    }
    let (summaries, records) = run_cells(ctx, root, SWEEP_DIR, &cells, &slots, plan.n, None)?;

    let position: std::collections::HashMap<String, usize> =
        slots.iter().enumerate().map(|(i, s)| (s.key.slot_id(), i)).collect();
    let mut ordered: Vec<&RunRecord> = records.iter().filter(|r| r.is_ok()).collect();
    ordered.sort_by_key(|r| position[&r.key.slot_id()]);
    let rows: Vec<Stage2Row> = ordered
        .into_iter()
        .map(|r| Stage2Row {
            ttc: r.key.ttc,
            behind: u8::from(r.key.behind),
            urgency: u8::from(r.key.urgency),
            following: r.key.following,
            length: r.key.length.flag(),
            y: u8::from(r.decision == Some(Decision::Overtake)),
        })
        .collect();
    write_rows(&root.join(SWEEP_DIR).join(ROWS_FILE), &rows)?;
    Ok(SweepOutput { summaries, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Behavior, CellMatch, MockEndpoint, MockOutput, MockRule, MockScript};
    use crate::orchestrator::read_records;
    use crate::scenario::preset_scene;

    fn constant(output: MockOutput) -> MockEndpoint {
        MockEndpoint::new(MockScript {
            seed: 1,
            rules: vec![MockRule {
                matcher: CellMatch::default(),
                behavior: Behavior::Sequence { decisions: vec![output] },
                seed: None,
                latency_s: Some(2.5),
                acknowledge_legality: true,
            }],
        })
        .unwrap()
    }

    #[test]
    fn single_run_screen_counts_alignment() {
        let mock = constant(MockOutput::Case1);
        let ctx = StageContext::new(&mock);
        let plan = ScreenPlan {
            scene: preset_scene(&ScenarioId::Baseline).unwrap(),
            models: vec!["m".into()],
            role_only_strategies: vec![],
            strategies: vec![ThoughtKind::NoThought],
            length: LengthRegime::NoLimit,
            n: 1,
            expert: Some(Decision::Overtake),
        };
        let dir = tempfile::tempdir().unwrap();
        let s = run_stage1_step1(&ctx, &plan, dir.path()).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].n_aligned, Some(1));
        assert_eq!(s[0].mean_latency_s, 2.5);
    }

    #[test]
    fn robust_stage_has_twelve_cells() {
        let mock = constant(MockOutput::Case2);
        let ctx = StageContext::new(&mock);
        let plan = RobustPlan::from_config(&ExperimentConfig { repetitions: 2, ..Default::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let s = run_stage1_step2(&ctx, &plan, dir.path()).unwrap();
        assert_eq!(s.len(), 12);
        assert!(s.iter().all(|c| c.overtake_rate == 0.0 && c.n_runs == 2));
        assert_eq!(read_records(&dir.path().join(ROBUST_DIR).join(RECORDS_FILE)).unwrap().len(), 24);
    }

    #[test]
    fn sweep_rows_follow_grid_order() {
        let mock = constant(MockOutput::Case1);
        let ctx = StageContext { concurrency: 3, ..StageContext::new(&mock) };
        let plan = SweepPlan::from_config(&ExperimentConfig { repetitions: 2, ..Default::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = run_stage2(&ctx, &plan, dir.path()).unwrap();
        assert_eq!(out.summaries.len(), 120);
        assert_eq!(out.rows.len(), 240);
        assert!(out.rows.iter().all(|r| r.y == 1));
        assert_eq!(out.rows[0].length, 0);
        assert_eq!(out.rows[2].length, 1);
    }

    #[test]
    fn malformed_slots_are_reported_not_counted() {
        let mock = constant(MockOutput::Malformed);
        let ctx = StageContext { parse_retries: 1, ..StageContext::new(&mock) };
        let plan = ScreenPlan {
            scene: preset_scene(&ScenarioId::Baseline).unwrap(),
            models: vec!["m".into()],
            role_only_strategies: vec![ThoughtKind::NoThought],
            strategies: vec![],
            length: LengthRegime::FewSentences,
            n: 3,
            expert: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let s = run_stage1_step1(&ctx, &plan, dir.path()).unwrap();
        assert_eq!((s[0].n_runs, s[0].n_failed), (0, 3));
    }

    #[test]
    fn screen_requires_a_length() {
        assert!(matches!(
            ScreenPlan::from_config(&ExperimentConfig::default(), None),
            Err(Error::Config(_))
        ));
    }
}
