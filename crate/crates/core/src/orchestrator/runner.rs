use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use super::store::{RecordStore, RunRecord, RunStatus};
use super::{now_rfc3339, StageContext};
use crate::error::{Error, Result};
use crate::gateway::{query, QueryRequest};
use crate::key::ConditionKey;
use crate::prompt::DecisionInstruction;
use crate::scenario::Scene;

/// One planned query slot. Instructions and scenes are shared by all
/// repetitions of a cell.
#[derive(Debug, Clone)]
pub struct Slot {
    pub stage: &'static str,
    pub key: ConditionKey,
    pub scene: Arc<Scene>,
    pub instruction: Arc<DecisionInstruction>,
}

/// Queries one slot. Replies without a decision line are re-queried up to
/// `parse_retries` times; after that the slot is recorded as failed.
pub fn run_slot(ctx: &StageContext<'_>, slot: &Slot) -> Result<RunRecord> {
    let endpoint = ctx.endpoint.with_model(&slot.key.model);
    let mut last_raw = String::new();
    for attempt in 0..=ctx.parse_retries {
        let request = QueryRequest {
            endpoint: &endpoint,
            key: &slot.key,
            attempt,
            stage: Some(slot.stage),
            instruction: &slot.instruction,
            scene: &slot.scene,
        };
        match query(ctx.responder, &request, ctx.legality.as_ref()) {
            Ok(parsed) => {
                return Ok(RunRecord {
                    key: slot.key.clone(),
                    status: RunStatus::Ok,
                    decision: Some(parsed.decision),
                    explanation: parsed.explanation,
                    legality_acknowledged: parsed.legality_acknowledged,
                    latency_s: parsed.latency_s,
                    word_count: parsed.word_count,
                    attempts: attempt + 1,
                    raw: parsed.raw,
                    endpoint: endpoint.snapshot(),
                    timestamp: now_rfc3339(),
                })
            }
            Err(Error::Parse { raw }) => {
                log::warn!("{}: no decision line (attempt {})", slot.key.slot_id(), attempt + 1);
                last_raw = raw;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(RunRecord {
        key: slot.key.clone(),
        status: RunStatus::Failed,
        decision: None,
        explanation: String::new(),
        legality_acknowledged: false,
        latency_s: 0.0,
        word_count: 0,
        attempts: ctx.parse_retries + 1,
        raw: last_raw,
        endpoint: endpoint.snapshot(),
        timestamp: now_rfc3339(),
    })
}

/// Runs every slot not yet in `store`, at most `ctx.concurrency` at a time.
///
/// Slots are processed in batches; each batch is appended in plan order once
/// it completes, so the file order never depends on scheduling. On a fatal
/// error the slots finished so far are still persisted before the error is
/// returned.
pub fn execute(ctx: &StageContext<'_>, slots: &[Slot], store: &mut RecordStore) -> Result<usize> {
    let pending: Vec<&Slot> = slots.iter().filter(|s| !store.contains(&s.key)).collect();
    if pending.len() < slots.len() {
        log::info!(
            "{}: resuming, {} of {} slots already recorded",
            store.path().display(),
            slots.len() - pending.len(),
            slots.len()
        );
    }
    let workers = ctx.concurrency.max(1);
    let mut written = 0;
    for batch in pending.chunks(workers * 8) {
        let results: Vec<Mutex<Option<Result<RunRecord>>>> =
            batch.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let abort = AtomicBool::new(false);
        std::thread::scope(|scope| {
            for _ in 0..workers.min(batch.len()) {
                scope.spawn(|| loop {
                    if abort.load(Ordering::SeqCst) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(slot) = batch.get(i) else { break };
                    let result = run_slot(ctx, slot);
                    if result.is_err() {
                        abort.store(true, Ordering::SeqCst);
                    }
                    *results[i].lock().expect("result slot") = Some(result);
                });
            }
        });

        let mut done = Vec::with_capacity(batch.len());
        let mut failure = None;
        for cell in results {
            match cell.into_inner().expect("result slot") {
                Some(Ok(record)) => done.push(record),
                Some(Err(e)) => {
                    failure.get_or_insert(e);
                }
                None => {}
            }
        }
        written += store.append(done)?;
        if let Some(e) = failure {
            return Err(e);
        }
    }
    Ok(written)
}
