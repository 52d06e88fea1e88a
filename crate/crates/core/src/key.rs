use serde::{Deserialize, Serialize};

use crate::prompt::{LengthRegime, ThoughtKind};
use crate::scenario::{Scene, ScenarioId};

/// Identifies one run slot. Dropping `repetition` identifies the cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionKey {
    pub scenario: ScenarioId,
    pub model: String,
    pub strategy: ThoughtKind,
    pub reasons: bool,
    pub length: LengthRegime,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ttc: Option<f64>,
    pub behind: bool,
    pub urgency: bool,
    pub following: f64,
    pub repetition: u32,
}

impl ConditionKey {
    pub fn for_scene(
        scene: &Scene,
        model: &str,
        strategy: ThoughtKind,
        reasons: bool,
        length: LengthRegime,
        repetition: u32,
    ) -> Self {
        ConditionKey {
            scenario: scene.scenario_id.clone(),
            model: model.to_owned(),
            strategy,
            reasons,
            length,
            ttc: scene.context.ttc_oncoming,
            behind: scene.context.vehicle_behind,
            urgency: scene.context.passenger_urgency,
            following: scene.context.following_time,
            repetition,
        }
    }

    pub fn cell_id(&self) -> String {
        let ttc = self
            .ttc
            .map_or_else(|| "none".to_owned(), |t| format!("{t}"));
        format!(
            "scenario={};model={};strategy={};reasons={};length={};ttc={};behind={};urgency={};following={}",
            self.scenario,
            self.model,
            self.strategy,
            u8::from(self.reasons),
            self.length.flag(),
            ttc,
            u8::from(self.behind),
            u8::from(self.urgency),
            self.following,
        )
    }

    pub fn slot_id(&self) -> String {
        format!("{};rep={}", self.cell_id(), self.repetition)
    }

    pub fn with_repetition(&self, repetition: u32) -> Self {
        ConditionKey {
            repetition,
            ..self.clone()
        }
    }
}
