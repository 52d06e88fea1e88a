//! Deterministic scripted endpoint.
//!
//! Every slot draws from its own ChaCha stream seeded by
//! `sha256(seed, cell id, repetition)`, so results do not depend on
//! execution order, concurrency or resumption.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::parse::Decision;
use super::{QueryRequest, RawReply, Responder};
use crate::error::{Error, Result};
use crate::key::ConditionKey;
use crate::prompt::{LengthRegime, ThoughtKind};
use crate::scenario::ScenarioId;
use crate::stats::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MockOutput {
    #[serde(rename = "case1")]
    Case1,
    #[serde(rename = "case2")]
    Case2,
    /// Reply without a decision line.
    #[serde(rename = "malformed")]
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Behavior {
    /// Replays `decisions[repetition % len]`.
    Sequence { decisions: Vec<MockOutput> },
    /// Independent Bernoulli draws with P(overtake) = rate.
    Rate { rate: f64 },
    /// Exactly `overtake` of every `of` consecutive repetitions overtake,
    /// in a seeded order.
    Count { overtake: u32, of: u32 },
    /// Bernoulli draws at the logistic probability of the slot's context.
    /// Predictors: intercept, normalized ttc, behind, urgency, normalized
    /// following time, length flag.
    Logit {
        coefficients: Vec<f64>,
        ttc_range: [f64; 2],
        following_range: [f64; 2],
    },
}

/// Partial condition key; unset fields match anything.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CellMatch {
    /// Stage directory the query comes from, e.g. `stage1_screen`. The same
    /// cell can occur in more than one stage.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strategy: Option<ThoughtKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reasons: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub length: Option<LengthRegime>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ttc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub behind: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub urgency: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub following: Option<f64>,
}

impl CellMatch {
    pub fn matches(&self, key: &ConditionKey) -> bool {
        fn eq<T: PartialEq>(want: &Option<T>, have: &T) -> bool {
            want.as_ref().is_none_or(|w| w == have)
        }
        eq(&self.scenario, &key.scenario)
            && eq(&self.model, &key.model)
            && eq(&self.strategy, &key.strategy)
            && eq(&self.reasons, &key.reasons)
            && eq(&self.length, &key.length)
            && self.ttc.is_none_or(|t| key.ttc == Some(t))
            && eq(&self.behind, &key.behind)
            && eq(&self.urgency, &key.urgency)
            && eq(&self.following, &key.following)
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(rename = "match", default)]
    pub matcher: CellMatch,
    pub behavior: Behavior,
    /// Overrides the script seed for this rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Reported latency in seconds; 0 when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_s: Option<f64>,
    /// Whether generated explanations mention the double solid line.
    #[serde(default = "default_true")]
    pub acknowledge_legality: bool,
}

/// Rules are tried in order; the first whose `match` fits the slot wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub rules: Vec<MockRule>,
}

impl MockScript {
    pub fn validate(&self) -> Result<()> {
        for (i, rule) in self.rules.iter().enumerate() {
            let bad = |msg: &str| Err(Error::Config(format!("mock rule {i}: {msg}")));
            match &rule.behavior {
                Behavior::Sequence { decisions } if decisions.is_empty() => {
                    return bad("sequence is empty")
                }
                Behavior::Rate { rate } if !(0.0..=1.0).contains(rate) => {
                    return bad("rate must lie in [0, 1]")
                }
                Behavior::Count { overtake, of } if *of == 0 || overtake > of => {
                    return bad("count needs 0 <= overtake <= of and of > 0")
                }
                Behavior::Logit {
                    coefficients,
                    ttc_range,
                    following_range,
                } => {
                    if coefficients.len() != 6 {
                        return bad("logit needs 6 coefficients");
                    }
                    if ttc_range[1] <= ttc_range[0] || following_range[1] <= following_range[0] {
                        return bad("logit ranges must be increasing");
                    }
                }
                _ => {}
            }
            if rule.latency_s.is_some_and(|l| !(l.is_finite() && l >= 0.0)) {
                return bad("latency_s must be finite and >= 0");
            }
        }
        Ok(())
    }

    fn rule_for(&self, stage: Option<&str>, key: &ConditionKey) -> Result<&MockRule> {
        self.rules
            .iter()
            .find(|r| {
                r.matcher.stage.as_deref().is_none_or(|s| stage == Some(s)) && r.matcher.matches(key)
            })
            .ok_or_else(|| {
                Error::Config(format!("condition missing from mock script: {}", key.cell_id()))
            })
    }

    /// Scripted output for one slot outside any stage.
    pub fn output_for(&self, key: &ConditionKey) -> Result<MockOutput> {
        self.output_in_stage(None, key)
    }

    pub fn output_in_stage(&self, stage: Option<&str>, key: &ConditionKey) -> Result<MockOutput> {
        let rule = self.rule_for(stage, key)?;
        let seed = rule.seed.unwrap_or(self.seed);
        let cell = key.cell_id();
        let overtake = match &rule.behavior {
            Behavior::Sequence { decisions } => {
                return Ok(decisions[key.repetition as usize % decisions.len()]);
            }
            Behavior::Rate { rate } => slot_rng(seed, &cell, key.repetition).random::<f64>() < *rate,
            Behavior::Count { overtake, of } => {
                let mut order: Vec<u32> = (0..*of).collect();
                order.shuffle(&mut cell_rng(seed, &cell));
                order[(key.repetition % of) as usize] < *overtake
            }
            Behavior::Logit {
                coefficients,
                ttc_range,
                following_range,
            } => {
                let ttc = key.ttc.ok_or_else(|| {
                    Error::Config(format!("logit mock needs an oncoming vehicle: {cell}"))
                })?;
                let x = [
                    1.0,
                    (ttc - ttc_range[0]) / (ttc_range[1] - ttc_range[0]),
                    f64::from(u8::from(key.behind)),
                    f64::from(u8::from(key.urgency)),
                    (key.following - following_range[0]) / (following_range[1] - following_range[0]),
                    f64::from(key.length.flag()),
                ];
                let eta: f64 = coefficients.iter().zip(x).map(|(b, v)| b * v).sum();
                slot_rng(seed, &cell, key.repetition).random::<f64>() < sigmoid(eta)
            }
        };
        Ok(if overtake {
            MockOutput::Case1
        } else {
            MockOutput::Case2
        })
    }
}

fn seed_bytes(parts: &[&[u8]]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    hasher.finalize().into()
}

/// RNG for one repetition of one cell.
pub(crate) fn slot_rng(seed: u64, cell_id: &str, repetition: u32) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(seed_bytes(&[
        &seed.to_le_bytes(),
        cell_id.as_bytes(),
        &repetition.to_le_bytes(),
    ]))
}

/// RNG shared by all repetitions of one cell.
pub(crate) fn cell_rng(seed: u64, cell_id: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(seed_bytes(&[&seed.to_le_bytes(), cell_id.as_bytes(), b"cell"]))
}

/// Formats a well-formed (or deliberately malformed) model reply.
pub fn render_reply(output: MockOutput, acknowledge_legality: bool) -> String {
    let legal = "Crossing the double solid line is illegal.";
    match output {
        MockOutput::Case1 if acknowledge_legality => format!(
            "{legal} Given the available margin, the benefit of passing outweighs the violation.\n\n{}",
            Decision::Overtake.decision_line()
        ),
        MockOutput::Case1 => format!(
            "There is enough room to pass the cyclist safely.\n\n{}",
            Decision::Overtake.decision_line()
        ),
        MockOutput::Case2 if acknowledge_legality => format!(
            "{legal} Remaining behind the cyclist is the safer choice.\n\n{}",
            Decision::StayBehind.decision_line()
        ),
        MockOutput::Case2 => format!(
            "Remaining behind the cyclist is the safer choice.\n\n{}",
            Decision::StayBehind.decision_line()
        ),
        MockOutput::Malformed => "I cannot determine an action from the information given.".to_owned(),
    }
}

#[derive(Debug, Clone)]
pub struct MockEndpoint {
    script: MockScript,
}

impl MockEndpoint {
    pub fn new(script: MockScript) -> Result<Self> {
        script.validate()?;
        Ok(MockEndpoint { script })
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }
}

impl Responder for MockEndpoint {
    fn respond(&self, request: &QueryRequest<'_>) -> Result<RawReply> {
        let rule = self.script.rule_for(request.stage, request.key)?;
        let output = self.script.output_in_stage(request.stage, request.key)?;
        Ok(RawReply {
            text: render_reply(output, rule.acknowledge_legality),
            latency_s: Some(rule.latency_s.unwrap_or(0.0)),
        })
    }
}
