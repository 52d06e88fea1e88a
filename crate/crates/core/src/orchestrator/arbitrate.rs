use crate::error::{Error, Result};
use crate::gateway::{query, Decision, LegalityMatcher, ModelEndpoint, QueryRequest, Responder};
use crate::key::ConditionKey;
use crate::prompt::DecisionInstruction;
use crate::scenario::Scene;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Arbitration {
    pub decision: Decision,
    /// Decisions in query order; two when they agreed, three otherwise.
    pub votes: Vec<Decision>,
}

/// Stage name sent with arbitration queries.
pub const ARBITRATE_STAGE: &str = "arbitrate";

/// Queries twice and, if the two decisions differ, a third time to break
/// the tie. Vote `i` is sent with repetition index `i` of `key`.
pub fn arbitrate(
    responder: &dyn Responder,
    endpoint: &ModelEndpoint,
    legality: Option<&LegalityMatcher>,
    instruction: &DecisionInstruction,
    scene: &Scene,
    key: &ConditionKey,
) -> Result<Arbitration> {
    let vote = |i: u32| -> Result<Decision> {
        let key = key.with_repetition(i);
        let request = QueryRequest {
            endpoint,
            key: &key,
            attempt: 0,
            stage: Some(ARBITRATE_STAGE),
            instruction,
            scene,
        };
        query(responder, &request, legality)
            .map(|r| r.decision)
            .map_err(|e| Error::Arbitration(Box::new(e)))
    };
    let mut votes = vec![vote(0)?, vote(1)?];
    if votes[0] != votes[1] {
        votes.push(vote(2)?);
    }
    let overtakes = votes.iter().filter(|&&d| d == Decision::Overtake).count();
    let decision = if 2 * overtakes > votes.len() {
        Decision::Overtake
    } else {
        Decision::StayBehind
    };
    Ok(Arbitration { decision, votes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Behavior, CellMatch, MockEndpoint, MockOutput, MockRule, MockScript};
    use crate::prompt::{build_instruction, LengthRegime, PromptFragments, ReasonSet, ThoughtKind};
    use crate::scenario::{preset_scene, ScenarioId};

    fn run(decisions: Vec<MockOutput>) -> Result<Arbitration> {
        let mock = MockEndpoint::new(MockScript {
            seed: 0,
            rules: vec![MockRule {
                matcher: CellMatch::default(),
                behavior: Behavior::Sequence { decisions },
                seed: None,
                latency_s: None,
                acknowledge_legality: false,
            }],
        })
        .unwrap();
        let f = PromptFragments::default();
        let instruction =
            build_instruction(&f, &ReasonSet::full(&f), ThoughtKind::TreeOfThought, LengthRegime::NoLimit).unwrap();
        let scene = preset_scene(&ScenarioId::Oncoming).unwrap();
        let key = ConditionKey::for_scene(&scene, "m", ThoughtKind::TreeOfThought, true, LengthRegime::NoLimit, 0);
        arbitrate(&mock, &ModelEndpoint::default(), None, &instruction, &scene, &key)
    }

    #[test]
    fn agreement_stops_after_two() {
        use MockOutput::*;
        let a = run(vec![Case1, Case1, Case2]).unwrap();
        assert_eq!((a.decision, a.votes.len()), (Decision::Overtake, 2));
        let a = run(vec![Case2, Case2, Case1]).unwrap();
        assert_eq!((a.decision, a.votes.len()), (Decision::StayBehind, 2));
    }

    #[test]
    fn disagreement_takes_majority_of_three() {
        use MockOutput::*;
        let a = run(vec![Case1, Case2, Case2]).unwrap();
        assert_eq!(a.decision, Decision::StayBehind);
        assert_eq!(a.votes.len(), 3);
    }

    #[test]
    fn malformed_vote_is_an_arbitration_error() {
        use MockOutput::*;
        match run(vec![Case1, Malformed]) {
            Err(Error::Arbitration(inner)) => assert!(matches!(*inner, Error::Parse { .. })),
            other => panic!("{other:?}"),
        }
    }
}
