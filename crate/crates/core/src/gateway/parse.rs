use std::sync::LazyLock;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    Overtake,
    StayBehind,
}

impl Decision {
    /// Case number in the mandated output format.
    pub fn case_number(self) -> u8 {
        match self {
            Decision::Overtake => 1,
            Decision::StayBehind => 2,
        }
    }

    pub fn from_case(case: u8) -> Option<Self> {
        match case {
            1 => Some(Decision::Overtake),
            2 => Some(Decision::StayBehind),
            _ => None,
        }
    }

    pub fn decision_line(self) -> String {
        format!("Decision: case {}", self.case_number())
    }
}

// Emphasis characters (`*`, `_`, backticks) may surround or split the
// marker, e.g. "**Decision:** case 1" or "__DECISION: CASE 2__".
static DECISION_LINE: LazyLock<Regex> = LazyLock::new(|| {
    RegexBuilder::new(
        r"(?:^|[^a-z0-9])(?P<marker>[*_`]*decision[*_`\s]*:[*_`\s]*case[*_`\s]*(?P<case>[12])[*_`]*)(?:$|[^0-9])",
    )
        .case_insensitive(true)
        .build()
        .expect("static regex")
});

/// Locates the last decision marker and returns it with the rest of the text
/// as explanation.
pub fn parse_decision(raw: &str) -> Result<(Decision, String)> {
    let last = DECISION_LINE
        .captures_iter(raw)
        .last()
        .ok_or_else(|| Error::Parse {
            raw: raw.to_owned(),
        })?;
    let whole = last.name("marker").expect("marker group always participates");
    let case: u8 = last["case"].parse().expect("regex admits only 1 or 2");
    let decision = Decision::from_case(case).expect("regex admits only 1 or 2");

    let before = raw[..whole.start()].trim_end();
    let after = raw[whole.end()..]
        .trim_start_matches(|c: char| c.is_whitespace() || matches!(c, '-' | '–' | '—' | ':' | '.' | ','))
        .trim_end();
    let explanation = match (before.is_empty(), after.is_empty()) {
        (true, _) => after.to_owned(),
        (false, true) => before.to_owned(),
        (false, false) => format!("{before}\n{after}"),
    };
    Ok((decision, explanation))
}
