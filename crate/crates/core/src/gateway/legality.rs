use regex::{Regex, RegexBuilder};

use crate::error::{Error, Result};

/// Prefix marking a pattern as a regular expression instead of a substring.
pub const REGEX_PREFIX: &str = "re:";

pub fn default_patterns() -> Vec<String> {
    [
        "double solid",
        "illegal",
        "violates traffic rules",
        "against traffic rules",
        "not allowed",
        "prohibited",
    ]
    .into_iter()
    .map(str::to_owned)
    .collect()
}

/// Case-insensitive matcher for acknowledgments of the overtaking prohibition.
#[derive(Debug, Clone)]
pub struct LegalityMatcher {
    patterns: Vec<Regex>,
}

impl LegalityMatcher {
    /// Plain entries match as substrings; entries starting with `re:` are
    /// regular expressions.
    pub fn new<S: AsRef<str>>(patterns: &[S]) -> Result<Self> {
        if patterns.is_empty() {
            return Err(Error::Config("legality pattern list is empty".into()));
        }
        let patterns = patterns
            .iter()
            .map(|p| {
                let p = p.as_ref();
                let source = match p.strip_prefix(REGEX_PREFIX) {
                    Some(re) => re.to_owned(),
                    None => regex::escape(p),
                };
                RegexBuilder::new(&source)
                    .case_insensitive(true)
                    .build()
                    .map_err(|e| Error::Config(format!("bad legality pattern '{p}': {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LegalityMatcher { patterns })
    }

    pub fn matches(&self, explanation: &str) -> bool {
        self.patterns.iter().any(|re| re.is_match(explanation))
    }
}

pub fn check_legality_acknowledgment<S: AsRef<str>>(explanation: &str, patterns: &[S]) -> Result<bool> {
    Ok(LegalityMatcher::new(patterns)?.matches(explanation))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substring_match() {
        assert!(check_legality_acknowledgment("Crossing the double solid line is illegal", &["double solid"]).unwrap());
        assert!(check_legality_acknowledgment(
            "the maneuver violates traffic rules",
            &["violates traffic rules"]
        )
        .unwrap());
    }

    #[test]
    fn empty_text_never_matches() {
        assert!(!check_legality_acknowledgment("", &["double solid"]).unwrap());
    }

    #[test]
    fn case_insensitive_and_regex() {
        let m = LegalityMatcher::new(&["DOUBLE SOLID", r"re:\bcross(es|ing)?\b.*\bline\b"]).unwrap();
        assert!(m.matches("the Double Solid marking"));
        assert!(m.matches("crossing the centre line"));
        assert!(!m.matches("the road is clear"));
    }

    #[test]
    fn substring_patterns_are_literal() {
        let m = LegalityMatcher::new(&["a.b"]).unwrap();
        assert!(!m.matches("axb"));
        assert!(m.matches("a.b"));
    }

    #[test]
    fn empty_pattern_list_rejected() {
        let none: [&str; 0] = [];
        assert!(LegalityMatcher::new(&none).is_err());
    }
}
