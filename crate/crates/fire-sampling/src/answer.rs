//! Answer extraction and canonicalization.
//!
//! Extraction is total: every generation maps to either an answer string or
//! the single "unparseable" bucket (`None`). Canonicalization trims
//! whitespace and normalizes plain decimal numerals by their exact decimal
//! string ("3.0" and "3" collapse; "007" becomes "7"; "-0" becomes "0"),
//! so numerically equal answers land in the same bucket without a float
//! round trip.

use regex::Regex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExtractorError {
    #[error("invalid extraction regex: {0}")]
    BadRegex(String),
    #[error("extraction regex needs exactly one capture group")]
    MissingCaptureGroup,
}

/// How to pull the final answer out of generated text.
#[derive(Debug, Clone)]
pub enum AnswerExtractor {
    /// Last match of a user pattern; the answer is capture group 1.
    Regex(Regex),
    /// Last plain decimal numeral in the text.
    LastNumber,
    /// The whole trimmed text, handed to an external checker as-is.
    Passthrough,
}

impl AnswerExtractor {
    pub fn regex(pattern: &str) -> Result<Self, ExtractorError> {
        let re = Regex::new(pattern).map_err(|e| ExtractorError::BadRegex(e.to_string()))?;
        if re.captures_len() < 2 {
            return Err(ExtractorError::MissingCaptureGroup);
        }
        Ok(AnswerExtractor::Regex(re))
    }

    /// Extract an answer; `None` means unparseable.
    pub fn extract(&self, text: &str) -> Option<String> {
        match self {
            AnswerExtractor::Regex(re) => re
                .captures_iter(text)
                .last()
                .and_then(|c| c.get(1))
                .map(|m| m.as_str().trim().to_string())
                .filter(|s| !s.is_empty()),
            AnswerExtractor::LastNumber => last_number(text),
            AnswerExtractor::Passthrough => {
                let trimmed = text.trim();
                if trimmed.is_empty() {
                    None
                } else {
                    Some(trimmed.to_string())
                }
            }
        }
    }
}

fn last_number(text: &str) -> Option<String> {
    // Compiled on the fly; extraction is not on the sampling hot path.
    let re = Regex::new(r"-?\d+(?:\.\d+)?").unwrap();
    re.find_iter(text).last().map(|m| m.as_str().to_string())
}

/// Canonical form used for answer comparison and EA bucketing.
pub fn canonicalize(answer: &str) -> String {
    let trimmed = answer.trim();
    normalize_number(trimmed).unwrap_or_else(|| trimmed.to_string())
}

/// Exact decimal normalization of strings shaped like plain numerals.
/// Returns `None` for anything else.
fn normalize_number(s: &str) -> Option<String> {
    let (negative, digits) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    if digits.is_empty() {
        return None;
    }
    let mut parts = digits.splitn(2, '.');
    let int_part = parts.next().unwrap_or("");
    let frac_part = parts.next();
    if int_part.is_empty() || !int_part.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if let Some(frac) = frac_part {
        if frac.is_empty() || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
    }
    let int_norm = int_part.trim_start_matches('0');
    let int_norm = if int_norm.is_empty() { "0" } else { int_norm };
    let frac_norm = frac_part.map(|f| f.trim_end_matches('0')).unwrap_or("");
    let mut out = String::new();
    if negative && !(int_norm == "0" && frac_norm.is_empty()) {
        out.push('-');
    }
    out.push_str(int_norm);
    if !frac_norm.is_empty() {
        out.push('.');
        out.push_str(frac_norm);
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn last_number_heuristic() {
        let e = AnswerExtractor::LastNumber;
        assert_eq!(e.extract("the answer is 42"), Some("42".to_string()));
        assert_eq!(e.extract("3 + 4 = 7, so 7."), Some("7".to_string()));
        assert_eq!(e.extract("it is -2.5 total"), Some("-2.5".to_string()));
        assert_eq!(e.extract("no digits here"), None);
    }

    #[test]
    fn regex_extractor_takes_last_match() {
        let e = AnswerExtractor::regex(r"answer:\s*(\w+)").unwrap();
        assert_eq!(
            e.extract("answer: foo ... answer: bar"),
            Some("bar".to_string())
        );
        assert_eq!(e.extract("nothing"), None);
    }

    #[test]
    fn regex_requires_capture_group() {
        assert!(matches!(
            AnswerExtractor::regex(r"answer: \w+"),
            Err(ExtractorError::MissingCaptureGroup)
        ));
        assert!(matches!(
            AnswerExtractor::regex(r"("),
            Err(ExtractorError::BadRegex(_))
        ));
    }

    #[test]
    fn passthrough_trims() {
        let e = AnswerExtractor::Passthrough;
        assert_eq!(e.extract("  hello  "), Some("hello".to_string()));
        assert_eq!(e.extract("   "), None);
    }

    #[test]
    fn numeric_canonicalization() {
        assert_eq!(canonicalize("3.0"), "3");
        assert_eq!(canonicalize("3"), "3");
        assert_eq!(canonicalize(" 3.50 "), "3.5");
        assert_eq!(canonicalize("007"), "7");
        assert_eq!(canonicalize("-0"), "0");
        assert_eq!(canonicalize("-0.0"), "0");
        assert_eq!(canonicalize("+4"), "4");
        assert_eq!(canonicalize("0.25"), "0.25");
    }

    #[test]
    fn non_numeric_answers_only_trimmed() {
        assert_eq!(canonicalize("  x = 2  "), "x = 2");
        assert_eq!(canonicalize("1e3"), "1e3");
        assert_eq!(canonicalize("1.2.3"), "1.2.3");
        assert_eq!(canonicalize("."), ".");
    }
}
