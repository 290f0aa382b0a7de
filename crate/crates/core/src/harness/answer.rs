//! Answer extraction and scoring.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::qa::{Gold, GoldKind};

/// A parsed model answer, or why none could be read.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Extracted {
    Answer { answer: Gold },
    Failure { reason: String },
}

impl Extracted {
    pub fn ok(&self) -> Option<&Gold> {
        match self {
            Extracted::Answer { answer } => Some(answer),
            Extracted::Failure { .. } => None,
        }
    }

    fn fail(reason: impl Into<String>) -> Self {
        Extracted::Failure { reason: reason.into() }
    }
}

/// The text of the last `<answer>` span, or the last non-empty line when
/// the response has no tag.
fn answer_span(response: &str) -> Option<&str> {
    if let Some(open) = response.rfind("<answer>") {
        let rest = &response[open + "<answer>".len()..];
        return Some(rest.find("</answer>").map_or(rest, |end| &rest[..end]));
    }
    response.lines().map(str::trim).rfind(|l| !l.is_empty())
}

fn strip_wrapping(s: &str) -> &str {
    s.trim()
        .trim_matches(|c: char| matches!(c, '"' | '\'' | '`' | '*'))
        .trim_end_matches(['.', '!'])
        .trim()
}

pub fn extract_answer(response: &str, kind: GoldKind) -> Extracted {
    let Some(span) = answer_span(response) else {
        return Extracted::fail("empty response");
    };
    let text = strip_wrapping(span);
    if text.is_empty() {
        return Extracted::fail("empty answer");
    }
    match kind {
        GoldKind::Integer => match text.parse::<i64>() {
            Ok(n) => Extracted::Answer { answer: Gold::Integer(n) },
            Err(_) => Extracted::fail(format!("not an integer: {text:?}")),
        },
        GoldKind::Round => {
            let digits = text
                .strip_prefix("Round ")
                .or_else(|| text.strip_prefix("round "))
                .unwrap_or(text)
                .trim();
            match digits.parse::<u32>() {
                Ok(r) => Extracted::Answer { answer: Gold::Round(r) },
                Err(_) => Extracted::fail(format!("not a round number: {text:?}")),
            }
        }
        GoldKind::Boolean => match text.to_ascii_lowercase().as_str() {
            "yes" | "true" => Extracted::Answer {
                answer: Gold::Boolean(true),
            },
            "no" | "false" => Extracted::Answer {
                answer: Gold::Boolean(false),
            },
            _ => Extracted::fail(format!("not yes/no: {text:?}")),
        },
        GoldKind::Name => Extracted::Answer {
            answer: Gold::Name(text.to_string()),
        },
        GoldKind::Names => {
            let names: Vec<String> = text
                .split([',', '\n', ';'])
                .map(strip_wrapping)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect();
            if names.is_empty() {
                Extracted::fail("empty name list")
            } else {
                Extracted::Answer {
                    answer: Gold::Names(names),
                }
            }
        }
    }
}

fn normalize(name: &str) -> String {
    name.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Integers and rounds match exactly, booleans by value, names
/// case-insensitively after trimming, and name lists as sets.
pub fn score(gold: &Gold, extracted: &Extracted) -> bool {
    let Some(answer) = extracted.ok() else {
        return false;
    };
    match (gold, answer) {
        (Gold::Integer(a), Gold::Integer(b)) => a == b,
        (Gold::Round(a), Gold::Round(b)) => a == b,
        (Gold::Boolean(a), Gold::Boolean(b)) => a == b,
        (Gold::Name(a), Gold::Name(b)) => normalize(a) == normalize(b),
        (Gold::Names(a), Gold::Names(b)) => {
            let a: BTreeSet<String> = a.iter().map(|n| normalize(n)).collect();
            let b: BTreeSet<String> = b.iter().map(|n| normalize(n)).collect();
            a == b
        }
        _ => false,
    }
}
