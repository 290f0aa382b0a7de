//! Token accounting, whole-round truncation and length buckets.

use std::collections::HashSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::chat::{round_messages, system_message, ChatMessage};
use crate::rollout::{Format, Trajectory};

pub trait TokenCounter: Send + Sync {
    fn mode(&self) -> &str;

    /// Tokens in raw text, without per-message overhead.
    fn count_text(&self, text: &str) -> u64;

    fn message_overhead(&self) -> u64 {
        4
    }

    fn count_message(&self, m: &ChatMessage) -> u64 {
        self.count_text(&m.counted_text()) + self.message_overhead()
    }
}

/// Four bytes per token, rounded up, plus 4 per message.
#[derive(Clone, Copy, Debug, Default)]
pub struct ApproxCounter;

impl TokenCounter for ApproxCounter {
    fn mode(&self) -> &str {
        "approximate"
    }

    fn count_text(&self, text: &str) -> u64 {
        (text.len() as u64).div_ceil(4)
    }
}

/// Wraps an external tokenizer.
pub struct FnCounter<F> {
    pub name: String,
    pub count: F,
    pub overhead: u64,
}

impl<F: Fn(&str) -> u64 + Send + Sync> TokenCounter for FnCounter<F> {
    fn mode(&self) -> &str {
        &self.name
    }

    fn count_text(&self, text: &str) -> u64 {
        (self.count)(text)
    }

    fn message_overhead(&self) -> u64 {
        self.overhead
    }
}

/// Tokens of `text` sent as one message.
pub fn count_tokens(counter: &dyn TokenCounter, text: &str) -> u64 {
    counter.count_text(text) + counter.message_overhead()
}

pub fn count_messages(counter: &dyn TokenCounter, messages: &[ChatMessage]) -> u64 {
    messages.iter().map(|m| counter.count_message(m)).sum()
}

/// System prompt tokens and per-round tokens of a trajectory.
pub fn round_tokens(counter: &dyn TokenCounter, t: &Trajectory) -> (u64, Vec<u64>) {
    let system = counter.count_message(&system_message(&t.system_prompt));
    let rounds = t
        .rounds
        .iter()
        .map(|r| count_messages(counter, &round_messages(&t.tool_name, r)))
        .collect();
    (system, rounds)
}

pub fn count_trajectory(counter: &dyn TokenCounter, t: &Trajectory) -> u64 {
    let (s, r) = round_tokens(counter, t);
    s + r.iter().sum::<u64>()
}

/// Number of leading rounds that fit in `budget`.
fn fitting_rounds(system: u64, rounds: &[u64], budget: u64) -> Result<(usize, u64)> {
    let needed = system + rounds.first().copied().unwrap_or(0);
    if needed > budget {
        return Err(Error::BudgetTooSmall { budget, needed });
    }
    let mut total = system;
    let mut n = 0;
    for r in rounds {
        if total + r > budget {
            break;
        }
        total += r;
        n += 1;
    }
    Ok((n, total))
}

/// The longest prefix of whole rounds whose serialized size is within
/// `budget`.
pub fn truncate_whole_rounds(counter: &dyn TokenCounter, t: &Trajectory, budget: u64) -> Result<Trajectory> {
    let (system, rounds) = round_tokens(counter, t);
    let (n, _) = fitting_rounds(system, &rounds, budget)?;
    Ok(t.prefix(n))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketSpec {
    pub limits: Vec<u64>,
    pub fill_floor: f64,
}

impl Default for BucketSpec {
    fn default() -> Self {
        BucketSpec {
            limits: (0..8).map(|i| 32_768u64 << i).collect(),
            fill_floor: 0.9,
        }
    }
}

impl BucketSpec {
    pub fn new(limits: Vec<u64>, fill_floor: f64) -> Result<Self> {
        let spec = BucketSpec { limits, fill_floor };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.limits.is_empty() {
            return Err(Error::Config("at least one bucket limit is required".into()));
        }
        if self.limits.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("bucket limits must be strictly increasing".into()));
        }
        if !(self.fill_floor > 0.0 && self.fill_floor < 1.0) {
            return Err(Error::Config(format!("fill_floor must lie in (0, 1), got {}", self.fill_floor)));
        }
        Ok(())
    }

    /// Whether `tokens` lies in `(fill_floor * limit, limit]`.
    pub fn admits(&self, limit: u64, tokens: u64) -> bool {
        tokens <= limit && tokens as f64 > self.fill_floor * limit as f64
    }
}

/// Short label for a limit: `32k`, `1m`, ...
pub fn bucket_label(limit: u64) -> String {
    if limit >= 1 << 20 && limit.is_multiple_of(1 << 20) {
        format!("{}m", limit >> 20)
    } else if limit.is_multiple_of(1024) {
        format!("{}k", limit >> 10)
    } else {
        limit.to_string()
    }
}

/// A truncated trajectory placed in a bucket.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketEntry {
    pub id: String,
    pub trajectory_id: String,
    pub bucket_limit: u64,
    pub rounds: usize,
    pub tokens: u64,
}

/// Buckets one trajectory: for each limit, the longest whole-round prefix
/// within the limit, kept when it fills the bucket past the floor.
pub fn bucket_trajectory(
    counter: &dyn TokenCounter,
    spec: &BucketSpec,
    trajectory_id: &str,
    t: &Trajectory,
) -> Vec<BucketEntry> {
    let (system, rounds) = round_tokens(counter, t);
    spec.limits
        .iter()
        .filter_map(|&limit| {
            let (n, total) = fitting_rounds(system, &rounds, limit).ok()?;
            spec.admits(limit, total).then(|| BucketEntry {
                id: format!("{trajectory_id}@{}", bucket_label(limit)),
                trajectory_id: trajectory_id.to_string(),
                bucket_limit: limit,
                rounds: n,
                tokens: total,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketManifest {
    pub bucket_limit: u64,
    pub sample_ids: Vec<String>,
    pub token_counts: Vec<u64>,
    pub counter_mode: String,
}

pub fn bucket_manifests(counter: &dyn TokenCounter, spec: &BucketSpec, entries: &[BucketEntry]) -> Vec<BucketManifest> {
    spec.limits
        .iter()
        .map(|&limit| {
            let mine: Vec<&BucketEntry> = entries.iter().filter(|e| e.bucket_limit == limit).collect();
            BucketManifest {
                bucket_limit: limit,
                sample_ids: mine.iter().map(|e| e.id.clone()).collect(),
                token_counts: mine.iter().map(|e| e.tokens).collect(),
                counter_mode: counter.mode().to_string(),
            }
        })
        .collect()
}

/// Serialized messages of a bucketed prefix, shared between the samples
/// drawn from it.
pub fn prefix_messages(t: &Trajectory, rounds: usize) -> Arc<Vec<ChatMessage>> {
    Arc::new(crate::harness::chat::serialize_trajectory(&t.prefix(rounds)))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeViolation {
    pub round: u32,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalGuessCheck {
    pub solvable: bool,
    /// Running intersection size after each tool response.
    pub intersection_trace: Vec<usize>,
    /// Pre-final rounds whose own candidate list is below the minimum.
    pub violations: Vec<SizeViolation>,
}

impl FinalGuessCheck {
    pub fn passes(&self) -> bool {
        self.solvable && self.violations.is_empty()
    }
}

pub const DEFAULT_MIN_CANDIDATES: usize = 5;

/// Checks that the tool responses of a concise trajectory pin down exactly
/// the target, and that no earlier response was already too small.
pub fn verify_final_guess(t: &Trajectory, min_candidates: usize) -> Result<FinalGuessCheck> {
    if t.format() != Format::Concise {
        return Err(Error::Config("final-guess verification needs a concise trajectory".into()));
    }
    let lists: Vec<(u32, Vec<String>)> = t
        .rounds
        .iter()
        .filter_map(|r| r.tool.as_ref().map(|p| (r.index, p.result.candidates())))
        .collect();
    let mut running: Option<HashSet<&str>> = None;
    let mut trace = Vec::with_capacity(lists.len());
    for (_, list) in &lists {
        let this: HashSet<&str> = list.iter().map(String::as_str).collect();
        running = Some(match running {
            None => this,
            Some(prev) => prev.intersection(&this).copied().collect(),
        });
        trace.push(running.as_ref().map_or(0, HashSet::len));
    }
    let solvable = running.is_some_and(|r| r.len() == 1 && r.contains(t.meta.target_name.as_str()));
    let violations = lists
        .iter()
        .take(lists.len().saturating_sub(1))
        .filter(|(_, l)| l.len() < min_candidates)
        .map(|(round, l)| SizeViolation {
            round: *round,
            size: l.len(),
        })
        .collect();
    Ok(FinalGuessCheck {
        solvable,
        intersection_trace: trace,
        violations,
    })
}
