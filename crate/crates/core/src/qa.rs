//! Question generation over bucketed trajectory prefixes.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{SectionJudgment, Verdict};
use crate::error::{Error, Result};
use crate::harness::chat::{self, ChatMessage};
use crate::postprocess::{bucket_label, verify_final_guess, TokenCounter, DEFAULT_MIN_CANDIDATES};
use crate::query::ToolResult;
use crate::rng::{self, streams, Stream};
use crate::rollout::{Format, RoundRecord, Setting, ToolPhase, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionType {
    CountFrequencyTool,
    FindDuplicates,
    FindTargetOffsets,
    CountCorrectness,
    CountFrequencyEnv,
    RoundLargestValue,
    WeightedSummation,
    Intersection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Tool,
    Env,
    Final,
}

impl QuestionType {
    pub const ALL: [QuestionType; 8] = [
        QuestionType::CountFrequencyTool,
        QuestionType::FindDuplicates,
        QuestionType::FindTargetOffsets,
        QuestionType::CountCorrectness,
        QuestionType::CountFrequencyEnv,
        QuestionType::RoundLargestValue,
        QuestionType::WeightedSummation,
        QuestionType::Intersection,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            QuestionType::CountFrequencyTool => "count_frequency_tool",
            QuestionType::FindDuplicates => "find_duplicates",
            QuestionType::FindTargetOffsets => "find_target_offsets",
            QuestionType::CountCorrectness => "count_correctness",
            QuestionType::CountFrequencyEnv => "count_frequency_env",
            QuestionType::RoundLargestValue => "round_largest_value",
            QuestionType::WeightedSummation => "weighted_summation",
            QuestionType::Intersection => "intersection",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|q| q.as_str() == s)
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|q| *q == self).unwrap()
    }

    /// Whether the evidence sits in tool responses, in host feedback, or
    /// across the whole history.
    pub fn category(self) -> Category {
        match self {
            QuestionType::CountFrequencyTool | QuestionType::FindDuplicates | QuestionType::FindTargetOffsets => {
                Category::Tool
            }
            QuestionType::Intersection => Category::Final,
            _ => Category::Env,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoldKind {
    Integer,
    Boolean,
    Name,
    Round,
    Names,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Gold {
    Integer(i64),
    Boolean(bool),
    Name(String),
    Round(u32),
    Names(Vec<String>),
}

impl Gold {
    pub fn kind(&self) -> GoldKind {
        match self {
            Gold::Integer(_) => GoldKind::Integer,
            Gold::Boolean(_) => GoldKind::Boolean,
            Gold::Name(_) => GoldKind::Name,
            Gold::Round(_) => GoldKind::Round,
            Gold::Names(_) => GoldKind::Names,
        }
    }

    /// How a correct response would write this answer.
    pub fn answer_text(&self) -> String {
        match self {
            Gold::Integer(n) => n.to_string(),
            Gold::Boolean(b) => if *b { "yes" } else { "no" }.into(),
            Gold::Name(n) => n.clone(),
            Gold::Round(r) => r.to_string(),
            Gold::Names(v) => v.join(", "),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SectionWeight {
    pub section: String,
    pub weight: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WeightTable {
    pub weights: Vec<SectionWeight>,
}

impl WeightTable {
    /// Type 6, Abilities 5, Base Stats 4, every other section 1.
    pub fn default_for<S: AsRef<str>>(sections: &[S]) -> Self {
        WeightTable {
            weights: sections
                .iter()
                .map(|s| SectionWeight {
                    section: s.as_ref().to_string(),
                    weight: match s.as_ref() {
                        "Type" => 6,
                        "Abilities" => 5,
                        "Base Stats" => 4,
                        _ => 1,
                    },
                })
                .collect(),
        }
    }

    pub fn weight(&self, section: &str) -> Option<u32> {
        self.weights.iter().find(|w| w.section == section).map(|w| w.weight)
    }

    pub fn render(&self) -> String {
        self.weights
            .iter()
            .map(|w| format!("{}: {}", w.section, w.weight))
            .collect::<Vec<_>>()
            .join(", ")
    }

    pub fn covers<S: AsRef<str>>(&self, sections: &[S]) -> bool {
        sections.iter().all(|s| self.weight(s.as_ref()).is_some())
    }
}

/// Everything a question is parameterised by; the question text is a pure
/// function of these and the prefix length.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum QuestionParams {
    CountFrequencyTool {
        round: u32,
        item: String,
    },
    FindDuplicates {
        round_a: u32,
        round_b: u32,
        item: String,
    },
    FindTargetOffsets {
        round: u32,
        item: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        section: Option<String>,
    },
    CountCorrectness {
        round: u32,
    },
    CountFrequencyEnv {
        section: String,
        value: String,
    },
    RoundLargestValue {
        section: String,
    },
    WeightedSummation {
        round_a: u32,
        round_b: u32,
        weights: WeightTable,
    },
    Intersection {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        round: Option<u32>,
    },
}

impl QuestionParams {
    pub fn question_type(&self) -> QuestionType {
        match self {
            QuestionParams::CountFrequencyTool { .. } => QuestionType::CountFrequencyTool,
            QuestionParams::FindDuplicates { .. } => QuestionType::FindDuplicates,
            QuestionParams::FindTargetOffsets { .. } => QuestionType::FindTargetOffsets,
            QuestionParams::CountCorrectness { .. } => QuestionType::CountCorrectness,
            QuestionParams::CountFrequencyEnv { .. } => QuestionType::CountFrequencyEnv,
            QuestionParams::RoundLargestValue { .. } => QuestionType::RoundLargestValue,
            QuestionParams::WeightedSummation { .. } => QuestionType::WeightedSummation,
            QuestionParams::Intersection { .. } => QuestionType::Intersection,
        }
    }
}

const TAGS: &str = "inside <answer></answer> tags";

/// The fixed English template for each question type.
pub fn render_question(params: &QuestionParams, format: Format, total_rounds: usize) -> String {
    match params {
        QuestionParams::CountFrequencyTool { round, item } => format!(
            "The conversation above has {total_rounds} rounds. How many times does the item {item} appear in the tool \
             response of Round {round}? Count one occurrence for every candidate list that contains it. Answer with an \
             integer {TAGS}."
        ),
        QuestionParams::FindDuplicates { round_a, round_b, item } => format!(
            "The conversation above has {total_rounds} rounds. Does the item {item} appear in the tool responses of both \
             Round {round_a} and Round {round_b}? Answer yes or no {TAGS}."
        ),
        QuestionParams::FindTargetOffsets { round, item, section } => {
            let list = match section {
                Some(s) => format!("the {s} candidate list"),
                None => "the intersection list".to_string(),
            };
            format!(
                "The conversation above has {total_rounds} rounds. In {list} returned by the tool in Round {round}, \
                 which two items come immediately after the first occurrence of {item}? Answer with the two names in \
                 order, separated by a comma, {TAGS}."
            )
        }
        QuestionParams::CountCorrectness { round } => format!(
            "The conversation above has {total_rounds} rounds. According to the feedback of Round {round}, how many \
             attribute sections did the guess get fully correct? A section counts only if every value reported for it \
             is marked correct. Answer with an integer {TAGS}."
        ),
        QuestionParams::CountFrequencyEnv { section, value } => format!(
            "The conversation above has {total_rounds} rounds. In how many rounds does the feedback list the value \
             {value} under the section {section}? Count each round at most once. Answer with an integer {TAGS}."
        ),
        QuestionParams::RoundLargestValue { section } => format!(
            "The conversation above has {total_rounds} rounds. In which round did the guessed item have the highest \
             {section} value according to the feedback? If several rounds tie, give the earliest one. Answer with the \
             round number {TAGS}."
        ),
        QuestionParams::WeightedSummation {
            round_a,
            round_b,
            weights,
        } => format!(
            "The conversation above has {total_rounds} rounds. Score a round by adding the weight of every attribute \
             section its feedback marks fully correct, using the weights {{{}}}. What is the absolute difference between \
             the scores of Round {round_a} and Round {round_b}? Answer with an integer {TAGS}.",
            weights.render()
        ),
        QuestionParams::Intersection { round: None } => format!(
            "The conversation above has {total_rounds} rounds. Exactly one item appears in every candidate list the \
             tool returned across all rounds. Which item is it? Answer with its name {TAGS}."
        ),
        QuestionParams::Intersection { round: Some(round) } => {
            let _ = format;
            format!(
                "The conversation above has {total_rounds} rounds. Which items appear in every per-section candidate \
                 list of the tool response in Round {round}? Answer with the names in alphabetical order, separated by \
                 commas, {TAGS}."
            )
        }
    }
}

/// A bucketed trajectory prefix that questions are asked about.
#[derive(Clone, Debug)]
pub struct Prefix {
    pub id: String,
    pub bucket_limit: u64,
    pub trajectory: Trajectory,
    pub messages: Arc<Vec<ChatMessage>>,
    pub message_tokens: Arc<Vec<u64>>,
}

impl Prefix {
    /// The first `rounds` rounds of `t`.
    pub fn new(id: &str, bucket_limit: u64, t: &Trajectory, rounds: usize, counter: &dyn TokenCounter) -> Self {
        let trajectory = t.prefix(rounds);
        let messages = chat::serialize_trajectory(&trajectory);
        let message_tokens = messages.iter().map(|m| counter.count_message(m)).collect();
        Prefix {
            id: id.to_string(),
            bucket_limit,
            trajectory,
            messages: Arc::new(messages),
            message_tokens: Arc::new(message_tokens),
        }
    }

    pub fn setting(&self) -> Setting {
        self.trajectory.setting()
    }

    pub fn format(&self) -> Format {
        self.trajectory.format()
    }

    pub fn n_rounds(&self) -> usize {
        self.trajectory.rounds.len()
    }

    fn round(&self, r: u32) -> Result<&RoundRecord> {
        (r as usize)
            .checked_sub(1)
            .and_then(|i| self.trajectory.rounds.get(i))
            .ok_or_else(|| Error::Ineligible(format!("round {r} is outside the prefix")))
    }

    fn tool(&self, r: u32) -> Result<&ToolPhase> {
        self.round(r)?
            .tool
            .as_ref()
            .ok_or_else(|| Error::Ineligible(format!("round {r} has no tool call")))
    }

    fn tool_rounds(&self) -> Vec<u32> {
        self.trajectory
            .rounds
            .iter()
            .filter(|r| r.tool.is_some())
            .map(|r| r.index)
            .collect()
    }

    fn feedback_messages(&self) -> Vec<usize> {
        (1..=self.n_rounds()).map(chat::feedback_message_index).collect()
    }

    /// Section names and whether each is numeric, as reported by feedback.
    pub fn sections(&self) -> Vec<(String, bool)> {
        self.trajectory
            .rounds
            .first()
            .map(|r| {
                r.feedback
                    .sections
                    .iter()
                    .map(|s| (s.section.clone(), matches!(s.judgment, SectionJudgment::Number { .. })))
                    .collect()
            })
            .unwrap_or_default()
    }
}

/// A generated question before it is wrapped into a sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Question {
    pub params: QuestionParams,
    pub question_text: String,
    pub gold: Gold,
    pub evidence_spans: Vec<usize>,
}

fn question(p: &Prefix, params: QuestionParams, gold: Gold, evidence_spans: Vec<usize>) -> Question {
    Question {
        question_text: render_question(&params, p.format(), p.n_rounds()),
        params,
        gold,
        evidence_spans,
    }
}

fn tool_index(r: u32) -> usize {
    chat::tool_message_index(r as usize).expect("tool rounds start at 2")
}

pub fn gen_count_frequency_tool(p: &Prefix, round: u32, item: &str) -> Result<Question> {
    let phase = p.tool(round)?;
    let count = phase.result.lists().iter().filter(|l| l.iter().any(|n| n == item)).count();
    Ok(question(
        p,
        QuestionParams::CountFrequencyTool {
            round,
            item: item.into(),
        },
        Gold::Integer(count as i64),
        vec![tool_index(round)],
    ))
}

pub fn gen_find_duplicates(p: &Prefix, round_a: u32, round_b: u32, item: &str) -> Result<Question> {
    if round_a == round_b {
        return Err(Error::Ineligible("duplicate check needs two distinct rounds".into()));
    }
    let contains = |r: u32| -> Result<bool> { Ok(p.tool(r)?.result.lists().iter().any(|l| l.iter().any(|n| n == item))) };
    let both = contains(round_a)? && contains(round_b)?;
    Ok(question(
        p,
        QuestionParams::FindDuplicates {
            round_a,
            round_b,
            item: item.into(),
        },
        Gold::Boolean(both),
        vec![tool_index(round_a), tool_index(round_b)],
    ))
}

pub fn gen_find_target_offsets(p: &Prefix, round: u32, item: &str, section: Option<&str>) -> Result<Question> {
    let phase = p.tool(round)?;
    let list: &[String] = match (&phase.result, section) {
        (ToolResult::Concise(c), None) => &c.intersection,
        (ToolResult::Verbose(v), Some(s)) => v
            .per_section
            .iter()
            .find(|e| e.section == s)
            .map(|e| e.candidates.as_slice())
            .ok_or_else(|| Error::Ineligible(format!("round {round} has no {s} list")))?,
        _ => return Err(Error::Ineligible("verbose offsets name a section, concise ones do not".into())),
    };
    let at = list
        .iter()
        .position(|n| n == item)
        .ok_or_else(|| Error::Ineligible(format!("{item} is not in the list")))?;
    if at + 2 >= list.len() {
        return Err(Error::Ineligible(format!("{item} has fewer than two followers")));
    }
    Ok(question(
        p,
        QuestionParams::FindTargetOffsets {
            round,
            item: item.into(),
            section: section.map(str::to_string),
        },
        Gold::Names(vec![list[at + 1].clone(), list[at + 2].clone()]),
        vec![tool_index(round)],
    ))
}

pub fn gen_count_correctness(p: &Prefix, round: u32) -> Result<Question> {
    let r = p.round(round)?;
    let count = r.feedback.sections.iter().filter(|s| s.fully_correct()).count();
    Ok(question(
        p,
        QuestionParams::CountCorrectness { round },
        Gold::Integer(count as i64),
        vec![chat::feedback_message_index(round as usize)],
    ))
}

fn lists_label(r: &RoundRecord, section: &str, value: &str) -> bool {
    r.feedback.section(section).is_some_and(|s| match &s.judgment {
        SectionJudgment::Labels(l) => l.iter().any(|j| j.label == value),
        SectionJudgment::Number { .. } => false,
    })
}

pub fn gen_count_frequency_env(p: &Prefix, section: &str, value: &str) -> Result<Question> {
    let count = p.trajectory.rounds.iter().filter(|r| lists_label(r, section, value)).count();
    Ok(question(
        p,
        QuestionParams::CountFrequencyEnv {
            section: section.into(),
            value: value.into(),
        },
        Gold::Integer(count as i64),
        p.feedback_messages(),
    ))
}

pub fn gen_round_largest_value(p: &Prefix, section: &str) -> Result<Question> {
    let mut best: Option<(i64, u32)> = None;
    for r in &p.trajectory.rounds {
        if let Some(SectionJudgment::Number { value, .. }) = r.feedback.section(section).map(|s| &s.judgment) {
            if best.is_none_or(|(b, _)| *value > b) {
                best = Some((*value, r.index));
            }
        }
    }
    let (_, round) = best.ok_or_else(|| Error::Ineligible(format!("{section} is not a numeric section")))?;
    Ok(question(
        p,
        QuestionParams::RoundLargestValue { section: section.into() },
        Gold::Round(round),
        p.feedback_messages(),
    ))
}

fn weighted_score(r: &RoundRecord, w: &WeightTable) -> i64 {
    r.feedback
        .sections
        .iter()
        .filter(|s| s.fully_correct())
        .map(|s| w.weight(&s.section).unwrap_or(0) as i64)
        .sum()
}

pub fn gen_weighted_summation(p: &Prefix, round_a: u32, round_b: u32, w: &WeightTable) -> Result<Question> {
    let sections: Vec<String> = p.sections().into_iter().map(|(s, _)| s).collect();
    if !w.covers(&sections) {
        return Err(Error::Config("weight table does not cover every section".into()));
    }
    let a = weighted_score(p.round(round_a)?, w);
    let b = weighted_score(p.round(round_b)?, w);
    let mut spans = vec![chat::feedback_message_index(round_a as usize)];
    if round_b != round_a {
        spans.push(chat::feedback_message_index(round_b as usize));
    }
    Ok(question(
        p,
        QuestionParams::WeightedSummation {
            round_a,
            round_b,
            weights: w.clone(),
        },
        Gold::Integer((a - b).abs()),
        spans,
    ))
}

/// Concise: the single item common to every tool response, when the prefix
/// passes final-guess verification and does not already reveal the answer. Verbose: the sorted intersection of one
/// round's per-section lists.
pub fn gen_intersection(p: &Prefix, round: Option<u32>, min_candidates: usize) -> Result<Question> {
    match (p.format(), round) {
        (Format::Concise, None) => {
            if p.trajectory.meta.solved {
                return Err(Error::Ineligible("the prefix already ends with the winning guess".into()));
            }
            let check = verify_final_guess(&p.trajectory, min_candidates)?;
            if !check.passes() {
                return Err(Error::Ineligible("tool responses do not pin down the target".into()));
            }
            let spans: Vec<usize> = p.tool_rounds().into_iter().map(tool_index).collect();
            Ok(question(
                p,
                QuestionParams::Intersection { round: None },
                Gold::Name(p.trajectory.meta.target_name.clone()),
                spans,
            ))
        }
        (Format::Verbose, Some(r)) => {
            let mut names = p.tool(r)?.result.candidates();
            if names.is_empty() {
                return Err(Error::Ineligible(format!("round {r} lists share no item")));
            }
            names.sort();
            Ok(question(
                p,
                QuestionParams::Intersection { round: Some(r) },
                Gold::Names(names),
                vec![tool_index(r)],
            ))
        }
        _ => Err(Error::Ineligible("intersection round must be given for verbose prefixes only".into())),
    }
}

pub fn generate(p: &Prefix, params: &QuestionParams, min_candidates: usize) -> Result<Question> {
    match params {
        QuestionParams::CountFrequencyTool { round, item } => gen_count_frequency_tool(p, *round, item),
        QuestionParams::FindDuplicates { round_a, round_b, item } => gen_find_duplicates(p, *round_a, *round_b, item),
        QuestionParams::FindTargetOffsets { round, item, section } => {
            gen_find_target_offsets(p, *round, item, section.as_deref())
        }
        QuestionParams::CountCorrectness { round } => gen_count_correctness(p, *round),
        QuestionParams::CountFrequencyEnv { section, value } => gen_count_frequency_env(p, section, value),
        QuestionParams::RoundLargestValue { section } => gen_round_largest_value(p, section),
        QuestionParams::WeightedSummation {
            round_a,
            round_b,
            weights,
        } => gen_weighted_summation(p, *round_a, *round_b, weights),
        QuestionParams::Intersection { round } => gen_intersection(p, *round, min_candidates),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QASample {
    pub sample_id: String,
    pub setting: Setting,
    pub format: Format,
    pub bucket_limit: u64,
    pub question_type: QuestionType,
    pub messages: Arc<Vec<ChatMessage>>,
    pub question_text: String,
    pub gold: Gold,
    pub evidence_spans: Vec<usize>,
    pub acl_tokens: u64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_used: Option<WeightTable>,
    pub params: QuestionParams,
}

pub fn compute_acl(sample: &QASample, counter: &dyn TokenCounter) -> u64 {
    sample
        .evidence_spans
        .iter()
        .filter_map(|&i| sample.messages.get(i))
        .map(|m| counter.count_message(m))
        .sum()
}

/// Sample counts per bucket and question type.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuotaConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setting: Option<Setting>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    pub buckets: Vec<u64>,
    pub counts: BTreeMap<QuestionType, Vec<u32>>,
}

const PUBLISHED_BUCKETS: [u64; 8] = [32_768, 65_536, 131_072, 262_144, 524_288, 1_048_576, 2_097_152, 4_194_304];

impl QuotaConfig {
    pub fn validate(&self) -> Result<()> {
        for (q, row) in &self.counts {
            if row.len() != self.buckets.len() {
                return Err(Error::Config(format!(
                    "quota row {} has {} entries for {} buckets",
                    q.as_str(),
                    row.len(),
                    self.buckets.len()
                )));
            }
        }
        if self.buckets.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("quota buckets must be strictly increasing".into()));
        }
        Ok(())
    }

    pub fn count(&self, bucket: u64, q: QuestionType) -> u32 {
        let Some(b) = self.buckets.iter().position(|&x| x == bucket) else {
            return 0;
        };
        self.counts.get(&q).map_or(0, |row| row[b])
    }

    pub fn bucket_total(&self, bucket: u64) -> u32 {
        QuestionType::ALL.iter().map(|&q| self.count(bucket, q)).sum()
    }

    pub fn total(&self) -> u32 {
        self.buckets.iter().map(|&b| self.bucket_total(b)).sum()
    }

    /// Keeps only the given buckets.
    pub fn restrict(&self, buckets: &[u64]) -> QuotaConfig {
        let keep: Vec<usize> = (0..self.buckets.len())
            .filter(|&i| buckets.contains(&self.buckets[i]))
            .collect();
        QuotaConfig {
            name: self.name.clone(),
            setting: self.setting,
            format: self.format,
            buckets: keep.iter().map(|&i| self.buckets[i]).collect(),
            counts: self
                .counts
                .iter()
                .map(|(q, row)| (*q, keep.iter().map(|&i| row[i]).collect()))
                .collect(),
        }
    }

    /// The published per-length distribution for one setting and format.
    pub fn published(setting: Setting, format: Format) -> QuotaConfig {
        use QuestionType::*;
        let rows: [(QuestionType, [u32; 8]); 8] = match format {
            Format::Concise => [
                (CountFrequencyTool, [25; 8]),
                (FindDuplicates, [25; 8]),
                (FindTargetOffsets, [25; 8]),
                (CountCorrectness, [25; 8]),
                (CountFrequencyEnv, [16, 12, 18, 17, 23, 21, 16, 17]),
                (RoundLargestValue, [20, 23, 20, 19, 12, 17, 18, 19]),
                (WeightedSummation, [14, 15, 12, 14, 15, 12, 16, 14]),
                (Intersection, [50; 8]),
            ],
            Format::Verbose => [
                (CountFrequencyTool, [25; 8]),
                (FindDuplicates, [24, 25, 25, 25, 25, 25, 25, 25]),
                (FindTargetOffsets, [26, 25, 25, 25, 25, 25, 25, 25]),
                (CountCorrectness, [25; 8]),
                (CountFrequencyEnv, [21, 24, 20, 21, 13, 17, 20, 21]),
                (RoundLargestValue, [13, 13, 16, 15, 20, 18, 24, 17]),
                (WeightedSummation, [16, 13, 14, 14, 17, 15, 6, 12]),
                (Intersection, [50; 8]),
            ],
        };
        QuotaConfig {
            name: Some(format!("paper-{}-{}", setting.short(), format.as_str())),
            setting: Some(setting),
            format: Some(format),
            buckets: PUBLISHED_BUCKETS.to_vec(),
            counts: rows.into_iter().map(|(q, r)| (q, r.to_vec())).collect(),
        }
    }

    pub fn preset(name: &str) -> Option<QuotaConfig> {
        [Setting::KnowledgeIntensive, Setting::KnowledgeFree]
            .into_iter()
            .flat_map(|s| [Format::Concise, Format::Verbose].map(|f| QuotaConfig::published(s, f)))
            .find(|q| q.name.as_deref() == Some(name))
    }

    pub fn uniform(buckets: &[u64], per_type: u32) -> QuotaConfig {
        QuotaConfig {
            name: None,
            setting: None,
            format: None,
            buckets: buckets.to_vec(),
            counts: QuestionType::ALL
                .iter()
                .map(|&q| (q, vec![per_type; buckets.len()]))
                .collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DatasetOptions {
    /// Overrides the default table derived from section names.
    pub weights: Option<WeightTable>,
    pub min_candidates: usize,
    /// Attempts per sample before the cell is declared infeasible.
    pub max_attempts: usize,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions {
            weights: None,
            min_candidates: DEFAULT_MIN_CANDIDATES,
            max_attempts: 400,
        }
    }
}

fn pick<'a, T>(rng: &mut Stream, v: &'a [T]) -> Result<&'a T> {
    v.choose(rng).ok_or_else(|| Error::Ineligible("nothing to choose from".into()))
}

fn two_rounds(rng: &mut Stream, rounds: &[u32]) -> Result<(u32, u32)> {
    if rounds.len() < 2 {
        return Err(Error::Ineligible("needs two rounds".into()));
    }
    let a = rng.gen_range(0..rounds.len());
    let mut b = rng.gen_range(0..rounds.len() - 1);
    if b >= a {
        b += 1;
    }
    Ok((rounds[a], rounds[b]))
}

/// Names that occur anywhere in a prefix's tool responses or guesses.
fn mentioned_names(p: &Prefix) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for r in &p.trajectory.rounds {
        let lists = r.tool.as_ref().map(|t| t.result.lists()).unwrap_or_default();
        for n in lists.into_iter().flatten().chain(std::iter::once(&r.guess)) {
            if seen.insert(n.as_str()) {
                out.push(n.clone());
            }
        }
    }
    out
}

/// Draws question parameters for a prefix.
pub fn sample_params(q: QuestionType, p: &Prefix, weights: &WeightTable, rng: &mut Stream) -> Result<QuestionParams> {
    let tool_rounds = p.tool_rounds();
    let all_rounds: Vec<u32> = (1..=p.n_rounds() as u32).collect();
    let sections = p.sections();
    Ok(match q {
        QuestionType::CountFrequencyTool => {
            let round = *pick(rng, &tool_rounds)?;
            let lists = p.tool(round)?.result.lists();
            let present: Vec<&String> = lists.iter().flat_map(|l| l.iter()).collect();
            let item = if rng.gen_bool(0.8) || present.is_empty() {
                (*pick(rng, &present)?).clone()
            } else {
                pick(rng, &mentioned_names(p))?.clone()
            };
            QuestionParams::CountFrequencyTool { round, item }
        }
        QuestionType::FindDuplicates => {
            let (round_a, round_b) = two_rounds(rng, &tool_rounds)?;
            let a: Vec<String> = p.tool(round_a)?.result.lists().concat();
            let b: HashSet<String> = p.tool(round_b)?.result.lists().concat().into_iter().collect();
            let shared: Vec<&String> = a.iter().filter(|n| b.contains(*n)).collect();
            let only_a: Vec<&String> = a.iter().filter(|n| !b.contains(*n)).collect();
            let item = if rng.gen_bool(0.5) && !shared.is_empty() || only_a.is_empty() {
                (*pick(rng, &shared)?).clone()
            } else {
                (*pick(rng, &only_a)?).clone()
            };
            QuestionParams::FindDuplicates { round_a, round_b, item }
        }
        QuestionType::FindTargetOffsets => {
            let round = *pick(rng, &tool_rounds)?;
            let (list, section) = match &p.tool(round)?.result {
                ToolResult::Concise(c) => (&c.intersection, None),
                ToolResult::Verbose(v) => {
                    let e = pick(rng, &v.per_section)?;
                    (&e.candidates, Some(e.section.clone()))
                }
            };
            if list.len() < 3 {
                return Err(Error::Ineligible("list too short for offsets".into()));
            }
            let item = list[rng.gen_range(0..list.len() - 2)].clone();
            QuestionParams::FindTargetOffsets { round, item, section }
        }
        QuestionType::CountCorrectness => QuestionParams::CountCorrectness {
            round: *pick(rng, &all_rounds)?,
        },
        QuestionType::CountFrequencyEnv => {
            let categorical: Vec<&String> = sections.iter().filter(|(_, n)| !n).map(|(s, _)| s).collect();
            let section = (*pick(rng, &categorical)?).clone();
            let mut values = Vec::new();
            for r in &p.trajectory.rounds {
                if let Some(SectionJudgment::Labels(l)) = r.feedback.section(&section).map(|s| &s.judgment) {
                    for j in l {
                        if !values.contains(&j.label) {
                            values.push(j.label.clone());
                        }
                    }
                }
            }
            QuestionParams::CountFrequencyEnv {
                value: pick(rng, &values)?.clone(),
                section,
            }
        }
        QuestionType::RoundLargestValue => {
            let numeric: Vec<&String> = sections.iter().filter(|(_, n)| *n).map(|(s, _)| s).collect();
            QuestionParams::RoundLargestValue {
                section: (*pick(rng, &numeric)?).clone(),
            }
        }
        QuestionType::WeightedSummation => {
            let (round_a, round_b) = two_rounds(rng, &all_rounds)?;
            QuestionParams::WeightedSummation {
                round_a,
                round_b,
                weights: weights.clone(),
            }
        }
        QuestionType::Intersection => match p.format() {
            Format::Concise => QuestionParams::Intersection { round: None },
            Format::Verbose => {
                let small: Vec<u32> = tool_rounds
                    .iter()
                    .copied()
                    .filter(|&r| p.tool(r).is_ok_and(|t| (1..=10).contains(&t.result.candidates().len())))
                    .collect();
                QuestionParams::Intersection {
                    round: Some(*pick(rng, &small)?),
                }
            }
        },
    })
}

pub fn sample_id(setting: Setting, format: Format, bucket: u64, q: QuestionType, k: usize) -> String {
    format!(
        "{}-{}-{}-{}-{:04}",
        setting.short(),
        format.as_str(),
        bucket_label(bucket),
        q.as_str(),
        k
    )
}

fn build_cell(
    prefixes: &[&Prefix],
    bucket: u64,
    q: QuestionType,
    count: usize,
    seed: u64,
    opts: &DatasetOptions,
    counter: &dyn TokenCounter,
) -> Result<Vec<QASample>> {
    let infeasible = |reason: String| Error::QuotaInfeasible {
        bucket,
        question_type: q.as_str().to_string(),
        reason,
    };
    if count == 0 {
        return Ok(Vec::new());
    }
    let first = prefixes
        .first()
        .ok_or_else(|| infeasible("no trajectory prefix fills this bucket".into()))?;
    let (setting, format) = (first.setting(), first.format());
    let weights = match &opts.weights {
        Some(w) => w.clone(),
        None => WeightTable::default_for(&first.sections().into_iter().map(|(s, _)| s).collect::<Vec<_>>()),
    };

    // Concise intersection questions are one per prefix, so they need as many
    // distinct verified prefixes as samples.
    let mut order: Vec<&Prefix> = prefixes.to_vec();
    if q == QuestionType::Intersection && format == Format::Concise {
        order.retain(|p| gen_intersection(p, None, opts.min_candidates).is_ok());
        if order.len() < count {
            return Err(infeasible(format!(
                "{} of {} prefixes have a uniquely solvable history, {count} needed",
                order.len(),
                prefixes.len()
            )));
        }
        order.shuffle(&mut rng::stream(rng::derive_seed(seed, &[bucket, q.index() as u64]), streams::DATASET));
    }

    let mut seen: HashSet<(String, QuestionParams)> = HashSet::new();
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let sample_seed = rng::derive_seed(seed, &[bucket, q.index() as u64, k as u64]);
        let mut rng = rng::stream(sample_seed, streams::DATASET);
        let mut chosen: Option<(&Prefix, Question)> = None;
        let mut last_error = String::from("no attempt made");
        for attempt in 0..opts.max_attempts {
            let p: &Prefix = if q == QuestionType::Intersection && format == Format::Concise {
                order[k]
            } else {
                order[rng.gen_range(0..order.len())]
            };
            let made = sample_params(q, p, &weights, &mut rng).and_then(|params| generate(p, &params, opts.min_candidates));
            match made {
                Ok(question) => {
                    let fresh = !seen.contains(&(p.id.clone(), question.params.clone()));
                    if fresh || attempt + 1 >= opts.max_attempts.min(32) {
                        chosen = Some((p, question));
                        break;
                    }
                }
                Err(e) => last_error = e.to_string(),
            }
        }
        let (p, question) = chosen.ok_or_else(|| infeasible(last_error))?;
        seen.insert((p.id.clone(), question.params.clone()));
        let acl_tokens = question.evidence_spans.iter().map(|&i| p.message_tokens[i]).sum::<u64>();
        debug_assert_eq!(
            acl_tokens,
            question
                .evidence_spans
                .iter()
                .map(|&i| counter.count_message(&p.messages[i]))
                .sum::<u64>()
        );
        let weights_used = match &question.params {
            QuestionParams::WeightedSummation { weights, .. } => Some(weights.clone()),
            _ => None,
        };
        out.push(QASample {
            sample_id: sample_id(setting, format, bucket, q, k),
            setting,
            format,
            bucket_limit: bucket,
            question_type: q,
            messages: Arc::clone(&p.messages),
            question_text: question.question_text,
            gold: question.gold,
            evidence_spans: question.evidence_spans,
            acl_tokens,
            seed: sample_seed,
            weights_used,
            params: question.params,
        });
    }
    Ok(out)
}

/// Assembles a dataset with exactly the quota's count per (bucket, type).
/// Every sample draws its parameters from its own seeded stream, so cells
/// build in parallel without changing the output.
pub fn build_dataset(
    prefixes: &[Prefix],
    quota: &QuotaConfig,
    seed: u64,
    opts: &DatasetOptions,
    counter: &dyn TokenCounter,
) -> Result<Vec<QASample>> {
    quota.validate()?;
    let cells: Vec<(u64, QuestionType)> = quota
        .buckets
        .iter()
        .flat_map(|&b| QuestionType::ALL.map(|q| (b, q)))
        .collect();
    let built: Vec<Result<Vec<QASample>>> = cells
        .par_iter()
        .map(|&(bucket, q)| {
            let mine: Vec<&Prefix> = prefixes.iter().filter(|p| p.bucket_limit == bucket).collect();
            build_cell(&mine, bucket, q, quota.count(bucket, q) as usize, seed, opts, counter)
        })
        .collect();
    let mut out = Vec::new();
    for cell in built {
        out.extend(cell?);
    }
    Ok(out)
}

/// Mean ACL per (format, category) over a dataset.
pub fn mean_acl(samples: &[QASample]) -> BTreeMap<(Format, String), f64> {
    let mut acc: BTreeMap<(Format, String), (u64, u64)> = BTreeMap::new();
    for s in samples {
        let cat = match s.question_type.category() {
            Category::Tool => "tool",
            Category::Env => "env",
            Category::Final => "final",
        };
        let e = acc.entry((s.format, cat.to_string())).or_default();
        e.0 += s.acl_tokens;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (sum, n))| (k, sum as f64 / n as f64)).collect()
}

/// Whether a round's guess won the game.
pub fn is_winning(r: &RoundRecord) -> bool {
    r.feedback.overall == Verdict::Correct
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{Feedback, LabelJudgment, NumericJudgment, SectionFeedback};
    use crate::postprocess::ApproxCounter;
    use crate::query::{ConciseResult, SectionCandidates, ToolQuery, VerboseResult};
    use crate::rollout::{simulate, RolloutConfig, TrajectoryMeta};
    use crate::universe::{generate_synthetic_universe, ItemId, SyntheticSpec};

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn fb(round: u32, type_: &[(&str, bool)], stats: (i64, NumericJudgment), overall: Verdict) -> Feedback {
        Feedback {
            round,
            guess: format!("G{round}"),
            dex: round,
            sections: vec![
                SectionFeedback {
                    section: "Type".into(),
                    judgment: SectionJudgment::Labels(
                        type_
                            .iter()
                            .map(|(l, c)| LabelJudgment {
                                label: l.to_string(),
                                correct: *c,
                            })
                            .collect(),
                    ),
                },
                SectionFeedback {
                    section: "Base Stats".into(),
                    judgment: SectionJudgment::Number {
                        value: stats.0,
                        judgment: stats.1,
                    },
                },
            ],
            overall,
            rounds_remaining: 10 - round,
        }
    }

    fn hand_prefix(format: Format, results: Vec<ToolResult>, feedback: Vec<Feedback>) -> Prefix {
        let rounds = feedback
            .into_iter()
            .enumerate()
            .map(|(i, f)| RoundRecord {
                index: i as u32 + 1,
                tool: (i > 0).then(|| ToolPhase {
                    call_id: crate::rollout::call_id(i as u32 + 1),
                    query: ToolQuery::default(),
                    result: results[i - 1].clone(),
                }),
                guess_id: ItemId(i as u32 + 1),
                guess: f.guess.clone(),
                feedback: f,
            })
            .collect();
        let cfg = match format {
            Format::Concise => RolloutConfig::concise(0),
            Format::Verbose => RolloutConfig::verbose(0),
        };
        let t = Trajectory {
            system_prompt: "s".into(),
            tool_name: "query_pokemon".into(),
            rounds,
            meta: TrajectoryMeta {
                config: cfg,
                universe_fingerprint: String::new(),
                target_id: ItemId(1),
                target_name: "M".into(),
                seed: 0,
                solved: false,
                symbol_map: None,
            },
        };
        let n = t.rounds.len();
        Prefix::new("hand", 32_768, &t, n, &ApproxCounter)
    }

    fn verbose(lists: &[(&str, &[&str])]) -> ToolResult {
        ToolResult::Verbose(VerboseResult {
            per_section: lists
                .iter()
                .map(|(s, c)| SectionCandidates {
                    section: s.to_string(),
                    conditions: vec![],
                    candidates: names(c),
                })
                .collect(),
        })
    }

    #[test]
    fn tool_question_oracles() {
        use NumericJudgment::*;
        let w = Verdict::Wrong;
        let p = hand_prefix(
            Format::Verbose,
            vec![
                verbose(&[
                    ("Type", &["A", "M", "N", "X"]),
                    ("Abilities", &["M", "N", "Y"]),
                    ("Base Stats", &["B", "M", "N"]),
                    ("Generation", &["C", "N"]),
                ]),
                verbose(&[("Type", &["M", "P", "Q"])]),
            ],
            vec![
                fb(1, &[("Bug", false)], (200, TooLow), w),
                fb(2, &[("Fire", true)], (300, TooHigh), w),
                fb(3, &[("Fire", true), ("Bug", false)], (250, Correct), w),
            ],
        );
        assert_eq!(gen_count_frequency_tool(&p, 2, "M").unwrap().gold, Gold::Integer(3));
        assert_eq!(gen_count_frequency_tool(&p, 2, "Z").unwrap().gold, Gold::Integer(0));
        assert!(gen_count_frequency_tool(&p, 1, "M").is_err());
        assert_eq!(gen_find_duplicates(&p, 2, 3, "M").unwrap().gold, Gold::Boolean(true));
        assert_eq!(gen_find_duplicates(&p, 2, 3, "N").unwrap().gold, Gold::Boolean(false));
        let off = gen_find_target_offsets(&p, 2, "A", Some("Type")).unwrap();
        assert_eq!(off.gold, Gold::Names(names(&["M", "N"])));
        assert!(off.question_text.contains("the Type candidate list"));
        assert!(gen_find_target_offsets(&p, 2, "N", Some("Type")).is_err());
        assert_eq!(
            gen_intersection(&p, Some(2), 5).unwrap().gold,
            Gold::Names(names(&["N"])),
            "M misses the Generation list"
        );
        assert_eq!(gen_count_frequency_tool(&p, 2, "M").unwrap().evidence_spans, vec![4]);
        assert_eq!(gen_find_duplicates(&p, 2, 3, "M").unwrap().evidence_spans, vec![4, 8]);
    }

    #[test]
    fn env_question_oracles() {
        use NumericJudgment::*;
        let w = Verdict::Wrong;
        let p = hand_prefix(
            Format::Concise,
            vec![
                ToolResult::Concise(ConciseResult {
                    intersection: names(&["M", "N"]),
                }),
                ToolResult::Concise(ConciseResult {
                    intersection: names(&["M"]),
                }),
            ],
            vec![
                fb(1, &[("Bug", false), ("Poison", false)], (300, TooLow), w),
                fb(2, &[("Fire", true)], (500, TooHigh), w),
                fb(3, &[("Bug", false)], (500, TooHigh), w),
            ],
        );
        assert_eq!(gen_count_correctness(&p, 1).unwrap().gold, Gold::Integer(0));
        assert_eq!(gen_count_correctness(&p, 2).unwrap().gold, Gold::Integer(1));
        assert_eq!(gen_count_frequency_env(&p, "Type", "Bug").unwrap().gold, Gold::Integer(2));
        assert_eq!(gen_count_frequency_env(&p, "Type", "Water").unwrap().gold, Gold::Integer(0));
        assert_eq!(gen_round_largest_value(&p, "Base Stats").unwrap().gold, Gold::Round(2), "tie goes to the earliest");
        assert!(gen_round_largest_value(&p, "Type").is_err());
        let weights = WeightTable::default_for(&["Type", "Base Stats"]);
        let ws = gen_weighted_summation(&p, 2, 1, &weights).unwrap();
        assert_eq!(ws.gold, Gold::Integer(6));
        assert!(ws.question_text.contains("{Type: 6, Base Stats: 4}"));
        assert_eq!(gen_weighted_summation(&p, 2, 2, &weights).unwrap().gold, Gold::Integer(0));
        assert_eq!(ws.evidence_spans, vec![6, 2]);
        assert_eq!(gen_count_frequency_env(&p, "Type", "Bug").unwrap().evidence_spans, vec![2, 6, 10]);
        // Two lists {M,N} and {M}: running intersection is exactly the target.
        let i = gen_intersection(&p, None, 1).unwrap();
        assert_eq!(i.gold, Gold::Name("M".into()));
        assert_eq!(i.evidence_spans, vec![4, 8]);
        assert!(gen_intersection(&p, None, 5).is_err(), "lists below the minimum size");
    }

    #[test]
    fn published_quota_rows() {
        let q = QuotaConfig::published(Setting::KnowledgeIntensive, Format::Concise);
        let row: Vec<u32> = QuestionType::ALL.iter().map(|&t| q.count(32_768, t)).collect();
        assert_eq!(row, vec![25, 25, 25, 25, 16, 20, 14, 50]);
        for &b in &q.buckets {
            assert_eq!(q.bucket_total(b), 200);
        }
        assert_eq!(q.total(), 1600);
        let v = QuotaConfig::published(Setting::KnowledgeFree, Format::Verbose);
        assert_eq!(v.total(), 1600);
        assert_eq!(v.counts[&QuestionType::FindDuplicates].iter().sum::<u32>(), 199);
        assert_eq!(v.counts[&QuestionType::WeightedSummation].iter().sum::<u32>(), 107);
        assert_eq!(QuotaConfig::preset("paper-kf-verbose"), Some(v));
    }

    fn prefixes(format: Format, n: usize, bucket: u64) -> Vec<Prefix> {
        let u = generate_synthetic_universe(&SyntheticSpec::canonical(400), 12).unwrap();
        let mut out = Vec::new();
        let mut seed = 0;
        while out.len() < n {
            let mut cfg = match format {
                Format::Concise => RolloutConfig::concise(seed),
                Format::Verbose => RolloutConfig::verbose(seed),
            };
            cfg.stop_after_tokens = Some(bucket);
            let t = simulate(&u, &cfg).unwrap();
            seed += 1;
            for e in crate::postprocess::bucket_trajectory(
                &ApproxCounter,
                &crate::postprocess::BucketSpec::new(vec![bucket], 0.5).unwrap(),
                &format!("t{seed}"),
                &t,
            ) {
                out.push(Prefix::new(&e.id, e.bucket_limit, &t, e.rounds, &ApproxCounter));
            }
        }
        out
    }

    #[test]
    fn dataset_is_deterministic_and_exact() {
        let ps = prefixes(Format::Verbose, 6, 16_384);
        let mut quota = QuotaConfig::uniform(&[16_384], 3);
        quota.counts.insert(QuestionType::Intersection, vec![2]);
        let opts = DatasetOptions::default();
        let a = build_dataset(&ps, &quota, 5, &opts, &ApproxCounter).unwrap();
        let b = build_dataset(&ps, &quota, 5, &opts, &ApproxCounter).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len() as u32, quota.total());
        for s in &a {
            assert_eq!(s.acl_tokens, compute_acl(s, &ApproxCounter));
            assert!(s.evidence_spans.iter().all(|&i| i < s.messages.len()));
        }
        let empty = QuotaConfig::uniform(&[16_384], 0);
        assert!(build_dataset(&ps, &empty, 5, &opts, &ApproxCounter).unwrap().is_empty());
        let missing = QuotaConfig::uniform(&[65_536], 1);
        assert!(matches!(
            build_dataset(&ps, &missing, 5, &opts, &ApproxCounter),
            Err(Error::QuotaInfeasible { bucket: 65_536, .. })
        ));
    }

    #[test]
    fn sample_json_round_trip() {
        let ps = prefixes(Format::Concise, 2, 8_192);
        let quota = QuotaConfig::uniform(&[8_192], 1).restrict(&[8_192]);
        let mut quota = quota;
        quota.counts.insert(QuestionType::Intersection, vec![0]);
        let ds = build_dataset(&ps, &quota, 1, &DatasetOptions::default(), &ApproxCounter).unwrap();
        for s in ds {
            let line = serde_json::to_string(&s).unwrap();
            let back: QASample = serde_json::from_str(&line).unwrap();
            assert_eq!(back, s);
        }
    }
}
