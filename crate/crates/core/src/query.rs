//! Structured attribute conditions and the two tool result formats.
//!
//! Concise results carry only the intersection over all conditions. Verbose
//! results carry one candidate list per queried section, filtered by that
//! section's own conditions only.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pyjson;
use crate::universe::{AttrValue, AttributeSchema, Item, ItemId, SectionKind, Universe};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "!=")]
    Ne,
}

impl Comparator {
    pub fn holds(self, value: i64, threshold: i64) -> bool {
        match self {
            Comparator::Lt => value < threshold,
            Comparator::Le => value <= threshold,
            Comparator::Eq => value == threshold,
            Comparator::Ge => value >= threshold,
            Comparator::Gt => value > threshold,
            Comparator::Ne => value != threshold,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Eq => "==",
            Comparator::Ge => ">=",
            Comparator::Gt => ">",
            Comparator::Ne => "!=",
        }
    }
}

impl fmt::Display for Comparator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Condition {
    Value {
        section: String,
        values: Vec<String>,
        #[serde(default, skip_serializing_if = "is_false")]
        exclude: bool,
    },
    Numeric {
        section: String,
        comparator: Comparator,
        threshold: i64,
    },
}

impl Condition {
    pub fn include(section: &str, values: &[&str]) -> Self {
        Condition::Value {
            section: section.into(),
            values: values.iter().map(|v| v.to_string()).collect(),
            exclude: false,
        }
    }

    pub fn exclude(section: &str, values: &[&str]) -> Self {
        Condition::Value {
            section: section.into(),
            values: values.iter().map(|v| v.to_string()).collect(),
            exclude: true,
        }
    }

    pub fn numeric(section: &str, comparator: Comparator, threshold: i64) -> Self {
        Condition::Numeric {
            section: section.into(),
            comparator,
            threshold,
        }
    }

    pub fn section(&self) -> &str {
        match self {
            Condition::Value { section, .. } | Condition::Numeric { section, .. } => section,
        }
    }

    fn without_section(&self) -> SectionCondition {
        match self {
            Condition::Value { values, exclude, .. } => SectionCondition::Value {
                values: values.clone(),
                exclude: *exclude,
            },
            Condition::Numeric {
                comparator,
                threshold,
                ..
            } => SectionCondition::Numeric {
                comparator: *comparator,
                threshold: *threshold,
            },
        }
    }
}

/// A condition as it appears inside a verbose `per_section` entry, where the
/// section is implied by the enclosing entry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SectionCondition {
    Value {
        values: Vec<String>,
        #[serde(default, skip_serializing_if = "is_false")]
        exclude: bool,
    },
    Numeric { comparator: Comparator, threshold: i64 },
}

impl SectionCondition {
    pub fn with_section(&self, section: &str) -> Condition {
        match self {
            SectionCondition::Value { values, exclude } => Condition::Value {
                section: section.into(),
                values: values.clone(),
                exclude: *exclude,
            },
            SectionCondition::Numeric {
                comparator,
                threshold,
            } => Condition::Numeric {
                section: section.into(),
                comparator: *comparator,
                threshold: *threshold,
            },
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolQuery {
    pub conditions: Vec<Condition>,
}

impl ToolQuery {
    pub fn new(conditions: Vec<Condition>) -> Self {
        ToolQuery { conditions }
    }

    /// Wire form used as the tool-call `arguments` string.
    pub fn to_arguments(&self) -> String {
        pyjson::to_string(self)
    }

    pub fn validate(&self, schema: &AttributeSchema) -> Result<()> {
        compile(schema, self).map(|_| ())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Test {
    Labels { labels: Vec<u32>, exclude: bool },
    Number { comparator: Comparator, threshold: i64 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Compiled {
    section: usize,
    test: Test,
}

impl Compiled {
    fn matches(&self, item: &Item) -> bool {
        match (&self.test, &item.values[self.section]) {
            (Test::Labels { labels, exclude }, AttrValue::Labels(have)) => {
                let any = have.iter().any(|h| labels.binary_search(h).is_ok());
                any != *exclude
            }
            (Test::Number { comparator, threshold }, AttrValue::Number(v)) => comparator.holds(*v, *threshold),
            _ => false,
        }
    }
}

fn compile_one(schema: &AttributeSchema, c: &Condition) -> Result<Compiled> {
    let (idx, section) = schema.section(c.section())?;
    match c {
        Condition::Value { values, exclude, .. } => {
            if section.kind() != SectionKind::Categorical {
                return Err(Error::KindMismatch {
                    section: section.name.clone(),
                    expected: "categorical",
                    actual: section.kind().as_str(),
                });
            }
            if values.is_empty() {
                return Err(Error::InvalidCondition(format!(
                    "value condition on {:?} lists no values",
                    section.name
                )));
            }
            let mut labels = Vec::with_capacity(values.len());
            for v in values {
                let id = schema.label_id(idx, v).ok_or_else(|| Error::OutOfDomain {
                    section: section.name.clone(),
                    value: v.clone(),
                })?;
                labels.push(id);
            }
            labels.sort_unstable();
            if labels.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidCondition(format!(
                    "value condition on {:?} repeats a value",
                    section.name
                )));
            }
            Ok(Compiled {
                section: idx,
                test: Test::Labels {
                    labels,
                    exclude: *exclude,
                },
            })
        }
        Condition::Numeric {
            comparator,
            threshold,
            ..
        } => {
            if section.kind() != SectionKind::Numeric {
                return Err(Error::KindMismatch {
                    section: section.name.clone(),
                    expected: "numeric",
                    actual: section.kind().as_str(),
                });
            }
            Ok(Compiled {
                section: idx,
                test: Test::Number {
                    comparator: *comparator,
                    threshold: *threshold,
                },
            })
        }
    }
}

fn compile(schema: &AttributeSchema, q: &ToolQuery) -> Result<Vec<Compiled>> {
    let compiled = q
        .conditions
        .iter()
        .map(|c| compile_one(schema, c))
        .collect::<Result<Vec<_>>>()?;
    let mut numeric_sections: Vec<usize> = compiled
        .iter()
        .filter(|c| matches!(c.test, Test::Number { .. }))
        .map(|c| c.section)
        .collect();
    numeric_sections.sort_unstable();
    if let Some(w) = numeric_sections.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::InvalidCondition(format!(
            "more than one numeric condition on {:?}",
            schema.sections()[w[0]].name
        )));
    }
    Ok(compiled)
}

/// Whether one item satisfies one condition. Include conditions match when
/// the item carries any of the listed labels; exclude conditions match when
/// it carries none of them.
pub fn match_item(schema: &AttributeSchema, item: &Item, c: &Condition) -> Result<bool> {
    Ok(compile_one(schema, c)?.matches(item))
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConciseResult {
    pub intersection: Vec<String>,
}

impl ConciseResult {
    pub fn render(&self) -> String {
        pyjson::to_string(self)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionCandidates {
    pub section: String,
    pub conditions: Vec<SectionCondition>,
    pub candidates: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerboseResult {
    pub per_section: Vec<SectionCandidates>,
}

impl VerboseResult {
    /// Names present in every section's list, in list order.
    pub fn intersection(&self) -> Vec<String> {
        let Some((first, rest)) = self.per_section.split_first() else {
            return Vec::new();
        };
        let others: Vec<std::collections::HashSet<&str>> = rest
            .iter()
            .map(|s| s.candidates.iter().map(String::as_str).collect())
            .collect();
        first
            .candidates
            .iter()
            .filter(|n| others.iter().all(|o| o.contains(n.as_str())))
            .cloned()
            .collect()
    }

    pub fn render(&self) -> String {
        pyjson::to_string(self)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ToolResult {
    Concise(ConciseResult),
    Verbose(VerboseResult),
}

impl ToolResult {
    pub fn render(&self) -> String {
        match self {
            ToolResult::Concise(c) => c.render(),
            ToolResult::Verbose(v) => v.render(),
        }
    }

    /// All candidate lists in order: one for concise, one per section for
    /// verbose.
    pub fn lists(&self) -> Vec<&[String]> {
        match self {
            ToolResult::Concise(c) => vec![c.intersection.as_slice()],
            ToolResult::Verbose(v) => v.per_section.iter().map(|s| s.candidates.as_slice()).collect(),
        }
    }

    /// Items the tool result allows: the intersection for concise, the
    /// intersection of the per-section lists for verbose.
    pub fn candidates(&self) -> Vec<String> {
        match self {
            ToolResult::Concise(c) => c.intersection.clone(),
            ToolResult::Verbose(v) => v.intersection(),
        }
    }
}

/// Ids of the items satisfying every condition, in output order.
pub fn matching_ids(u: &Universe, q: &ToolQuery) -> Result<Vec<ItemId>> {
    let compiled = compile(u.schema(), q)?;
    Ok(u.sorted()
        .filter(|item| compiled.iter().all(|c| c.matches(item)))
        .map(|item| item.id)
        .collect())
}

pub fn query_concise(u: &Universe, q: &ToolQuery) -> Result<ConciseResult> {
    let compiled = compile(u.schema(), q)?;
    Ok(ConciseResult {
        intersection: u
            .sorted()
            .filter(|item| compiled.iter().all(|c| c.matches(item)))
            .map(|item| item.name.clone())
            .collect(),
    })
}

pub fn query_verbose(u: &Universe, q: &ToolQuery) -> Result<VerboseResult> {
    let compiled = compile(u.schema(), q)?;
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for (ci, c) in compiled.iter().enumerate() {
        match groups.iter_mut().find(|(s, _)| *s == c.section) {
            Some((_, members)) => members.push(ci),
            None => groups.push((c.section, vec![ci])),
        }
    }
    let per_section = groups
        .into_iter()
        .map(|(section, members)| SectionCandidates {
            section: u.schema().sections()[section].name.clone(),
            conditions: members.iter().map(|&m| q.conditions[m].without_section()).collect(),
            candidates: u
                .sorted()
                .filter(|item| members.iter().all(|&m| compiled[m].matches(item)))
                .map(|item| item.name.clone())
                .collect(),
        })
        .collect();
    Ok(VerboseResult { per_section })
}
