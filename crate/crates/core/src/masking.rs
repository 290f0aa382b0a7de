//! Knowledge-free masking: a seeded bijection from item names, section
//! names and categorical labels to abstract symbols.
//!
//! Items become `Item_k`, sections `Attr_j`, and label `m` of section `j`
//! becomes `A{j}V{m}`, with `k`, `j` and `m` drawn from seeded permutations.
//! Numeric values are left alone so directional feedback keeps its meaning.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use aho_corasick::{AhoCorasick, MatchKind};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::environment::{Feedback, SectionFeedback, SectionJudgment};
use crate::error::{Error, Result};
use crate::harness::chat::{self, ChatMessage, Role};
use crate::postprocess::TokenCounter;
use crate::qa::{render_question, Gold, QASample, QuestionParams, SectionWeight, WeightTable};
use crate::query::{
    ConciseResult, Condition, SectionCandidates, SectionCondition, ToolQuery, ToolResult, VerboseResult,
};
use crate::rng::{self, streams};
use crate::rollout::{self, RoundRecord, Setting, ToolPhase, Trajectory};
use crate::universe::{AttributeSchema, Item, Section, SectionDomain, Universe};

pub const MASKED_THEME: &str = "item";
pub const MASKED_TOOL: &str = "query_items";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemSymbol {
    pub name: String,
    pub symbol: String,
    pub index: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionSymbol {
    pub name: String,
    pub symbol: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueSymbol {
    pub section: String,
    pub label: String,
    pub symbol: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct SymbolMapRepr {
    seed: u64,
    universe_fingerprint: String,
    masked_fingerprint: String,
    items: Vec<ItemSymbol>,
    sections: Vec<SectionSymbol>,
    values: Vec<ValueSymbol>,
}

/// The masking table. Serializes to a JSON sidecar.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "SymbolMapRepr", into = "SymbolMapRepr")]
pub struct SymbolMap {
    repr: SymbolMapRepr,
    item_fwd: HashMap<String, usize>,
    item_back: HashMap<String, usize>,
    section_fwd: HashMap<String, usize>,
    section_back: HashMap<String, usize>,
    value_fwd: HashMap<(String, String), usize>,
    value_back: HashMap<(String, String), usize>,
}

impl PartialEq for SymbolMap {
    fn eq(&self, other: &Self) -> bool {
        self.repr == other.repr
    }
}

impl From<SymbolMap> for SymbolMapRepr {
    fn from(m: SymbolMap) -> Self {
        m.repr
    }
}

impl TryFrom<SymbolMapRepr> for SymbolMap {
    type Error = String;

    fn try_from(repr: SymbolMapRepr) -> std::result::Result<Self, String> {
        fn index<K: std::hash::Hash + Eq>(keys: impl Iterator<Item = K>, what: &str) -> std::result::Result<HashMap<K, usize>, String> {
            let mut m = HashMap::new();
            for (i, k) in keys.enumerate() {
                if m.insert(k, i).is_some() {
                    return Err(format!("{what} is not injective"));
                }
            }
            Ok(m)
        }
        let item_fwd = index(repr.items.iter().map(|i| i.name.clone()), "item map")?;
        let item_back = index(repr.items.iter().map(|i| i.symbol.clone()), "item map inverse")?;
        let section_fwd = index(repr.sections.iter().map(|s| s.name.clone()), "section map")?;
        let section_back = index(repr.sections.iter().map(|s| s.symbol.clone()), "section map inverse")?;
        let value_fwd = index(repr.values.iter().map(|v| (v.section.clone(), v.label.clone())), "value map")?;
        let sym_of = |s: &str| repr.sections.iter().find(|x| x.name == s).map(|x| x.symbol.clone());
        let mut back_keys = Vec::with_capacity(repr.values.len());
        for v in &repr.values {
            let s = sym_of(&v.section).ok_or_else(|| format!("value for unknown section {:?}", v.section))?;
            back_keys.push((s, v.symbol.clone()));
        }
        let value_back = index(back_keys.into_iter(), "value map inverse")?;
        Ok(SymbolMap {
            repr,
            item_fwd,
            item_back,
            section_fwd,
            section_back,
            value_fwd,
            value_back,
        })
    }
}

fn oov(token: &str, location: impl Into<String>) -> Error {
    Error::OutOfVocabulary {
        token: token.to_string(),
        location: location.into(),
    }
}

fn permutation(n: usize, rng: &mut rng::Stream) -> Vec<u32> {
    let mut v: Vec<u32> = (1..=n as u32).collect();
    v.shuffle(rng);
    v
}

/// Deterministic for a fixed `(u, seed)`. Indices come from seeded
/// permutations so that symbols carry no ordering information.
pub fn build_symbol_map(u: &Universe, seed: u64) -> SymbolMap {
    let mut rng = rng::stream(seed, streams::SYMBOLS);
    let item_perm = permutation(u.len(), &mut rng);
    let items: Vec<ItemSymbol> = u
        .items()
        .iter()
        .zip(&item_perm)
        .map(|(it, &k)| ItemSymbol {
            name: it.name.clone(),
            symbol: format!("Item_{k}"),
            index: k,
        })
        .collect();
    let section_perm = permutation(u.schema().len(), &mut rng);
    let mut sections = Vec::new();
    let mut values = Vec::new();
    for (s, &j) in u.schema().sections().iter().zip(&section_perm) {
        sections.push(SectionSymbol {
            name: s.name.clone(),
            symbol: format!("Attr_{j}"),
        });
        let labels = s.labels();
        let value_perm = permutation(labels.len(), &mut rng);
        for (l, &m) in labels.iter().zip(&value_perm) {
            values.push(ValueSymbol {
                section: s.name.clone(),
                label: l.clone(),
                symbol: format!("A{j}V{m}"),
            });
        }
    }
    let partial = SymbolMap::try_from(SymbolMapRepr {
        seed,
        universe_fingerprint: u.fingerprint(),
        masked_fingerprint: String::new(),
        items,
        sections,
        values,
    })
    .expect("generated symbols are distinct");
    let masked = mask_universe(u, &partial).expect("the map covers its own universe");
    let mut repr = partial.repr;
    repr.masked_fingerprint = masked.fingerprint();
    SymbolMap::try_from(repr).expect("generated symbols are distinct")
}

impl SymbolMap {
    pub fn seed(&self) -> u64 {
        self.repr.seed
    }

    pub fn universe_fingerprint(&self) -> &str {
        &self.repr.universe_fingerprint
    }

    /// Fingerprint of the masked universe.
    pub fn masked_fingerprint(&self) -> &str {
        &self.repr.masked_fingerprint
    }

    pub fn items(&self) -> &[ItemSymbol] {
        &self.repr.items
    }

    pub fn sections(&self) -> &[SectionSymbol] {
        &self.repr.sections
    }

    pub fn values(&self) -> &[ValueSymbol] {
        &self.repr.values
    }

    /// SHA-256 of the sidecar JSON.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        crate::universe::hex(&Sha256::digest(serde_json::to_vec(&self.repr).expect("plain data")))
    }

    pub fn item(&self, name: &str) -> Option<&ItemSymbol> {
        self.item_fwd.get(name).map(|&i| &self.repr.items[i])
    }

    pub fn item_inverse(&self, symbol: &str) -> Option<&ItemSymbol> {
        self.item_back.get(symbol).map(|&i| &self.repr.items[i])
    }

    pub fn section(&self, name: &str) -> Option<&str> {
        self.section_fwd.get(name).map(|&i| self.repr.sections[i].symbol.as_str())
    }

    pub fn section_inverse(&self, symbol: &str) -> Option<&str> {
        self.section_back.get(symbol).map(|&i| self.repr.sections[i].name.as_str())
    }

    pub fn value(&self, section: &str, label: &str) -> Option<&str> {
        self.value_fwd
            .get(&(section.to_string(), label.to_string()))
            .map(|&i| self.repr.values[i].symbol.as_str())
    }

    /// `section` is the masked section name.
    pub fn value_inverse(&self, section: &str, symbol: &str) -> Option<&str> {
        self.value_back
            .get(&(section.to_string(), symbol.to_string()))
            .map(|&i| self.repr.values[i].label.as_str())
    }

    /// The inverse table, mapping symbols back to the originals.
    pub fn inverse(&self) -> SymbolMap {
        let repr = SymbolMapRepr {
            seed: self.repr.seed,
            universe_fingerprint: self.repr.masked_fingerprint.clone(),
            masked_fingerprint: self.repr.universe_fingerprint.clone(),
            items: self
                .repr
                .items
                .iter()
                .map(|i| ItemSymbol {
                    name: i.symbol.clone(),
                    symbol: i.name.clone(),
                    index: i.index,
                })
                .collect(),
            sections: self
                .repr
                .sections
                .iter()
                .map(|s| SectionSymbol {
                    name: s.symbol.clone(),
                    symbol: s.name.clone(),
                })
                .collect(),
            values: self
                .repr
                .values
                .iter()
                .map(|v| ValueSymbol {
                    section: self.section(&v.section).unwrap().to_string(),
                    label: v.symbol.clone(),
                    symbol: v.label.clone(),
                })
                .collect(),
        };
        SymbolMap::try_from(repr).expect("inverse of a bijection")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn name(&self, name: &str, at: &str) -> Result<String> {
        self.item(name).map(|i| i.symbol.clone()).ok_or_else(|| oov(name, at))
    }

    fn sec(&self, name: &str, at: &str) -> Result<String> {
        self.section(name).map(str::to_string).ok_or_else(|| oov(name, at))
    }

    fn val(&self, section: &str, label: &str, at: &str) -> Result<String> {
        self.value(section, label).map(str::to_string).ok_or_else(|| oov(label, at))
    }

    fn names(&self, names: &[String], at: &str) -> Result<Vec<String>> {
        names.iter().map(|n| self.name(n, at)).collect()
    }

    /// Free-text substitutions for prose: theme word and tool name, plus
    /// every section name.
    fn prose_terms(&self, theme: Option<&str>, tool: Option<&str>) -> Vec<(String, String)> {
        let mut terms: Vec<(String, String)> = self
            .repr
            .sections
            .iter()
            .map(|s| (s.name.clone(), s.symbol.clone()))
            .collect();
        if let Some(t) = tool {
            terms.push((t.to_string(), MASKED_TOOL.to_string()));
        }
        if let Some(t) = theme {
            terms.push((t.to_string(), MASKED_THEME.to_string()));
        }
        terms
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn bounded(text: &str, start: usize, end: usize) -> bool {
    let before = text[..start].chars().next_back();
    let after = text[end..].chars().next();
    !before.is_some_and(is_word_char) && !after.is_some_and(is_word_char)
}

/// Replaces whole-word occurrences of each term, longest first.
fn substitute(text: &str, terms: &[(String, String)]) -> String {
    let terms: Vec<&(String, String)> = terms.iter().filter(|(a, _)| !a.is_empty()).collect();
    if terms.is_empty() {
        return text.to_string();
    }
    let ac = AhoCorasick::builder()
        .match_kind(MatchKind::LeftmostLongest)
        .build(terms.iter().map(|(a, _)| a))
        .expect("plain string patterns");
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for m in ac.find_iter(text) {
        if !bounded(text, m.start(), m.end()) {
            continue;
        }
        out.push_str(&text[last..m.start()]);
        out.push_str(&terms[m.pattern().as_usize()].1);
        last = m.end();
    }
    out.push_str(&text[last..]);
    out
}

/// Masked universe. Items keep their ids and display order; dex numbers
/// become the masked index.
pub fn mask_universe(u: &Universe, m: &SymbolMap) -> Result<Universe> {
    let mut sections = Vec::with_capacity(u.schema().len());
    for s in u.schema().sections() {
        let at = format!("schema section {:?}", s.name);
        let domain = match &s.domain {
            SectionDomain::Categorical { values, max_values } => SectionDomain::Categorical {
                values: values
                    .iter()
                    .map(|l| m.val(&s.name, l, &at))
                    .collect::<Result<Vec<_>>>()?,
                max_values: *max_values,
            },
            numeric => numeric.clone(),
        };
        sections.push(Section {
            name: m.sec(&s.name, &at)?,
            column: None,
            domain,
        });
    }
    let schema = AttributeSchema::new(sections)?;
    let rank: HashMap<_, usize> = u.sorted().enumerate().map(|(r, it)| (it.id, r)).collect();
    let mut items = Vec::with_capacity(u.len());
    for it in u.items() {
        let sym = m.item(&it.name).ok_or_else(|| oov(&it.name, format!("item {}", it.id)))?;
        items.push(Item {
            id: it.id,
            name: sym.symbol.clone(),
            dex: Some(sym.index),
            sort_key: Some(format!("{:06}", rank[&it.id])),
            values: it.values.clone(),
        });
    }
    Universe::new(schema, items)
}

pub fn mask_query(q: &ToolQuery, m: &SymbolMap, at: &str) -> Result<ToolQuery> {
    let conditions = q
        .conditions
        .iter()
        .map(|c| {
            Ok(match c {
                Condition::Value {
                    section,
                    values,
                    exclude,
                } => Condition::Value {
                    section: m.sec(section, at)?,
                    values: values.iter().map(|v| m.val(section, v, at)).collect::<Result<_>>()?,
                    exclude: *exclude,
                },
                Condition::Numeric {
                    section,
                    comparator,
                    threshold,
                } => Condition::Numeric {
                    section: m.sec(section, at)?,
                    comparator: *comparator,
                    threshold: *threshold,
                },
            })
        })
        .collect::<Result<_>>()?;
    Ok(ToolQuery { conditions })
}

pub fn mask_result(r: &ToolResult, m: &SymbolMap, at: &str) -> Result<ToolResult> {
    Ok(match r {
        ToolResult::Concise(c) => ToolResult::Concise(ConciseResult {
            intersection: m.names(&c.intersection, at)?,
        }),
        ToolResult::Verbose(v) => ToolResult::Verbose(VerboseResult {
            per_section: v
                .per_section
                .iter()
                .map(|e| {
                    Ok(SectionCandidates {
                        section: m.sec(&e.section, at)?,
                        conditions: e
                            .conditions
                            .iter()
                            .map(|c| {
                                Ok(match c {
                                    SectionCondition::Value { values, exclude } => SectionCondition::Value {
                                        values: values.iter().map(|l| m.val(&e.section, l, at)).collect::<Result<_>>()?,
                                        exclude: *exclude,
                                    },
                                    n => n.clone(),
                                })
                            })
                            .collect::<Result<_>>()?,
                        candidates: m.names(&e.candidates, at)?,
                    })
                })
                .collect::<Result<_>>()?,
        }),
    })
}

pub fn mask_feedback(f: &Feedback, m: &SymbolMap, at: &str) -> Result<Feedback> {
    let guess = m.item(&f.guess).ok_or_else(|| oov(&f.guess, at))?;
    Ok(Feedback {
        round: f.round,
        guess: guess.symbol.clone(),
        dex: guess.index,
        sections: f
            .sections
            .iter()
            .map(|s| {
                Ok(SectionFeedback {
                    section: m.sec(&s.section, at)?,
                    judgment: match &s.judgment {
                        SectionJudgment::Labels(l) => SectionJudgment::Labels(
                            l.iter()
                                .map(|j| {
                                    Ok(crate::environment::LabelJudgment {
                                        label: m.val(&s.section, &j.label, at)?,
                                        correct: j.correct,
                                    })
                                })
                                .collect::<Result<_>>()?,
                        ),
                        n => n.clone(),
                    },
                })
            })
            .collect::<Result<_>>()?,
        overall: f.overall,
        rounds_remaining: f.rounds_remaining,
    })
}

fn mask_round(r: &RoundRecord, m: &SymbolMap) -> Result<RoundRecord> {
    let at = format!("round {}", r.index);
    Ok(RoundRecord {
        index: r.index,
        tool: r
            .tool
            .as_ref()
            .map(|t| {
                Ok::<_, Error>(ToolPhase {
                    call_id: t.call_id.clone(),
                    query: mask_query(&t.query, m, &at)?,
                    result: mask_result(&t.result, m, &at)?,
                })
            })
            .transpose()?,
        guess_id: r.guess_id,
        guess: m.name(&r.guess, &at)?,
        feedback: mask_feedback(&r.feedback, m, &at)?,
    })
}

pub fn mask_trajectory(t: &Trajectory, m: &SymbolMap) -> Result<Trajectory> {
    let cfg = &t.meta.config;
    let terms = m.prose_terms(Some(&cfg.theme), Some(&t.tool_name));
    let mut config = cfg.clone();
    config.setting = Setting::KnowledgeFree;
    config.theme = MASKED_THEME.into();
    config.tool_name = MASKED_TOOL.into();
    let rounds = t.rounds.iter().map(|r| mask_round(r, m)).collect::<Result<_>>()?;
    Ok(Trajectory {
        system_prompt: substitute(&t.system_prompt, &terms),
        tool_name: MASKED_TOOL.into(),
        rounds,
        meta: rollout::TrajectoryMeta {
            config,
            universe_fingerprint: m.masked_fingerprint().to_string(),
            target_id: t.meta.target_id,
            target_name: m.name(&t.meta.target_name, "trajectory target")?,
            seed: t.meta.seed,
            solved: t.meta.solved,
            symbol_map: Some(m.fingerprint()),
        },
    })
}

/// Maps names in a gold answer. Set-valued answers are stored sorted, so
/// `sorted` re-sorts them under the new names; ordered answers keep order.
pub fn mask_gold(g: &Gold, m: &SymbolMap, sorted: bool) -> Result<Gold> {
    Ok(match g {
        Gold::Name(n) => Gold::Name(m.name(n, "gold")?),
        Gold::Names(v) => {
            let mut out = m.names(v, "gold")?;
            if sorted {
                out.sort();
            }
            Gold::Names(out)
        }
        other => other.clone(),
    })
}

fn mask_weights(w: &WeightTable, m: &SymbolMap) -> Result<WeightTable> {
    Ok(WeightTable {
        weights: w
            .weights
            .iter()
            .map(|x| {
                Ok(SectionWeight {
                    section: m.sec(&x.section, "weight table")?,
                    weight: x.weight,
                })
            })
            .collect::<Result<_>>()?,
    })
}

pub fn mask_params(p: &QuestionParams, m: &SymbolMap) -> Result<QuestionParams> {
    let at = "question";
    Ok(match p {
        QuestionParams::CountFrequencyTool { round, item } => QuestionParams::CountFrequencyTool {
            round: *round,
            item: m.name(item, at)?,
        },
        QuestionParams::FindDuplicates { round_a, round_b, item } => QuestionParams::FindDuplicates {
            round_a: *round_a,
            round_b: *round_b,
            item: m.name(item, at)?,
        },
        QuestionParams::FindTargetOffsets { round, item, section } => QuestionParams::FindTargetOffsets {
            round: *round,
            item: m.name(item, at)?,
            section: section.as_deref().map(|s| m.sec(s, at)).transpose()?,
        },
        QuestionParams::CountFrequencyEnv { section, value } => QuestionParams::CountFrequencyEnv {
            section: m.sec(section, at)?,
            value: m.val(section, value, at)?,
        },
        QuestionParams::RoundLargestValue { section } => QuestionParams::RoundLargestValue {
            section: m.sec(section, at)?,
        },
        QuestionParams::WeightedSummation {
            round_a,
            round_b,
            weights,
        } => QuestionParams::WeightedSummation {
            round_a: *round_a,
            round_b: *round_b,
            weights: mask_weights(weights, m)?,
        },
        other => other.clone(),
    })
}

/// Reads the theme word out of a generated system prompt.
fn prompt_theme(prompt: &str) -> Option<&str> {
    let rest = prompt.strip_prefix("You are playing a guess-the-")?;
    rest.split_once(" game").map(|(t, _)| t)
}

pub fn mask_messages(messages: &[ChatMessage], m: &SymbolMap) -> Result<Vec<ChatMessage>> {
    let transcript = chat::parse_transcript(messages, None)?;
    let system = &messages[0].content.text();
    let tool = transcript.tool_name.clone();
    let terms = m.prose_terms(prompt_theme(system), tool.as_deref());
    let mut out = vec![chat::system_message(&substitute(system, &terms))];
    for r in &transcript.rounds {
        out.extend(chat::round_messages(MASKED_TOOL, &mask_round(r, m)?));
    }
    Ok(out)
}

/// Masks a sample: messages, question parameters and gold answer. The
/// question text is re-rendered and ACL recounted.
pub fn mask_sample(s: &QASample, m: &SymbolMap, counter: &dyn TokenCounter) -> Result<QASample> {
    let messages = mask_messages(&s.messages, m)?;
    let params = mask_params(&s.params, m)?;
    let rounds = chat::rounds_in(messages.len());
    let mut out = QASample {
        sample_id: s.sample_id.replacen(Setting::KnowledgeIntensive.short(), Setting::KnowledgeFree.short(), 1),
        setting: Setting::KnowledgeFree,
        format: s.format,
        bucket_limit: s.bucket_limit,
        question_type: s.question_type,
        messages: std::sync::Arc::new(messages),
        question_text: render_question(&params, s.format, rounds),
        gold: mask_gold(&s.gold, m, matches!(s.params, QuestionParams::Intersection { .. }))?,
        evidence_spans: s.evidence_spans.clone(),
        acl_tokens: 0,
        seed: s.seed,
        weights_used: s.weights_used.as_ref().map(|w| mask_weights(w, m)).transpose()?,
        params,
    };
    out.acl_tokens = crate::qa::compute_acl(&out, counter);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Leak {
    pub token: String,
    pub location: String,
}

/// Finds original vocabulary (item, section and label strings) occurring
/// as whole words in masked texts. Strings that are also symbols are not
/// reported.
pub fn leakage_check<'a>(texts: impl IntoIterator<Item = (String, &'a str)>, m: &SymbolMap) -> Vec<Leak> {
    let symbols: std::collections::HashSet<&str> = m
        .items()
        .iter()
        .map(|i| i.symbol.as_str())
        .chain(m.sections().iter().map(|s| s.symbol.as_str()))
        .chain(m.values().iter().map(|v| v.symbol.as_str()))
        .collect();
    let mut vocab: Vec<&str> = m
        .items()
        .iter()
        .map(|i| i.name.as_str())
        .chain(m.sections().iter().map(|s| s.name.as_str()))
        .chain(m.values().iter().map(|v| v.label.as_str()))
        .filter(|s| !s.is_empty() && !symbols.contains(s))
        .collect();
    vocab.sort_unstable();
    vocab.dedup();
    if vocab.is_empty() {
        return Vec::new();
    }
    let ac = AhoCorasick::builder()
        .match_kind(MatchKind::Standard)
        .build(&vocab)
        .expect("plain string patterns");
    let mut out = Vec::new();
    for (location, text) in texts {
        let mut found = BTreeMap::new();
        for hit in ac.find_overlapping_iter(text) {
            if bounded(text, hit.start(), hit.end()) {
                found.entry(vocab[hit.pattern().as_usize()]).or_insert(hit.start());
            }
        }
        for (token, offset) in found {
            out.push(Leak {
                token: token.to_string(),
                location: format!("{location} at byte {offset}"),
            });
        }
    }
    out
}

fn message_texts(prefix: &str, messages: &[ChatMessage]) -> Vec<(String, String)> {
    messages
        .iter()
        .enumerate()
        .map(|(i, msg)| (format!("{prefix}message {i}"), msg.counted_text()))
        .collect()
}

pub fn leakage_in_messages(messages: &[ChatMessage], m: &SymbolMap) -> Vec<Leak> {
    let texts = message_texts("", messages);
    leakage_check(texts.iter().map(|(l, t)| (l.clone(), t.as_str())), m)
}

pub fn leakage_in_sample(s: &QASample, m: &SymbolMap) -> Vec<Leak> {
    let mut texts = message_texts(&format!("{} ", s.sample_id), &s.messages);
    texts.push((format!("{} question", s.sample_id), s.question_text.clone()));
    texts.push((format!("{} gold", s.sample_id), s.gold.answer_text()));
    leakage_check(texts.iter().map(|(l, t)| (l.clone(), t.as_str())), m)
}

pub fn leakage_in_trajectory(t: &Trajectory, m: &SymbolMap) -> Vec<Leak> {
    leakage_in_messages(&chat::serialize_trajectory(t), m)
}

/// Checks that a message list uses only masked roles and symbols: every
/// message of the masked layout keeps its role.
pub fn same_shape(a: &[ChatMessage], b: &[ChatMessage]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.role == y.role
                && x.tool_calls.as_ref().map(Vec::len) == y.tool_calls.as_ref().map(Vec::len)
                && (x.role != Role::Tool || x.tool_call_id == y.tool_call_id)
        })
}
