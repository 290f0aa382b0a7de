//! Rule-based agent rollouts.
//!
//! The simulated agent opens with a random guess, then loops: derive a tool
//! query from remembered feedback, call the tool, guess uniformly among the
//! candidates it has not tried yet, and read the host's feedback. Memory
//! decay, section masking and epsilon relaxation keep it from converging
//! too fast.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::environment::{new_game, Feedback, Verdict};
use crate::error::{Error, Result};
use crate::harness::chat;
use crate::masking;
use crate::postprocess::{ApproxCounter, TokenCounter};
use crate::query::{query_concise, query_verbose, Comparator, Condition, ToolQuery, ToolResult};
use crate::rng::{self, streams, Stream};
use crate::universe::{ItemId, Universe};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Concise,
    Verbose,
}

impl Format {
    pub fn as_str(self) -> &'static str {
        match self {
            Format::Concise => "concise",
            Format::Verbose => "verbose",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    KnowledgeIntensive,
    KnowledgeFree,
}

impl Setting {
    pub fn short(self) -> &'static str {
        match self {
            Setting::KnowledgeIntensive => "ki",
            Setting::KnowledgeFree => "kf",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub format: Format,
    pub setting: Setting,
    pub max_rounds: u32,
    /// Probability of relaxing one numeric bound in a query.
    pub epsilon: f64,
    /// Rounds of feedback the agent always remembers.
    pub history_window: u32,
    /// Probability that a constraint older than the window is forgotten.
    pub forget_history_prob: f64,
    /// Probability that a section is left out of a query.
    pub mask_prob: f64,
    pub max_mask_sections: usize,
    pub seed: u64,
    /// Stop once the serialized trajectory exceeds this many tokens.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_after_tokens: Option<u64>,
    #[serde(default = "default_theme")]
    pub theme: String,
    #[serde(default = "default_tool")]
    pub tool_name: String,
}

fn default_theme() -> String {
    "Pokemon".into()
}

fn default_tool() -> String {
    "query_pokemon".into()
}

impl RolloutConfig {
    /// Long, low-density histories: the agent keeps only the latest feedback
    /// and often leaves sections out, so the intersection stays wide.
    pub fn concise(seed: u64) -> Self {
        RolloutConfig {
            format: Format::Concise,
            setting: Setting::KnowledgeIntensive,
            max_rounds: 2010,
            epsilon: 0.3,
            history_window: 1,
            forget_history_prob: 1.0,
            mask_prob: 0.5,
            max_mask_sections: 2,
            seed,
            stop_after_tokens: None,
            theme: default_theme(),
            tool_name: default_tool(),
        }
    }

    /// Few rounds with large per-section candidate lists.
    pub fn verbose(seed: u64) -> Self {
        RolloutConfig {
            format: Format::Verbose,
            max_rounds: 260,
            epsilon: 0.3,
            history_window: 1,
            forget_history_prob: 1.0,
            mask_prob: 0.25,
            max_mask_sections: 1,
            ..RolloutConfig::concise(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("epsilon", self.epsilon),
            ("forget_history_prob", self.forget_history_prob),
            ("mask_prob", self.mask_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.history_window == 0 {
            return Err(Error::Config("history_window must be at least 1".into()));
        }
        if self.max_rounds == 0 {
            return Err(Error::Config("max_rounds must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolPhase {
    pub call_id: String,
    pub query: ToolQuery,
    pub result: ToolResult,
}

/// One round. The opening round has no tool phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub index: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool: Option<ToolPhase>,
    pub guess_id: ItemId,
    pub guess: String,
    pub feedback: Feedback,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub config: RolloutConfig,
    pub universe_fingerprint: String,
    pub target_id: ItemId,
    pub target_name: String,
    pub seed: u64,
    pub solved: bool,
    /// Fingerprint of the symbol map, for masked trajectories.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symbol_map: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub system_prompt: String,
    pub tool_name: String,
    pub rounds: Vec<RoundRecord>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn format(&self) -> Format {
        self.meta.config.format
    }

    pub fn setting(&self) -> Setting {
        self.meta.config.setting
    }

    /// Keeps the first `n` rounds.
    pub fn prefix(&self, n: usize) -> Trajectory {
        Trajectory {
            system_prompt: self.system_prompt.clone(),
            tool_name: self.tool_name.clone(),
            rounds: self.rounds[..n.min(self.rounds.len())].to_vec(),
            meta: TrajectoryMeta {
                solved: self.rounds[..n.min(self.rounds.len())]
                    .last()
                    .is_some_and(|r| r.feedback.overall == Verdict::Correct),
                ..self.meta.clone()
            },
        }
    }
}

pub fn system_prompt(theme: &str, tool_name: &str, sections: &[&str], max_rounds: u32) -> String {
    format!(
        "You are playing a guess-the-{theme} game. The host has secretly chosen one {theme} from a fixed catalogue, \
         and no two entries share the same attributes ({}). Each round you may call the {tool_name} tool with a list \
         of attribute conditions to search the catalogue, then you must guess one {theme} by writing its name inside \
         <answer></answer> tags. After every guess the host reports, for each attribute section, which of the guessed \
         values are correct; numeric values also say whether the guess was too low or too high. You have {max_rounds} rounds.",
        sections.join(", ")
    )
}

pub fn think_text(tool_name: &str) -> String {
    format!("<think>Thinking and calling {tool_name}.</think>")
}

/// Message index of the assistant tool call in round `index` (2-based, the
/// opening round has none); the call id is derived from it.
pub fn call_id(index: u32) -> String {
    format!("call_{}", 3 + 4 * (index - 2))
}

#[derive(Default)]
struct SectionAcc {
    includes: Vec<String>,
    excludes: Vec<String>,
    equal: Option<i64>,
    lower: Option<(i64, u32)>,
    upper: Option<(i64, u32)>,
}

/// Builds the agent's next tool query from the feedback it has seen.
///
/// Feedback from the last `history_window` rounds is always used; each older
/// constraint is dropped with `forget_history_prob`. Surviving sections are
/// then each masked with `mask_prob` (at most `max_mask_sections` of them),
/// and with probability `epsilon` one numeric bound is loosened to the
/// previous weaker bound for that section, or removed if there is none.
pub fn derive_constraints(log: &[Feedback], cfg: &RolloutConfig, rng: &mut Stream) -> ToolQuery {
    let Some(latest) = log.last() else {
        return ToolQuery::default();
    };
    let window_start = latest.round.saturating_sub(cfg.history_window - 1);

    let mut order: Vec<String> = Vec::new();
    let mut acc: Vec<SectionAcc> = Vec::new();
    let slot = |order: &mut Vec<String>, acc: &mut Vec<SectionAcc>, name: &str| -> usize {
        match order.iter().position(|s| s == name) {
            Some(i) => i,
            None => {
                order.push(name.to_string());
                acc.push(SectionAcc::default());
                order.len() - 1
            }
        }
    };
    for s in &latest.sections {
        slot(&mut order, &mut acc, &s.section);
    }

    for f in log {
        let in_window = f.round >= window_start;
        for c in f.implied_constraints() {
            if !in_window && rng.gen::<f64>() < cfg.forget_history_prob {
                continue;
            }
            let i = slot(&mut order, &mut acc, c.section());
            let a = &mut acc[i];
            match c {
                Condition::Value { values, exclude, .. } => {
                    let target = if exclude { &mut a.excludes } else { &mut a.includes };
                    for v in values {
                        if !target.contains(&v) {
                            target.push(v);
                        }
                    }
                }
                Condition::Numeric {
                    comparator,
                    threshold,
                    ..
                } => match comparator {
                    Comparator::Eq => a.equal = Some(threshold),
                    Comparator::Gt => {
                        a.lower = match a.lower {
                            Some((t, first)) => Some((threshold.max(t), first)),
                            None => Some((threshold, f.round)),
                        };
                    }
                    Comparator::Lt => {
                        a.upper = match a.upper {
                            Some((t, first)) => Some((threshold.min(t), first)),
                            None => Some((threshold, f.round)),
                        };
                    }
                    _ => unreachable!("feedback implies only ==, > and <"),
                },
            }
        }
    }

    let mut masked = 0usize;
    let mut conditions = Vec::new();
    for (name, a) in order.iter().zip(acc) {
        let mut section_conds = Vec::new();
        for v in a.includes {
            section_conds.push(Condition::Value {
                section: name.clone(),
                values: vec![v],
                exclude: false,
            });
        }
        if !a.excludes.is_empty() {
            section_conds.push(Condition::Value {
                section: name.clone(),
                values: a.excludes,
                exclude: true,
            });
        }
        let numeric = match (a.equal, a.lower, a.upper) {
            (Some(v), _, _) => Some((Comparator::Eq, v)),
            (None, Some((lo, lr)), Some((hi, hr))) => Some(if hr < lr { (Comparator::Lt, hi) } else { (Comparator::Gt, lo) }),
            (None, Some((lo, _)), None) => Some((Comparator::Gt, lo)),
            (None, None, Some((hi, _))) => Some((Comparator::Lt, hi)),
            (None, None, None) => None,
        };
        if let Some((comparator, threshold)) = numeric {
            section_conds.push(Condition::Numeric {
                section: name.clone(),
                comparator,
                threshold,
            });
        }
        if section_conds.is_empty() {
            continue;
        }
        if masked < cfg.max_mask_sections && rng.gen::<f64>() < cfg.mask_prob {
            masked += 1;
            continue;
        }
        conditions.extend(section_conds);
    }

    if rng.gen::<f64>() < cfg.epsilon {
        let numeric: Vec<usize> = conditions
            .iter()
            .enumerate()
            .filter(|(_, c)| matches!(c, Condition::Numeric { .. }))
            .map(|(i, _)| i)
            .collect();
        if !numeric.is_empty() {
            let pick = numeric[rng.gen_range(0..numeric.len())];
            match relaxed(log, &conditions[pick]) {
                Some(c) => conditions[pick] = c,
                None => {
                    conditions.remove(pick);
                }
            }
        }
    }
    ToolQuery::new(conditions)
}

/// The most recent strictly weaker bound of the same direction in the log.
fn relaxed(log: &[Feedback], c: &Condition) -> Option<Condition> {
    let Condition::Numeric {
        section,
        comparator,
        threshold,
    } = c
    else {
        return None;
    };
    if *comparator == Comparator::Eq {
        return None;
    }
    log.iter().rev().find_map(|f| {
        f.implied_constraints().into_iter().find_map(|ic| match ic {
            Condition::Numeric {
                section: s,
                comparator: cmp,
                threshold: t,
            } if s == *section && cmp == *comparator => {
                let weaker = match cmp {
                    Comparator::Gt => t < *threshold,
                    Comparator::Lt => t > *threshold,
                    _ => false,
                };
                weaker.then(|| Condition::numeric(section, cmp, t))
            }
            _ => None,
        })
    })
}

/// Uniform draw from the candidate list.
pub fn select_guess<'a>(candidates: &'a [String], rng: &mut Stream) -> Option<&'a str> {
    if candidates.is_empty() {
        None
    } else {
        Some(&candidates[rng.gen_range(0..candidates.len())])
    }
}

/// Earlier guesses the agent still recalls and so will not repeat: those in
/// the history window, plus each older one kept with probability
/// `1 - forget_history_prob`.
fn remembered_guesses(rounds: &[RoundRecord], cfg: &RolloutConfig, rng: &mut Stream) -> HashSet<ItemId> {
    let window_start = rounds.len().saturating_sub(cfg.history_window as usize);
    rounds
        .iter()
        .enumerate()
        .filter(|(i, _)| *i >= window_start || rng.gen::<f64>() >= cfg.forget_history_prob)
        .map(|(_, r)| r.guess_id)
        .collect()
}

/// Runs one game to completion (correct guess, `max_rounds`, or the token
/// limit). Deterministic for a fixed `(u, cfg)`.
pub fn simulate(u: &Universe, cfg: &RolloutConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let mut game = new_game(u, cfg.seed, cfg.max_rounds)?;
    let mut rng = rng::stream(cfg.seed, streams::AGENT);
    let section_names: Vec<&str> = u.schema().sections().iter().map(|s| s.name.as_str()).collect();
    let prompt = system_prompt(&cfg.theme, &cfg.tool_name, &section_names, cfg.max_rounds);
    let counter = ApproxCounter;
    let mut tokens = counter.count_message(&chat::system_message(&prompt));

    let opening = u.items()[rng.gen_range(0..u.len())].id;
    let feedback = game.feedback_on_guess(opening)?;
    let mut rounds = vec![RoundRecord {
        index: 1,
        tool: None,
        guess_id: opening,
        guess: u.item(opening)?.name.clone(),
        feedback,
    }];
    tokens += round_tokens(&counter, &cfg.tool_name, &rounds[0]);

    while !game.solved() && game.rounds_remaining() > 0 {
        if cfg.stop_after_tokens.is_some_and(|limit| tokens > limit) {
            break;
        }
        let index = game.round();
        let query = derive_constraints(game.feedback_log(), cfg, &mut rng);
        let result = match cfg.format {
            Format::Concise => ToolResult::Concise(query_concise(u, &query)?),
            Format::Verbose => ToolResult::Verbose(query_verbose(u, &query)?),
        };
        let remembered = remembered_guesses(&rounds, cfg, &mut rng);
        let candidates = result.candidates();
        let mut pool: Vec<String> = candidates
            .iter()
            .filter(|n| u.by_name(n).is_some_and(|i| !remembered.contains(&i.id)))
            .cloned()
            .collect();
        if pool.is_empty() {
            pool = candidates;
        }
        if pool.is_empty() {
            pool = u.sorted().filter(|i| !remembered.contains(&i.id)).map(|i| i.name.clone()).collect();
        }
        let name = select_guess(&pool, &mut rng).ok_or(Error::RoundsExhausted)?.to_string();
        let guess_id = u.by_name(&name).expect("candidate names come from the universe").id;
        let feedback = game.feedback_on_guess(guess_id)?;
        let record = RoundRecord {
            index,
            tool: Some(ToolPhase {
                call_id: call_id(index),
                query,
                result,
            }),
            guess_id,
            guess: name,
            feedback,
        };
        tokens += round_tokens(&counter, &cfg.tool_name, &record);
        rounds.push(record);
    }

    let target = u.item(game.target())?;
    let traj = Trajectory {
        system_prompt: prompt,
        tool_name: cfg.tool_name.clone(),
        meta: TrajectoryMeta {
            config: cfg.clone(),
            universe_fingerprint: u.fingerprint(),
            target_id: target.id,
            target_name: target.name.clone(),
            seed: cfg.seed,
            solved: game.solved(),
            symbol_map: None,
        },
        rounds,
    };
    match cfg.setting {
        Setting::KnowledgeIntensive => Ok(traj),
        Setting::KnowledgeFree => {
            let map = masking::build_symbol_map(u, cfg.seed);
            masking::mask_trajectory(&traj, &map)
        }
    }
}

fn round_tokens(counter: &dyn TokenCounter, tool_name: &str, r: &RoundRecord) -> u64 {
    chat::round_messages(tool_name, r)
        .iter()
        .map(|m| counter.count_message(m))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{LabelJudgment, SectionFeedback, SectionJudgment};
    use crate::universe::{generate_synthetic_universe, SyntheticSpec};

    fn fb(round: u32, sections: Vec<SectionFeedback>) -> Feedback {
        Feedback {
            round,
            guess: format!("G{round}"),
            dex: round,
            sections,
            overall: Verdict::Wrong,
            rounds_remaining: 100 - round,
        }
    }

    fn labels(section: &str, l: &[(&str, bool)]) -> SectionFeedback {
        SectionFeedback {
            section: section.into(),
            judgment: SectionJudgment::Labels(
                l.iter()
                    .map(|(x, c)| LabelJudgment {
                        label: x.to_string(),
                        correct: *c,
                    })
                    .collect(),
            ),
        }
    }

    fn number(section: &str, value: i64, judgment: crate::environment::NumericJudgment) -> SectionFeedback {
        SectionFeedback {
            section: section.into(),
            judgment: SectionJudgment::Number { value, judgment },
        }
    }

    fn strict(seed: u64) -> RolloutConfig {
        RolloutConfig {
            epsilon: 0.0,
            mask_prob: 0.0,
            forget_history_prob: 0.0,
            history_window: 1,
            ..RolloutConfig::concise(seed)
        }
    }

    #[test]
    fn wrong_types_become_one_exclusion() {
        let log = vec![fb(1, vec![labels("Type", &[("Bug", false), ("Poison", false)])])];
        let q = derive_constraints(&log, &strict(1), &mut rng::stream(1, 9));
        assert_eq!(q.conditions, vec![Condition::exclude("Type", &["Bug", "Poison"])]);
        assert_eq!(
            q.to_arguments(),
            r#"{"conditions": [{"type": "value", "section": "Type", "values": ["Bug", "Poison"], "exclude": true}]}"#
        );
    }

    #[test]
    fn forced_forgetting_keeps_only_latest() {
        use crate::environment::NumericJudgment::*;
        let log = vec![
            fb(1, vec![labels("Type", &[("Bug", false)]), number("Base Stats", 200, TooLow)]),
            fb(2, vec![labels("Type", &[("Fire", false)]), number("Base Stats", 600, TooHigh)]),
        ];
        let cfg = RolloutConfig {
            forget_history_prob: 1.0,
            ..strict(1)
        };
        let q = derive_constraints(&log, &cfg, &mut rng::stream(3, 9));
        assert_eq!(
            q.conditions,
            vec![
                Condition::exclude("Type", &["Fire"]),
                Condition::numeric("Base Stats", Comparator::Lt, 600)
            ]
        );
        let remember = derive_constraints(&log, &strict(1), &mut rng::stream(3, 9));
        assert_eq!(
            remember.conditions,
            vec![
                Condition::exclude("Type", &["Bug", "Fire"]),
                Condition::numeric("Base Stats", Comparator::Gt, 200)
            ]
        );
    }

    #[test]
    fn full_masking_empties_the_query() {
        use crate::environment::NumericJudgment::*;
        let log = vec![fb(
            1,
            vec![
                labels("Type", &[("Bug", false)]),
                labels("Abilities", &[("Shed Skin", true)]),
                number("Base Stats", 205, TooLow),
            ],
        )];
        let cfg = RolloutConfig {
            mask_prob: 1.0,
            max_mask_sections: 3,
            ..strict(1)
        };
        assert!(derive_constraints(&log, &cfg, &mut rng::stream(1, 9)).conditions.is_empty());
        let capped = RolloutConfig {
            max_mask_sections: 2,
            ..cfg
        };
        assert_eq!(derive_constraints(&log, &capped, &mut rng::stream(1, 9)).conditions.len(), 1);
    }

    #[test]
    fn epsilon_loosens_to_previous_bound() {
        use crate::environment::NumericJudgment::*;
        let log = vec![
            fb(1, vec![number("Base Stats", 300, TooLow)]),
            fb(2, vec![number("Base Stats", 400, TooLow)]),
        ];
        let cfg = RolloutConfig {
            epsilon: 1.0,
            ..strict(1)
        };
        let q = derive_constraints(&log, &cfg, &mut rng::stream(1, 9));
        assert_eq!(q.conditions, vec![Condition::numeric("Base Stats", Comparator::Gt, 300)]);
        let first_only = derive_constraints(&log[..1], &cfg, &mut rng::stream(1, 9));
        assert!(first_only.conditions.is_empty());
    }

    #[test]
    fn select_guess_rules() {
        let one = vec!["X".to_string()];
        assert_eq!(select_guess(&one, &mut rng::stream(1, 1)), Some("X"));
        assert_eq!(select_guess(&[], &mut rng::stream(1, 1)), None);
        let five: Vec<String> = (0..5).map(|i| format!("C{i}")).collect();
        assert_eq!(
            select_guess(&five, &mut rng::stream(8, 1)),
            select_guess(&five, &mut rng::stream(8, 1))
        );
        // 10k draws over 5 candidates: expected 2000 each, sigma = 40.
        let mut r = rng::stream(11, 1);
        let mut counts = [0usize; 5];
        for _ in 0..10_000 {
            let g = select_guess(&five, &mut r).unwrap();
            counts[g[1..].parse::<usize>().unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 - 2000.0).abs() < 3.0 * 40.0, "{counts:?}");
        }
    }

    #[test]
    fn singleton_game_ends_on_opening_guess() {
        let u = generate_synthetic_universe(&SyntheticSpec::canonical(1), 1).unwrap();
        let t = simulate(&u, &RolloutConfig::concise(5)).unwrap();
        assert_eq!(t.rounds.len(), 1);
        assert!(t.meta.solved);
        assert!(t.rounds[0].tool.is_none());
    }

    #[test]
    fn simulation_is_deterministic_and_well_formed() {
        let u = generate_synthetic_universe(&SyntheticSpec::canonical(200), 2).unwrap();
        for cfg in [RolloutConfig::concise(17), RolloutConfig::verbose(17)] {
            let a = simulate(&u, &cfg).unwrap();
            let b = simulate(&u, &cfg).unwrap();
            assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
            for (i, r) in a.rounds.iter().enumerate() {
                assert_eq!(r.index as usize, i + 1);
                assert_eq!(r.feedback.round, r.index);
                assert_eq!(r.tool.is_none(), i == 0);
            }
            assert!(
                a.rounds.windows(2).all(|w| w[0].guess_id != w[1].guess_id),
                "the last guess is always remembered"
            );
            let last = a.rounds.last().unwrap();
            assert!(a.meta.solved || last.feedback.rounds_remaining == 0);
        }
    }

    #[test]
    fn max_rounds_caps_length() {
        let u = generate_synthetic_universe(&SyntheticSpec::canonical(500), 2).unwrap();
        let cfg = RolloutConfig {
            max_rounds: 4,
            ..RolloutConfig::verbose(3)
        };
        let t = simulate(&u, &cfg).unwrap();
        assert!(t.rounds.len() <= 4);
    }

    #[test]
    fn strict_agent_concise_sizes_never_grow() {
        let u = generate_synthetic_universe(&SyntheticSpec::canonical(400), 8).unwrap();
        for seed in 0..10 {
            let cfg = RolloutConfig {
                history_window: 10_000,
                ..strict(seed)
            };
            let t = simulate(&u, &cfg).unwrap();
            let sizes: Vec<usize> = t
                .rounds
                .iter()
                .filter_map(|r| r.tool.as_ref())
                .map(|p| p.result.candidates().len())
                .collect();
            assert!(sizes.windows(2).all(|w| w[1] <= w[0]), "{sizes:?}");
        }
    }

    #[test]
    fn agent_without_forgetting_never_repeats_a_guess() {
        let u = generate_synthetic_universe(&SyntheticSpec::canonical(300), 4).unwrap();
        for seed in 0..10 {
            let cfg = RolloutConfig {
                forget_history_prob: 0.0,
                ..RolloutConfig::concise(seed)
            };
            let t = simulate(&u, &cfg).unwrap();
            let guesses: HashSet<_> = t.rounds.iter().map(|r| r.guess_id).collect();
            assert_eq!(guesses.len(), t.rounds.len());
        }
    }

    #[test]
    fn forgetful_agent_repeats_old_guesses() {
        let u = generate_synthetic_universe(&SyntheticSpec::canonical(60), 4).unwrap();
        let repeats = (0..40).any(|seed| {
            let t = simulate(&u, &RolloutConfig::concise(seed)).unwrap();
            let distinct: HashSet<_> = t.rounds.iter().map(|r| r.guess_id).collect();
            distinct.len() < t.rounds.len()
        });
        assert!(repeats);
    }

    #[test]
    fn call_ids_follow_message_positions() {
        assert_eq!(call_id(2), "call_3");
        assert_eq!(call_id(12), "call_43");
    }

    #[test]
    fn invalid_config_is_rejected() {
        let u = generate_synthetic_universe(&SyntheticSpec::canonical(5), 2).unwrap();
        let bad = RolloutConfig {
            epsilon: 1.5,
            ..RolloutConfig::concise(1)
        };
        assert!(matches!(simulate(&u, &bad), Err(Error::Config(_))));
        let bad = RolloutConfig {
            history_window: 0,
            ..RolloutConfig::concise(1)
        };
        assert!(matches!(simulate(&u, &bad), Err(Error::Config(_))));
    }
}
