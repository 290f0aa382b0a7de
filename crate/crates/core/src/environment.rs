//! The oracle side of the game: a hidden target, yes/no answers to
//! structured predicates, and attribute-wise feedback on guesses.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::query::{match_item, Comparator, Condition};
use crate::rng::{self, streams};
use crate::universe::{AttrValue, AttributeSchema, Item, ItemId, SectionKind, Universe};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
    Wrong,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Correct => "correct",
            Verdict::Wrong => "wrong",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumericJudgment {
    Correct,
    TooLow,
    TooHigh,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelJudgment {
    pub label: String,
    pub correct: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionJudgment {
    Labels(Vec<LabelJudgment>),
    Number { value: i64, judgment: NumericJudgment },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionFeedback {
    pub section: String,
    pub judgment: SectionJudgment,
}

impl SectionFeedback {
    /// Every judgment in the section is correct.
    pub fn fully_correct(&self) -> bool {
        match &self.judgment {
            SectionJudgment::Labels(l) => l.iter().all(|j| j.correct),
            SectionJudgment::Number { judgment, .. } => *judgment == NumericJudgment::Correct,
        }
    }
}

/// Attribute-wise evaluation of one guess. The guessed item is identified by
/// display name and dex number, as in the rendered text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feedback {
    pub round: u32,
    pub guess: String,
    pub dex: u32,
    pub sections: Vec<SectionFeedback>,
    pub overall: Verdict,
    pub rounds_remaining: u32,
}

impl Feedback {
    pub fn render(&self) -> String {
        render_feedback(self, self.rounds_remaining)
    }

    pub fn section(&self, name: &str) -> Option<&SectionFeedback> {
        self.sections.iter().find(|s| s.section == name)
    }

    /// The constraints this feedback implies about the target: each correct
    /// label is required, wrong labels are excluded, numeric values pin or
    /// bound the target's value.
    pub fn implied_constraints(&self) -> Vec<Condition> {
        let mut out = Vec::new();
        for s in &self.sections {
            match &s.judgment {
                SectionJudgment::Labels(labels) => {
                    for l in labels.iter().filter(|l| l.correct) {
                        out.push(Condition::Value {
                            section: s.section.clone(),
                            values: vec![l.label.clone()],
                            exclude: false,
                        });
                    }
                    let wrong: Vec<String> = labels.iter().filter(|l| !l.correct).map(|l| l.label.clone()).collect();
                    if !wrong.is_empty() {
                        out.push(Condition::Value {
                            section: s.section.clone(),
                            values: wrong,
                            exclude: true,
                        });
                    }
                }
                SectionJudgment::Number { value, judgment } => {
                    let comparator = match judgment {
                        NumericJudgment::Correct => Comparator::Eq,
                        NumericJudgment::TooLow => Comparator::Gt,
                        NumericJudgment::TooHigh => Comparator::Lt,
                    };
                    out.push(Condition::Numeric {
                        section: s.section.clone(),
                        comparator,
                        threshold: *value,
                    });
                }
            }
        }
        out
    }
}

/// Renders feedback in the host's text format, e.g.
///
/// ```text
/// Round 1: Guess Kakuna (#0014)
/// Sections:
///  - Type: Bug (wrong); Poison (wrong)
///  - Base Stats: 205 (wrong, too low)
/// Result: wrong
/// Remaining rounds: 2009
/// ```
pub fn render_feedback(f: &Feedback, rounds_remaining: u32) -> String {
    let mut s = String::with_capacity(96 + 32 * f.sections.len());
    let _ = write!(s, "Round {}: Guess {} (#{:04})\nSections:\n", f.round, f.guess, f.dex);
    for sec in &f.sections {
        let _ = write!(s, " - {}: ", sec.section);
        match &sec.judgment {
            SectionJudgment::Labels(labels) => {
                for (i, l) in labels.iter().enumerate() {
                    if i > 0 {
                        s.push_str("; ");
                    }
                    let _ = write!(s, "{} ({})", l.label, if l.correct { "correct" } else { "wrong" });
                }
            }
            SectionJudgment::Number { value, judgment } => {
                let tail = match judgment {
                    NumericJudgment::Correct => "(correct)",
                    NumericJudgment::TooLow => "(wrong, too low)",
                    NumericJudgment::TooHigh => "(wrong, too high)",
                };
                let _ = write!(s, "{value} {tail}");
            }
        }
        s.push('\n');
    }
    let _ = write!(s, "Result: {}\nRemaining rounds: {}", f.overall.as_str(), rounds_remaining);
    s
}

fn bad(message: impl Into<String>) -> Error {
    Error::Transcript {
        index: 0,
        message: message.into(),
    }
}

/// Parses text produced by [`render_feedback`]. With a schema, section kinds
/// come from it; without one, a single integer entry judged `correct`,
/// `too low` or `too high` is read as numeric.
pub fn parse_feedback(text: &str, schema: Option<&AttributeSchema>) -> Result<Feedback> {
    let mut lines = text.split('\n');
    let head = lines.next().ok_or_else(|| bad("empty feedback"))?;
    let rest = head.strip_prefix("Round ").ok_or_else(|| bad("missing 'Round '"))?;
    let (round, rest) = rest.split_once(": Guess ").ok_or_else(|| bad("missing ': Guess '"))?;
    let round: u32 = round.parse().map_err(|_| bad(format!("bad round {round:?}")))?;
    let (guess, dex) = rest.rsplit_once(" (#").ok_or_else(|| bad("missing dex"))?;
    let dex: u32 = dex
        .strip_suffix(')')
        .and_then(|d| d.parse().ok())
        .ok_or_else(|| bad(format!("bad dex in {head:?}")))?;
    if lines.next() != Some("Sections:") {
        return Err(bad("missing 'Sections:'"));
    }
    let mut sections = Vec::new();
    let mut overall = None;
    let mut remaining = None;
    for line in lines {
        if let Some(body) = line.strip_prefix(" - ") {
            let (name, entries) = body.split_once(": ").ok_or_else(|| bad(format!("bad section line {line:?}")))?;
            sections.push(SectionFeedback {
                section: name.to_string(),
                judgment: parse_entries(name, entries, schema)?,
            });
        } else if let Some(r) = line.strip_prefix("Result: ") {
            overall = Some(match r {
                "correct" => Verdict::Correct,
                "wrong" => Verdict::Wrong,
                other => return Err(bad(format!("bad result {other:?}"))),
            });
        } else if let Some(r) = line.strip_prefix("Remaining rounds: ") {
            remaining = Some(r.parse().map_err(|_| bad(format!("bad remaining {r:?}")))?);
        } else {
            return Err(bad(format!("unexpected line {line:?}")));
        }
    }
    Ok(Feedback {
        round,
        guess: guess.to_string(),
        dex,
        sections,
        overall: overall.ok_or_else(|| bad("missing result"))?,
        rounds_remaining: remaining.ok_or_else(|| bad("missing remaining rounds"))?,
    })
}

fn parse_entries(section: &str, entries: &str, schema: Option<&AttributeSchema>) -> Result<SectionJudgment> {
    let kind = schema.and_then(|s| s.section(section).ok()).map(|(_, s)| s.kind());
    let numeric = |entry: &str| -> Option<SectionJudgment> {
        let (value, tail) = entry.split_once(' ')?;
        let value: i64 = value.parse().ok()?;
        let judgment = match tail {
            "(correct)" => NumericJudgment::Correct,
            "(wrong, too low)" => NumericJudgment::TooLow,
            "(wrong, too high)" => NumericJudgment::TooHigh,
            _ => return None,
        };
        Some(SectionJudgment::Number { value, judgment })
    };
    match kind {
        Some(SectionKind::Numeric) => {
            return numeric(entries).ok_or_else(|| bad(format!("bad numeric entry {entries:?}")));
        }
        None if !entries.contains("; ") => {
            if let Some(j) = numeric(entries) {
                return Ok(j);
            }
        }
        _ => {}
    }
    let mut labels = Vec::new();
    for entry in entries.split("; ") {
        let (label, verdict) = entry
            .rsplit_once(" (")
            .ok_or_else(|| bad(format!("bad label entry {entry:?}")))?;
        let correct = match verdict {
            "correct)" => true,
            "wrong)" => false,
            other => return Err(bad(format!("bad verdict {other:?}"))),
        };
        labels.push(LabelJudgment {
            label: label.to_string(),
            correct,
        });
    }
    Ok(SectionJudgment::Labels(labels))
}

/// Attribute-wise comparison of `guess` against `target`.
pub fn judge(u: &Universe, guess: &Item, target: &Item) -> Vec<SectionFeedback> {
    u.schema()
        .sections()
        .iter()
        .enumerate()
        .map(|(s, section)| {
            let judgment = match (&guess.values[s], &target.values[s]) {
                (AttrValue::Labels(g), AttrValue::Labels(t)) => SectionJudgment::Labels(
                    g.iter()
                        .map(|l| LabelJudgment {
                            label: u.schema().label(s, *l).to_string(),
                            correct: t.contains(l),
                        })
                        .collect(),
                ),
                (AttrValue::Number(g), AttrValue::Number(t)) => SectionJudgment::Number {
                    value: *g,
                    judgment: match g.cmp(t) {
                        std::cmp::Ordering::Less => NumericJudgment::TooLow,
                        std::cmp::Ordering::Equal => NumericJudgment::Correct,
                        std::cmp::Ordering::Greater => NumericJudgment::TooHigh,
                    },
                },
                _ => unreachable!("universe invariants guarantee matching kinds"),
            };
            SectionFeedback {
                section: section.name.clone(),
                judgment,
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Answer {
    Yes,
    No,
}

/// One game: the hidden target plus the round bookkeeping.
#[derive(Clone, Debug)]
pub struct GameState<'u> {
    universe: &'u Universe,
    target: ItemId,
    round: u32,
    rounds_remaining: u32,
    feedback_log: Vec<Feedback>,
}

/// Starts a game with a target drawn uniformly from `u` by the seeded stream.
pub fn new_game(u: &Universe, seed: u64, max_rounds: u32) -> Result<GameState<'_>> {
    if u.is_empty() {
        return Err(Error::EmptyUniverse);
    }
    if max_rounds == 0 {
        return Err(Error::Config("max_rounds must be at least 1".into()));
    }
    let mut rng = rng::stream(seed, streams::TARGET);
    let target = u.items()[rng.gen_range(0..u.len())].id;
    Ok(GameState {
        universe: u,
        target,
        round: 1,
        rounds_remaining: max_rounds,
        feedback_log: Vec::new(),
    })
}

impl<'u> GameState<'u> {
    pub fn target(&self) -> ItemId {
        self.target
    }

    pub fn universe(&self) -> &'u Universe {
        self.universe
    }

    /// Index of the next guess.
    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn rounds_remaining(&self) -> u32 {
        self.rounds_remaining
    }

    pub fn feedback_log(&self) -> &[Feedback] {
        &self.feedback_log
    }

    pub fn solved(&self) -> bool {
        self.feedback_log.last().is_some_and(|f| f.overall == Verdict::Correct)
    }

    /// Answers a yes/no predicate about the target. Does not use up a round.
    pub fn respond_predicate(&self, c: &Condition) -> Result<Answer> {
        let target = self.universe.item(self.target)?;
        Ok(if match_item(self.universe.schema(), target, c)? {
            Answer::Yes
        } else {
            Answer::No
        })
    }

    pub fn feedback_on_guess(&mut self, guess: ItemId) -> Result<Feedback> {
        if self.rounds_remaining == 0 {
            return Err(Error::RoundsExhausted);
        }
        let guessed = self.universe.item(guess)?;
        let target = self.universe.item(self.target)?;
        self.rounds_remaining -= 1;
        let f = Feedback {
            round: self.round,
            guess: guessed.name.clone(),
            dex: guessed.dex_or_id(),
            sections: judge(self.universe, guessed, target),
            overall: if guess == self.target {
                Verdict::Correct
            } else {
                Verdict::Wrong
            },
            rounds_remaining: self.rounds_remaining,
        };
        self.round += 1;
        self.feedback_log.push(f.clone());
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::{query_concise, ToolQuery};
    use crate::universe::{generate_synthetic_universe, SyntheticSpec};

    fn u3() -> Universe {
        crate::query::tests::u3()
    }

    fn game_with_target<'a>(u: &'a Universe, name: &str) -> GameState<'a> {
        let target = u.by_name(name).unwrap().id;
        (0..10_000)
            .map(|seed| new_game(u, seed, 10).unwrap())
            .find(|g| g.target() == target)
            .unwrap()
    }

    #[test]
    fn singleton_target() {
        let u = generate_synthetic_universe(&SyntheticSpec::canonical(1), 1).unwrap();
        for seed in 0..20 {
            assert_eq!(new_game(&u, seed, 5).unwrap().target(), ItemId(1));
        }
    }

    #[test]
    fn target_is_deterministic() {
        let u = u3();
        assert_eq!(new_game(&u, 99, 5).unwrap().target(), new_game(&u, 99, 5).unwrap().target());
    }

    #[test]
    fn target_selection_is_uniform() {
        // Each of 3 items should get 10_000/3 draws; 3 sigma of a binomial
        // with p = 1/3 is about 141.
        let u = u3();
        let mut counts = [0usize; 3];
        for seed in 0..10_000u64 {
            counts[new_game(&u, seed, 1).unwrap().target().0 as usize - 1] += 1;
        }
        let mean = 10_000.0 / 3.0;
        let sigma = (10_000.0f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() < 3.0 * sigma, "{counts:?}");
        }
        // chi-square, 2 dof, 99.9% critical value 13.82
        let chi: f64 = counts.iter().map(|&c| (c as f64 - mean).powi(2) / mean).sum();
        assert!(chi < 13.82, "chi-square {chi}");
    }

    #[test]
    fn errors() {
        let empty = Universe::new_unchecked(u3().schema().clone(), vec![]);
        assert!(matches!(new_game(&empty, 1, 3), Err(Error::EmptyUniverse)));
        let u = u3();
        let mut g = new_game(&u, 1, 1).unwrap();
        assert!(matches!(g.feedback_on_guess(ItemId(9)), Err(Error::UnknownItem(_))));
        g.feedback_on_guess(ItemId(1)).unwrap();
        assert!(matches!(g.feedback_on_guess(ItemId(1)), Err(Error::RoundsExhausted)));
    }

    #[test]
    fn predicates() {
        let u = u3();
        let g = game_with_target(&u, "A");
        assert_eq!(g.respond_predicate(&Condition::include("Type", &["Grass"])).unwrap(), Answer::Yes);
        assert_eq!(
            g.respond_predicate(&Condition::numeric("Base Stats", Comparator::Lt, 300)).unwrap(),
            Answer::No
        );
        assert_eq!(g.rounds_remaining(), 10);
    }

    #[test]
    fn guessing_target_is_all_correct() {
        let u = u3();
        let mut g = game_with_target(&u, "C");
        let f = g.feedback_on_guess(g.target()).unwrap();
        assert_eq!(f.overall, Verdict::Correct);
        assert!(f.sections.iter().all(SectionFeedback::fully_correct));
        assert_eq!((f.round, f.rounds_remaining), (1, 9));
        assert_eq!(g.round(), 2);
        assert!(g.solved());
    }

    #[test]
    fn lower_stat_is_too_low() {
        let u = u3();
        let mut items = u.items().to_vec();
        items[0].values[2] = AttrValue::Number(278);
        let u = Universe::new(u.schema().clone(), items).unwrap();
        let mut g = game_with_target(&u, "C");
        let f = g.feedback_on_guess(u.by_name("A").unwrap().id).unwrap();
        assert_eq!(
            f.section("Base Stats").unwrap().judgment,
            SectionJudgment::Number {
                value: 278,
                judgment: NumericJudgment::TooLow
            }
        );
        assert!(f.render().contains(" - Base Stats: 278 (wrong, too low)\n"));
    }

    #[test]
    fn render_matches_host_format() {
        let f = Feedback {
            round: 1,
            guess: "Kakuna".into(),
            dex: 14,
            sections: vec![SectionFeedback {
                section: "Type".into(),
                judgment: SectionJudgment::Labels(vec![
                    LabelJudgment {
                        label: "Bug".into(),
                        correct: false,
                    },
                    LabelJudgment {
                        label: "Poison".into(),
                        correct: false,
                    },
                ]),
            }],
            overall: Verdict::Wrong,
            rounds_remaining: 2009,
        };
        assert_eq!(
            f.render(),
            "Round 1: Guess Kakuna (#0014)\nSections:\n - Type: Bug (wrong); Poison (wrong)\nResult: wrong\nRemaining rounds: 2009"
        );
        assert_eq!(parse_feedback(&f.render(), None).unwrap(), f);
    }

    #[test]
    fn exhaustive_judgments_on_u3() {
        let u = u3();
        for t in u.items() {
            for g in u.items() {
                let fb = judge(&u, g, t);
                for (s, sf) in fb.iter().enumerate() {
                    match &sf.judgment {
                        SectionJudgment::Labels(l) => {
                            let want: Vec<(String, bool)> = u
                                .labels_of(g, s)
                                .map(|x| (x.to_string(), u.labels_of(t, s).any(|y| y == x)))
                                .collect();
                            let got: Vec<(String, bool)> = l.iter().map(|j| (j.label.clone(), j.correct)).collect();
                            assert_eq!(got, want);
                        }
                        SectionJudgment::Number { value, judgment } => {
                            let (gv, tv) = (g.values[s].number().unwrap(), t.values[s].number().unwrap());
                            assert_eq!(*value, gv);
                            let want = if gv < tv {
                                NumericJudgment::TooLow
                            } else if gv > tv {
                                NumericJudgment::TooHigh
                            } else {
                                NumericJudgment::Correct
                            };
                            assert_eq!(*judgment, want);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn implied_constraints_keep_the_target() {
        let u = generate_synthetic_universe(&SyntheticSpec::canonical(300), 5).unwrap();
        for seed in 0..40 {
            let mut g = new_game(&u, seed, 50).unwrap();
            for k in 0..10u32 {
                let guess = u.items()[((seed as u32 * 31 + k * 17) % 300) as usize].id;
                let f = g.feedback_on_guess(guess).unwrap();
                let q = ToolQuery::new(f.implied_constraints());
                let hits = query_concise(&u, &q).unwrap().intersection;
                let target = &u.item(g.target()).unwrap().name;
                assert!(hits.contains(target));
                assert_eq!(parse_feedback(&f.render(), Some(u.schema())).unwrap(), f);
            }
        }
    }

    #[test]
    fn predicate_agrees_with_match_item() {
        let u = generate_synthetic_universe(&SyntheticSpec::canonical(200), 9).unwrap();
        let schema = u.schema();
        for seed in 0..50u64 {
            let g = new_game(&u, seed, 5).unwrap();
            let target = u.item(g.target()).unwrap();
            let other = &u.items()[(seed as usize * 7) % u.len()];
            let conds = [
                Condition::Value {
                    section: "Type".into(),
                    values: u.labels_of(other, 0).map(str::to_string).collect(),
                    exclude: seed % 2 == 0,
                },
                Condition::numeric("Base Stats", Comparator::Ge, other.values[2].number().unwrap()),
            ];
            for c in &conds {
                let want = if match_item(schema, target, c).unwrap() { Answer::Yes } else { Answer::No };
                assert_eq!(g.respond_predicate(c).unwrap(), want);
            }
        }
    }
}
