use std::collections::BTreeSet;

use proptest::prelude::*;
use proptest::sample::subsequence;

use trajbench::environment::new_game;
use trajbench::harness::answer::Extracted;
use trajbench::harness::chat::{parse_transcript, serialize_trajectory, validate_chat_structure, ChatMessage, Role};
use trajbench::harness::eval::{EndpointMeta, EvalResult};
use trajbench::harness::report::{aggregate, SampleKey};
use trajbench::masking::{build_symbol_map, mask_query, mask_result, mask_universe};
use trajbench::postprocess::{count_messages, round_tokens, truncate_whole_rounds, ApproxCounter, TokenCounter};
use trajbench::qa::{Gold, QuestionType};
use trajbench::query::{query_concise, query_verbose, Comparator, Condition, ToolQuery, ToolResult};
use trajbench::rollout::{simulate, Format, RolloutConfig, Setting};
use trajbench::universe::{generate_synthetic_universe, AttrValue, SectionDomain, SyntheticSpec, Universe};

fn universe(seed: u64) -> Universe {
    generate_synthetic_universe(&SyntheticSpec::canonical(120), seed).unwrap()
}

const COMPARATORS: [Comparator; 6] = [
    Comparator::Lt,
    Comparator::Le,
    Comparator::Eq,
    Comparator::Ge,
    Comparator::Gt,
    Comparator::Ne,
];

/// A random condition drawn from raw entropy so it can be resolved against
/// any schema.
#[derive(Clone, Debug)]
struct RawCondition {
    section: usize,
    picks: Vec<usize>,
    exclude: bool,
    comparator: usize,
    threshold: i64,
}

fn raw_condition() -> impl Strategy<Value = RawCondition> {
    (
        0usize..16,
        prop::collection::vec(0usize..1000, 1..4),
        any::<bool>(),
        0usize..6,
        -50i64..800,
    )
        .prop_map(|(section, picks, exclude, comparator, threshold)| RawCondition {
            section,
            picks,
            exclude,
            comparator,
            threshold,
        })
}

fn resolve(u: &Universe, raw: &RawCondition) -> Condition {
    let sections = u.schema().sections();
    let s = &sections[raw.section % sections.len()];
    match &s.domain {
        SectionDomain::Categorical { .. } => {
            let labels = s.labels();
            let values: BTreeSet<&str> = raw.picks.iter().map(|&p| labels[p % labels.len()].as_str()).collect();
            Condition::Value {
                section: s.name.clone(),
                values: values.into_iter().map(str::to_string).collect(),
                exclude: raw.exclude,
            }
        }
        SectionDomain::Numeric { .. } => Condition::numeric(&s.name, COMPARATORS[raw.comparator], raw.threshold),
    }
}

/// At most one numeric condition per section.
fn build_query(u: &Universe, raws: &[RawCondition]) -> ToolQuery {
    let mut conditions: Vec<Condition> = Vec::new();
    for raw in raws {
        let c = resolve(u, raw);
        let clash = matches!(c, Condition::Numeric { .. })
            && conditions
                .iter()
                .any(|o| matches!(o, Condition::Numeric { .. }) && o.section() == c.section());
        if !clash {
            conditions.push(c);
        }
    }
    ToolQuery::new(conditions)
}

/// Brute-force evaluation straight from item values and label strings.
fn naive_filter(u: &Universe, q: &ToolQuery) -> Vec<String> {
    let schema = u.schema();
    u.sorted()
        .filter(|item| {
            q.conditions.iter().all(|c| {
                let idx = schema.index_of(c.section()).unwrap();
                match (c, &item.values[idx]) {
                    (Condition::Value { values, exclude, .. }, AttrValue::Labels(ids)) => {
                        let mine: Vec<&str> = ids.iter().map(|&l| schema.label(idx, l)).collect();
                        let shares = values.iter().any(|v| mine.contains(&v.as_str()));
                        shares != *exclude
                    }
                    (Condition::Numeric { comparator, threshold, .. }, AttrValue::Number(n)) => match comparator {
                        Comparator::Lt => n < threshold,
                        Comparator::Le => n <= threshold,
                        Comparator::Eq => n == threshold,
                        Comparator::Ge => n >= threshold,
                        Comparator::Gt => n > threshold,
                        Comparator::Ne => n != threshold,
                    },
                    _ => panic!("kind mismatch"),
                }
            })
        })
        .map(|i| i.name.clone())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn concise_query_matches_brute_force(seed in 0u64..4, raws in prop::collection::vec(raw_condition(), 0..5)) {
        let u = universe(seed);
        let q = build_query(&u, &raws);
        prop_assert_eq!(query_concise(&u, &q).unwrap().intersection, naive_filter(&u, &q));
    }

    #[test]
    fn adding_a_condition_never_enlarges_the_result(
        seed in 0u64..4,
        raws in prop::collection::vec(raw_condition(), 0..4),
        extra in raw_condition(),
    ) {
        let u = universe(seed);
        let q = build_query(&u, &raws);
        let mut all = raws.clone();
        all.push(extra);
        let wider = build_query(&u, &all);
        let before: BTreeSet<String> = query_concise(&u, &q).unwrap().intersection.into_iter().collect();
        let after: BTreeSet<String> = query_concise(&u, &wider).unwrap().intersection.into_iter().collect();
        prop_assert!(after.is_subset(&before));
    }

    #[test]
    fn verbose_intersection_equals_concise_result(seed in 0u64..4, raws in prop::collection::vec(raw_condition(), 1..5)) {
        let u = universe(seed);
        let q = build_query(&u, &raws);
        let verbose = query_verbose(&u, &q).unwrap();
        prop_assert_eq!(verbose.intersection(), query_concise(&u, &q).unwrap().intersection);
        for entry in &verbose.per_section {
            let own = ToolQuery::new(
                q.conditions.iter().filter(|c| c.section() == entry.section).cloned().collect(),
            );
            prop_assert_eq!(&entry.candidates, &naive_filter(&u, &own));
        }
    }

    #[test]
    fn feedback_constraints_always_keep_the_target(seed in 0u64..500, guess in 0usize..120) {
        let u = universe(seed % 4);
        let mut game = new_game(&u, seed, 10).unwrap();
        let target = u.item(game.target()).unwrap().name.clone();
        let f = game.feedback_on_guess(u.items()[guess].id).unwrap();
        let q = ToolQuery::new(f.implied_constraints());
        prop_assert!(query_concise(&u, &q).unwrap().intersection.contains(&target));
    }

    #[test]
    fn masking_commutes_with_queries(
        seed in 0u64..4,
        map_seed in any::<u64>(),
        raws in prop::collection::vec(raw_condition(), 1..4),
    ) {
        let u = universe(seed);
        let m = build_symbol_map(&u, map_seed);
        let mu = mask_universe(&u, &m).unwrap();
        let q = build_query(&u, &raws);
        let mq = mask_query(&q, &m, "query").unwrap();
        for result in [
            ToolResult::Concise(query_concise(&u, &q).unwrap()),
            ToolResult::Verbose(query_verbose(&u, &q).unwrap()),
        ] {
            let direct = match &result {
                ToolResult::Concise(_) => ToolResult::Concise(query_concise(&mu, &mq).unwrap()),
                ToolResult::Verbose(_) => ToolResult::Verbose(query_verbose(&mu, &mq).unwrap()),
            };
            prop_assert_eq!(mask_result(&result, &m, "result").unwrap(), direct);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn transcripts_round_trip(seed in any::<u64>(), verbose in any::<bool>()) {
        let u = universe(seed % 4);
        let base = if verbose { RolloutConfig::verbose(seed) } else { RolloutConfig::concise(seed) };
        let cfg = RolloutConfig { max_rounds: 25, ..base };
        let t = simulate(&u, &cfg).unwrap();
        let messages = serialize_trajectory(&t);
        prop_assert!(validate_chat_structure(&messages).is_empty());
        let wire = serde_json::to_string(&*messages).unwrap();
        let back: Vec<ChatMessage> = serde_json::from_str(&wire).unwrap();
        prop_assert_eq!(&back, &messages);
        let parsed = parse_transcript(&back, Some(&u)).unwrap();
        prop_assert_eq!(parsed.system_prompt, t.system_prompt.clone());
        prop_assert_eq!(parsed.rounds, t.rounds.clone());
    }

    #[test]
    fn truncation_keeps_whole_rounds_within_budget(seed in any::<u64>(), budget in 400u64..40_000) {
        let u = universe(seed % 4);
        let t = simulate(&u, &RolloutConfig { max_rounds: 40, ..RolloutConfig::concise(seed) }).unwrap();
        let c = ApproxCounter;
        let (system, rounds) = round_tokens(&c, &t);
        match truncate_whole_rounds(&c, &t, budget) {
            Ok(cut) => {
                let n = cut.rounds.len();
                let messages = serialize_trajectory(&cut);
                prop_assert!(validate_chat_structure(&messages).is_empty());
                let used = count_messages(&c, &messages);
                prop_assert_eq!(used, system + rounds[..n].iter().sum::<u64>());
                prop_assert!(used <= budget);
                prop_assert!(n == t.rounds.len() || used + rounds[n] > budget);
            }
            Err(_) => prop_assert!(system + rounds[0] > budget),
        }
    }
}

fn message(role_pick: u8, text: String) -> ChatMessage {
    let role = match role_pick % 3 {
        0 => Role::User,
        1 => Role::Assistant,
        _ => Role::System,
    };
    ChatMessage::text(role, text)
}

proptest! {
    #[test]
    fn message_counts_are_additive(
        a in prop::collection::vec((any::<u8>(), ".{0,40}"), 0..6),
        b in prop::collection::vec((any::<u8>(), ".{0,40}"), 0..6),
    ) {
        let c = ApproxCounter;
        let a: Vec<ChatMessage> = a.into_iter().map(|(r, t)| message(r, t)).collect();
        let b: Vec<ChatMessage> = b.into_iter().map(|(r, t)| message(r, t)).collect();
        let joined: Vec<ChatMessage> = a.iter().chain(&b).cloned().collect();
        prop_assert_eq!(count_messages(&c, &joined), count_messages(&c, &a) + count_messages(&c, &b));
    }

    #[test]
    fn text_counts_are_additive_at_aligned_splits(a in "[ -~]{0,64}", b in "[ -~]{0,64}") {
        let c = ApproxCounter;
        let whole = c.count_text(&format!("{a}{b}"));
        let parts = c.count_text(&a) + c.count_text(&b);
        prop_assert!(whole <= parts && parts <= whole + 1);
        if a.len() % 4 == 0 {
            prop_assert_eq!(whole, parts);
        }
    }

    #[test]
    fn aggregation_ignores_result_order(
        outcomes in prop::collection::vec((0usize..8, 0u64..3, any::<bool>()), 1..40),
        order in any::<u64>(),
    ) {
        let keys: Vec<SampleKey> = outcomes
            .iter()
            .enumerate()
            .map(|(i, (q, b, _))| SampleKey {
                sample_id: format!("s{i}"),
                setting: Setting::KnowledgeFree,
                format: Format::Verbose,
                bucket_limit: 32_768 << b,
                question_type: QuestionType::ALL[*q],
            })
            .collect();
        let results: Vec<EvalResult> = outcomes
            .iter()
            .enumerate()
            .map(|(i, (_, _, ok))| EvalResult {
                sample_id: format!("s{i}"),
                raw_response: String::new(),
                extracted: Extracted::Answer { answer: Gold::Integer(0) },
                correct: *ok,
                latency_ms: 0,
                endpoint: EndpointMeta { url: "u".into(), model: "m".into(), temperature: 0.7 },
                attempts: 1,
                error: None,
            })
            .collect();
        let mut shuffled = results.clone();
        let mut rng = trajbench::rng::stream(order, 0);
        rand::seq::SliceRandom::shuffle(&mut shuffled[..], &mut rng);
        let a = aggregate(&keys, &results).unwrap();
        let b = aggregate(&keys, &shuffled).unwrap();
        prop_assert_eq!(a.to_csv().unwrap(), b.to_csv().unwrap());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn chat_wire_format_round_trips(texts in subsequence(vec!["a", "Round 1", "{\"x\": 1}", "<answer>B</answer>", ""], 0..5)) {
        let messages: Vec<ChatMessage> = texts.iter().map(|t| ChatMessage::text(Role::User, *t)).collect();
        let wire = serde_json::to_string(&messages).unwrap();
        let back: Vec<ChatMessage> = serde_json::from_str(&wire).unwrap();
        prop_assert_eq!(back, messages);
    }
}
