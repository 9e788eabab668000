//! Property tests: identification against a brute-force oracle, cascade
//! influence against an independent traversal, scoring laws, round-trip laws
//! for every format, and randomized lifecycle sequences.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use ctxcm_core::cascade::{
    ActivityId, ActivityInstance, ActivityState, Cascade, ContextId, ContextInstance,
    ContextLevel, ContextState,
};
use ctxcm_core::formats::{
    decode_envelope, encode_envelope, parse_ontology, parse_trace, serialize_ontology,
    serialize_trace, Envelope, EnvelopeKind,
};
use ctxcm_core::identify::{
    self, ActionEvent, Decision, EventWindow, PatternSignature,
};
use ctxcm_core::model::{
    ActivityClass, Agent, AgentId, AgentKind, ClassId, GenericContext, GenericContextId, Ontology,
    ProcessTemplate, Resource, ResourceId, ResourceKind, Step,
};
use ctxcm_core::testkit;

fn ident() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9]{0,5}(-[a-z0-9]{1,4}){0,2}"
}

fn printable() -> impl Strategy<Value = String> {
    "[ -~]{0,12}"
}

fn name_from_id(id: &str) -> String {
    id.split('-')
        .map(|segment| {
            let mut chars = segment.chars();
            match chars.next() {
                Some(first) => first.to_uppercase().chain(chars).collect::<String>(),
                None => String::new(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn arb_resource_kind() -> impl Strategy<Value = ResourceKind> {
    prop_oneof![
        Just(ResourceKind::Information),
        Just(ResourceKind::Application),
        Just(ResourceKind::Person),
        Just(ResourceKind::Device),
        Just(ResourceKind::Other),
    ]
}

fn arb_agent_kind() -> impl Strategy<Value = AgentKind> {
    prop_oneof![
        Just(AgentKind::Person),
        Just(AgentKind::Group),
        Just(AgentKind::Machine),
    ]
}

fn arb_attributes() -> impl Strategy<Value = BTreeMap<String, String>> {
    prop::collection::btree_map(ident(), printable(), 0..3)
}

fn arb_step() -> impl Strategy<Value = Step> {
    let name = "[A-Za-z][A-Za-z0-9 ]{0,10}";
    let leaf = name.prop_map(Step::atomic);
    leaf.prop_recursive(2, 8, 3, |inner| {
        (
            "[A-Za-z][A-Za-z0-9 ]{0,10}",
            any::<bool>(),
            prop::collection::vec(inner, 0..3),
        )
            .prop_map(|(condition, negated, then_steps)| Step::Conditional {
                condition,
                negated,
                then_steps,
            })
    })
}

fn arb_process() -> impl Strategy<Value = ProcessTemplate> {
    prop::collection::vec(arb_step(), 0..4).prop_map(ProcessTemplate::new)
}

fn arb_signature_tokens() -> impl Strategy<Value = BTreeMap<String, f64>> {
    prop::collection::btree_map(ident(), 0.001f64..100.0, 1..4)
}

fn arb_ontology() -> impl Strategy<Value = Ontology> {
    (
        prop::collection::btree_map(ident(), (arb_resource_kind(), printable(), arb_attributes()), 0..5),
        prop::collection::btree_map(ident(), (arb_agent_kind(), printable()), 0..3),
        prop::collection::btree_map(
            ident(),
            (
                prop::option::of(ident()),
                arb_signature_tokens(),
                0.0f64..=1.0,
                printable(),
            ),
            0..5,
        ),
        prop::collection::btree_map(
            ident(),
            (
                prop::collection::btree_set(ident(), 0..4),
                arb_attributes(),
                arb_process(),
            ),
            0..4,
        ),
    )
        .prop_map(|(resources, agents, classes, generics)| {
            let mut ontology = Ontology::default();
            for (id, (kind, name, attributes)) in resources {
                ontology.insert_resource(Resource {
                    id: ResourceId::new(id),
                    kind,
                    name,
                    attributes,
                });
            }
            for (id, (kind, name)) in agents {
                ontology.insert_agent(Agent {
                    id: AgentId::new(id),
                    kind,
                    name,
                });
            }
            for (id, (parent, weighted_tokens, min_score, description)) in classes {
                ontology.insert_class(ActivityClass {
                    id: ClassId::new(id.clone()),
                    name: name_from_id(&id),
                    parent_class: parent.map(ClassId::new),
                    signature: PatternSignature::new(weighted_tokens, min_score),
                    description,
                });
            }
            for (for_class, (resource_ids, attributes, process)) in generics {
                ontology.insert_generic(GenericContext {
                    id: GenericContextId::new(format!("{for_class}-context")),
                    for_class: ClassId::new(for_class),
                    resources: resource_ids.into_iter().map(ResourceId::new).collect(),
                    process,
                    attributes,
                });
            }
            ontology
        })
}

proptest! {
    #[test]
    fn ontology_round_trips(ontology in arb_ontology()) {
        let rendered = serialize_ontology(&ontology);
        let reparsed = parse_ontology(&rendered)
            .map_err(|e| TestCaseError::fail(format!("reparse failed: {e:?}\n{rendered}")))?;
        prop_assert_eq!(ontology, reparsed);
    }

    #[test]
    fn ontology_parser_never_panics(text in "[ -~\\n\"{}\\[\\]:,#]{0,200}") {
        let _ = parse_ontology(&text);
    }
}

fn arb_trace() -> impl Strategy<Value = Vec<ActionEvent>> {
    prop::collection::vec(
        (
            "[a-z]{1,4}",
            ident(),
            prop::option::of("[a-zA-Z0-9/._:-]{1,8}"),
            prop::collection::btree_map("[a-z]{1,4}", "[a-zA-Z0-9=._-]{0,6}", 0..3),
            0u64..5,
        ),
        0..20,
    )
    .prop_map(|rows| {
        let mut clocks: BTreeMap<String, u64> = BTreeMap::new();
        rows.into_iter()
            .map(|(agent, action, target, attributes, dt)| {
                let clock = clocks.entry(agent.clone()).or_insert(0);
                *clock += dt;
                ActionEvent {
                    timestamp: *clock,
                    agent: AgentId::new(agent),
                    action,
                    target,
                    attributes,
                }
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn trace_round_trips(events in arb_trace()) {
        let rendered = serialize_trace(&events);
        let reparsed = parse_trace(&rendered)
            .map_err(|e| TestCaseError::fail(format!("reparse failed: {e}\n{rendered}")))?;
        prop_assert_eq!(events, reparsed);
    }

    #[test]
    fn trace_parser_never_panics(text in "[ -~\\n]{0,200}") {
        let _ = parse_trace(&text);
    }
}

fn arb_json() -> impl Strategy<Value = serde_json::Value> {
    let leaf = prop_oneof![
        Just(serde_json::Value::Null),
        any::<bool>().prop_map(serde_json::Value::from),
        any::<i64>().prop_map(serde_json::Value::from),
        printable().prop_map(serde_json::Value::from),
    ];
    leaf.prop_recursive(3, 16, 4, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..4).prop_map(serde_json::Value::from),
            prop::collection::btree_map("[a-z]{1,5}", inner, 0..4)
                .prop_map(|m| serde_json::Value::Object(m.into_iter().collect())),
        ]
    })
}

fn arb_envelope_kind() -> impl Strategy<Value = EnvelopeKind> {
    prop_oneof![
        Just(EnvelopeKind::Subscribe),
        Just(EnvelopeKind::ContextPublish),
        Just(EnvelopeKind::Suggestion),
        Just(EnvelopeKind::ConfirmRequest),
        Just(EnvelopeKind::ConfirmReply),
        Just(EnvelopeKind::Ack),
        Just(EnvelopeKind::Error),
    ]
}

fn arb_level() -> impl Strategy<Value = ContextLevel> {
    (
        any::<u64>(),
        any::<u64>(),
        ident(),
        ident(),
        prop::collection::btree_map(ident(), (arb_resource_kind(), printable()), 0..3),
        arb_attributes(),
        arb_process(),
        prop::collection::btree_set(ident(), 0..3),
    )
        .prop_map(
            |(ctx, act, class, origin, resources, attributes, process, agents)| ContextLevel {
                context: ContextId(ctx),
                activity: ActivityId(act),
                class: ClassId::new(class),
                generic_origin: GenericContextId::new(format!("{origin}-context")),
                state: ContextState::Active,
                agents_involved: agents.into_iter().map(AgentId::new).collect(),
                resources: resources
                    .into_iter()
                    .map(|(id, (kind, name))| {
                        (ResourceId::new(id.clone()), Resource::new(id, kind, name))
                    })
                    .collect(),
                attributes,
                process,
            },
        )
}

proptest! {
    #[test]
    fn envelope_round_trips(kind in arb_envelope_kind(), seq in any::<u64>(), body in arb_json()) {
        let envelope = Envelope::new(kind, seq, body);
        let line = encode_envelope(&envelope);
        prop_assert_eq!(decode_envelope(&line).unwrap(), envelope);
    }

    #[test]
    fn snapshot_levels_round_trip_through_json(levels in prop::collection::vec(arb_level(), 0..4)) {
        let encoded = serde_json::to_string(&levels).unwrap();
        let decoded: Vec<ContextLevel> = serde_json::from_str(&encoded).unwrap();
        prop_assert_eq!(levels, decoded);
        // Re-serialization is byte-identical.
        prop_assert_eq!(encoded.clone(), serde_json::to_string(&decoded_from(&encoded)).unwrap());
    }
}

fn decoded_from(encoded: &str) -> Vec<ContextLevel> {
    serde_json::from_str(encoded).unwrap()
}

// ---------------------------------------------------------------------------
// Identification properties
// ---------------------------------------------------------------------------

const TOKEN_POOL: [&str; 10] = ["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"];

fn pool_token() -> impl Strategy<Value = String> {
    prop::sample::select(&TOKEN_POOL[..]).prop_map(str::to_string)
}

fn arb_candidates() -> impl Strategy<Value = Vec<ActivityClass>> {
    prop::collection::btree_map(
        ident(),
        (
            prop::collection::btree_map(pool_token(), 0.001f64..50.0, 1..5),
            0.0f64..=1.0,
        ),
        1..10,
    )
    .prop_map(|classes| {
        classes
            .into_iter()
            .map(|(id, (tokens, min_score))| ActivityClass {
                id: ClassId::new(id.clone()),
                name: id,
                parent_class: None,
                signature: PatternSignature::new(tokens, min_score),
                description: String::new(),
            })
            .collect()
    })
}

fn arb_window() -> impl Strategy<Value = EventWindow> {
    prop::collection::vec(
        prop_oneof![pool_token(), Just("unrelated".to_string())],
        1..50,
    )
    .prop_map(|actions| {
        let mut window = EventWindow::new("self", 64);
        for (i, action) in actions.into_iter().enumerate() {
            window.push(ActionEvent::new(i as u64, "self", action));
        }
        window
    })
}

/// Independent oracle: score every candidate separately (same summation
/// order over sorted tokens) and sort by score descending, id ascending.
fn oracle_ranking(window: &EventWindow, candidates: &[ActivityClass]) -> Vec<(ClassId, f64)> {
    let present: BTreeSet<&str> = window.action_set();
    let mut scored: Vec<(ClassId, f64)> = candidates
        .iter()
        .map(|class| {
            let mut matched = 0.0;
            let mut total = 0.0;
            for (token, weight) in &class.signature.weighted_tokens {
                total += *weight;
                if present.contains(token.as_str()) {
                    matched += *weight;
                }
            }
            let score = if total == 0.0 { 0.0 } else { matched / total };
            (class.id.clone(), score)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored
}

proptest! {
    #[test]
    fn identify_equals_bruteforce_oracle(
        candidates in arb_candidates(),
        window in arb_window(),
    ) {
        let result = identify::identify(&window, &candidates, 0.1).unwrap();
        let oracle = oracle_ranking(&window, &candidates);
        prop_assert_eq!(&result.ranking, &oracle);

        // Decision rules re-derived from the oracle ranking.
        let (top_id, top_score) = oracle[0].clone();
        let top_min = candidates.iter().find(|c| c.id == top_id).unwrap().signature.min_score;
        let second = oracle.get(1).map(|(_, s)| *s).unwrap_or(0.0);
        let expected = if top_score >= top_min && top_score - second >= 0.1 {
            Decision::Identified { class: top_id }
        } else if top_score >= top_min && oracle.len() > 1 {
            Decision::Ambiguous { first: top_id, second: oracle[1].0.clone() }
        } else if top_score >= top_min {
            Decision::Identified { class: top_id }
        } else {
            Decision::NoMatch
        };
        prop_assert_eq!(result.decision, expected);
    }

    #[test]
    fn identify_is_deterministic(
        candidates in arb_candidates(),
        window in arb_window(),
    ) {
        let first = identify::identify(&window, &candidates, 0.1).unwrap();
        let second = identify::identify(&window, &candidates, 0.1).unwrap();
        prop_assert_eq!(first, second);
    }

    #[test]
    fn score_is_monotone_in_window_content(
        tokens in prop::collection::btree_map(pool_token(), 0.001f64..50.0, 1..5),
        window in arb_window(),
        pick in any::<prop::sample::Index>(),
    ) {
        let signature = PatternSignature::new(tokens, 0.5);
        let base = identify::score(&window, &signature).unwrap();

        // Adding a signature token never decreases the score.
        let matching: Vec<&String> = signature.weighted_tokens.keys().collect();
        let added = matching[pick.index(matching.len())].clone();
        let mut grown = window.clone();
        grown.push(ActionEvent::new(u64::MAX, "self", added));
        prop_assert!(identify::score(&grown, &signature).unwrap() >= base);

        // Adding a non-matching token never changes it.
        let mut unrelated = window.clone();
        unrelated.push(ActionEvent::new(u64::MAX, "self", "zzz-not-in-signature"));
        prop_assert_eq!(identify::score(&unrelated, &signature).unwrap(), base);
    }

    #[test]
    fn score_and_decision_are_scale_invariant(
        candidates in arb_candidates(),
        window in arb_window(),
        exponent in -6i32..=6,
        pick in any::<prop::sample::Index>(),
    ) {
        // Power-of-two scaling is exact in binary floating point.
        let factor = (2.0f64).powi(exponent);
        let index = pick.index(candidates.len());
        let mut scaled = candidates.clone();
        for (_, weight) in scaled[index].signature.weighted_tokens.iter_mut() {
            *weight *= factor;
        }
        let base_score = identify::score(&window, &candidates[index].signature).unwrap();
        let scaled_score = identify::score(&window, &scaled[index].signature).unwrap();
        prop_assert_eq!(base_score, scaled_score);

        let base = identify::identify(&window, &candidates, 0.1).unwrap();
        let rescored = identify::identify(&window, &scaled, 0.1).unwrap();
        prop_assert_eq!(base, rescored);
    }
}

// ---------------------------------------------------------------------------
// Cascade properties
// ---------------------------------------------------------------------------

/// Random forest of up to `n` activities; returns the cascade and the parent
/// relation for the oracle traversal.
fn arb_forest(max: usize) -> impl Strategy<Value = (Cascade, Vec<Option<usize>>)> {
    prop::collection::vec(any::<prop::sample::Index>(), 1..max).prop_map(|picks| {
        let mut cascade = Cascade::new();
        let mut parents: Vec<Option<usize>> = Vec::new();
        for (i, pick) in picks.iter().enumerate() {
            let parent = if i == 0 { None } else { Some(pick.index(i)) };
            parents.push(parent);
            let id = i as u64 + 1;
            cascade.insert_activity(ActivityInstance {
                id: ActivityId(id),
                class_id: ClassId::from("node"),
                parent: parent.map(|p| ActivityId(p as u64 + 1)),
                agents: [AgentId::from("self")].into(),
                state: ActivityState::Live,
                started_at: 0,
                ended_at: None,
            });
            cascade.insert_context(ContextInstance {
                id: ContextId(id),
                activity: ActivityId(id),
                parent_context: parent.map(|p| ContextId(p as u64 + 1)),
                generic_origin: GenericContextId::from("g"),
                resources: BTreeMap::new(),
                process: ProcessTemplate::default(),
                attributes: BTreeMap::new(),
                state: ContextState::Active,
                agents_involved: [AgentId::from("self")].into(),
            });
        }
        (cascade, parents)
    })
}

fn oracle_descendants(parents: &[Option<usize>], root: usize) -> BTreeSet<ActivityId> {
    let mut out: BTreeSet<ActivityId> = [ActivityId(root as u64 + 1)].into();
    loop {
        let mut grew = false;
        for (i, parent) in parents.iter().enumerate() {
            if let Some(p) = parent {
                if out.contains(&ActivityId(*p as u64 + 1)) && out.insert(ActivityId(i as u64 + 1)) {
                    grew = true;
                }
            }
        }
        if !grew {
            break;
        }
    }
    out
}

proptest! {
    #[test]
    fn influence_set_matches_bruteforce_traversal((cascade, parents) in arb_forest(200)) {
        for root in 0..parents.len() {
            let got = cascade.influence_set(ContextId(root as u64 + 1)).unwrap();
            let expected = oracle_descendants(&parents, root);
            prop_assert_eq!(got, expected);
        }
    }

    #[test]
    fn influence_set_satisfies_recursive_identity((cascade, parents) in arb_forest(60)) {
        for node in 0..parents.len() {
            let ctx = ContextId(node as u64 + 1);
            let mut union: BTreeSet<ActivityId> = [ActivityId(node as u64 + 1)].into();
            for child in cascade.children_of(ctx) {
                union.extend(cascade.influence_set(child).unwrap());
            }
            prop_assert_eq!(cascade.influence_set(ctx).unwrap(), union);
        }
    }

    #[test]
    fn resolve_provider_is_nearest_ancestor(
        (mut cascade, parents) in arb_forest(30),
        keys in prop::collection::vec((any::<prop::sample::Index>(), "[a-z]{1,3}", printable()), 0..20),
        query in any::<prop::sample::Index>(),
        key in "[a-z]{1,3}",
    ) {
        for (node, k, v) in keys {
            let ctx = ContextId(node.index(parents.len()) as u64 + 1);
            cascade.set_attribute(ctx, k, v).unwrap();
        }
        let start = ContextId(query.index(parents.len()) as u64 + 1);
        let chain = cascade.chain(start).unwrap();
        match cascade.resolve(start, &key).unwrap() {
            Some(resolution) => {
                // Provider is an ancestor-or-self at the stated depth...
                prop_assert_eq!(chain[resolution.depth], resolution.provider);
                // ...and no strictly nearer level defines the key.
                for nearer in &chain[..resolution.depth] {
                    prop_assert!(!cascade.context(*nearer).unwrap().attributes.contains_key(&key));
                }
            }
            None => {
                for level in &chain {
                    prop_assert!(!cascade.context(*level).unwrap().attributes.contains_key(&key));
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Lifecycle randomized sequences (desk-scale run; the acceptance suite runs
// the full 10,000)
// ---------------------------------------------------------------------------

#[test]
fn random_lifecycle_sequences_hold_invariants() {
    for seed in 0..300u64 {
        testkit::run_random_sequence(seed, 30, 5, 20);
    }
}
