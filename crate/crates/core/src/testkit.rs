//! Randomized operation-sequence harness for the lifecycle engine. Drives
//! begin/switch/end/join through the public API with a seeded RNG and checks
//! the structural invariants after every step: single focus per agent,
//! context/activity lock-step, and forest shape.

use std::collections::BTreeSet;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cascade::{ActivityState, ContextState};
use crate::identify::PatternSignature;
use crate::lifecycle::{EndMode, Engine};
use crate::model::{
    ActivityClass, Agent, AgentId, AgentKind, ClassId, GenericContext, GenericContextId, Ontology,
    ProcessTemplate,
};

/// A small ontology shaped for fuzzing: a three-level class chain plus a
/// free-standing class, and `agent_count` agents.
pub fn fuzz_ontology(agent_count: usize) -> Ontology {
    let mut ontology = Ontology::default();
    for i in 0..agent_count {
        ontology.insert_agent(Agent {
            id: AgentId::new(format!("agent-{i}")),
            kind: AgentKind::Person,
            name: format!("Agent {i}"),
        });
    }
    let chain = [("job", None), ("task", Some("job")), ("errand", Some("task")), ("solo", None)];
    for (id, parent) in chain {
        ontology.insert_class(ActivityClass {
            id: ClassId::from(id),
            name: id.to_string(),
            parent_class: parent.map(ClassId::from),
            signature: PatternSignature::uniform([id], 0.5),
            description: String::new(),
        });
        ontology.insert_generic(GenericContext {
            id: GenericContextId::new(format!("{id}-context")),
            for_class: ClassId::from(id),
            resources: BTreeSet::new(),
            process: ProcessTemplate::default(),
            attributes: Default::default(),
        });
    }
    ontology
}

/// Runs one random operation sequence and checks every invariant after every
/// operation. Panics with a diagnostic on the first violation.
pub fn run_random_sequence(seed: u64, ops: usize, max_agents: usize, max_activities: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let agent_count = rng.gen_range(1..=max_agents);
    let ontology = fuzz_ontology(agent_count);
    let agents: Vec<AgentId> = ontology.agents.keys().cloned().collect();
    let classes: Vec<ClassId> = ontology.activity_classes.keys().cloned().collect();
    let mut engine = Engine::new(ontology.clone());

    for step in 0..ops {
        let agent = &agents[rng.gen_range(0..agents.len())];
        let class = &classes[rng.gen_range(0..classes.len())];
        let live: Vec<_> = engine
            .cascade()
            .activities()
            .filter(|a| a.is_live())
            .map(|a| a.id)
            .collect();
        let op = rng.gen_range(0..5u8);
        match op {
            0 if live.len() < max_activities => {
                let parent = if live.is_empty() || rng.gen_bool(0.4) {
                    None
                } else {
                    Some(live[rng.gen_range(0..live.len())])
                };
                let _ = engine.begin_activity(agent, class, parent);
            }
            1 if live.len() < max_activities => {
                let _ = engine.begin_activity_chain(agent, class);
            }
            2 => {
                let eligible: Vec<_> = engine
                    .cascade()
                    .contexts()
                    .filter(|c| !c.is_ended() && c.agents_involved.contains(agent))
                    .map(|c| c.id)
                    .collect();
                if !eligible.is_empty() {
                    let target = eligible[rng.gen_range(0..eligible.len())];
                    let _ = engine.switch_focus(agent, target);
                }
            }
            3 => {
                if !live.is_empty() {
                    let target = live[rng.gen_range(0..live.len())];
                    let mode = if rng.gen_bool(0.5) {
                        EndMode::Strict
                    } else {
                        EndMode::Cascade
                    };
                    let _ = engine.end_activity(target, mode);
                }
            }
            _ => {
                if !live.is_empty() {
                    let target = live[rng.gen_range(0..live.len())];
                    let _ = engine.join_activity(agent, target);
                }
            }
        }
        assert_invariants(&engine, seed, step);
    }
}

/// Checks single-focus, lock-step, and forest-shape invariants.
pub fn assert_invariants(engine: &Engine, seed: u64, step: usize) {
    let cascade = engine.cascade();
    let at = format!("seed {seed}, step {step}");

    let context_count = cascade.contexts().count();
    for context in cascade.contexts() {
        let activity = cascade
            .activity(context.activity)
            .unwrap_or_else(|_| panic!("{at}: context {} has no activity", context.id));

        // Lock-step: a context is ended iff its activity is ended.
        assert_eq!(
            context.state == ContextState::Ended,
            activity.state == ActivityState::Ended,
            "{at}: context {} and activity {} disagree about ending",
            context.id,
            activity.id
        );

        // Forest shape: walking parents terminates without revisits, and the
        // parent context surrounds the parent activity.
        let mut seen = BTreeSet::new();
        let mut hops = 0usize;
        let mut current = Some(context.id);
        while let Some(id) = current {
            assert!(seen.insert(id), "{at}: context parent chain revisits {id}");
            hops += 1;
            assert!(hops <= context_count, "{at}: context parent chain too long");
            current = cascade.context(id).expect("chain ids exist").parent_context;
        }
        if let Some(parent_ctx) = context.parent_context {
            let parent = cascade.context(parent_ctx).expect("parent exists");
            assert_eq!(
                Some(parent.activity),
                activity.parent,
                "{at}: context {} nests under a context of the wrong activity",
                context.id
            );
        }
    }

    for activity in cascade.activities() {
        if activity.is_live() {
            assert!(
                !activity.agents.is_empty(),
                "{at}: live activity {} has no agents",
                activity.id
            );
            if let Some(parent) = activity.parent {
                let parent = cascade.activity(parent).expect("parent exists");
                assert!(
                    parent.is_live(),
                    "{at}: live activity {} under ended parent {}",
                    activity.id,
                    parent.id
                );
            }
            // Exactly one context per live activity.
            let surrounding = cascade
                .contexts()
                .filter(|c| c.activity == activity.id)
                .count();
            assert_eq!(
                surrounding, 1,
                "{at}: live activity {} has {surrounding} contexts",
                activity.id
            );
        }
    }

    for agent in engine.ontology().agents.keys() {
        let Some(state) = engine.focus_state(agent) else {
            continue;
        };
        if let Some(focused) = state.focused {
            assert!(
                !state.suspended.contains(&focused),
                "{at}: {agent} focus {focused} also suspended"
            );
            let context = cascade.context(focused).expect("focused context exists");
            assert_ne!(
                context.state,
                ContextState::Ended,
                "{at}: {agent} focused on ended context {focused}"
            );
            assert!(
                context.agents_involved.contains(agent),
                "{at}: {agent} focused on uninvolved context {focused}"
            );
        }
        let unique: BTreeSet<_> = state.suspended.iter().collect();
        assert_eq!(
            unique.len(),
            state.suspended.len(),
            "{at}: {agent} suspended list has duplicates"
        );
        for ctx in &state.suspended {
            let context = cascade.context(*ctx).expect("suspended context exists");
            assert_ne!(
                context.state,
                ContextState::Ended,
                "{at}: {agent} keeps ended context {ctx} suspended"
            );
        }
    }
}

/// Seeded RNG for test drivers that want reproducible draws alongside the
/// fuzzer.
pub fn rng_from(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}
