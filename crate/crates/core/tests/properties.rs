mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;
use trajforge_core::callparse::{parse_call_list, parse_value, render_call_list};
use trajforge_core::chain::{validate_calls, ValidationPolicy};
use trajforge_core::pipeline::derive_seed;
use trajforge_core::simenv::Environment;
use trajforge_core::{ToolCall, Value};

fn value_strategy() -> impl Strategy<Value = Value> {
    let leaf = prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::Bool),
        any::<i64>().prop_map(Value::Int),
        (-1e12f64..1e12).prop_map(Value::Float),
        ".{0,12}".prop_map(Value::Str),
    ];
    leaf.prop_recursive(4, 32, 4, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..4).prop_map(Value::List),
            prop::collection::btree_map(".{0,6}", inner, 0..4)
                .prop_map(|m| Value::Object(m.into_iter().collect())),
        ]
    })
}

fn call_strategy() -> impl Strategy<Value = ToolCall> {
    (
        "[A-Za-z_][A-Za-z0-9_]{0,10}",
        prop::collection::btree_map("[a-z_][a-z0-9_]{0,8}", value_strategy(), 0..4),
    )
        .prop_map(|(tool, args)| ToolCall {
            tool,
            args: args.into_iter().collect(),
        })
}

fn policy() -> impl Strategy<Value = ValidationPolicy> {
    prop_oneof![Just(ValidationPolicy::OrderSensitive), Just(ValidationPolicy::OrderInsensitive)]
}

proptest! {
    #[test]
    fn parse_inverts_render(calls in prop::collection::vec(call_strategy(), 0..6)) {
        let text = render_call_list(&calls);
        prop_assert_eq!(parse_call_list(&text).unwrap(), calls);
    }

    #[test]
    fn value_literals_round_trip(v in value_strategy()) {
        prop_assert_eq!(parse_value(&v.render()).unwrap(), v);
    }

    #[test]
    fn parser_is_total(text in "\\PC{0,200}") {
        let _ = parse_call_list(&text);
    }

    #[test]
    fn validation_is_reflexive(calls in prop::collection::vec(call_strategy(), 0..6), p in policy()) {
        prop_assert!(validate_calls(&calls, &calls, p).is_pass());
    }

    #[test]
    fn pass_fail_is_symmetric(
        a in prop::collection::vec(call_strategy(), 0..4),
        b in prop::collection::vec(call_strategy(), 0..4),
        p in policy(),
    ) {
        prop_assert_eq!(validate_calls(&a, &b, p).is_pass(), validate_calls(&b, &a, p).is_pass());
    }

    #[test]
    fn order_insensitive_accepts_permutations(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = random_ground_truth(&mut rng);
        let mut shuffled = gt.clone();
        shuffled.reverse();
        prop_assert!(validate_calls(&shuffled, &gt, ValidationPolicy::OrderInsensitive).is_pass());
    }

    #[test]
    fn sampler_only_draws_legal_tools(seed in any::<u64>(), n in 1usize..=12, density in 0.0f64..0.7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (graph, _) = random_dag(&mut rng, n, density);
        let (called, _) = random_called(&mut rng, n);
        let legal = graph.legal_set(&called);
        let target = name(seed as usize % n);
        match graph.sample_tool(&target, &called, &mut rng) {
            Ok(sample) => prop_assert!(legal.contains(&sample.tool)),
            Err(_) => prop_assert!(legal.is_empty()),
        }
    }

    #[test]
    fn turns_respect_prerequisites_and_versions(seed in any::<u64>(), calls in 1usize..8, which in 0usize..2) {
        let env = Environment::builtin(["ticketing", "filesys"][which]).unwrap();
        let names: Vec<&str> = env.graph().tool_names().collect();
        let target = names[seed as usize % names.len()];
        let start = env.reset(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (trace, end) = env.run_turn(&start, target, calls, &mut rng).unwrap();
        prop_assert_eq!(trace.steps.len(), calls);
        let mut called = trajforge_core::apigraph::CalledSet::new();
        let mut mutations = 0;
        for step in &trace.steps {
            prop_assert!(env.graph().is_legal(&step.call.tool, &called).unwrap());
            prop_assert!(!step.feedback.is_error());
            called.insert(step.call.tool.clone());
            mutations += usize::from(env.is_mutating(&step.call.tool));
        }
        prop_assert_eq!(end.version, start.version + mutations as u64);
        prop_assert_eq!(trace.end_version, end.version);
    }

    #[test]
    fn derived_seeds_differ_by_index(master in any::<u64>(), i in 0u64..1000, j in 0u64..1000) {
        prop_assume!(i != j);
        prop_assert_ne!(derive_seed(master, i), derive_seed(master, j));
    }
}
