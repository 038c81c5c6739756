//! Acceptance suite. Each criterion runs independently and prints one
//! PASS/FAIL line; the test fails if any criterion does.

mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use trajforge_core::agents::{AgentRole, ReasonerMode, ScriptedAgent};
use trajforge_core::apigraph::{ApiGraph, SampleCase, ToolSpec};
use trajforge_core::callparse::{extract_sections, parse_call_list, render_call_list, CallSection};
use trajforge_core::chain::{guided_chain, validate_calls, ChainConfig, ChainOutcome, ValidationPolicy};
use trajforge_core::pipeline::{audit, run_synthesis, AgentSource, PipelineConfig};
use trajforge_core::simenv::{Environment, TurnTrace};
use trajforge_core::synthesis::{abstract_tool, replay, synthesize_query, AdvancedTool, Epsilon, HardQuery};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(started: Instant, budget: Duration, what: &str) -> Result<Duration, String> {
    let took = started.elapsed();
    ensure(took < budget, || format!("{what} took {took:.2?}, budget {budget:?}"))?;
    Ok(took)
}

fn subtools(graph: &ApiGraph, adv: &AdvancedTool) -> Vec<ToolSpec> {
    let names: BTreeSet<&str> = adv.constituents.iter().map(String::as_str).collect();
    names.into_iter().map(|n| graph.tool(n).expect("constituent").clone()).collect()
}

fn golden_trace(env: &Environment) -> TurnTrace {
    let start = env.reset(env.golden_seed());
    let mut rng = ChaCha8Rng::seed_from_u64(env.golden_seed());
    env.run_turn(&start, "buy_tickets", 3, &mut rng).expect("golden turn").0
}

fn golden_query(env: &Environment) -> (AdvancedTool, HardQuery, TurnTrace) {
    let trace = golden_trace(env);
    let adv = abstract_tool(&ScriptedAgent::new(AgentRole::Tooling, 0), &trace, env.graph()).expect("abstraction");
    let query = synthesize_query(&ScriptedAgent::new(AgentRole::Querying, 0), &adv, env.graph(), Epsilon::default())
        .expect("query");
    (adv, query, trace)
}

fn golden_case() -> Outcome {
    let started = Instant::now();
    let env = Environment::builtin("ticketing").map_err(|e| e.to_string())?;
    let (adv, query, trace) = golden_query(env);

    let observed: Vec<(String, String)> = trace
        .steps
        .iter()
        .map(|s| (s.call.render(), s.feedback.raw_text.clone()))
        .collect();
    let expected = [
        (r#"get_zipcode(city="Rivermist")"#, r#""83214""#),
        (r#"get_zipcode(city="Stonebrook")"#, r#""74532""#),
        (r#"buy_tickets(cityA_zipcode="83214", cityB_zipcode="74532")"#, r#"{"ticket_id": 14589}"#),
    ];
    ensure(
        observed.iter().map(|(c, f)| (c.as_str(), f.as_str())).eq(expected.iter().copied()),
        || format!("trace differs: {observed:?}"),
    )?;

    let params: Vec<&str> = adv.exposed_params.iter().map(|p| p.name.as_str()).collect();
    ensure(params == ["cityA", "cityB"], || format!("exposed params {params:?}"))?;
    let values: Vec<String> = adv.exposed_values.iter().map(|v| v.render()).collect();
    ensure(values == [r#""Rivermist""#, r#""Stonebrook""#], || format!("exposed values {values:?}"))?;
    ensure(
        query.text.contains("Rivermist") && query.text.contains("Stonebrook"),
        || format!("query lacks a city: {}", query.text),
    )?;

    let outcome = guided_chain(
        &ScriptedAgent::reasoner(ReasonerMode::AlwaysCorrect, 0),
        &ScriptedAgent::new(AgentRole::Critiquing, 0),
        &query,
        &adv.description,
        &subtools(env.graph(), &adv),
        &trace.calls(),
        &ChainConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    ensure(outcome.is_retained() && outcome.attempts() == 1, || {
        format!("chain gave {} attempt(s), retained={}", outcome.attempts(), outcome.is_retained())
    })?;

    let took = within(started, Duration::from_secs(1), "golden case")?;
    Ok(format!("trace, {} and query reproduced, retained in 1 attempt ({took:.2?})", adv.name))
}

fn sampler_suite() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5a3b);
    let (mut legality_checks, mut target_draws, mut approach_draws, mut distance_checks) = (0, 0, 0, 0);
    for instance in 0..10_000 {
        let n = rng.random_range(1..=12);
        let density = rng.random_range(0.0..0.6);
        let (graph, prereqs) = random_dag(&mut rng, n, density);
        let oracle = floyd_warshall(n, &prereqs);

        for (i, row) in oracle.iter().enumerate() {
            for (j, &want) in row.iter().enumerate() {
                let got = graph.graph_distance(&name(i), &name(j)).map_err(|e| e.to_string())?;
                ensure(got == want, || format!("instance {instance}: d({i},{j}) = {got:?}, oracle {want:?}"))?;
                distance_checks += 1;
            }
        }

        let (called, picked) = random_called(&mut rng, n);
        let legal: Vec<usize> = (0..n).filter(|&v| prereqs[v].iter().all(|u| picked.contains(u))).collect();
        if legal.is_empty() {
            continue;
        }
        let target = rng.random_range(0..n);
        for _ in 0..4 {
            let sample = graph.sample_tool(&name(target), &called, &mut rng).map_err(|e| e.to_string())?;
            let idx: usize = sample.tool[1..].parse().map_err(|_| "bad tool name".to_string())?;
            ensure(legal.contains(&idx), || format!("instance {instance}: illegal draw {}", sample.tool))?;
            legality_checks += 1;

            let target_applicable = !picked.contains(&target) && legal.contains(&target);
            if target_applicable {
                target_draws += 1;
                ensure(idx == target && sample.case == SampleCase::Target, || {
                    format!("instance {instance}: target legal but drew {} ({:?})", sample.tool, sample.case)
                })?;
            }
            if !picked.contains(&target) && !legal.contains(&target) {
                let best = legal.iter().filter_map(|&v| oracle[v][target]).min();
                match best {
                    Some(d) => {
                        approach_draws += 1;
                        ensure(sample.case == SampleCase::Approach { distance: d } && oracle[idx][target] == Some(d), || {
                            format!("instance {instance}: approach drew {} ({:?}), oracle distance {d}", sample.tool, sample.case)
                        })?
                    }
                    None => ensure(sample.case == SampleCase::Fallback, || {
                        format!("instance {instance}: expected fallback, got {:?}", sample.case)
                    })?,
                }
            }
        }
    }
    let took = within(started, Duration::from_secs(30), "sampler suite")?;
    Ok(format!(
        "10000 DAGs: {legality_checks} legal draws, {target_draws} target-priority draws, {approach_draws} approach draws, {distance_checks} distances match Floyd-Warshall ({took:.2?})"
    ))
}

fn chain_bounds() -> Outcome {
    const K_MAX: u32 = 5;
    let env = Environment::builtin("ticketing").map_err(|e| e.to_string())?;
    let (adv, query, trace) = golden_query(env);
    let cfg = ChainConfig {
        k_max: K_MAX,
        ..ChainConfig::default()
    };
    let tools = subtools(env.graph(), &adv);
    let run = |mode| {
        guided_chain(
            &ScriptedAgent::reasoner(mode, 1),
            &ScriptedAgent::new(AgentRole::Critiquing, 1),
            &query,
            &adv.description,
            &tools,
            &trace.calls(),
            &cfg,
        )
        .map_err(|e| e.to_string())
    };
    for k in 0..=K_MAX {
        let outcome = run(ReasonerMode::FailKTimes(k))?;
        ensure(outcome.is_retained() && outcome.attempts() == k as usize + 1, || {
            format!("fail-{k}-times: retained={} attempts={}", outcome.is_retained(), outcome.attempts())
        })?;
        if let ChainOutcome::Retained { prompt, .. } = &outcome {
            let hints = prompt.len().saturating_sub(2);
            ensure(prompt.len() == 2 + k as usize, || format!("fail-{k}-times: prompt carries {hints} hint(s)"))?;
        }
    }
    let outcome = run(ReasonerMode::AlwaysWrong)?;
    ensure(
        !outcome.is_retained() && outcome.attempts() == K_MAX as usize + 1,
        || format!("always-wrong: retained={} attempts={}", outcome.is_retained(), outcome.attempts()),
    )?;
    Ok(format!("fail-k-times retained after k+1 attempts for k=0..={K_MAX}; always-wrong rejected after {}", K_MAX + 1))
}

fn validator_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7a11);
    for i in 0..1000 {
        let gt = random_ground_truth(&mut rng);
        for policy in [ValidationPolicy::OrderSensitive, ValidationPolicy::OrderInsensitive] {
            let report = validate_calls(&gt, &gt, policy);
            ensure(report.is_pass(), || format!("reflexivity failed on instance {i}: {:?}", report.mismatches))?;
        }
    }
    let mut per_kind = [0usize; 5];
    let mut done = 0;
    while done < 1000 {
        let gt = random_ground_truth(&mut rng);
        let which = rng.random_range(0..MUTATIONS.len());
        let m = MUTATIONS[which];
        let Some(perturbed) = mutate(&mut rng, &gt, m) else { continue };
        let report = validate_calls(&perturbed, &gt, ValidationPolicy::OrderSensitive);
        let mut kinds = report.kinds();
        kinds.sort();
        let want = diff_oracle(&gt, &perturbed, m);
        ensure(!report.is_pass() && kinds == want, || {
            format!(
                "{m:?} on {}: got {kinds:?}, oracle {want:?}",
                render_call_list(&gt)
            )
        })?;
        per_kind[which] += 1;
        done += 1;
    }
    Ok(format!(
        "1000 reflexive passes; 1000 perturbations match the diff oracle (rename {}, arg {}, drop {}, insert {}, swap {})",
        per_kind[0], per_kind[1], per_kind[2], per_kind[3], per_kind[4]
    ))
}

fn fuzz_inputs(rng: &mut ChaCha8Rng) -> Vec<String> {
    const SIZE: usize = 64 * 1024;
    let mut inputs = Vec::new();
    for _ in 0..24 {
        let bytes: Vec<u8> = (0..SIZE).map(|_| rng.random()).collect();
        inputs.push(String::from_utf8_lossy(&bytes).into_owned());
    }
    let alphabet: Vec<char> = "[](){}=,\"'\\ :.-0123456789abcxyz_\n<>/".chars().collect();
    for _ in 0..24 {
        inputs.push((0..SIZE).map(|_| *alphabet.choose(rng).unwrap()).collect());
    }
    inputs.push("[".repeat(SIZE));
    inputs.push(format!("[f(x={})]", "[".repeat(SIZE - 8)));
    inputs.push(format!("[f(x=\"{}", "\\\"".repeat(SIZE / 2)));
    inputs.push(format!("[{}]", vec!["f(a=1)"; SIZE / 8].join(", ")));
    inputs.push(format!("<tool_call>{}</tool_call>", "<think>".repeat(SIZE / 8)));
    inputs.push("9".repeat(SIZE));
    inputs
}

fn parser_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9a55);
    for i in 0..10_000 {
        let calls = random_call_list(&mut rng, 5);
        let text = render_call_list(&calls);
        let back = parse_call_list(&text).map_err(|e| format!("list {i} ({text}): {e}"))?;
        ensure(back == calls, || format!("list {i} changed across a round trip: {text}"))?;
    }

    let mut blocks = 0;
    for file in CORPUS_FILES {
        for msg in load_corpus(file).into_iter().filter(|m| m.role == "assistant") {
            let tagged = extract_sections(&msg.content).map_err(|e| format!("{file}: {e}"))?;
            if let Some(section) = tagged.tool_call {
                blocks += 1;
                let body = msg.content.split("<tool_call>").nth(1).and_then(|s| s.split("</tool_call>").next());
                let looks_like_list = body.is_some_and(|b| b.trim_start().starts_with('['));
                match section {
                    CallSection::Calls(calls) => ensure(!calls.is_empty(), || format!("{file}: empty call list"))?,
                    CallSection::Reply(text) => ensure(!looks_like_list, || format!("{file}: call list failed to parse: {text}"))?,
                }
            }
        }
    }

    let mut worst = Duration::ZERO;
    let inputs = fuzz_inputs(&mut rng);
    for input in &inputs {
        let started = Instant::now();
        let _ = parse_call_list(input);
        let _ = extract_sections(input);
        worst = worst.max(within(started, Duration::from_secs(1), "fuzz input")?);
    }
    Ok(format!(
        "10000 round trips exact; {blocks} corpus <tool_call> blocks extract; {} fuzz inputs of 64 KiB, slowest {worst:.2?}",
        inputs.len()
    ))
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut summary = Vec::new();
    for env_id in ["ticketing", "filesys"] {
        let started = Instant::now();
        let mut files = Vec::new();
        let mut report = None;
        for workers in [1, 8] {
            let mut cfg = PipelineConfig::new(env_id, 3, 4, 100);
            cfg.master_seed = 20;
            cfg.workers = workers;
            let out = dir.path().join(format!("{env_id}-{workers}.jsonl"));
            let r = run_synthesis(&cfg, &AgentSource::Scripted(cfg.reasoner_mode), &out).map_err(|e| e.to_string())?;
            ensure(r.retained == 100, || format!("{env_id}: retained {} of 100, failures {:?}", r.retained, r.failed))?;
            files.push(out);
            report = Some(r);
        }
        let took = within(started, Duration::from_secs(60), "two runs")?;
        let a = std::fs::read(&files[0]).map_err(|e| e.to_string())?;
        let b = std::fs::read(&files[1]).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("{env_id}: workers=1 and workers=8 outputs differ"))?;
        let audited = audit(&files[0]).map_err(|e| format!("{env_id}: {e}"))?;
        let report = report.expect("ran");
        ensure(audited.samples == report.samples_written && audited.call_turns == 300, || {
            format!("{env_id}: audit {audited:?} against {} written", report.samples_written)
        })?;
        summary.push(format!("{env_id} {} samples identical across workers ({took:.2?} for both runs)", audited.samples));
    }
    Ok(summary.join("; "))
}

fn replay_soundness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4e9);
    let envs = [
        Environment::builtin("ticketing").map_err(|e| e.to_string())?,
        Environment::builtin("filesys").map_err(|e| e.to_string())?,
    ];
    let mut multi_step = 0;
    for i in 0..200u64 {
        let env = envs[i as usize % 2];
        let start = env.reset(i);
        let names: Vec<&str> = env.graph().tool_names().collect();
        let target = *names.choose(&mut rng).unwrap();
        let calls = rng.random_range(1..=5);
        let (trace, end) = env.run_turn(&start, target, calls, &mut rng).map_err(|e| e.to_string())?;
        let adv = abstract_tool(&ScriptedAgent::new(AgentRole::Tooling, i), &trace, env.graph()).map_err(|e| e.to_string())?;
        adv.check(&trace).map_err(|e| e.to_string())?;
        let fresh = env.reset(i);
        let (feedback, replay_end) = replay(env, &fresh, &adv, &adv.exposed_args()).map_err(|e| format!("tool {i}: {e}"))?;
        let recorded: Vec<&str> = trace.steps.iter().map(|s| s.feedback.raw_text.as_str()).collect();
        let replayed: Vec<&str> = feedback.iter().map(|f| f.raw_text.as_str()).collect();
        ensure(recorded == replayed, || format!("tool {i} ({}): {recorded:?} vs {replayed:?}", adv.name))?;
        ensure(replay_end.digest() == end.digest(), || format!("tool {i}: end state differs"))?;
        if adv.constituents.len() > 1 {
            multi_step += 1;
        }
    }
    Ok(format!("200 advanced tools ({multi_step} multi-step) replay to identical feedback and end state"))
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 7] = [
        ("golden ticketing case", golden_case),
        ("sampler property suite", sampler_suite),
        ("chain attempt bounds", chain_bounds),
        ("validator diff oracle", validator_oracle),
        ("parser round trip and fuzz", parser_round_trip),
        ("end-to-end determinism and scale", end_to_end),
        ("replay soundness", replay_soundness),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {}. {name}: {detail}", i + 1),
            Err(reason) => {
                println!("FAIL {}. {name}: {reason}", i + 1);
                failed.push(*name);
            }
        }
    }
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
