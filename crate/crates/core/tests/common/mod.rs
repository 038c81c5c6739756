//! Generators and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use rand::seq::IndexedRandom;
use rand::Rng;

use trajforge_core::apigraph::{ApiGraph, CalledSet, ParamKind, ToolSpec};
use trajforge_core::chain::MismatchKind;
use trajforge_core::{ToolCall, Value};

pub fn fixture_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

/// A random DAG over `n` tools named `t00..`; edges only run from lower to
/// higher index, so the result is acyclic by construction.
pub fn random_dag<R: Rng>(rng: &mut R, n: usize, density: f64) -> (ApiGraph, Vec<Vec<usize>>) {
    let mut prereqs = vec![Vec::new(); n];
    for (v, list) in prereqs.iter_mut().enumerate() {
        for u in 0..v {
            if rng.random_bool(density) {
                list.push(u);
            }
        }
    }
    let tools = (0..n).map(|v| {
        prereqs[v]
            .iter()
            .fold(ToolSpec::new(name(v), ParamKind::String), |spec, &u| spec.requires(name(u)))
    });
    (ApiGraph::new(tools).expect("acyclic by construction"), prereqs)
}

pub fn name(i: usize) -> String {
    format!("t{i:02}")
}

/// All-pairs undirected hop counts; `None` for disconnected pairs.
pub fn floyd_warshall(n: usize, prereqs: &[Vec<usize>]) -> Vec<Vec<Option<usize>>> {
    let mut d = vec![vec![None; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = Some(0);
    }
    for (v, list) in prereqs.iter().enumerate() {
        for &u in list {
            d[u][v] = Some(1);
            d[v][u] = Some(1);
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if let (Some(a), Some(b)) = (d[i][k], d[k][j]) {
                    if d[i][j].is_none_or(|c| a + b < c) {
                        d[i][j] = Some(a + b);
                    }
                }
            }
        }
    }
    d
}

pub fn random_called<R: Rng>(rng: &mut R, n: usize) -> (CalledSet, BTreeSet<usize>) {
    let p = rng.random_range(0.0..1.0);
    let picked: BTreeSet<usize> = (0..n).filter(|_| rng.random_bool(p)).collect();
    (picked.iter().map(|&i| name(i)).collect(), picked)
}

const WORDS: &[&str] = &["alpha", "beta", "gamma", "delta", "Rivermist", "a b", "quo\"te", "back\\slash", "tab\there", "nl\nx", "ünï", ""];

pub fn random_string<R: Rng>(rng: &mut R) -> String {
    if rng.random_bool(0.5) {
        WORDS.choose(rng).unwrap().to_string()
    } else {
        let len = rng.random_range(0..8);
        (0..len).map(|_| rng.random_range(' '..='~')).collect()
    }
}

pub fn random_value<R: Rng>(rng: &mut R, depth: usize) -> Value {
    let top = if depth == 0 { 5 } else { 7 };
    match rng.random_range(0..top) {
        0 => Value::Null,
        1 => Value::Bool(rng.random_bool(0.5)),
        2 => Value::Int(rng.random_range(i64::MIN..=i64::MAX) >> rng.random_range(0..63)),
        3 => {
            let f: f64 = rng.random_range(-1e6..1e6);
            Value::Float(if rng.random_bool(0.2) { f.trunc() } else { f })
        }
        4 => Value::Str(random_string(rng)),
        5 => Value::List((0..rng.random_range(0..4)).map(|_| random_value(rng, depth - 1)).collect()),
        _ => {
            let keys: BTreeSet<String> = (0..rng.random_range(0..4)).map(|_| random_string(rng)).collect();
            Value::Object(keys.into_iter().map(|k| (k, random_value(rng, depth - 1))).collect())
        }
    }
}

const TOOLS: &[&str] = &["pwd", "ls", "cd", "find", "cat", "tail", "get_zipcode", "buy_tickets", "_x1"];
const PARAMS: &[&str] = &["path", "folder", "file_name", "lines", "city", "cityA_zipcode", "n"];

pub fn random_call<R: Rng>(rng: &mut R) -> ToolCall {
    let mut call = ToolCall::new(*TOOLS.choose(rng).unwrap());
    let count = rng.random_range(0..4);
    let names: Vec<&str> = PARAMS.choose_multiple(rng, count).copied().collect();
    for param in names {
        call = call.arg(param, random_value(rng, 2));
    }
    call
}

pub fn random_call_list<R: Rng>(rng: &mut R, max: usize) -> Vec<ToolCall> {
    (0..rng.random_range(0..=max)).map(|_| random_call(rng)).collect()
}

/// Flat calls with scalar arguments, as ground truths usually look.
pub fn random_ground_truth<R: Rng>(rng: &mut R) -> Vec<ToolCall> {
    (0..rng.random_range(1..=6))
        .map(|_| {
            let mut call = ToolCall::new(*TOOLS.choose(rng).unwrap());
            let count = rng.random_range(0..3);
            let names: Vec<&str> = PARAMS.choose_multiple(rng, count).copied().collect();
            for param in names {
                let v = if rng.random_bool(0.5) {
                    Value::Int(rng.random_range(0..100))
                } else {
                    Value::Str(WORDS.choose(rng).unwrap().to_string())
                };
                call = call.arg(param, v);
            }
            call
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutation {
    Rename,
    ChangeArg,
    Drop,
    Insert,
    Swap,
}

pub const MUTATIONS: [Mutation; 5] = [
    Mutation::Rename,
    Mutation::ChangeArg,
    Mutation::Drop,
    Mutation::Insert,
    Mutation::Swap,
];

fn differs(a: &ToolCall, b: &ToolCall) -> bool {
    a.canonical_key() != b.canonical_key()
}

/// Applies one mutation that is guaranteed to change the list, or `None`
/// when the list offers no such site (e.g. a swap of identical neighbours).
pub fn mutate<R: Rng>(rng: &mut R, gt: &[ToolCall], m: Mutation) -> Option<Vec<ToolCall>> {
    let mut out = gt.to_vec();
    match m {
        Mutation::Rename => {
            let i = rng.random_range(0..out.len());
            out[i].tool = format!("{}_renamed", out[i].tool);
        }
        Mutation::ChangeArg => {
            let sites: Vec<usize> = (0..out.len()).filter(|&i| !out[i].args.is_empty()).collect();
            let &i = sites.choose(rng)?;
            let j = rng.random_range(0..out[i].args.len());
            let old = out[i].args[j].1.clone();
            out[i].args[j].1 = match old {
                Value::Int(n) => Value::Int(n + 1),
                Value::Str(s) => Value::Str(format!("{s}!")),
                _ => Value::Str("changed".into()),
            };
        }
        Mutation::Drop => {
            out.remove(rng.random_range(0..out.len()));
        }
        Mutation::Insert => {
            let extra = ToolCall::new("inserted_tool").arg("x", 1i64);
            out.insert(rng.random_range(0..=out.len()), extra);
        }
        Mutation::Swap => {
            let sites: Vec<usize> = (0..out.len().saturating_sub(1)).filter(|&i| differs(&out[i], &out[i + 1])).collect();
            let &i = sites.choose(rng)?;
            out.swap(i, i + 1);
        }
    }
    Some(out)
}

/// Expected mismatch kinds (sorted) for an order-sensitive comparison of a
/// single-mutation perturbation, derived from the mutation itself rather
/// than from any alignment.
pub fn diff_oracle(gt: &[ToolCall], perturbed: &[ToolCall], m: Mutation) -> Vec<MismatchKind> {
    let mut kinds = match m {
        Mutation::Drop => vec![MismatchKind::MissingCall],
        Mutation::Insert => vec![MismatchKind::ExtraCall],
        Mutation::Rename | Mutation::ChangeArg | Mutation::Swap => gt
            .iter()
            .zip(perturbed)
            .flat_map(|(g, a)| positional_kinds(g, a))
            .collect(),
    };
    kinds.sort();
    kinds
}

fn positional_kinds(g: &ToolCall, a: &ToolCall) -> Vec<MismatchKind> {
    if g.tool != a.tool {
        return vec![MismatchKind::WrongTool];
    }
    let mut kinds = Vec::new();
    for (k, v) in &g.args {
        match a.args.iter().find(|(ak, _)| ak == k) {
            None => kinds.push(MismatchKind::MissingArg),
            Some((_, av)) if av != v => kinds.push(MismatchKind::WrongArgValue),
            Some(_) => {}
        }
    }
    for (k, _) in &a.args {
        if !g.args.iter().any(|(gk, _)| gk == k) {
            kinds.push(MismatchKind::ExtraArg);
        }
    }
    kinds
}

/// One message of a corpus transcript.
#[derive(Debug, Clone)]
pub struct CorpusMessage {
    pub role: String,
    pub content: String,
}

/// Reads a `=== role` delimited transcript.
pub fn load_corpus(rel: &str) -> Vec<CorpusMessage> {
    let text = std::fs::read_to_string(fixture_path(rel)).expect("corpus file");
    let mut out: Vec<CorpusMessage> = Vec::new();
    for line in text.lines() {
        if let Some(role) = line.strip_prefix("=== ") {
            out.push(CorpusMessage {
                role: role.trim().to_string(),
                content: String::new(),
            });
        } else if let Some(last) = out.last_mut() {
            if !last.content.is_empty() {
                last.content.push('\n');
            }
            last.content.push_str(line);
        }
    }
    out
}

pub const CORPUS_FILES: [&str; 2] = ["golden/filesys_trajectory.txt", "golden/ticketing_case.txt"];
