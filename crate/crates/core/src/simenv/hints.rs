//! Parameter value generators keyed by `generator_hint`.
//!
//! Environment-aware hints read the live store and the current turn's
//! earlier steps so sampled calls usually succeed.

use rand::seq::IndexedRandom;
use rand::Rng;

use super::{Store, TraceStep};
use crate::apigraph::ParamKind;
use crate::value::Value;

pub const REGISTERED: &[&str] = &[
    "city-name",
    "turn-zipcode",
    "ticket-id",
    "subdirectory",
    "local-file",
    "existing-path",
    "search-root",
    "line-count",
];

pub fn is_registered(hint: &str) -> bool {
    REGISTERED.contains(&hint)
}

fn used_in_turn(prior: &[TraceStep], candidate: &str) -> bool {
    prior
        .iter()
        .flat_map(|s| s.call.args.iter())
        .any(|(_, v)| v.as_str() == Some(candidate))
}

fn pick<R: Rng + ?Sized>(options: &[String], rng: &mut R) -> Option<Value> {
    options.choose(rng).map(|s| Value::Str(s.clone()))
}

/// Draws a value for one parameter. `taken` holds values already chosen for
/// other parameters of the same call; hints that must not repeat skip them.
pub(crate) fn generate<R: Rng + ?Sized>(
    hint: &str,
    store: &Store,
    prior: &[TraceStep],
    taken: &[Value],
    rng: &mut R,
) -> Option<Value> {
    let is_taken = |s: &str| taken.iter().any(|v| v.as_str() == Some(s));
    match (hint, store) {
        ("city-name", Store::Ticketing(t)) => {
            let all: Vec<String> = t
                .cities
                .iter()
                .map(|(c, _)| c.clone())
                .filter(|c| !is_taken(c))
                .collect();
            let fresh: Vec<String> = all.iter().filter(|c| !used_in_turn(prior, c)).cloned().collect();
            pick(if fresh.is_empty() { &all } else { &fresh }, rng)
        }
        ("turn-zipcode", Store::Ticketing(t)) => {
            let mut seen: Vec<String> = Vec::new();
            for step in prior {
                if let Some(zip) = step.feedback.payload().and_then(|v| v.as_str()) {
                    if t.cities.iter().any(|(_, z)| z == zip) && !seen.iter().any(|s| s == zip) && !is_taken(zip) {
                        seen.push(zip.to_string());
                    }
                }
            }
            pick(&seen, rng)
        }
        ("ticket-id", Store::Ticketing(t)) => {
            let ids: Vec<i64> = t
                .tickets
                .iter()
                .map(|tk| tk.ticket_id)
                .filter(|id| !taken.contains(&Value::Int(*id)))
                .collect();
            ids.choose(rng).map(|id| Value::Int(*id))
        }
        ("subdirectory", Store::Filesys(fs)) => {
            let mut options = fs.subdirectories();
            if !fs.at_root() {
                options.push("..".to_string());
            }
            pick(&options, rng)
        }
        ("local-file", Store::Filesys(fs)) => pick(&fs.local_files(), rng),
        ("existing-path", Store::Filesys(fs)) => pick(&fs.descendant_paths(false), rng),
        ("search-root", Store::Filesys(fs)) => {
            let dirs = fs.descendant_paths(true);
            if dirs.is_empty() || rng.random_bool(0.5) {
                Some(Value::Str(".".into()))
            } else {
                pick(&dirs, rng)
            }
        }
        ("line-count", _) => Some(Value::Int(rng.random_range(1..=10))),
        _ => None,
    }
}

/// Value for a parameter with no hint, drawn by kind.
pub(crate) fn generic<R: Rng + ?Sized>(kind: ParamKind, rng: &mut R) -> Value {
    match kind {
        ParamKind::String => Value::Str((0..6).map(|_| rng.random_range(b'a'..=b'z') as char).collect()),
        ParamKind::Integer => Value::Int(rng.random_range(0..100)),
        ParamKind::Float => Value::Float(f64::from(rng.random_range(0..1000)) / 10.0),
        ParamKind::Boolean => Value::Bool(rng.random_bool(0.5)),
        ParamKind::List => Value::List(Vec::new()),
        ParamKind::Object => Value::Object(Vec::new()),
    }
}
