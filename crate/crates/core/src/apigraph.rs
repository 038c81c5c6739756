//! Tool dependency graph: legality, distances and the directed sampler.
//!
//! An edge `(u, v)` means `u` must have run before `v` becomes callable. The
//! graph is validated once at construction (unique names, no dangling
//! prerequisites, no cycles) and is immutable afterwards.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::value::Value;

/// Deepest list/object nesting allowed in parameter defaults.
pub const MAX_VALUE_DEPTH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    String,
    Integer,
    Float,
    Boolean,
    List,
    Object,
}

impl ParamKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamKind::String => "string",
            ParamKind::Integer => "integer",
            ParamKind::Float => "float",
            ParamKind::Boolean => "boolean",
            ParamKind::List => "list",
            ParamKind::Object => "object",
        }
    }

    /// Whether a literal is acceptable for a parameter of this kind.
    /// Integers are accepted where floats are expected, not the reverse.
    pub fn admits(self, value: &Value) -> bool {
        matches!(
            (self, value),
            (ParamKind::String, Value::Str(_))
                | (ParamKind::Integer, Value::Int(_))
                | (ParamKind::Float, Value::Float(_) | Value::Int(_))
                | (ParamKind::Boolean, Value::Bool(_))
                | (ParamKind::List, Value::List(_))
                | (ParamKind::Object, Value::Object(_))
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    #[serde(default = "default_true")]
    pub required: bool,
    #[serde(default, with = "opt_literal", skip_serializing_if = "Option::is_none")]
    pub default: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator_hint: Option<String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
}

fn default_true() -> bool {
    true
}

impl ParamSpec {
    pub fn required(name: impl Into<String>, kind: ParamKind) -> Self {
        Self {
            name: name.into(),
            kind,
            required: true,
            default: None,
            generator_hint: None,
            description: String::new(),
        }
    }

    pub fn hint(mut self, hint: impl Into<String>) -> Self {
        self.generator_hint = Some(hint.into());
        self
    }
}

/// Defaults are stored in the spec file as JSON literals.
mod opt_literal {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::value::Value;

    pub fn serialize<S: Serializer>(value: &Option<Value>, s: S) -> Result<S::Ok, S::Error> {
        value.as_ref().map(Value::to_json).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Value>, D::Error> {
        let json = Option::<serde_json::Value>::deserialize(d)?;
        Ok(json.map(|j| Value::from_json(&j)))
    }
}

/// One primitive tool.
///
/// `intent` and `referent` are optional phrase templates with `{param}`
/// placeholders. The intent describes what a call accomplishes ("look up the
/// weather in {city}"); the referent names the value a call produces when a
/// later call consumes it ("the city {city}"). Query synthesis stitches them
/// together; tools without them get a generic phrasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub params: Vec<ParamSpec>,
    #[serde(default)]
    pub prerequisites: BTreeSet<String>,
    pub executor: String,
    pub returns: ParamKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub referent: Option<String>,
}

impl ToolSpec {
    pub fn new(name: impl Into<String>, returns: ParamKind) -> Self {
        let name = name.into();
        Self {
            executor: name.clone(),
            name,
            description: String::new(),
            params: Vec::new(),
            prerequisites: BTreeSet::new(),
            returns,
            intent: None,
            referent: None,
        }
    }

    pub fn requires(mut self, prereq: impl Into<String>) -> Self {
        self.prerequisites.insert(prereq.into());
        self
    }

    pub fn param(mut self, param: ParamSpec) -> Self {
        self.params.push(param);
        self
    }

    pub fn param_spec(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("duplicate tool name `{0}`")]
    DuplicateTool(String),
    #[error("tool `{tool}` lists prerequisite `{missing}`, which is not in the graph")]
    DanglingPrerequisite { tool: String, missing: String },
    #[error("prerequisite cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("tool `{tool}` parameter `{param}`: {reason}")]
    InvalidParam {
        tool: String,
        param: String,
        reason: String,
    },
    #[error("no legal tool to sample")]
    SamplingExhausted,
    #[error("malformed graph document: {0}")]
    Malformed(String),
}

/// Tools executed so far in the current turn.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CalledSet(BTreeSet<String>);

impl CalledSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, tool: impl Into<String>) {
        self.0.insert(tool.into());
    }

    pub fn contains(&self, tool: &str) -> bool {
        self.0.contains(tool)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<S: Into<String>> FromIterator<S> for CalledSet {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Self(iter.into_iter().map(Into::into).collect())
    }
}

/// Which branch of the sampling policy produced a tool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleCase {
    /// Target already called: uniform over the legal set.
    Explore,
    /// Target legal and not yet called.
    Target,
    /// Closest legal tool to the target.
    Approach { distance: usize },
    /// No legal tool reaches the target: uniform over the legal set.
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub tool: String,
    pub case: SampleCase,
}

#[derive(Debug, Clone)]
pub struct ApiGraph {
    tools: BTreeMap<String, ToolSpec>,
    edges: BTreeSet<(String, String)>,
    neighbours: BTreeMap<String, BTreeSet<String>>,
}

impl ApiGraph {
    pub fn new(tools: impl IntoIterator<Item = ToolSpec>) -> Result<Self, GraphError> {
        let mut map = BTreeMap::new();
        for tool in tools {
            if map.contains_key(&tool.name) {
                return Err(GraphError::DuplicateTool(tool.name));
            }
            map.insert(tool.name.clone(), tool);
        }

        let mut edges = BTreeSet::new();
        for tool in map.values() {
            for prereq in &tool.prerequisites {
                if !map.contains_key(prereq) {
                    return Err(GraphError::DanglingPrerequisite {
                        tool: tool.name.clone(),
                        missing: prereq.clone(),
                    });
                }
                edges.insert((prereq.clone(), tool.name.clone()));
            }
            validate_params(tool)?;
        }

        if let Some(cycle) = find_cycle(&map) {
            return Err(GraphError::Cycle(cycle));
        }

        let mut neighbours: BTreeMap<String, BTreeSet<String>> =
            map.keys().map(|k| (k.clone(), BTreeSet::new())).collect();
        for (u, v) in &edges {
            neighbours.get_mut(u).expect("validated").insert(v.clone());
            neighbours.get_mut(v).expect("validated").insert(u.clone());
        }

        Ok(Self {
            tools: map,
            edges,
            neighbours,
        })
    }

    pub fn tool(&self, name: &str) -> Result<&ToolSpec, GraphError> {
        self.tools
            .get(name)
            .ok_or_else(|| GraphError::UnknownTool(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tools.contains_key(name)
    }

    /// Tools in name order.
    pub fn tools(&self) -> impl Iterator<Item = &ToolSpec> {
        self.tools.values()
    }

    pub fn tool_names(&self) -> impl Iterator<Item = &str> {
        self.tools.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn edges(&self) -> &BTreeSet<(String, String)> {
        &self.edges
    }

    pub fn is_legal(&self, tool: &str, called: &CalledSet) -> Result<bool, GraphError> {
        Ok(self.tool(tool)?.prerequisites.iter().all(|p| called.contains(p)))
    }

    pub fn legal_set(&self, called: &CalledSet) -> BTreeSet<String> {
        self.tools
            .values()
            .filter(|t| t.prerequisites.iter().all(|p| called.contains(p)))
            .map(|t| t.name.clone())
            .collect()
    }

    /// Hop count over prerequisite edges taken as undirected; `None` when
    /// the two tools sit in different components.
    pub fn graph_distance(&self, from: &str, to: &str) -> Result<Option<usize>, GraphError> {
        self.tool(from)?;
        self.tool(to)?;
        Ok(self.distances_from(to).get(from).copied())
    }

    /// BFS distances from `origin` to every reachable tool.
    fn distances_from<'a>(&'a self, origin: &str) -> BTreeMap<&'a str, usize> {
        let Some((origin, _)) = self.neighbours.get_key_value(origin) else {
            return BTreeMap::new();
        };
        let origin = origin.as_str();
        let mut dist = BTreeMap::new();
        let mut queue = VecDeque::new();
        dist.insert(origin, 0usize);
        queue.push_back(origin);
        while let Some(node) = queue.pop_front() {
            let d = dist[node];
            for next in &self.neighbours[node] {
                if !dist.contains_key(next.as_str()) {
                    dist.insert(next.as_str(), d + 1);
                    queue.push_back(next.as_str());
                }
            }
        }
        dist
    }

    /// Directed sampling toward `target`.
    pub fn sample_tool<R: Rng + ?Sized>(
        &self,
        target: &str,
        called: &CalledSet,
        rng: &mut R,
    ) -> Result<Sample, GraphError> {
        self.sample_tool_excluding(target, called, &BTreeSet::new(), rng)
    }

    /// Like [`ApiGraph::sample_tool`] with some legal tools ruled out, used
    /// when a tool already failed at the current step.
    pub fn sample_tool_excluding<R: Rng + ?Sized>(
        &self,
        target: &str,
        called: &CalledSet,
        excluded: &BTreeSet<String>,
        rng: &mut R,
    ) -> Result<Sample, GraphError> {
        self.tool(target)?;
        let legal: Vec<String> = self
            .legal_set(called)
            .into_iter()
            .filter(|t| !excluded.contains(t))
            .collect();
        if legal.is_empty() {
            return Err(GraphError::SamplingExhausted);
        }

        let uniform = |rng: &mut R, case| Sample {
            tool: legal[rng.random_range(0..legal.len())].clone(),
            case,
        };

        if called.contains(target) {
            return Ok(uniform(rng, SampleCase::Explore));
        }
        if legal.iter().any(|t| t == target) {
            return Ok(Sample {
                tool: target.to_string(),
                case: SampleCase::Target,
            });
        }

        let dist = self.distances_from(target);
        // `legal` is name-sorted, so the first minimum wins ties lexicographically.
        let closest = legal
            .iter()
            .filter_map(|t| dist.get(t.as_str()).map(|d| (*d, t)))
            .min_by_key(|(d, _)| *d);
        match closest {
            Some((distance, tool)) => Ok(Sample {
                tool: tool.clone(),
                case: SampleCase::Approach { distance },
            }),
            None => Ok(uniform(rng, SampleCase::Fallback)),
        }
    }

    /// A prerequisite-respecting order of all tools (Kahn, ties by name).
    pub fn topological_order(&self) -> Vec<String> {
        let mut indegree: BTreeMap<&str, usize> = self
            .tools
            .values()
            .map(|t| (t.name.as_str(), t.prerequisites.len()))
            .collect();
        let mut ready: BTreeSet<&str> = indegree
            .iter()
            .filter(|(_, d)| **d == 0)
            .map(|(n, _)| *n)
            .collect();
        let mut order = Vec::with_capacity(self.tools.len());
        while let Some(node) = ready.pop_first() {
            order.push(node.to_string());
            for (u, v) in &self.edges {
                if u == node {
                    let d = indegree.get_mut(v.as_str()).expect("validated");
                    *d -= 1;
                    if *d == 0 {
                        ready.insert(v.as_str());
                    }
                }
            }
        }
        order
    }
}

fn validate_params(tool: &ToolSpec) -> Result<(), GraphError> {
    let invalid = |param: &ParamSpec, reason: &str| GraphError::InvalidParam {
        tool: tool.name.clone(),
        param: param.name.clone(),
        reason: reason.to_string(),
    };
    let mut seen = BTreeSet::new();
    for param in &tool.params {
        if !seen.insert(param.name.as_str()) {
            return Err(invalid(param, "declared twice"));
        }
        if let Some(default) = &param.default {
            if param.required {
                return Err(invalid(param, "required parameters cannot carry a default"));
            }
            if !matches!(default, Value::Null) && !param.kind.admits(default) {
                return Err(invalid(param, "default does not match the declared kind"));
            }
            if default.depth() > MAX_VALUE_DEPTH {
                return Err(invalid(param, "default nests deeper than 3 levels"));
            }
        }
    }
    Ok(())
}

/// Returns one prerequisite cycle, first node repeated at the end.
fn find_cycle(tools: &BTreeMap<String, ToolSpec>) -> Option<Vec<String>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Fresh,
        Active,
        Done,
    }

    fn visit<'a>(
        node: &'a str,
        tools: &'a BTreeMap<String, ToolSpec>,
        marks: &mut BTreeMap<&'a str, Mark>,
        stack: &mut Vec<&'a str>,
    ) -> Option<Vec<String>> {
        marks.insert(node, Mark::Active);
        stack.push(node);
        // Walk prerequisite links; a cycle there is a cycle in the edge set.
        for prereq in &tools[node].prerequisites {
            match marks.get(prereq.as_str()).copied().unwrap_or(Mark::Fresh) {
                Mark::Active => {
                    let start = stack.iter().position(|n| *n == prereq).expect("on stack");
                    let mut cycle: Vec<String> = stack[start..].iter().rev().map(|s| s.to_string()).collect();
                    cycle.rotate_right(1);
                    cycle.push(cycle[0].clone());
                    return Some(cycle);
                }
                Mark::Fresh => {
                    if let Some(cycle) = visit(prereq, tools, marks, stack) {
                        return Some(cycle);
                    }
                }
                Mark::Done => {}
            }
        }
        stack.pop();
        marks.insert(node, Mark::Done);
        None
    }

    let mut marks: BTreeMap<&str, Mark> = BTreeMap::new();
    for name in tools.keys() {
        if marks.get(name.as_str()).copied().unwrap_or(Mark::Fresh) == Mark::Fresh {
            let mut stack = Vec::new();
            if let Some(cycle) = visit(name, tools, &mut marks, &mut stack) {
                return Some(cycle);
            }
        }
    }
    None
}

/// Builds a graph from JSON: either a list of tool specs or an object whose
/// `tools` field is one.
pub fn load_graph(document: &str) -> Result<ApiGraph, GraphError> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Document {
        Bare(Vec<ToolSpec>),
        Wrapped { tools: Vec<ToolSpec> },
    }
    let tools = match serde_json::from_str(document).map_err(|e| GraphError::Malformed(e.to_string()))? {
        Document::Bare(tools) | Document::Wrapped { tools } => tools,
    };
    ApiGraph::new(tools)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn tool(name: &str, prereqs: &[&str]) -> ToolSpec {
        prereqs
            .iter()
            .fold(ToolSpec::new(name, ParamKind::String), |t, p| t.requires(*p))
    }

    fn chain() -> ApiGraph {
        ApiGraph::new([tool("a", &[]), tool("b", &["a"]), tool("c", &["b"])]).unwrap()
    }

    fn called(names: &[&str]) -> CalledSet {
        names.iter().copied().collect()
    }

    #[test]
    fn legality_is_a_subset_check() {
        let g = ApiGraph::new([
            tool("pwd", &[]),
            tool("get_zipcode", &[]),
            tool("buy_tickets", &["get_zipcode"]),
        ])
        .unwrap();
        assert!(g.is_legal("pwd", &called(&[])).unwrap());
        assert!(!g.is_legal("buy_tickets", &called(&[])).unwrap());
        assert!(g.is_legal("buy_tickets", &called(&["get_zipcode", "pwd"])).unwrap());
        assert_eq!(
            g.is_legal("nope", &called(&[])),
            Err(GraphError::UnknownTool("nope".into()))
        );
    }

    #[test]
    fn legal_set_on_a_chain() {
        let g = chain();
        let set = |names: &[&str]| names.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
        assert_eq!(g.legal_set(&called(&[])), set(&["a"]));
        assert_eq!(g.legal_set(&called(&["a"])), set(&["a", "b"]));
        assert_eq!(g.legal_set(&called(&["a", "b", "c"])), set(&["a", "b", "c"]));
    }

    #[test]
    fn distances_ignore_direction() {
        let g = ApiGraph::new([tool("a", &[]), tool("b", &["a"]), tool("c", &["b"]), tool("x", &[])]).unwrap();
        assert_eq!(g.graph_distance("b", "b").unwrap(), Some(0));
        assert_eq!(g.graph_distance("a", "c").unwrap(), Some(2));
        assert_eq!(g.graph_distance("c", "a").unwrap(), Some(2));
        assert_eq!(g.graph_distance("a", "x").unwrap(), None);
        assert!(g.graph_distance("a", "zzz").is_err());
    }

    #[test]
    fn sampler_returns_legal_target_first() {
        let g = ApiGraph::new([tool("get_zipcode", &[]), tool("buy_tickets", &["get_zipcode"])]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = g.sample_tool("buy_tickets", &called(&["get_zipcode"]), &mut rng).unwrap();
        assert_eq!(s, Sample { tool: "buy_tickets".into(), case: SampleCase::Target });
    }

    #[test]
    fn sampler_explores_after_target_is_called() {
        let g = chain();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let s = g.sample_tool("a", &called(&["a"]), &mut rng).unwrap();
            assert!(s.tool == "a" || s.tool == "b", "{}", s.tool);
            assert_eq!(s.case, SampleCase::Explore);
        }
    }

    #[test]
    fn sampler_approaches_the_target() {
        // t needs p and q; p is reachable through a (distance 2 from t via
        // a - p - t), q is directly adjacent to t (distance 1).
        //   a -> p -> t,  q -> t,  a and q are roots.
        let g = ApiGraph::new([
            tool("a", &[]),
            tool("p", &["a"]),
            tool("q", &[]),
            tool("t", &["p", "q"]),
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = g.sample_tool("t", &called(&[]), &mut rng).unwrap();
        assert_eq!(s, Sample { tool: "q".into(), case: SampleCase::Approach { distance: 1 } });
    }

    #[test]
    fn sampler_breaks_ties_by_name() {
        let g = ApiGraph::new([tool("b", &[]), tool("a", &[]), tool("t", &["a", "b"])]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(g.sample_tool("t", &called(&[]), &mut rng).unwrap().tool, "a");
    }

    #[test]
    fn sampler_falls_back_when_target_unreachable() {
        let g = ApiGraph::new([tool("x", &[]), tool("y", &[]), tool("gate", &[]), tool("t", &["gate"])]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let excluded: BTreeSet<String> = ["gate".to_string()].into();
        let s = g.sample_tool_excluding("t", &called(&[]), &excluded, &mut rng).unwrap();
        assert_eq!(s.case, SampleCase::Fallback);
        assert!(s.tool == "x" || s.tool == "y");
    }

    #[test]
    fn sampler_reports_exhaustion() {
        let g = chain();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let excluded: BTreeSet<String> = ["a".to_string()].into();
        assert_eq!(
            g.sample_tool_excluding("c", &called(&[]), &excluded, &mut rng),
            Err(GraphError::SamplingExhausted)
        );
    }

    #[test]
    fn rejects_cycles_and_dangling_references() {
        let err = ApiGraph::new([tool("a", &["b"]), tool("b", &["a"])]).unwrap_err();
        assert_eq!(err, GraphError::Cycle(vec!["a".into(), "b".into(), "a".into()]));
        assert_eq!(err.to_string(), "prerequisite cycle: a -> b -> a");

        let err = ApiGraph::new([tool("a", &["ghost"])]).unwrap_err();
        assert_eq!(
            err,
            GraphError::DanglingPrerequisite { tool: "a".into(), missing: "ghost".into() }
        );

        let err = ApiGraph::new([tool("a", &[]), tool("a", &[])]).unwrap_err();
        assert_eq!(err, GraphError::DuplicateTool("a".into()));
    }

    #[test]
    fn longer_cycles_are_named_in_edge_order() {
        let err = ApiGraph::new([tool("a", &["c"]), tool("b", &["a"]), tool("c", &["b"]), tool("d", &[])])
            .unwrap_err();
        let GraphError::Cycle(cycle) = err else { panic!() };
        assert_eq!(cycle.first(), cycle.last());
        assert_eq!(cycle.len(), 4);
        // every consecutive pair must be an edge u -> v (u prerequisite of v)
        let prereq_of = |u: &str, v: &str| matches!((u, v), ("c", "a") | ("a", "b") | ("b", "c"));
        assert!(cycle.windows(2).all(|w| prereq_of(&w[0], &w[1])), "{cycle:?}");
    }

    #[test]
    fn rejects_required_params_with_defaults() {
        let mut p = ParamSpec::required("x", ParamKind::Integer);
        p.default = Some(Value::Int(1));
        let err = ApiGraph::new([tool("a", &[]).param(p)]).unwrap_err();
        assert!(matches!(err, GraphError::InvalidParam { .. }));
    }

    #[test]
    fn rejects_defaults_nested_too_deep() {
        let mut p = ParamSpec::required("x", ParamKind::List);
        p.required = false;
        p.default = Some(Value::List(vec![Value::List(vec![Value::List(vec![Value::List(vec![])])])]));
        assert!(ApiGraph::new([tool("a", &[]).param(p)]).is_err());
    }

    #[test]
    fn edges_mirror_prerequisites() {
        let g = chain();
        let edges: Vec<(&str, &str)> = g.edges().iter().map(|(u, v)| (u.as_str(), v.as_str())).collect();
        assert_eq!(edges, vec![("a", "b"), ("b", "c")]);
        assert_eq!(g.topological_order(), vec!["a", "b", "c"]);
    }

    #[test]
    fn load_graph_accepts_both_document_shapes() {
        let bare = r#"[{"name": "a", "executor": "x.a", "returns": "string"},
                       {"name": "b", "executor": "x.b", "returns": "string", "prerequisites": ["a"]}]"#;
        let g = load_graph(bare).unwrap();
        assert_eq!(g.topological_order(), ["a", "b"]);
        let wrapped = format!(r#"{{"env_id": "e", "tools": {bare}}}"#);
        assert_eq!(load_graph(&wrapped).unwrap().len(), 2);
    }

    #[test]
    fn load_graph_rejects_cycles_and_dangling_references() {
        let cyclic = r#"[{"name": "a", "executor": "x.a", "returns": "string", "prerequisites": ["b"]},
                         {"name": "b", "executor": "x.b", "returns": "string", "prerequisites": ["a"]}]"#;
        let err = load_graph(cyclic).unwrap_err();
        assert!(matches!(err, GraphError::Cycle(_)), "{err}");
        let dangling = r#"[{"name": "a", "executor": "x.a", "returns": "string", "prerequisites": ["ghost"]}]"#;
        assert!(matches!(load_graph(dangling), Err(GraphError::DanglingPrerequisite { .. })));
        assert!(matches!(load_graph("{"), Err(GraphError::Malformed(_))));
    }
}
