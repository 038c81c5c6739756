//! An in-memory directory tree with a current working directory.
//!
//! Directory children keep insertion order, which is also the order `find`
//! and `ls` report them in.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde_json::{json, Map, Value as Json};

use crate::call::ToolCall;

pub(crate) const OPERATIONS: &[&str] = &["pwd", "ls", "cd", "find", "cat", "tail"];

pub(crate) const MUTATING: &[&str] = &["cd"];

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    File(String),
    Dir(Vec<(String, Node)>),
}

impl Node {
    fn from_json(json: &Json) -> Result<Node, String> {
        match json {
            Json::String(content) => Ok(Node::File(content.clone())),
            Json::Object(map) => map
                .iter()
                .map(|(name, child)| {
                    if name.is_empty() || name.contains('/') || name == "." || name == ".." {
                        return Err(format!("invalid entry name {name:?}"));
                    }
                    Node::from_json(child).map(|n| (name.clone(), n))
                })
                .collect::<Result<_, _>>()
                .map(Node::Dir),
            _ => Err("tree entries must be strings (files) or objects (directories)".into()),
        }
    }

    fn to_json(&self) -> Json {
        match self {
            Node::File(content) => Json::String(content.clone()),
            Node::Dir(children) => {
                let mut map = Map::new();
                for (name, child) in children {
                    map.insert(name.clone(), child.to_json());
                }
                Json::Object(map)
            }
        }
    }

    fn children(&self) -> &[(String, Node)] {
        match self {
            Node::Dir(children) => children,
            Node::File(_) => &[],
        }
    }

    fn child(&self, name: &str) -> Option<&Node> {
        self.children().iter().find(|(n, _)| n == name).map(|(_, c)| c)
    }

    fn is_dir(&self) -> bool {
        matches!(self, Node::Dir(_))
    }

    /// Pre-order walk yielding `(relative path, node)` for every descendant.
    fn walk<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Node)>) {
        for (name, child) in self.children() {
            let path = if prefix.is_empty() {
                name.clone()
            } else {
                format!("{prefix}/{name}")
            };
            out.push((path.clone(), child));
            child.walk(&path, out);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilesysStore {
    /// Absolute path of the root, e.g. `/workspace`.
    pub root_path: String,
    pub root: Node,
    /// Components below the root.
    pub cwd: Vec<String>,
}

impl FilesysStore {
    pub(crate) fn init<R: Rng>(fixtures: &Json, golden: bool, rng: &mut R) -> Result<Self, String> {
        let root_path = fixtures
            .get("root")
            .and_then(Json::as_str)
            .unwrap_or("/workspace")
            .trim_end_matches('/')
            .to_string();
        if !root_path.starts_with('/') || root_path.len() < 2 {
            return Err("fixtures.root must be an absolute path below /".into());
        }
        let mut root = Node::from_json(fixtures.get("tree").unwrap_or(&Json::Object(Map::new())))?;
        if !root.is_dir() {
            return Err("fixtures.tree must be an object".into());
        }
        if !golden {
            let words: Vec<&str> = fixtures
                .get("content_words")
                .and_then(Json::as_array)
                .map(|a| a.iter().filter_map(Json::as_str).collect())
                .unwrap_or_else(|| vec!["item"]);
            seed_extra_files(&mut root, &words, rng);
        }
        Ok(Self {
            root_path,
            root,
            cwd: Vec::new(),
        })
    }

    pub(crate) fn to_json(&self) -> Json {
        json!({
            "root": self.root_path,
            "cwd": self.cwd,
            "tree": self.root.to_json(),
        })
    }

    pub fn cwd_path(&self) -> String {
        let mut path = self.root_path.clone();
        for part in &self.cwd {
            path.push('/');
            path.push_str(part);
        }
        path
    }

    fn cwd_node(&self) -> &Node {
        self.cwd
            .iter()
            .fold(&self.root, |node, part| node.child(part).expect("cwd always exists"))
    }

    /// Resolves a relative path below the cwd. `.` segments are skipped;
    /// `..` is handled by `cd` only.
    fn resolve(&self, path: &str) -> Option<&Node> {
        path.split('/')
            .filter(|s| !s.is_empty() && *s != ".")
            .try_fold(self.cwd_node(), |node, part| node.child(part))
    }

    pub fn subdirectories(&self) -> Vec<String> {
        self.cwd_node()
            .children()
            .iter()
            .filter(|(_, n)| n.is_dir())
            .map(|(name, _)| name.clone())
            .collect()
    }

    pub fn local_files(&self) -> Vec<String> {
        self.cwd_node()
            .children()
            .iter()
            .filter(|(_, n)| !n.is_dir())
            .map(|(name, _)| name.clone())
            .collect()
    }

    pub fn at_root(&self) -> bool {
        self.cwd.is_empty()
    }

    /// Relative paths of every entry below the cwd.
    pub fn descendant_paths(&self, dirs_only: bool) -> Vec<String> {
        let mut all = Vec::new();
        self.cwd_node().walk("", &mut all);
        all.into_iter()
            .filter(|(_, n)| !dirs_only || n.is_dir())
            .map(|(p, _)| p)
            .collect()
    }

    pub(crate) fn execute(&self, op: &str, call: &ToolCall) -> Result<(Json, Option<Self>), String> {
        let text = |name: &str| call.get(name).and_then(|v| v.as_str()).map(str::to_string);
        match op {
            "pwd" => Ok((json!({ "current_working_directory": self.cwd_path() }), None)),
            "ls" => {
                let show_hidden = matches!(call.get("a"), Some(crate::value::Value::Bool(true)));
                let names: Vec<&str> = self
                    .cwd_node()
                    .children()
                    .iter()
                    .map(|(n, _)| n.as_str())
                    .filter(|n| show_hidden || !n.starts_with('.'))
                    .collect();
                Ok((json!({ "current_directory_content": names }), None))
            }
            "cd" => {
                let folder = text("folder").unwrap_or_default();
                let mut cwd = self.cwd.clone();
                for part in folder.split('/').filter(|s| !s.is_empty() && *s != ".") {
                    if part == ".." {
                        if cwd.pop().is_none() {
                            return Err(format!("cannot move above {}", self.root_path));
                        }
                        continue;
                    }
                    let here = cwd
                        .iter()
                        .fold(&self.root, |node, p| node.child(p).expect("walked path exists"));
                    match here.child(part) {
                        Some(node) if node.is_dir() => cwd.push(part.to_string()),
                        Some(_) => return Err(format!("{part} is not a directory")),
                        None => return Err(format!("no such directory: {part}")),
                    }
                }
                let mut next = self.clone();
                next.cwd = cwd;
                let name = next
                    .cwd
                    .last()
                    .cloned()
                    .unwrap_or_else(|| self.root_path.rsplit('/').next().unwrap_or_default().to_string());
                Ok((json!({ "current_working_directory": name }), Some(next)))
            }
            "find" => {
                let path = text("path").unwrap_or_else(|| ".".to_string());
                let name = text("name");
                let start = self.resolve(&path).ok_or_else(|| format!("no such path: {path}"))?;
                if !start.is_dir() {
                    return Err(format!("{path} is not a directory"));
                }
                let prefix = path.trim_end_matches('/');
                let mut entries = Vec::new();
                start.walk("", &mut entries);
                let matches: Vec<String> = entries
                    .into_iter()
                    .filter(|(rel, _)| match &name {
                        Some(pattern) => rel.rsplit('/').next().unwrap_or(rel).contains(pattern.as_str()),
                        None => true,
                    })
                    .map(|(rel, _)| format!("{prefix}/{rel}"))
                    .collect();
                Ok((json!({ "matches": matches }), None))
            }
            "cat" | "tail" => {
                let file_name = text("file_name").unwrap_or_default();
                if file_name.contains('/') {
                    return Err("file_name must name a file in the current directory".into());
                }
                let content = match self.cwd_node().child(&file_name) {
                    Some(Node::File(content)) => content,
                    Some(Node::Dir(_)) => return Err(format!("{file_name} is a directory")),
                    None => return Err(format!("no such file: {file_name}")),
                };
                if op == "cat" {
                    return Ok((json!({ "file_content": content }), None));
                }
                let lines = call.get("lines").and_then(|v| v.as_int()).unwrap_or(10);
                if lines < 1 {
                    return Err("lines must be positive".into());
                }
                let all: Vec<&str> = content.lines().collect();
                let keep = all.len().saturating_sub(lines as usize);
                Ok((json!({ "last_lines": all[keep..].join("\n") }), None))
            }
            other => Err(format!("operation {other} is not implemented")),
        }
    }
}

fn random_name<R: Rng>(rng: &mut R) -> String {
    let letters: String = (0..5).map(|_| rng.random_range(b'a'..=b'z') as char).collect();
    if rng.random_bool(0.4) {
        format!("{letters}_{}", rng.random_range(10..100_000))
    } else {
        letters
    }
}

fn random_content<R: Rng>(rng: &mut R, words: &[&str]) -> String {
    let id = rng.random_range(1..1000);
    let kind = words.choose(rng).copied().unwrap_or("item");
    let extra = words.choose(rng).copied().unwrap_or("item");
    format!("{{\n  \"data\": {{\n    \"id\": \"{id}\",\n    \"type\": \"{kind}\",\n    \"tag\": \"{extra}\"\n  }}\n}}")
}

/// Adds a few generated files (and possibly one directory) to the tree.
fn seed_extra_files<R: Rng>(root: &mut Node, words: &[&str], rng: &mut R) {
    let file_count = rng.random_range(2..=4);
    for _ in 0..file_count {
        let mut dirs = Vec::new();
        collect_dir_paths(root, &mut Vec::new(), &mut dirs);
        let target = dirs.choose(rng).cloned().unwrap_or_default();
        let ext = ["md", "json", "txt"].choose(rng).copied().unwrap_or("txt");
        let name = format!("{}.{ext}", random_name(rng));
        let content = random_content(rng, words);
        insert_unique(dir_mut(root, &target), name, Node::File(content));
    }
    if rng.random_bool(0.5) {
        let dir_name = random_name(rng);
        let file = format!("{}.md", random_name(rng));
        let content = random_content(rng, words);
        insert_unique(root, dir_name, Node::Dir(vec![(file, Node::File(content))]));
    }
}

fn collect_dir_paths(node: &Node, prefix: &mut Vec<String>, out: &mut Vec<Vec<String>>) {
    out.push(prefix.clone());
    for (name, child) in node.children() {
        if child.is_dir() {
            prefix.push(name.clone());
            collect_dir_paths(child, prefix, out);
            prefix.pop();
        }
    }
}

fn dir_mut<'a>(root: &'a mut Node, path: &[String]) -> &'a mut Node {
    path.iter().fold(root, |node, part| match node {
        Node::Dir(children) => {
            &mut children
                .iter_mut()
                .find(|(n, _)| n == part)
                .expect("collected path exists")
                .1
        }
        Node::File(_) => unreachable!("collected paths are directories"),
    })
}

fn insert_unique(dir: &mut Node, name: String, node: Node) {
    if let Node::Dir(children) = dir {
        if !children.iter().any(|(n, _)| *n == name) {
            children.push((name, node));
        }
    }
}
