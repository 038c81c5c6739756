use std::fmt;

use crate::value::Value;

/// One tool invocation: a tool name plus keyword arguments in call order.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolCall {
    pub tool: String,
    pub args: Vec<(String, Value)>,
}

impl ToolCall {
    pub fn new(tool: impl Into<String>) -> Self {
        Self {
            tool: tool.into(),
            args: Vec::new(),
        }
    }

    pub fn arg(mut self, name: impl Into<String>, value: impl Into<Value>) -> Self {
        self.args.push((name.into(), value.into()));
        self
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.args.iter().find(|(k, _)| k == name).map(|(_, v)| v)
    }

    /// `name(a=1, b="x")`, arguments in stored order.
    pub fn render(&self) -> String {
        let args: Vec<String> = self
            .args
            .iter()
            .map(|(k, v)| format!("{k}={}", v.render()))
            .collect();
        format!("{}({})", self.tool, args.join(", "))
    }

    /// Order-independent comparison key: arguments sorted by name.
    pub fn canonical_key(&self) -> String {
        let mut args: Vec<(&String, String)> = self.args.iter().map(|(k, v)| (k, v.render())).collect();
        args.sort();
        let args: Vec<String> = args.into_iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("{}({})", self.tool, args.join(", "))
    }
}

impl fmt::Display for ToolCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}
