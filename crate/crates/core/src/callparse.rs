//! Bracketed call-list syntax and tagged assistant transcripts.
//!
//! Call lists look like `[pwd(), find(path=".")]`. Values are the JSON-like
//! literal set: double-quoted strings with backslash escapes, integers,
//! floats, `true`/`false`/`null` (Python spellings accepted on input),
//! bracketed lists and `{key: value}` objects. Whitespace outside strings is
//! insignificant.
//!
//! Assistant turns wrap their parts in `<think>`, `<tool_call>` and
//! `<answer>` tags; tool turns wrap results in `<tool_response>`.

use std::fmt;

use thiserror::Error;

use crate::call::ToolCall;
use crate::value::{quote_into, Value};

/// Bound on list/object nesting accepted by the parser.
pub const MAX_NESTING: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    Unexpected { found: Option<char> },
    DuplicateArgument(String),
    IntegerOutOfRange,
    InvalidEscape,
    TooDeep,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ParseError {
    pub offset: usize,
    pub expected: Vec<&'static str>,
    pub kind: ParseErrorKind,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "parse error at byte {}: ", self.offset)?;
        match &self.kind {
            ParseErrorKind::Unexpected { found } => {
                write!(f, "expected one of [{}], found ", self.expected.join(", "))?;
                match found {
                    Some(c) => write!(f, "{c:?}"),
                    None => write!(f, "end of input"),
                }
            }
            ParseErrorKind::DuplicateArgument(name) => write!(f, "duplicate keyword argument `{name}`"),
            ParseErrorKind::IntegerOutOfRange => write!(f, "integer literal out of range"),
            ParseErrorKind::InvalidEscape => write!(f, "invalid escape sequence"),
            ParseErrorKind::TooDeep => write!(f, "nesting deeper than {MAX_NESTING}"),
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

type PResult<T> = Result<T, ParseError>;

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Self { src, pos: 0 }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    fn unexpected(&self, expected: &[&'static str]) -> ParseError {
        ParseError {
            offset: self.pos,
            expected: expected.to_vec(),
            kind: ParseErrorKind::Unexpected { found: self.peek() },
        }
    }

    fn error_at(&self, offset: usize, kind: ParseErrorKind) -> ParseError {
        ParseError {
            offset,
            expected: Vec::new(),
            kind,
        }
    }

    fn expect(&mut self, c: char, label: &'static str) -> PResult<()> {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.unexpected(&[label]))
        }
    }

    fn call_list(&mut self) -> PResult<Vec<ToolCall>> {
        self.expect('[', "'['")?;
        let mut calls = Vec::new();
        self.skip_ws();
        if self.peek() == Some(']') {
            self.pos += 1;
            return Ok(calls);
        }
        loop {
            calls.push(self.call()?);
            self.skip_ws();
            match self.peek() {
                Some(',') => self.pos += 1,
                Some(']') => {
                    self.pos += 1;
                    return Ok(calls);
                }
                _ => return Err(self.unexpected(&["','", "']'"])),
            }
        }
    }

    fn identifier(&mut self) -> PResult<String> {
        self.skip_ws();
        let start = self.pos;
        match self.peek() {
            Some(c) if c.is_ascii_alphabetic() || c == '_' => self.pos += 1,
            _ => return Err(self.unexpected(&["identifier"])),
        }
        while let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || c == '_' {
                self.pos += 1;
            } else {
                break;
            }
        }
        Ok(self.src[start..self.pos].to_string())
    }

    fn call(&mut self) -> PResult<ToolCall> {
        let tool = self.identifier()?;
        self.expect('(', "'('")?;
        let mut call = ToolCall::new(tool);
        self.skip_ws();
        if self.peek() == Some(')') {
            self.pos += 1;
            return Ok(call);
        }
        loop {
            self.skip_ws();
            let name_at = self.pos;
            let name = self.identifier()?;
            if call.get(&name).is_some() {
                return Err(self.error_at(name_at, ParseErrorKind::DuplicateArgument(name)));
            }
            self.expect('=', "'='")?;
            let value = self.value(0)?;
            call.args.push((name, value));
            self.skip_ws();
            match self.peek() {
                Some(',') => self.pos += 1,
                Some(')') => {
                    self.pos += 1;
                    return Ok(call);
                }
                _ => return Err(self.unexpected(&["','", "')'"])),
            }
        }
    }

    fn value(&mut self, depth: usize) -> PResult<Value> {
        const VALUE: &[&str] = &["string", "number", "true", "false", "null", "'['", "'{'"];
        self.skip_ws();
        if depth > MAX_NESTING {
            return Err(self.error_at(self.pos, ParseErrorKind::TooDeep));
        }
        match self.peek() {
            Some('"') => self.string().map(Value::Str),
            Some('[') => {
                self.pos += 1;
                let mut items = Vec::new();
                self.skip_ws();
                if self.peek() == Some(']') {
                    self.pos += 1;
                    return Ok(Value::List(items));
                }
                loop {
                    items.push(self.value(depth + 1)?);
                    self.skip_ws();
                    match self.peek() {
                        Some(',') => self.pos += 1,
                        Some(']') => {
                            self.pos += 1;
                            return Ok(Value::List(items));
                        }
                        _ => return Err(self.unexpected(&["','", "']'"])),
                    }
                }
            }
            Some('{') => {
                self.pos += 1;
                let mut entries: Vec<(String, Value)> = Vec::new();
                self.skip_ws();
                if self.peek() == Some('}') {
                    self.pos += 1;
                    return Ok(Value::Object(entries));
                }
                loop {
                    self.skip_ws();
                    let key_at = self.pos;
                    let key = match self.peek() {
                        Some('"') => self.string()?,
                        _ => self.identifier().map_err(|_| self.unexpected(&["identifier", "string"]))?,
                    };
                    if entries.iter().any(|(k, _)| *k == key) {
                        return Err(self.error_at(key_at, ParseErrorKind::DuplicateArgument(key)));
                    }
                    self.expect(':', "':'")?;
                    let value = self.value(depth + 1)?;
                    entries.push((key, value));
                    self.skip_ws();
                    match self.peek() {
                        Some(',') => self.pos += 1,
                        Some('}') => {
                            self.pos += 1;
                            return Ok(Value::Object(entries));
                        }
                        _ => return Err(self.unexpected(&["','", "'}'"])),
                    }
                }
            }
            Some(c) if c == '-' || c.is_ascii_digit() => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let at = self.pos;
                let word = self.identifier()?;
                match word.as_str() {
                    "true" | "True" => Ok(Value::Bool(true)),
                    "false" | "False" => Ok(Value::Bool(false)),
                    "null" | "None" => Ok(Value::Null),
                    _ => {
                        self.pos = at;
                        Err(self.unexpected(VALUE))
                    }
                }
            }
            _ => Err(self.unexpected(VALUE)),
        }
    }

    fn digits(&mut self) -> usize {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.pos += 1;
        }
        self.pos - start
    }

    fn number(&mut self) -> PResult<Value> {
        let start = self.pos;
        if self.peek() == Some('-') {
            self.pos += 1;
        }
        if self.digits() == 0 {
            return Err(self.unexpected(&["digit"]));
        }
        let mut is_float = false;
        if self.peek() == Some('.') {
            self.pos += 1;
            is_float = true;
            if self.digits() == 0 {
                return Err(self.unexpected(&["digit"]));
            }
        }
        if matches!(self.peek(), Some('e' | 'E')) {
            self.pos += 1;
            is_float = true;
            if matches!(self.peek(), Some('+' | '-')) {
                self.pos += 1;
            }
            if self.digits() == 0 {
                return Err(self.unexpected(&["digit"]));
            }
        }
        let text = &self.src[start..self.pos];
        if is_float {
            let f: f64 = text
                .parse()
                .map_err(|_| self.error_at(start, ParseErrorKind::IntegerOutOfRange))?;
            if !f.is_finite() {
                return Err(self.error_at(start, ParseErrorKind::IntegerOutOfRange));
            }
            Ok(Value::Float(f))
        } else {
            text.parse::<i64>()
                .map(Value::Int)
                .map_err(|_| self.error_at(start, ParseErrorKind::IntegerOutOfRange))
        }
    }

    fn hex4(&mut self) -> PResult<u32> {
        let at = self.pos;
        let mut code = 0u32;
        for _ in 0..4 {
            let digit = self
                .peek()
                .and_then(|c| c.to_digit(16))
                .ok_or_else(|| self.error_at(at, ParseErrorKind::InvalidEscape))?;
            self.pos += 1;
            code = code * 16 + digit;
        }
        Ok(code)
    }

    fn string(&mut self) -> PResult<String> {
        self.expect('"', "'\"'")?;
        let mut out = String::new();
        loop {
            let at = self.pos;
            match self.bump() {
                None => return Err(self.unexpected(&["'\"'"])),
                Some('"') => return Ok(out),
                Some('\\') => {
                    let c = match self.bump() {
                        Some('"') => '"',
                        Some('\\') => '\\',
                        Some('/') => '/',
                        Some('\'') => '\'',
                        Some('n') => '\n',
                        Some('t') => '\t',
                        Some('r') => '\r',
                        Some('b') => '\u{8}',
                        Some('f') => '\u{c}',
                        Some('u') => {
                            let hi = self.hex4()?;
                            let code = if (0xD800..0xDC00).contains(&hi) {
                                if self.bump() != Some('\\') || self.bump() != Some('u') {
                                    return Err(self.error_at(at, ParseErrorKind::InvalidEscape));
                                }
                                let lo = self.hex4()?;
                                if !(0xDC00..0xE000).contains(&lo) {
                                    return Err(self.error_at(at, ParseErrorKind::InvalidEscape));
                                }
                                0x10000 + ((hi - 0xD800) << 10) + (lo - 0xDC00)
                            } else {
                                hi
                            };
                            char::from_u32(code).ok_or_else(|| self.error_at(at, ParseErrorKind::InvalidEscape))?
                        }
                        _ => return Err(self.error_at(at, ParseErrorKind::InvalidEscape)),
                    };
                    out.push(c);
                }
                Some(c) => out.push(c),
            }
        }
    }

    fn finish(&mut self) -> PResult<()> {
        self.skip_ws();
        if self.pos == self.src.len() {
            Ok(())
        } else {
            Err(self.unexpected(&["end of input"]))
        }
    }
}

pub fn parse_call_list(text: &str) -> Result<Vec<ToolCall>, ParseError> {
    let mut parser = Parser::new(text);
    let calls = parser.call_list()?;
    parser.finish()?;
    Ok(calls)
}

/// Parses a single literal such as `"x"`, `7` or `[1, 2]`.
pub fn parse_value(text: &str) -> Result<Value, ParseError> {
    let mut parser = Parser::new(text);
    let value = parser.value(0)?;
    parser.finish()?;
    Ok(value)
}

pub fn render_call_list(calls: &[ToolCall]) -> String {
    let rendered: Vec<String> = calls.iter().map(ToolCall::render).collect();
    format!("[{}]", rendered.join(", "))
}

/// Content of a `<tool_call>` section: a call list when it parses, free text
/// otherwise.
#[derive(Debug, Clone, PartialEq)]
pub enum CallSection {
    Calls(Vec<ToolCall>),
    Reply(String),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TaggedMessage {
    pub think: Option<String>,
    pub tool_call: Option<CallSection>,
    pub answer: Option<String>,
}

impl TaggedMessage {
    pub fn render(&self) -> String {
        let mut parts = Vec::new();
        if let Some(think) = &self.think {
            parts.push(format!("<think>\n{think}\n</think>"));
        }
        match &self.tool_call {
            Some(CallSection::Calls(calls)) => {
                parts.push(format!("<tool_call>\n{}\n</tool_call>", render_call_list(calls)))
            }
            Some(CallSection::Reply(text)) => parts.push(format!("<tool_call>\n{text}\n</tool_call>")),
            None => {}
        }
        if let Some(answer) = &self.answer {
            parts.push(format!("<answer>\n{answer}\n</answer>"));
        }
        parts.join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractError {
    #[error("unbalanced <{0}> tags")]
    Unbalanced(&'static str),
    #[error("<{0}> section appears more than once")]
    Duplicate(&'static str),
    #[error("no <think>, <tool_call> or <answer> section found")]
    Empty,
}

fn section(text: &str, tag: &'static str) -> Result<Option<String>, ExtractError> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let opens = text.matches(&open).count();
    let closes = text.matches(&close).count();
    if opens != closes {
        return Err(ExtractError::Unbalanced(tag));
    }
    let Some(close_at) = text.find(&close) else {
        return Ok(None);
    };
    let Some(open_at) = text[..close_at].rfind(&open) else {
        return Err(ExtractError::Unbalanced(tag));
    };
    // Nested repeats of the same tag close after the first pair; anything
    // that opens again afterwards is a second section.
    if text[close_at + close.len()..].contains(&open) {
        return Err(ExtractError::Duplicate(tag));
    }
    Ok(Some(text[open_at + open.len()..close_at].trim().to_string()))
}

pub fn extract_sections(text: &str) -> Result<TaggedMessage, ExtractError> {
    let think = section(text, "think")?;
    let tool_call = section(text, "tool_call")?.map(|body| match parse_call_list(&body) {
        Ok(calls) => CallSection::Calls(calls),
        Err(_) => CallSection::Reply(body),
    });
    let answer = section(text, "answer")?;
    if think.is_none() && tool_call.is_none() && answer.is_none() {
        return Err(ExtractError::Empty);
    }
    Ok(TaggedMessage {
        think,
        tool_call,
        answer,
    })
}

/// Renders executed calls and their feedback text as a tool turn:
/// `<tool_response>[{'call()': 'feedback'}, ...]</tool_response>`.
pub fn render_tool_response<'a>(entries: impl IntoIterator<Item = (&'a ToolCall, &'a str)>) -> String {
    let items: Vec<String> = entries
        .into_iter()
        .map(|(call, text)| format!("{{{}: {}}}", single_quote(&call.render()), single_quote(text)))
        .collect();
    format!("<tool_response>\n[{}]\n</tool_response>", items.join(", "))
}

fn single_quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('\'');
    for c in s.chars() {
        match c {
            '\'' => out.push_str("\\'"),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('\'');
    out
}

/// Double-quoted rendering of a plain string, as used in call syntax.
pub fn quote(s: &str) -> String {
    let mut out = String::new();
    quote_into(s, &mut out);
    out
}
