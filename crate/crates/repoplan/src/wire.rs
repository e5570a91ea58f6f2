//! Wire format for tool invocations inside oracle solution blocks.
//!
//! Tool calls arrive as call syntax with Python-style literals, e.g.
//! `get_interface_content(['src/core/utils.py:clean_text'])` or
//! `Terminate(result=[{"file_path": "a.py", "interface": "class: C"}])`.
//! The parser accepts positional and keyword arguments, nested lists and
//! dicts, trailing commas, and both quote styles. It never panics on
//! malformed input; errors carry the byte position.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("tool call syntax at byte {offset}: {message}")]
pub struct WireError {
    pub offset: usize,
    pub message: String,
}

/// A Python-style literal argument value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ToolArg {
    Str(String),
    Int(i64),
    Float(f64),
    Bool(bool),
    None,
    List(Vec<ToolArg>),
    Dict(BTreeMap<String, ToolArg>),
}

impl ToolArg {
    pub fn as_str(&self) -> Option<&str> {
        match self {
            ToolArg::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[ToolArg]> {
        match self {
            ToolArg::List(items) => Some(items),
            _ => None,
        }
    }

    pub fn as_dict(&self) -> Option<&BTreeMap<String, ToolArg>> {
        match self {
            ToolArg::Dict(map) => Some(map),
            _ => None,
        }
    }
}

/// One parsed tool invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    pub args: Vec<ToolArg>,
    pub kwargs: BTreeMap<String, ToolArg>,
}

impl ToolCall {
    /// Positional argument `i` as a string, a common accessor for the file
    /// and name arguments of the edit tools.
    pub fn str_arg(&self, i: usize) -> Option<&str> {
        self.args.get(i).and_then(|a| a.as_str())
    }
}

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str) -> Self {
        Cursor { text, pos: 0 }
    }

    fn err(&self, message: impl Into<String>) -> WireError {
        WireError { offset: self.pos, message: message.into() }
    }

    fn rest(&self) -> &'a str {
        &self.text[self.pos..]
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.bump();
            } else {
                break;
            }
        }
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> Option<&'a str> {
        let start = self.pos;
        match self.peek() {
            Some(c) if c.is_alphabetic() || c == '_' => {}
            _ => return None,
        }
        while let Some(c) = self.peek() {
            if c.is_alphanumeric() || c == '_' {
                self.bump();
            } else {
                break;
            }
        }
        Some(&self.text[start..self.pos])
    }
}

/// Parses exactly one tool call; trailing non-whitespace is an error.
pub fn parse_tool_call(text: &str) -> Result<ToolCall, WireError> {
    let mut cur = Cursor::new(text);
    cur.skip_ws();
    let call = parse_call(&mut cur)?;
    cur.skip_ws();
    if cur.peek().is_some() {
        return Err(cur.err("trailing input after call"));
    }
    Ok(call)
}

fn parse_call(cur: &mut Cursor) -> Result<ToolCall, WireError> {
    let name = cur.ident().ok_or_else(|| cur.err("expected tool name"))?.to_string();
    cur.skip_ws();
    if !cur.eat('(') {
        return Err(cur.err("expected '(' after tool name"));
    }
    let mut args = Vec::new();
    let mut kwargs = BTreeMap::new();
    loop {
        cur.skip_ws();
        if cur.eat(')') {
            break;
        }
        if cur.peek().is_none() {
            return Err(cur.err("unterminated argument list"));
        }
        // Keyword argument: identifier '=' not followed by '='.
        let checkpoint = cur.pos;
        let mut is_kwarg = false;
        if let Some(key) = cur.ident() {
            let key = key.to_string();
            cur.skip_ws();
            if cur.peek() == Some('=') && !cur.rest().starts_with("==") {
                cur.bump();
                cur.skip_ws();
                let value = parse_value(cur)?;
                if !args.is_empty() || kwargs.contains_key(&key) {
                    // Positional-after-keyword is tolerated; duplicate keys
                    // are not.
                    if kwargs.contains_key(&key) {
                        return Err(cur.err(format!("duplicate keyword {key}")));
                    }
                }
                kwargs.insert(key, value);
                is_kwarg = true;
            } else {
                cur.pos = checkpoint;
            }
        }
        if !is_kwarg {
            let value = parse_value(cur)?;
            if !kwargs.is_empty() {
                return Err(cur.err("positional argument after keyword argument"));
            }
            args.push(value);
        }
        cur.skip_ws();
        if cur.eat(',') {
            continue;
        }
        if cur.eat(')') {
            break;
        }
        return Err(cur.err("expected ',' or ')' in argument list"));
    }
    Ok(ToolCall { name, args, kwargs })
}

fn parse_value(cur: &mut Cursor) -> Result<ToolArg, WireError> {
    cur.skip_ws();
    match cur.peek() {
        Some('\'') | Some('"') => parse_string(cur).map(ToolArg::Str),
        Some('[') => {
            cur.bump();
            let mut items = Vec::new();
            loop {
                cur.skip_ws();
                if cur.eat(']') {
                    break;
                }
                if cur.peek().is_none() {
                    return Err(cur.err("unterminated list"));
                }
                items.push(parse_value(cur)?);
                cur.skip_ws();
                if cur.eat(',') {
                    continue;
                }
                if cur.eat(']') {
                    break;
                }
                return Err(cur.err("expected ',' or ']' in list"));
            }
            Ok(ToolArg::List(items))
        }
        Some('{') => {
            cur.bump();
            let mut map = BTreeMap::new();
            loop {
                cur.skip_ws();
                if cur.eat('}') {
                    break;
                }
                if cur.peek().is_none() {
                    return Err(cur.err("unterminated dict"));
                }
                let key = match cur.peek() {
                    Some('\'') | Some('"') => parse_string(cur)?,
                    _ => return Err(cur.err("dict keys must be strings")),
                };
                cur.skip_ws();
                if !cur.eat(':') {
                    return Err(cur.err("expected ':' after dict key"));
                }
                let value = parse_value(cur)?;
                map.insert(key, value);
                cur.skip_ws();
                if cur.eat(',') {
                    continue;
                }
                if cur.eat('}') {
                    break;
                }
                return Err(cur.err("expected ',' or '}' in dict"));
            }
            Ok(ToolArg::Dict(map))
        }
        Some(c) if c.is_ascii_digit() || c == '-' || c == '+' => parse_number(cur),
        Some(_) => {
            let checkpoint = cur.pos;
            match cur.ident() {
                Some("True") => Ok(ToolArg::Bool(true)),
                Some("False") => Ok(ToolArg::Bool(false)),
                Some("None") => Ok(ToolArg::None),
                _ => {
                    cur.pos = checkpoint;
                    Err(cur.err("expected a literal value"))
                }
            }
        }
        None => Err(cur.err("expected a value")),
    }
}

fn parse_string(cur: &mut Cursor) -> Result<String, WireError> {
    let quote = cur.bump().expect("caller checked quote");
    let mut out = String::new();
    loop {
        match cur.bump() {
            None => return Err(cur.err("unterminated string")),
            Some('\\') => match cur.bump() {
                None => return Err(cur.err("unterminated escape")),
                Some('n') => out.push('\n'),
                Some('t') => out.push('\t'),
                Some('r') => out.push('\r'),
                Some('0') => out.push('\0'),
                Some(other) => out.push(other),
            },
            Some(c) if c == quote => return Ok(out),
            Some(c) => out.push(c),
        }
    }
}

fn parse_number(cur: &mut Cursor) -> Result<ToolArg, WireError> {
    let start = cur.pos;
    if matches!(cur.peek(), Some('-') | Some('+')) {
        cur.bump();
    }
    let mut is_float = false;
    while let Some(c) = cur.peek() {
        if c.is_ascii_digit() || c == '_' {
            cur.bump();
        } else if c == '.' || c == 'e' || c == 'E' {
            is_float = true;
            cur.bump();
            if matches!(cur.peek(), Some('-') | Some('+')) {
                cur.bump();
            }
        } else {
            break;
        }
    }
    let raw = cur.text[start..cur.pos].replace('_', "");
    if raw.is_empty() || raw == "-" || raw == "+" {
        return Err(WireError { offset: start, message: "expected a number".into() });
    }
    if is_float {
        raw.parse::<f64>()
            .map(ToolArg::Float)
            .map_err(|e| WireError { offset: start, message: e.to_string() })
    } else {
        raw.parse::<i64>()
            .map(ToolArg::Int)
            .map_err(|e| WireError { offset: start, message: e.to_string() })
    }
}

/// Scans free-form solution text for tool calls. A call starts at a line
/// whose first token is an identifier followed by `(` and may span multiple
/// lines. Code-fence markers and prose lines are skipped; call-shaped text
/// that fails to parse is reported with its snippet so the caller can feed
/// the error back as an observation.
pub fn scan_tool_calls(text: &str) -> Vec<(String, Result<ToolCall, WireError>)> {
    let mut out = Vec::new();
    let mut offset = 0;
    let mut line_starts = Vec::new();
    for line in text.split_inclusive('\n') {
        line_starts.push(offset);
        offset += line.len();
    }
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    let mut i = 0;
    while i < lines.len() {
        let trimmed = lines[i].trim();
        if !looks_like_call(trimmed) {
            i += 1;
            continue;
        }
        let start = line_starts[i];
        let mut cur = Cursor::new(&text[start..]);
        cur.skip_ws();
        match parse_call(&mut cur) {
            Ok(call) => {
                let consumed = &text[start..start + cur.pos];
                let consumed_lines = consumed.matches('\n').count();
                out.push((consumed.trim().to_string(), Ok(call)));
                i += consumed_lines.max(1);
            }
            Err(e) => {
                out.push((
                    trimmed.to_string(),
                    Err(WireError { offset: start + e.offset, message: e.message }),
                ));
                i += 1;
            }
        }
    }
    out
}

fn looks_like_call(trimmed: &str) -> bool {
    if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with("```") {
        return false;
    }
    let mut chars = trimmed.chars();
    match chars.next() {
        Some(c) if c.is_alphabetic() || c == '_' => {}
        _ => return false,
    }
    let ident_len = trimmed
        .chars()
        .take_while(|c| c.is_alphanumeric() || *c == '_')
        .map(|c| c.len_utf8())
        .sum::<usize>();
    trimmed[ident_len..].trim_start().starts_with('(')
}

/// Splits an edit-session response into its command and the code block that
/// follows it. The command is the first parseable tool call; the body is
/// the first fenced block after the command (absent for Terminate-style
/// commands).
pub fn split_edit_response(text: &str) -> Result<(ToolCall, Option<String>), WireError> {
    let calls = scan_tool_calls(text);
    let (snippet, call) = calls
        .into_iter()
        .next()
        .ok_or(WireError { offset: 0, message: "no tool call in response".into() })?;
    let call = call?;
    let after = match text.find(&snippet) {
        Some(at) => &text[at + snippet.len()..],
        None => text,
    };
    Ok((call, extract_fence(after)))
}

/// First fenced code block in `text`, fence markers and language tag
/// stripped.
pub fn extract_fence(text: &str) -> Option<String> {
    let mut in_fence = false;
    let mut body = String::new();
    for line in text.lines() {
        if line.trim_start().starts_with("```") {
            if in_fence {
                return Some(body);
            }
            in_fence = true;
            continue;
        }
        if in_fence {
            body.push_str(line);
            body.push('\n');
        }
    }
    if in_fence {
        Some(body)
    } else {
        None
    }
}
