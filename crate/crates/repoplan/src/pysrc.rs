//! Line-oriented structural parser for Python source.
//!
//! The parser recognizes just enough structure for planning and editing:
//! imports, top-level assignments, functions, and classes with their
//! methods, each with line spans, signatures, and docstrings. It is
//! deliberately infallible: content it does not understand becomes an
//! [`PyItem::Other`] item rather than an error, and the items always
//! partition the input byte-exactly, so a module can be reassembled or
//! spliced without disturbing untouched regions.

use serde::{Deserialize, Serialize};

/// One top-level item of a module. `text` always holds the exact source
/// slice, including any decorators and interior blank lines.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PyItem {
    Import { text: String, start_line: usize },
    Assignment { name: String, text: String, start_line: usize },
    Function(PyFunction),
    Class(PyClass),
    Other { text: String, start_line: usize },
}

impl PyItem {
    pub fn text(&self) -> &str {
        match self {
            PyItem::Import { text, .. } => text,
            PyItem::Assignment { text, .. } => text,
            PyItem::Function(f) => &f.text,
            PyItem::Class(c) => &c.text,
            PyItem::Other { text, .. } => text,
        }
    }

    pub fn start_line(&self) -> usize {
        match self {
            PyItem::Import { start_line, .. } => *start_line,
            PyItem::Assignment { start_line, .. } => *start_line,
            PyItem::Function(f) => f.start_line,
            PyItem::Class(c) => c.start_line,
            PyItem::Other { start_line, .. } => *start_line,
        }
    }
}

/// A function or method: name, normalized signature, docstring, and the
/// exact source text. Lines are 1-based and inclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PyFunction {
    pub name: String,
    pub signature: String,
    pub docstring: Option<String>,
    pub text: String,
    pub start_line: usize,
    pub end_line: usize,
}

/// A class with its methods. Method spans are absolute module lines.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PyClass {
    pub name: String,
    pub bases: Vec<String>,
    pub docstring: Option<String>,
    pub methods: Vec<PyFunction>,
    pub text: String,
    pub start_line: usize,
    pub end_line: usize,
}

/// A parsed module: an ordered item list partitioning the source.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PyModule {
    pub items: Vec<PyItem>,
}

impl PyModule {
    /// Reassembles the exact original source.
    pub fn source(&self) -> String {
        self.items.iter().map(|i| i.text()).collect()
    }

    pub fn functions(&self) -> impl Iterator<Item = &PyFunction> {
        self.items.iter().filter_map(|i| match i {
            PyItem::Function(f) => Some(f),
            _ => None,
        })
    }

    pub fn classes(&self) -> impl Iterator<Item = &PyClass> {
        self.items.iter().filter_map(|i| match i {
            PyItem::Class(c) => Some(c),
            _ => None,
        })
    }

    pub fn imports(&self) -> impl Iterator<Item = &str> {
        self.items.iter().filter_map(|i| match i {
            PyItem::Import { text, .. } => Some(text.as_str()),
            _ => None,
        })
    }

    pub fn find_function(&self, name: &str) -> Option<&PyFunction> {
        self.functions().find(|f| f.name == name)
    }

    pub fn find_class(&self, name: &str) -> Option<&PyClass> {
        self.classes().find(|c| c.name == name)
    }
}

/// Parses a module. Never fails: unrecognized content degrades to
/// [`PyItem::Other`] and the result always reassembles to `source`.
pub fn parse_module(source: &str) -> PyModule {
    let lines: Vec<&str> = split_inclusive_lines(source);
    let mut items = Vec::new();
    let mut i = 0;
    let mut other_start: Option<usize> = None;

    let flush_other = |items: &mut Vec<PyItem>, lines: &[&str], start: &mut Option<usize>, end: usize| {
        if let Some(s) = start.take() {
            items.push(PyItem::Other {
                text: lines[s..end].concat(),
                start_line: s + 1,
            });
        }
    };

    while i < lines.len() {
        let line = lines[i];
        let stripped = line.trim_start();
        let at_margin = !line.starts_with(' ') && !line.starts_with('\t');
        if !at_margin || stripped.is_empty() || stripped.starts_with('#') {
            if other_start.is_none() {
                other_start = Some(i);
            }
            i += 1;
            continue;
        }

        if is_string_start(stripped) {
            // Module docstring or stray top-level string expression: consume
            // the whole literal so its content is never misread as code.
            if other_start.is_none() {
                other_start = Some(i);
            }
            i = skip_string_statement(&lines, i);
            continue;
        }

        if stripped.starts_with("import ")
            || stripped.starts_with("from ")
            || stripped == "import"
            || stripped == "from"
        {
            flush_other(&mut items, &lines, &mut other_start, i);
            let end = statement_end(&lines, i);
            items.push(PyItem::Import {
                text: lines[i..end].concat(),
                start_line: i + 1,
            });
            i = end;
            continue;
        }

        if stripped.starts_with('@')
            || stripped.starts_with("def ")
            || stripped.starts_with("async def ")
            || stripped.starts_with("class ")
        {
            flush_other(&mut items, &lines, &mut other_start, i);
            let decorated_kind = block_kind_after_decorators(&lines, i);
            match decorated_kind {
                Some(BlockKind::Function) => {
                    let (f, end) = parse_block_function(&lines, i, 0);
                    items.push(PyItem::Function(f));
                    i = end;
                }
                Some(BlockKind::Class) => {
                    let (c, end) = parse_class(&lines, i);
                    items.push(PyItem::Class(c));
                    i = end;
                }
                None => {
                    if other_start.is_none() {
                        other_start = Some(i);
                    }
                    i += 1;
                }
            }
            continue;
        }

        if let Some(name) = assignment_name(stripped) {
            flush_other(&mut items, &lines, &mut other_start, i);
            let end = statement_end(&lines, i);
            items.push(PyItem::Assignment {
                name,
                text: lines[i..end].concat(),
                start_line: i + 1,
            });
            i = end;
            continue;
        }

        if other_start.is_none() {
            other_start = Some(i);
        }
        i += 1;
    }
    flush_other(&mut items, &lines, &mut other_start, lines.len());
    PyModule { items }
}

enum BlockKind {
    Function,
    Class,
}

fn block_kind_after_decorators(lines: &[&str], mut i: usize) -> Option<BlockKind> {
    while i < lines.len() {
        let s = lines[i].trim_start();
        if s.starts_with('@') {
            i = statement_end(lines, i);
            continue;
        }
        if s.starts_with("def ") || s.starts_with("async def ") {
            return Some(BlockKind::Function);
        }
        if s.starts_with("class ") {
            return Some(BlockKind::Class);
        }
        return None;
    }
    None
}

/// Parses a def block (with any leading decorators) whose header sits at
/// `indent` columns. Returns the function and the index one past its last
/// line, trailing blank lines excluded.
fn parse_block_function(lines: &[&str], start: usize, indent: usize) -> (PyFunction, usize) {
    let mut i = start;
    while lines[i].trim_start().starts_with('@') {
        i = statement_end(lines, i);
    }
    let header_end = statement_end(lines, i);
    let header: String = lines[i..header_end].concat();
    let (name, signature) = parse_def_header(&header);
    let body_end = block_end(lines, header_end, indent);
    let docstring = leading_docstring(lines, header_end, body_end);
    let f = PyFunction {
        name,
        signature,
        docstring,
        text: lines[start..body_end].concat(),
        start_line: start + 1,
        end_line: body_end,
    };
    (f, body_end)
}

fn parse_class(lines: &[&str], start: usize) -> (PyClass, usize) {
    let mut i = start;
    while lines[i].trim_start().starts_with('@') {
        i = statement_end(lines, i);
    }
    let header_end = statement_end(lines, i);
    let header: String = lines[i..header_end].concat();
    let (name, bases) = parse_class_header(&header);
    let body_end = block_end(lines, header_end, 0);
    let docstring = leading_docstring(lines, header_end, body_end);

    let mut methods = Vec::new();
    let body_indent = first_body_indent(lines, header_end, body_end);
    if let Some(indent) = body_indent {
        let mut j = header_end;
        while j < body_end {
            let line = lines[j];
            let s = line.trim_start();
            let this_indent = line.len() - s.len();
            if this_indent == indent
                && !s.is_empty()
                && (s.starts_with("def ")
                    || s.starts_with("async def ")
                    || (s.starts_with('@')
                        && matches!(
                            block_kind_after_decorators(lines, j),
                            Some(BlockKind::Function)
                        )))
            {
                let (m, end) = parse_block_function(lines, j, indent);
                methods.push(m);
                j = end;
            } else {
                j += 1;
            }
        }
    }

    let c = PyClass {
        name,
        bases,
        docstring,
        methods,
        text: lines[start..body_end].concat(),
        start_line: start + 1,
        end_line: body_end,
    };
    (c, body_end)
}

/// Index one past the block's last owned line: lines more indented than the
/// header (or blank lines followed by more such lines). Trailing blanks are
/// returned to the stream.
fn block_end(lines: &[&str], body_start: usize, header_indent: usize) -> usize {
    let mut i = body_start;
    let mut last_code = body_start;
    while i < lines.len() {
        let line = lines[i];
        let s = line.trim_start();
        if s.is_empty() {
            i += 1;
            continue;
        }
        let indent = line.len() - s.len();
        if indent <= header_indent {
            break;
        }
        i += 1;
        last_code = i;
    }
    last_code
}

fn first_body_indent(lines: &[&str], body_start: usize, body_end: usize) -> Option<usize> {
    for line in &lines[body_start..body_end] {
        let s = line.trim_start();
        if !s.is_empty() {
            return Some(line.len() - s.len());
        }
    }
    None
}

/// Extracts the name and normalized signature from a def header:
/// `def f(a,\n  b) -> int:` yields ("f", "f(a, b) -> int").
fn parse_def_header(header: &str) -> (String, String) {
    let after = header
        .trim_start()
        .strip_prefix("async ")
        .unwrap_or(header.trim_start());
    let after = after.strip_prefix("def ").unwrap_or(after);
    let body = after.trim_end();
    let body = strip_header_colon(body);
    let name: String = body
        .chars()
        .take_while(|c| c.is_alphanumeric() || *c == '_')
        .collect();
    (name, normalize_ws(body))
}

fn parse_class_header(header: &str) -> (String, Vec<String>) {
    let after = header.trim_start().strip_prefix("class ").unwrap_or(header.trim_start());
    let body = strip_header_colon(after.trim_end());
    let name: String = body
        .chars()
        .take_while(|c| c.is_alphanumeric() || *c == '_')
        .collect();
    let bases = match (body.find('('), body.rfind(')')) {
        (Some(open), Some(close)) if close > open => body[open + 1..close]
            .split(',')
            .map(|b| b.trim().to_string())
            .filter(|b| !b.is_empty())
            .collect(),
        _ => Vec::new(),
    };
    (name, bases)
}

fn strip_header_colon(body: &str) -> &str {
    body.strip_suffix(':').unwrap_or(body).trim_end()
}

fn normalize_ws(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Reads the docstring if the block's first statement is a string literal.
fn leading_docstring(lines: &[&str], body_start: usize, body_end: usize) -> Option<String> {
    let mut i = body_start;
    while i < body_end {
        let s = lines[i].trim_start();
        if s.is_empty() || s.starts_with('#') {
            i += 1;
            continue;
        }
        if !is_string_start(s) {
            return None;
        }
        let end = skip_string_statement(lines, i).min(body_end);
        let raw: String = lines[i..end].concat();
        return Some(extract_string_content(raw.trim()));
    }
    None
}

fn is_string_start(stripped: &str) -> bool {
    let rest = stripped.trim_start_matches(|c: char| "rRbBuUfF".contains(c));
    rest.starts_with('"') || rest.starts_with('\'')
}

/// Best-effort inner text of a string literal (prefix and quotes removed).
fn extract_string_content(raw: &str) -> String {
    let rest = raw.trim_start_matches(|c: char| "rRbBuUfF".contains(c));
    for delim in ["\"\"\"", "'''"] {
        if let Some(body) = rest.strip_prefix(delim) {
            return body.strip_suffix(delim).unwrap_or(body).trim().to_string();
        }
    }
    for delim in ["\"", "'"] {
        if let Some(body) = rest.strip_prefix(delim) {
            return body.strip_suffix(delim).unwrap_or(body).to_string();
        }
    }
    raw.to_string()
}

/// Index one past the end of a logical statement starting at line `i`,
/// following open brackets, triple-quoted strings, and backslash
/// continuations.
fn statement_end(lines: &[&str], i: usize) -> usize {
    let mut lex = LineLexer::default();
    let mut j = i;
    while j < lines.len() {
        lex.feed(lines[j]);
        j += 1;
        if lex.at_statement_boundary() {
            break;
        }
    }
    j
}

/// Consumes a statement that begins with a string literal.
fn skip_string_statement(lines: &[&str], i: usize) -> usize {
    statement_end(lines, i)
}

/// Tracks bracket depth and string state across physical lines.
#[derive(Default)]
struct LineLexer {
    depth: i32,
    in_string: Option<StrState>,
    backslash: bool,
}

struct StrState {
    delim: &'static str,
    raw: bool,
}

impl LineLexer {
    fn at_statement_boundary(&self) -> bool {
        self.depth <= 0 && self.in_string.is_none() && !self.backslash
    }

    fn feed(&mut self, line: &str) {
        self.backslash = false;
        let bytes = line.as_bytes();
        let mut k = 0;
        while k < bytes.len() {
            if let Some(state) = &self.in_string {
                if !state.raw && bytes[k] == b'\\' {
                    k += 2;
                    continue;
                }
                if line[k..].starts_with(state.delim) {
                    k += state.delim.len();
                    self.in_string = None;
                    continue;
                }
                k += 1;
                continue;
            }
            match bytes[k] {
                b'#' => return,
                b'(' | b'[' | b'{' => self.depth += 1,
                b')' | b']' | b'}' => self.depth -= 1,
                b'\'' | b'"' => {
                    let raw = k > 0 && {
                        let mut p = k;
                        let mut saw_raw = false;
                        while p > 0 {
                            let c = bytes[p - 1] as char;
                            if "rR".contains(c) {
                                saw_raw = true;
                                p -= 1;
                            } else if "bBuUfF".contains(c) {
                                p -= 1;
                            } else {
                                break;
                            }
                        }
                        saw_raw
                    };
                    let delim: &'static str = if line[k..].starts_with("\"\"\"") {
                        "\"\"\""
                    } else if line[k..].starts_with("'''") {
                        "'''"
                    } else if bytes[k] == b'"' {
                        "\""
                    } else {
                        "'"
                    };
                    k += delim.len();
                    // A single-quoted literal cannot span lines; scan to its
                    // close on this line and fall through open at EOL only
                    // for triple quotes.
                    if delim.len() == 3 {
                        match find_close(&line[k..], delim, raw) {
                            Some(off) => k += off + delim.len(),
                            None => {
                                self.in_string = Some(StrState { delim, raw });
                                return;
                            }
                        }
                    } else {
                        match find_close(&line[k..], delim, raw) {
                            Some(off) => k += off + delim.len(),
                            None => return,
                        }
                    }
                    continue;
                }
                b'\\' => {
                    if k + 1 >= bytes.len() || line[k + 1..].trim().is_empty() {
                        self.backslash = true;
                        return;
                    }
                    k += 1;
                }
                _ => {}
            }
            k += 1;
        }
    }
}

fn find_close(text: &str, delim: &str, raw: bool) -> Option<usize> {
    let bytes = text.as_bytes();
    let mut k = 0;
    while k < bytes.len() {
        if !raw && bytes[k] == b'\\' {
            k += 2;
            continue;
        }
        if text[k..].starts_with(delim) {
            return Some(k);
        }
        k += 1;
    }
    None
}

/// Leading identifier of a top-level assignment (`NAME = ...` or
/// `NAME: type = ...`), if the line is one.
fn assignment_name(stripped: &str) -> Option<String> {
    let name: String = stripped
        .chars()
        .take_while(|c| c.is_alphanumeric() || *c == '_')
        .collect();
    if name.is_empty() || name.chars().next().map(|c| c.is_ascii_digit()).unwrap_or(true) {
        return None;
    }
    if KEYWORDS.contains(&name.as_str()) {
        return None;
    }
    let rest = stripped[name.len()..].trim_start();
    if let Some(after_colon) = rest.strip_prefix(':') {
        // Annotated assignment: require an `=` at bracket depth zero.
        return find_top_level_eq(after_colon).then(|| name);
    }
    if rest.starts_with('=') && !rest.starts_with("==") {
        return Some(name);
    }
    None
}

fn find_top_level_eq(text: &str) -> bool {
    let mut depth = 0i32;
    let bytes = text.as_bytes();
    let mut k = 0;
    while k < bytes.len() {
        match bytes[k] {
            b'(' | b'[' | b'{' => depth += 1,
            b')' | b']' | b'}' => depth -= 1,
            b'=' if depth == 0 => {
                let next = bytes.get(k + 1);
                if next != Some(&b'=') {
                    return true;
                }
                k += 1;
            }
            b'#' => return false,
            b'\'' | b'"' => {
                let delim = bytes[k];
                k += 1;
                while k < bytes.len() && bytes[k] != delim {
                    if bytes[k] == b'\\' {
                        k += 1;
                    }
                    k += 1;
                }
            }
            _ => {}
        }
        k += 1;
    }
    false
}

const KEYWORDS: &[&str] = &[
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class",
    "continue", "def", "del", "elif", "else", "except", "finally", "for", "from", "global",
    "if", "import", "in", "is", "lambda", "nonlocal", "not", "or", "pass", "raise", "return",
    "try", "while", "with", "yield",
];

fn split_inclusive_lines(source: &str) -> Vec<&str> {
    source.split_inclusive('\n').collect()
}

/// Counts code lines: physical lines that are not blank, not comment-only,
/// and not part of a module/function/class docstring.
pub fn code_line_count(source: &str) -> usize {
    let module = parse_module(source);
    let mut count = 0;
    for item in &module.items {
        match item {
            PyItem::Other { text, .. } => {
                let mut lines = split_inclusive_lines(text);
                // A leading string expression in Other position is a module
                // docstring; drop its physical lines entirely.
                loop {
                    let Some(first_code) = lines.iter().position(|l| {
                        let s = l.trim();
                        !s.is_empty() && !s.starts_with('#')
                    }) else {
                        lines.clear();
                        break;
                    };
                    if is_string_start(lines[first_code].trim_start()) {
                        let end = skip_string_statement(&lines, first_code);
                        lines.drain(..end);
                    } else {
                        break;
                    }
                }
                count += lines
                    .iter()
                    .filter(|l| {
                        let s = l.trim();
                        !s.is_empty() && !s.starts_with('#')
                    })
                    .count();
            }
            PyItem::Function(f) => count += function_code_lines(f),
            PyItem::Class(c) => {
                let all = count_code_physical(&c.text);
                let doc = c.docstring.as_ref().map(|_| docstring_physical_lines(&c.text)).unwrap_or(0);
                let method_docs: usize = c
                    .methods
                    .iter()
                    .filter(|m| m.docstring.is_some())
                    .map(|m| docstring_physical_lines(&m.text))
                    .sum();
                count += all.saturating_sub(doc + method_docs);
            }
            _ => count += count_code_physical(item.text()),
        }
    }
    count
}

fn function_code_lines(f: &PyFunction) -> usize {
    let all = count_code_physical(&f.text);
    let doc = if f.docstring.is_some() { docstring_physical_lines(&f.text) } else { 0 };
    all.saturating_sub(doc)
}

/// Physical lines that are neither blank nor comment-only, with trailing
/// comments tolerated (the line still counts as code).
fn count_code_physical(text: &str) -> usize {
    text.lines()
        .filter(|l| {
            let s = l.trim();
            !s.is_empty() && !s.starts_with('#')
        })
        .count()
}

/// Line span (start, end) of the first docstring statement after a def or
/// class header, as indexes into the block's physical lines.
fn docstring_span(lines: &[&str]) -> Option<(usize, usize)> {
    let header_end = statement_end(lines, 0);
    let mut i = header_end;
    while i < lines.len() {
        let s = lines[i].trim();
        if s.is_empty() || s.starts_with('#') {
            i += 1;
            continue;
        }
        if !is_string_start(lines[i].trim_start()) {
            return None;
        }
        return Some((i, skip_string_statement(lines, i)));
    }
    None
}

/// Physical line count of the first docstring statement inside a def or
/// class block text.
fn docstring_physical_lines(block_text: &str) -> usize {
    let lines = split_inclusive_lines(block_text);
    match docstring_span(&lines) {
        Some((start, end)) => lines[start..end]
            .iter()
            .filter(|l| {
                let t = l.trim();
                !t.is_empty() && !t.starts_with('#')
            })
            .count(),
        None => 0,
    }
}

/// Cuts a trailing comment off one physical line, leaving string literals
/// intact, and trims trailing whitespace.
fn strip_trailing_comment(line: &str) -> &str {
    let bytes = line.as_bytes();
    let mut in_string = false;
    let mut delim = 0u8;
    let mut k = 0;
    while k < bytes.len() {
        let b = bytes[k];
        if in_string {
            if b == b'\\' {
                k += 1;
            } else if b == delim {
                in_string = false;
            }
        } else if b == b'\'' || b == b'"' {
            in_string = true;
            delim = b;
        } else if b == b'#' {
            return line[..k].trim_end();
        }
        k += 1;
    }
    line.trim_end()
}

/// Source with comments, docstrings, and blank lines removed: the text
/// basis for normalized line and token statistics. Its line count equals
/// `code_line_count` for the same source.
pub fn normalized_source(source: &str) -> String {
    let module = parse_module(source);
    let mut kept: Vec<String> = Vec::new();
    let mut push_code = |lines: &[&str], skip: &[bool]| {
        for (idx, line) in lines.iter().enumerate() {
            if skip.get(idx).copied().unwrap_or(false) {
                continue;
            }
            let s = line.trim();
            if s.is_empty() || s.starts_with('#') {
                continue;
            }
            kept.push(strip_trailing_comment(line).to_string());
        }
    };
    for item in &module.items {
        match item {
            PyItem::Other { text, .. } => {
                let mut lines = split_inclusive_lines(text);
                loop {
                    let Some(first_code) = lines.iter().position(|l| {
                        let s = l.trim();
                        !s.is_empty() && !s.starts_with('#')
                    }) else {
                        lines.clear();
                        break;
                    };
                    if is_string_start(lines[first_code].trim_start()) {
                        let end = skip_string_statement(&lines, first_code);
                        lines.drain(..end);
                    } else {
                        break;
                    }
                }
                push_code(&lines, &[]);
            }
            PyItem::Function(f) => {
                let lines = split_inclusive_lines(&f.text);
                let mut skip = vec![false; lines.len()];
                if f.docstring.is_some() {
                    if let Some((start, end)) = docstring_span(&lines) {
                        for s in &mut skip[start..end] {
                            *s = true;
                        }
                    }
                }
                push_code(&lines, &skip);
            }
            PyItem::Class(c) => {
                let lines = split_inclusive_lines(&c.text);
                let mut skip = vec![false; lines.len()];
                if c.docstring.is_some() {
                    if let Some((start, end)) = docstring_span(&lines) {
                        for s in &mut skip[start..end] {
                            *s = true;
                        }
                    }
                }
                for m in &c.methods {
                    if m.docstring.is_none() {
                        continue;
                    }
                    let m_lines = split_inclusive_lines(&m.text);
                    if let Some((start, end)) = docstring_span(&m_lines) {
                        let offset = m.start_line.saturating_sub(c.start_line);
                        for idx in start..end {
                            if let Some(s) = skip.get_mut(offset + idx) {
                                *s = true;
                            }
                        }
                    }
                }
                push_code(&lines, &skip);
            }
            _ => push_code(&split_inclusive_lines(item.text()), &[]),
        }
    }
    if kept.is_empty() {
        String::new()
    } else {
        kept.join("\n") + "\n"
    }
}

/// The function body with comments and the docstring stripped and
/// whitespace normalized: the digest basis for "same logic" checks.
pub fn normalized_body(f: &PyFunction) -> String {
    let lines = split_inclusive_lines(&f.text);
    let header_end = statement_end(&lines, 0);
    let mut body: Vec<&str> = lines[header_end..].to_vec();
    if f.docstring.is_some() {
        let mut i = 0;
        while i < body.len() {
            let s = body[i].trim();
            if s.is_empty() || s.starts_with('#') {
                i += 1;
                continue;
            }
            let end = skip_string_statement(&body, i);
            body.drain(i..end);
            break;
        }
    }
    body.iter()
        .map(|l| l.trim_end())
        .filter(|s| {
            let t = s.trim_start();
            !t.is_empty() && !t.starts_with('#')
        })
        .collect::<Vec<_>>()
        .join("\n")
}
