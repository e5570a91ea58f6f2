//! Unified diff rendering and application.
//!
//! Diffs are rendered with the `similar` engine; application is implemented
//! here so a patch can be replayed against any text matching the original,
//! with strict context verification rather than fuzzy matching.

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiffError {
    #[error("diff line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("hunk at old line {old_line} does not match the target text: {message}")]
    ContextMismatch { old_line: usize, message: String },
}

/// Renders a unified diff with `---`/`+++` headers naming `path` on both
/// sides and three lines of context.
pub fn unified_diff(old: &str, new: &str, path: &str) -> String {
    similar::TextDiff::from_lines(old, new)
        .unified_diff()
        .context_radius(3)
        .header(path, path)
        .to_string()
}

/// Applies a unified diff produced by [`unified_diff`]. Context and
/// deletion lines must match the target exactly.
pub fn apply_unified(old: &str, diff: &str) -> Result<String, DiffError> {
    let old_lines: Vec<&str> = old.split_inclusive('\n').collect();
    let mut out: Vec<String> = Vec::new();
    let mut old_idx = 0usize;

    let mut lines = diff.lines().enumerate().peekable();
    while let Some((lineno, line)) = lines.next() {
        if line.starts_with("---") || line.starts_with("+++") {
            continue;
        }
        if !line.starts_with("@@") {
            if line.trim().is_empty() {
                continue;
            }
            return Err(DiffError::Malformed {
                line: lineno + 1,
                message: format!("unexpected line outside hunk: {line:?}"),
            });
        }
        let old_start = parse_hunk_old_start(line).ok_or(DiffError::Malformed {
            line: lineno + 1,
            message: format!("bad hunk header: {line:?}"),
        })?;
        // Hunk line numbers are 1-based; a start of 0 denotes an empty old
        // side (pure insertion into an empty file).
        let hunk_old_idx = old_start.saturating_sub(1);
        if hunk_old_idx < old_idx {
            return Err(DiffError::Malformed {
                line: lineno + 1,
                message: "hunks out of order".into(),
            });
        }
        while old_idx < hunk_old_idx {
            let carried = old_lines.get(old_idx).ok_or(DiffError::ContextMismatch {
                old_line: old_idx + 1,
                message: "hunk starts past end of file".into(),
            })?;
            out.push(carried.to_string());
            old_idx += 1;
        }

        let mut prev_kind = ' ';
        while let Some((_, body)) = lines.peek() {
            if body.starts_with("@@") || body.starts_with("---") || body.starts_with("+++") {
                break;
            }
            let (_, body_line) = lines.next().expect("peeked");
            match body_line.chars().next() {
                Some(' ') | None => {
                    let expected = &body_line.get(1..).unwrap_or("");
                    let actual = old_lines.get(old_idx).ok_or(DiffError::ContextMismatch {
                        old_line: old_idx + 1,
                        message: "context extends past end of file".into(),
                    })?;
                    if actual.trim_end_matches('\n') != *expected {
                        return Err(DiffError::ContextMismatch {
                            old_line: old_idx + 1,
                            message: format!("expected {expected:?}, found {actual:?}"),
                        });
                    }
                    out.push(actual.to_string());
                    old_idx += 1;
                    prev_kind = ' ';
                }
                Some('-') => {
                    let expected = &body_line[1..];
                    let actual = old_lines.get(old_idx).ok_or(DiffError::ContextMismatch {
                        old_line: old_idx + 1,
                        message: "deletion extends past end of file".into(),
                    })?;
                    if actual.trim_end_matches('\n') != expected {
                        return Err(DiffError::ContextMismatch {
                            old_line: old_idx + 1,
                            message: format!("expected {expected:?}, found {actual:?}"),
                        });
                    }
                    old_idx += 1;
                    prev_kind = '-';
                }
                Some('+') => {
                    out.push(format!("{}\n", &body_line[1..]));
                    prev_kind = '+';
                }
                Some('\\') => {
                    // "\ No newline at end of file" describes the side the
                    // previous body line came from. Only an inserted line
                    // needs its synthesized newline removed; context lines
                    // carry the old file's exact bytes already, and deleted
                    // lines never reach the output.
                    if prev_kind == '+' {
                        if let Some(last) = out.last_mut() {
                            if last.ends_with('\n') {
                                last.pop();
                            }
                        }
                    }
                }
                Some(other) => {
                    return Err(DiffError::Malformed {
                        line: 0,
                        message: format!("unknown hunk line prefix {other:?}"),
                    })
                }
            }
        }
    }
    while old_idx < old_lines.len() {
        out.push(old_lines[old_idx].to_string());
        old_idx += 1;
    }
    Ok(out.concat())
}

fn parse_hunk_old_start(header: &str) -> Option<usize> {
    let rest = header.strip_prefix("@@ -")?;
    let end = rest.find(|c: char| c == ',' || c == ' ')?;
    rest[..end].parse().ok()
}
