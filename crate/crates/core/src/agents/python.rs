//! Line-oriented scanning of Python source: top-level definitions, their
//! signatures and docstrings, and assert statements. This is deliberately not
//! a parser; it only needs to be right for well-formed generated code and
//! total (never panicking) for anything else.

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Definition {
    pub name: String,
    /// Parameters and return annotation, whitespace collapsed: `(a, b) -> int`.
    pub signature: String,
    pub doc: Option<String>,
    pub is_class: bool,
}

/// Tracks whether a line starts inside a triple-quoted string.
fn string_mask(lines: &[&str]) -> Vec<bool> {
    let mut inside: Option<&str> = None;
    let mut out = Vec::with_capacity(lines.len());
    for line in lines {
        out.push(inside.is_some());
        let mut rest = *line;
        loop {
            match inside {
                Some(q) => match rest.find(q) {
                    Some(i) => {
                        rest = &rest[i + 3..];
                        inside = None;
                    }
                    None => break,
                },
                None => {
                    let a = rest.find("\"\"\"");
                    let b = rest.find("'''");
                    let hit = match (a, b) {
                        (Some(x), Some(y)) if y < x => Some((y, "'''")),
                        (Some(x), _) => Some((x, "\"\"\"")),
                        (None, Some(y)) => Some((y, "'''")),
                        (None, None) => None,
                    };
                    // A comment before the quote ends the scan.
                    let hash = rest.find('#');
                    match hit {
                        Some((i, q)) if hash.is_none_or(|h| h > i) => {
                            rest = &rest[i + 3..];
                            inside = Some(q);
                        }
                        _ => break,
                    }
                }
            }
        }
    }
    out
}

fn def_keyword(line: &str) -> Option<(&str, bool)> {
    if let Some(r) = line.strip_prefix("def ") {
        Some((r, false))
    } else if let Some(r) = line.strip_prefix("async def ") {
        Some((r, false))
    } else {
        line.strip_prefix("class ").map(|r| (r, true))
    }
}

fn ident_prefix(s: &str) -> &str {
    let s = s.trim_start();
    let end = s.find(|c: char| !(c.is_alphanumeric() || c == '_')).unwrap_or(s.len());
    &s[..end]
}

/// All top-level `def`, `async def` and `class` statements, in order.
pub fn top_level_definitions(source: &str) -> Vec<Definition> {
    let lines: Vec<&str> = source.lines().collect();
    let mask = string_mask(&lines);
    let mut out = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        let Some((rest, is_class)) = (!mask[i]).then(|| def_keyword(line)).flatten() else {
            i += 1;
            continue;
        };
        let name = ident_prefix(rest);
        if name.is_empty() || name.starts_with(|c: char| c.is_ascii_digit()) {
            i += 1;
            continue;
        }
        // Collect the header up to the ':' at bracket depth zero.
        let after_name = &rest[rest.find(name).unwrap_or(0) + name.len()..];
        let mut header = String::new();
        let mut depth: i32 = 0;
        let mut body_inline = String::new();
        let mut j = i;
        let mut segment = after_name;
        let mut done = false;
        loop {
            for (k, c) in segment.char_indices() {
                match c {
                    '(' | '[' | '{' => depth += 1,
                    ')' | ']' | '}' => depth -= 1,
                    ':' if depth <= 0 => {
                        header.push_str(&segment[..k]);
                        body_inline = segment[k + 1..].trim().to_string();
                        done = true;
                        break;
                    }
                    _ => {}
                }
            }
            if done {
                break;
            }
            header.push_str(segment);
            header.push(' ');
            j += 1;
            if j >= lines.len() {
                break;
            }
            segment = lines[j];
        }
        if !done {
            i += 1;
            continue;
        }
        let signature = header.split_whitespace().collect::<Vec<_>>().join(" ");
        let signature = signature.replace("( ", "(").replace(" )", ")");
        let doc = if body_inline.is_empty() {
            docstring_at(&lines, j + 1)
        } else {
            docstring_from(&[body_inline.as_str()], 0)
        };
        out.push(Definition {
            name: name.to_string(),
            signature,
            doc,
            is_class,
        });
        i = j + 1;
    }
    out
}

/// Names of all top-level functions and classes.
pub fn top_level_names(source: &str) -> Vec<String> {
    top_level_definitions(source).into_iter().map(|d| d.name).collect()
}

fn docstring_at(lines: &[&str], start: usize) -> Option<String> {
    let first = (start..lines.len()).find(|&k| !lines[k].trim().is_empty())?;
    // The docstring must be indented (it belongs to the body).
    if !lines[first].starts_with(char::is_whitespace) {
        return None;
    }
    docstring_from(lines, first)
}

fn docstring_from(lines: &[&str], first: usize) -> Option<String> {
    let head = lines[first].trim_start();
    let head = head.trim_start_matches(['r', 'R', 'u', 'U']);
    for quote in ["\"\"\"", "'''"] {
        if let Some(rest) = head.strip_prefix(quote) {
            if let Some(end) = rest.find(quote) {
                return clean_doc(&rest[..end]);
            }
            let mut body = vec![rest.to_string()];
            for line in &lines[first + 1..] {
                if let Some(end) = line.find(quote) {
                    body.push(line[..end].to_string());
                    return clean_doc(&body.join("\n"));
                }
                body.push(line.to_string());
            }
            return None;
        }
    }
    for quote in ['"', '\''] {
        if let Some(rest) = head.strip_prefix(quote) {
            let end = rest.find(quote)?;
            return clean_doc(&rest[..end]);
        }
    }
    None
}

/// Like Python's `inspect.cleandoc`: strip the common indentation of all
/// lines after the first and trim blank edges.
fn clean_doc(raw: &str) -> Option<String> {
    let lines: Vec<&str> = raw.lines().collect();
    let indent = lines
        .iter()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.len() - l.trim_start().len())
        .min()
        .unwrap_or(0);
    let mut out: Vec<String> = Vec::with_capacity(lines.len());
    for (k, l) in lines.iter().enumerate() {
        if k == 0 {
            out.push(l.trim().to_string());
        } else if l.len() >= indent && l.is_char_boundary(indent) {
            out.push(l[indent..].trim_end().to_string());
        } else {
            out.push(l.trim().to_string());
        }
    }
    let text = out.join("\n").trim().to_string();
    (!text.is_empty()).then_some(text)
}

/// Number of `assert` statements outside string literals and comments.
pub fn count_assertions(source: &str) -> usize {
    let lines: Vec<&str> = source.lines().collect();
    let mask = string_mask(&lines);
    lines
        .iter()
        .zip(mask)
        .filter(|(line, in_string)| {
            if *in_string {
                return false;
            }
            let t = line.trim_start();
            t.strip_prefix("assert")
                .is_some_and(|r| r.starts_with([' ', '\t', '(']))
        })
        .count()
}
