//! Extraction of the JSON object embedded in a model reply.
//!
//! Replies often wrap the object in prose or code fences, and the prompt
//! listings themselves contain `#` comments and trailing commas, so models
//! echo those too. Parsing first tries strict JSON, then a cleaned copy.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::TemplateName;

/// Fields a template may define. Only the ones the template asks for are
/// required; the rest stay `None`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedFields {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thought: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xpath: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judgement: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consistent: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub number: Option<i64>,
}

/// Locates the outermost brace-delimited object and parses it.
pub fn extract_object(raw: &str) -> Option<Map<String, Value>> {
    let mut from = 0;
    while let Some(off) = raw[from..].find('{') {
        let start = from + off;
        if let Some(end) = matching_brace(raw, start) {
            let candidate = &raw[start..=end];
            if let Some(obj) = parse_lenient(candidate) {
                return Some(obj);
            }
        }
        from = start + 1;
    }
    None
}

fn parse_lenient(text: &str) -> Option<Map<String, Value>> {
    if let Ok(Value::Object(m)) = serde_json::from_str(text) {
        return Some(m);
    }
    match serde_json::from_str(&clean(text)) {
        Ok(Value::Object(m)) => Some(m),
        _ => None,
    }
}

/// Index of the `}` closing the `{` at `start`, skipping string contents.
fn matching_brace(s: &str, start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in s[start..].char_indices() {
        if in_str {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_str = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(start + i);
                }
            }
            _ => {}
        }
    }
    None
}

/// Drops `#` line comments outside strings, inserts commas missing between
/// members on separate lines, and removes trailing commas.
fn clean(text: &str) -> String {
    let mut lines = Vec::new();
    for line in text.lines() {
        let mut out = String::new();
        let mut in_str = false;
        let mut escaped = false;
        for c in line.chars() {
            if in_str {
                out.push(c);
                match c {
                    _ if escaped => escaped = false,
                    '\\' => escaped = true,
                    '"' => in_str = false,
                    _ => {}
                }
                continue;
            }
            match c {
                '#' => break,
                '"' => {
                    in_str = true;
                    out.push(c);
                }
                _ => out.push(c),
            }
        }
        let trimmed = out.trim_end().to_string();
        if !trimmed.trim().is_empty() {
            lines.push(trimmed);
        }
    }
    let mut joined = String::new();
    for (i, line) in lines.iter().enumerate() {
        joined.push_str(line);
        let next = lines.get(i + 1).map(|l| l.trim_start());
        let ends_value = line.ends_with('"')
            || line.ends_with('}')
            || line.ends_with(']')
            || line.ends_with(|c: char| c.is_ascii_alphanumeric());
        if ends_value && next.is_some_and(|n| n.starts_with('"')) {
            joined.push(',');
        }
        joined.push('\n');
    }
    strip_trailing_commas(&joined)
}

fn strip_trailing_commas(s: &str) -> String {
    let chars: Vec<char> = s.chars().collect();
    let mut out = String::with_capacity(s.len());
    let mut in_str = false;
    let mut escaped = false;
    for (i, &c) in chars.iter().enumerate() {
        if in_str {
            out.push(c);
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        if c == '"' {
            in_str = true;
        }
        if c == ',' {
            let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
            if matches!(next, Some('}') | Some(']')) {
                continue;
            }
        }
        out.push(c);
    }
    out
}

fn as_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Null => Some(String::new()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn as_list(v: &Value) -> Option<Vec<String>> {
    match v {
        Value::Array(items) => items.iter().map(as_text).collect(),
        Value::Null => Some(Vec::new()),
        other => {
            let s = as_text(other)?;
            Some(if s.trim().is_empty() {
                Vec::new()
            } else {
                vec![s]
            })
        }
    }
}

fn as_yes_no(v: &Value) -> Option<bool> {
    match v {
        Value::Bool(b) => Some(*b),
        Value::String(s) => {
            let s = s.trim().to_ascii_lowercase();
            if s.starts_with("yes") || s == "true" {
                Some(true)
            } else if s.starts_with("no") || s == "false" {
                Some(false)
            } else {
                None
            }
        }
        _ => None,
    }
}

fn as_number(v: &Value) -> Option<i64> {
    match v {
        Value::Number(n) => n.as_i64().or_else(|| n.as_f64().map(|f| f as i64)),
        Value::String(s) => {
            let digits: String = s
                .trim()
                .chars()
                .skip_while(|c| !c.is_ascii_digit() && *c != '-')
                .take_while(|c| c.is_ascii_digit() || *c == '-')
                .collect();
            digits.parse().ok()
        }
        _ => None,
    }
}

/// Parses `raw` into the fields required by `template`. `None` means the
/// reply is malformed for that template.
pub fn parse_response(template: TemplateName, raw: &str) -> Option<ParsedFields> {
    let obj = extract_object(raw)?;
    let get = |k: &str| obj.get(k);
    let mut fields = ParsedFields {
        thought: get("thought").and_then(as_text),
        ..ParsedFields::default()
    };
    match template {
        TemplateName::Crawler | TemplateName::Reflexion => {
            fields.xpath = Some(as_text(get("xpath")?)?.trim().to_string());
            fields.value = match get("value") {
                Some(v) => Some(as_list(v)?),
                None => None,
            };
            if template == TemplateName::Reflexion {
                fields.consistent = get("consistent").and_then(as_yes_no);
            }
        }
        TemplateName::Synthesis => fields.number = Some(as_number(get("number")?)?),
        TemplateName::Judgement | TemplateName::Stepback => {
            fields.judgement = Some(as_yes_no(get("judgement")?)?)
        }
    }
    Some(fields)
}
