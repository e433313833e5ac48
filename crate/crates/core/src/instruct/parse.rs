//! Strict parsing of generation responses.
//!
//! A response must be exactly one JSON object: no text before or after it.
//! Python-style single-quoted objects are rewritten to standard JSON first.

use std::fmt;

use serde::Serialize;
use serde_json::Value;

use super::record::ResponseFields;

pub const REQUIRED_KEYS: [&str; 3] = ["edit", "edited object", "output"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseReason {
    Empty,
    NotJson,
    ProseAroundJson,
    NotObject,
    MissingKeys,
    WrongType,
}

impl ParseReason {
    pub fn code(self) -> &'static str {
        match self {
            ParseReason::Empty => "empty",
            ParseReason::NotJson => "not_json",
            ParseReason::ProseAroundJson => "prose_around_json",
            ParseReason::NotObject => "not_object",
            ParseReason::MissingKeys => "missing_keys",
            ParseReason::WrongType => "wrong_type",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResponseError {
    pub reason: ParseReason,
    /// Offending keys for [`ParseReason::MissingKeys`] and
    /// [`ParseReason::WrongType`].
    pub keys: Vec<String>,
    pub detail: String,
}

impl fmt::Display for ResponseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.reason.code(), self.detail)?;
        if !self.keys.is_empty() {
            write!(f, " [{}]", self.keys.join(", "))?;
        }
        Ok(())
    }
}

impl std::error::Error for ResponseError {}

fn fail(reason: ParseReason, detail: impl Into<String>) -> ResponseError {
    ResponseError {
        reason,
        keys: Vec::new(),
        detail: detail.into(),
    }
}

pub fn parse_response(text: &str) -> Result<ResponseFields, ResponseError> {
    let body = text.trim();
    if body.is_empty() {
        return Err(fail(ParseReason::Empty, "response is empty"));
    }
    if !body.starts_with('{') || !body.ends_with('}') {
        return Err(if body.contains('{') {
            fail(ParseReason::ProseAroundJson, "text surrounds the JSON object")
        } else {
            fail(ParseReason::NotJson, "no JSON object in response")
        });
    }
    let value: Value = match serde_json::from_str(body) {
        Ok(v) => v,
        Err(strict) => {
            let normalized = normalize_single_quotes(body)
                .ok_or_else(|| fail(ParseReason::NotJson, strict.to_string()))?;
            serde_json::from_str(&normalized).map_err(|e| {
                let reason = if e.to_string().starts_with("trailing characters") {
                    ParseReason::ProseAroundJson
                } else {
                    ParseReason::NotJson
                };
                fail(reason, e.to_string())
            })?
        }
    };
    let Value::Object(map) = value else {
        return Err(fail(ParseReason::NotObject, "top-level value is not an object"));
    };
    let missing: Vec<String> = REQUIRED_KEYS
        .iter()
        .filter(|k| !map.contains_key(**k))
        .map(|k| k.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(ResponseError {
            reason: ParseReason::MissingKeys,
            detail: format!("{} required key(s) absent", missing.len()),
            keys: missing,
        });
    }
    let mut fields = Vec::with_capacity(3);
    let mut wrong = Vec::new();
    for k in REQUIRED_KEYS {
        match &map[k] {
            Value::String(s) => fields.push(s.trim().to_string()),
            _ => wrong.push(k.to_string()),
        }
    }
    if !wrong.is_empty() {
        return Err(ResponseError {
            reason: ParseReason::WrongType,
            detail: "required keys must hold strings".into(),
            keys: wrong,
        });
    }
    let output = fields.pop().unwrap();
    let edited_object = fields.pop().unwrap();
    let edit = fields.pop().unwrap();
    Ok(ResponseFields {
        edit,
        edited_object,
        output,
    })
}

/// Rewrites single-quoted strings to double-quoted ones, leaving
/// double-quoted strings intact. A single quote closes a string only when
/// the next non-space character is structural (`,` `:` `}` `]`) or the end
/// of input, so apostrophes inside words survive. Returns `None` for an
/// unterminated string.
pub fn normalize_single_quotes(text: &str) -> Option<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len() + 8);
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            '"' => {
                out.push('"');
                i += 1;
                loop {
                    let ch = *chars.get(i)?;
                    out.push(ch);
                    i += 1;
                    if ch == '\\' {
                        out.push(*chars.get(i)?);
                        i += 1;
                    } else if ch == '"' {
                        break;
                    }
                }
            }
            '\'' => {
                out.push('"');
                i += 1;
                loop {
                    let ch = *chars.get(i)?;
                    i += 1;
                    match ch {
                        '\\' => {
                            let next = *chars.get(i)?;
                            i += 1;
                            match next {
                                '\'' => out.push('\''),
                                other => {
                                    out.push('\\');
                                    out.push(other);
                                }
                            }
                        }
                        '"' => out.push_str("\\\""),
                        '\'' if closes(&chars, i) => {
                            out.push('"');
                            break;
                        }
                        other => out.push(other),
                    }
                }
            }
            _ => {
                out.push(c);
                i += 1;
            }
        }
    }
    Some(out)
}

fn closes(chars: &[char], from: usize) -> bool {
    chars[from..]
        .iter()
        .find(|c| !c.is_whitespace())
        .is_none_or(|c| matches!(c, ',' | ':' | '}' | ']'))
}
