use serde::de::DeserializeOwned;

use super::{ChatRequest, Message, ModelClient, ModelError};

/// A JSON shape the toolkit asks models to produce.
pub trait Structured: DeserializeOwned {
    /// Human-readable shape description used in repair prompts.
    const SHAPE: &'static str;

    /// Semantic checks beyond deserialization.
    fn check(&self) -> Result<(), String> {
        Ok(())
    }
}

/// Slice of the first balanced top-level `{...}` in `text`, honoring JSON strings.
pub fn extract_json_object(text: &str) -> Option<&str> {
    let bytes = text.as_bytes();
    let mut start = None;
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate() {
        if start.is_none() {
            if b == b'{' {
                start = Some(i);
                depth = 1;
            }
            continue;
        }
        if in_str {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_str = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start.unwrap()..=i]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Strict parse of the first JSON object in `text` plus the shape's own checks.
pub fn parse_value<T: Structured>(text: &str) -> Result<T, String> {
    let json = extract_json_object(text).ok_or_else(|| "no JSON object found".to_string())?;
    let value: T = serde_json::from_str(json).map_err(|e| format!("JSON does not match shape: {e}"))?;
    value.check()?;
    Ok(value)
}

fn parse_checked<T: Structured>(text: &str, extra: &dyn Fn(&T) -> Result<(), String>) -> Result<T, String> {
    let v = parse_value::<T>(text)?;
    extra(&v)?;
    Ok(v)
}

/// Sends `request` and parses the reply as `T`. A failed parse triggers exactly
/// one repair turn carrying the error; a second failure is terminal.
pub fn parse_structured<T: Structured>(
    client: &ModelClient,
    request: &ChatRequest,
) -> Result<T, ModelError> {
    parse_structured_with(client, request, &|_: &T| Ok(()))
}

/// [`parse_structured`] with an additional caller-side check that also triggers the repair turn.
pub fn parse_structured_with<T: Structured>(
    client: &ModelClient,
    request: &ChatRequest,
    extra: &dyn Fn(&T) -> Result<(), String>,
) -> Result<T, ModelError> {
    let first = client.chat(request)?;
    let err = match parse_checked::<T>(&first.text, extra) {
        Ok(v) => return Ok(v),
        Err(e) => e,
    };
    log::warn!("structured output rejected ({err}); sending one repair prompt");
    let mut repair = request.clone();
    repair.messages.push(Message::assistant(first.text.clone()));
    repair.messages.push(Message::user(format!(
        "Your previous reply could not be used: {err}.\n\
         Reply again with a single JSON object of this shape and nothing else:\n{}",
        T::SHAPE
    )));
    let second = client.chat(&repair)?;
    parse_checked::<T>(&second.text, extra).map_err(|e| ModelError::Generation {
        message: format!("structured output failed twice: {e}"),
        first_raw: first.text,
        second_raw: second.text,
    })
}
