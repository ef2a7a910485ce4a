//! Finding the JSON payload inside a raw model reply.
//!
//! Models asked for JSON still routinely wrap it: a sentence of preamble, a
//! fenced ```json block, a trailing sign-off. Extraction tries, in order:
//!
//! 1. each fenced code block (``` … ```), ignoring the language word;
//! 2. every `{` or `[` position in the whole reply, attempting a JSON parse
//!    from there and taking the first position that yields a complete value.
//!
//! The returned [`ExtractedDocument`] keeps both the parsed value and the
//! exact span it came from, and extraction is *sound*: re-parsing the span
//! always reproduces the value.

use serde_json::Value;

use super::PromptError;

/// A JSON value located inside a larger reply.
#[derive(Debug, Clone)]
pub struct ExtractedDocument {
    pub value: Value,
    /// The exact substring of the raw reply the value was parsed from.
    pub raw_span: String,
}

/// Attempts to parse a JSON value starting at the first `{` or `[` in
/// `text`, returning the value and the substring consumed.
fn parse_from_first_opener(text: &str) -> Option<(Value, String)> {
    for (offset, ch) in text.char_indices() {
        if ch != '{' && ch != '[' {
            continue;
        }
        let tail = &text[offset..];
        let mut stream = serde_json::Deserializer::from_str(tail).into_iter::<Value>();
        if let Some(Ok(value)) = stream.next() {
            // Objects and arrays only: a stray brace is never a payload, and
            // bare numbers or strings would match almost anything.
            if value.is_object() || value.is_array() {
                let consumed = stream.byte_offset();
                return Some((value, tail[..consumed].to_string()));
            }
        }
    }
    None
}

/// Splits out the bodies of fenced code blocks, dropping a leading language
/// word (e.g. ```json) when present.
fn fenced_blocks(raw: &str) -> Vec<&str> {
    let mut blocks = Vec::new();
    let mut sections = raw.split("```");
    // Sections alternate outside/inside; odd indices are fence bodies.
    sections.next();
    while let Some(inside) = sections.next() {
        let body = match inside.split_once('\n') {
            Some((first_line, rest))
                if first_line.trim().chars().all(|c| c.is_ascii_alphanumeric()) =>
            {
                rest
            }
            _ => inside,
        };
        blocks.push(body);
        if sections.next().is_none() {
            break;
        }
    }
    blocks
}

/// Locates the JSON payload in a raw model reply.
pub fn extract_json_payload(raw: &str) -> Result<ExtractedDocument, PromptError> {
    for block in fenced_blocks(raw) {
        if let Some((value, raw_span)) = parse_from_first_opener(block) {
            return Ok(ExtractedDocument { value, raw_span });
        }
    }
    if let Some((value, raw_span)) = parse_from_first_opener(raw) {
        return Ok(ExtractedDocument { value, raw_span });
    }
    let preview: String = raw.chars().take(160).collect();
    Err(PromptError::Extraction { raw: preview })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bare_json_object() {
        let doc = extract_json_payload(r#"{"score": 4}"#).unwrap();
        assert_eq!(doc.value["score"], 4);
        assert_eq!(doc.raw_span, r#"{"score": 4}"#);
    }

    #[test]
    fn json_inside_prose() {
        let raw = "Here is my evaluation.\n\n{\"rationale\": \"clear\", \"score\": 5}\n\nThanks!";
        let doc = extract_json_payload(raw).unwrap();
        assert_eq!(doc.value["score"], 5);
    }

    #[test]
    fn fenced_block_with_language_word() {
        let raw = "Sure!\n```json\n{\"name\": \"A\"}\n```\nDone.";
        let doc = extract_json_payload(raw).unwrap();
        assert_eq!(doc.value["name"], "A");
    }

    #[test]
    fn fenced_block_without_language_word() {
        let raw = "```\n[1, 2, 3]\n```";
        let doc = extract_json_payload(raw).unwrap();
        assert_eq!(doc.value, serde_json::json!([1, 2, 3]));
    }

    #[test]
    fn fenced_block_wins_over_outside_json() {
        // Prose before the fence contains a brace-delimited aside that is
        // also valid JSON; the fenced payload must win.
        let raw = "Context: {\"draft\": true}\n```json\n{\"final\": true}\n```";
        let doc = extract_json_payload(raw).unwrap();
        assert_eq!(doc.value["final"], true);
    }

    #[test]
    fn array_payload() {
        let raw = "The personas are: [{\"name\": \"X\"}] as requested.";
        let doc = extract_json_payload(raw).unwrap();
        assert!(doc.value.is_array());
    }

    #[test]
    fn skips_false_openers_before_real_payload() {
        let raw = "Use {placeholders} carefully. {\"score\": 2}";
        let doc = extract_json_payload(raw).unwrap();
        assert_eq!(doc.value["score"], 2);
    }

    #[test]
    fn trailing_garbage_after_value_is_not_consumed() {
        let raw = r#"{"a": 1} trailing words"#;
        let doc = extract_json_payload(raw).unwrap();
        assert_eq!(doc.raw_span, r#"{"a": 1}"#);
    }

    #[test]
    fn no_payload_is_a_typed_error() {
        let err = extract_json_payload("I would rate this essay quite highly.").unwrap_err();
        assert!(matches!(err, PromptError::Extraction { .. }));
    }

    #[test]
    fn unterminated_json_is_rejected() {
        let err = extract_json_payload(r#"{"score": "#).unwrap_err();
        assert!(matches!(err, PromptError::Extraction { .. }));
    }

    #[test]
    fn bare_scalars_are_not_payloads() {
        assert!(extract_json_payload("42").is_err());
        assert!(extract_json_payload("\"just a string\"").is_err());
    }

    #[test]
    fn multibyte_text_before_payload() {
        let raw = "Évaluation — très bien ✓ {\"score\": 3}";
        let doc = extract_json_payload(raw).unwrap();
        assert_eq!(doc.value["score"], 3);
    }

    #[test]
    fn extraction_is_sound_reparse_reproduces_value() {
        // Hand-picked awkward cases; the property-level check lives in the
        // proptest below.
        for raw in [
            "x {\"a\": {\"b\": [1, 2]}} y",
            "```json\n{\"k\": \"v with ``` inside? no\"}\n```",
            "[[]]",
            "note { not json } but [0] is",
        ] {
            let doc = extract_json_payload(raw).unwrap();
            let reparsed: Value = serde_json::from_str(&doc.raw_span).unwrap();
            assert_eq!(reparsed, doc.value, "unsound extraction from {raw:?}");
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn json_value(depth: u32) -> impl Strategy<Value = Value> {
            let leaf = prop_oneof![
                Just(Value::Null),
                any::<bool>().prop_map(Value::from),
                (-1000i64..1000).prop_map(Value::from),
                "[a-z {}\\[\\]\"]{0,12}".prop_map(Value::from),
            ];
            leaf.prop_recursive(depth, 24, 4, |inner| {
                prop_oneof![
                    prop::collection::vec(inner.clone(), 0..4).prop_map(Value::from),
                    prop::collection::btree_map("[a-z_]{1,8}", inner, 0..4)
                        .prop_map(|m| Value::Object(m.into_iter().collect())),
                ]
            })
        }

        proptest! {
            /// Wrapping any JSON object/array in arbitrary prose never
            /// changes what extraction recovers, and the recovered span
            /// re-parses to the same value.
            #[test]
            fn embedded_value_is_recovered_exactly(
                value in json_value(3),
                prefix in "[A-Za-z0-9 .,:!\n]{0,40}",
                suffix in "[A-Za-z0-9 .,:!\n]{0,40}",
            ) {
                prop_assume!(value.is_object() || value.is_array());
                let raw = format!("{prefix}{value}{suffix}");
                let doc = extract_json_payload(&raw).unwrap();
                prop_assert_eq!(&doc.value, &value);
                let reparsed: Value = serde_json::from_str(&doc.raw_span).unwrap();
                prop_assert_eq!(reparsed, value);
            }
        }
    }
}
