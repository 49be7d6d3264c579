use serde_json::Value;

use super::GatewayError;

/// Parsed value of the last well-formed top-level JSON object in `text`.
///
/// Surrounding prose and code fences are ignored. Objects nested inside an
/// earlier object are not candidates on their own.
pub fn extract_json_block(text: &str) -> Result<Value, GatewayError> {
    scan(text, false)
        .ok_or_else(|| GatewayError::malformed(format!("no JSON object found in reply: {}", preview(text))))
}

/// Like [`extract_json_block`] but arrays count as candidates too.
pub fn extract_json_any(text: &str) -> Result<Value, GatewayError> {
    scan(text, true)
        .ok_or_else(|| GatewayError::malformed(format!("no JSON value found in reply: {}", preview(text))))
}

fn scan(text: &str, allow_arrays: bool) -> Option<Value> {
    let bytes = text.as_bytes();
    let mut last = None;
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if b == b'{' || (allow_arrays && b == b'[') {
            let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
            if let Some(Ok(value)) = stream.next() {
                let consumed = stream.byte_offset();
                last = Some(value);
                i += consumed.max(1);
                continue;
            }
        }
        i += 1;
    }
    last
}

fn preview(text: &str) -> String {
    let mut p: String = text.chars().take(120).collect();
    if text.chars().count() > 120 {
        p.push('…');
    }
    format!("{p:?}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::GatewayErrorKind;
    use proptest::prelude::*;
    use serde_json::json;

    #[test]
    fn fenced_object() {
        let v = extract_json_block("Here you go:\n```json\n{\"a\":1}\n```").unwrap();
        assert_eq!(v, json!({"a": 1}));
    }

    #[test]
    fn last_object_wins() {
        let v = extract_json_block("{\"a\":1} trailing {\"a\":2}").unwrap();
        assert_eq!(v, json!({"a": 2}));
    }

    #[test]
    fn nested_objects_are_not_split() {
        let v = extract_json_block("x {\"a\":{\"b\":1}} y").unwrap();
        assert_eq!(v, json!({"a": {"b": 1}}));
    }

    #[test]
    fn absence_is_malformed() {
        let err = extract_json_block("no json here").unwrap_err();
        assert_eq!(err.kind, GatewayErrorKind::MalformedResponse);
        assert!(extract_json_block("{broken").is_err());
    }

    #[test]
    fn arrays_only_in_any_mode() {
        assert!(extract_json_block("[1,2]").is_err());
        assert_eq!(extract_json_any("roles: [] ok").unwrap(), json!([]));
        assert_eq!(extract_json_any("[{\"a\":1}]").unwrap(), json!([{"a": 1}]));
    }

    fn arb_json() -> impl Strategy<Value = Value> {
        let leaf = prop_oneof![
            Just(Value::Null),
            any::<bool>().prop_map(Value::Bool),
            any::<i64>().prop_map(|n| json!(n)),
            (-8000i32..8000).prop_map(|n| json!(f64::from(n) / 8.0)),
            ".*".prop_map(Value::String),
        ];
        leaf.prop_recursive(3, 24, 4, |inner| {
            prop_oneof![
                proptest::collection::vec(inner.clone(), 0..4).prop_map(Value::Array),
                proptest::collection::btree_map("[a-z_]{1,6}", inner, 0..4)
                    .prop_map(|m| Value::Object(m.into_iter().collect())),
            ]
        })
    }

    fn arb_object() -> impl Strategy<Value = Value> {
        proptest::collection::btree_map("[a-zA-Z_ ]{1,8}", arb_json(), 0..5)
            .prop_map(|m| Value::Object(m.into_iter().collect()))
    }

    proptest! {
        #[test]
        fn embedded_object_round_trips(
            v in arb_object(),
            before in "[^{}\\[\\]]{0,40}",
            after in "[^{}\\[\\]]{0,40}",
            pretty in any::<bool>(),
        ) {
            let rendered = if pretty { serde_json::to_string_pretty(&v).unwrap() } else { v.to_string() };
            let text = format!("{before}{rendered}{after}");
            prop_assert_eq!(extract_json_block(&text).unwrap(), v);
        }
    }
}
