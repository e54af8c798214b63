//! Pulls the answer object out of free-form model output.

use serde_json::{Map, Value};

/// The last top-level well-formed JSON object in `text`. Objects nested
/// inside an earlier match are not considered separately.
pub fn last_json_object(text: &str) -> Option<Map<String, Value>> {
    let mut found = None;
    let mut i = 0;
    while let Some(off) = text[i..].find('{') {
        let start = i + off;
        let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(m))) => {
                found = Some(m);
                i = start + stream.byte_offset();
            }
            _ => i = start + 1,
        }
    }
    found
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn takes_the_last_object() {
        let text = "First thoughts {\"a\": 1}. Then more. Final:\n```json\n{\"b\": [1, {\"c\": 2}]}\n```";
        let m = last_json_object(text).unwrap();
        assert_eq!(Value::Object(m), json!({"b": [1, {"c": 2}]}));
    }

    #[test]
    fn skips_broken_fragments() {
        assert_eq!(last_json_object("{\"a\": 1} then {broken"), Some(json!({"a": 1}).as_object().unwrap().clone()));
        assert_eq!(last_json_object("no json here"), None);
        assert_eq!(last_json_object("[1, 2]"), None);
        // braces inside strings do not confuse the scan
        let m = last_json_object("{\"s\": \"}{\"}").unwrap();
        assert_eq!(m["s"], json!("}{"));
    }
}
