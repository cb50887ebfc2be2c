use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

/// SHA-256 of the canonical JSON encoding of a request, hex encoded.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fingerprint(pub String);

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn fingerprint_value(value: &Value) -> Fingerprint {
    let bytes = canonical_json(value);
    Fingerprint(hex::encode(Sha256::digest(bytes.as_bytes())))
}

/// Compact JSON with object keys sorted at every level. Two encodings of the
/// same value produce the same text regardless of key order or whitespace.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).expect("string encodes"));
                out.push(':');
                write_canonical(&map[k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(v, out);
            }
            out.push(']');
        }
        // Numbers go through f64/i64 Display, so 0.2 and 0.20 agree.
        Value::Number(n) => match (n.as_i64(), n.as_u64(), n.as_f64()) {
            (Some(i), _, _) => out.push_str(&i.to_string()),
            (_, Some(u), _) => out.push_str(&u.to_string()),
            (_, _, Some(f)) if f.fract() == 0.0 && f.abs() < 1e15 => out.push_str(&format!("{}", f as i64)),
            (_, _, Some(f)) => out.push_str(&format!("{f:?}")),
            _ => out.push_str(&n.to_string()),
        },
        other => out.push_str(&other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ChatRequest;
    use proptest::prelude::*;

    const A: &str = r#"{"messages":[{"role":"system","content":"s"},{"role":"user","content":"u"}],
        "temperature":0.2,"max_tokens":64,"model_name":"m","request_tag":"code"}"#;
    const B: &str = r#"{ "request_tag" : "code", "model_name":"m", "max_tokens": 64,
        "temperature": 0.20,
        "messages":[{"content":"s","role":"system"},{"content":"u","role":"user"}]}"#;

    #[test]
    fn key_order_and_whitespace_do_not_matter() {
        let a: ChatRequest = serde_json::from_str(A).unwrap();
        let b: ChatRequest = serde_json::from_str(B).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        // The raw wire values canonicalize to the same bytes too.
        let va: Value = serde_json::from_str(A).unwrap();
        let vb: Value = serde_json::from_str(B).unwrap();
        assert_eq!(canonical_json(&va), canonical_json(&vb));
        assert_eq!(fingerprint_value(&va), fingerprint_value(&vb));
    }

    #[test]
    fn integral_floats_match_integers() {
        let a: Value = serde_json::from_str(r#"{"t":1}"#).unwrap();
        let b: Value = serde_json::from_str(r#"{"t":1.0}"#).unwrap();
        assert_eq!(canonical_json(&a), canonical_json(&b));
    }

    proptest! {
        #[test]
        fn fingerprint_tracks_semantic_fields(
            content in ".{0,40}",
            other in ".{0,40}",
            t in 0.0f64..2.0,
            model in "[a-z]{1,8}",
        ) {
            let base = ChatRequest {
                messages: vec![crate::llm::ChatMessage::system("s"), crate::llm::ChatMessage::user(content.clone())],
                temperature: t,
                max_tokens: 64,
                model_name: model.clone(),
                request_tag: "code".into(),
                sample: 0,
            };
            let fp = base.fingerprint();
            let reencoded: ChatRequest = serde_json::from_str(&serde_json::to_string_pretty(&base).unwrap()).unwrap();
            prop_assert_eq!(&reencoded.fingerprint(), &fp);

            let mut c = base.clone();
            c.messages[1].content = other.clone();
            prop_assert_eq!(c.fingerprint() == fp, other == content);

            let mut c = base.clone();
            c.temperature = t + 0.5;
            prop_assert_ne!(c.fingerprint(), fp.clone());

            let mut c = base.clone();
            c.model_name = format!("{model}x");
            prop_assert_ne!(c.fingerprint(), fp);
        }
    }
}
