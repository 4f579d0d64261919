//! Canonical JSON: UTF-8, object keys sorted, compact separators, floats in
//! shortest round-trip form. Every file and HTTP body the workbench emits
//! goes through here so that equal results are equal bytes.

use serde::Serialize;
use serde_json::Value;

pub fn to_string<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let value = serde_json::to_value(value)?;
    let mut out = String::new();
    write_value(&value, &mut out);
    Ok(out)
}

/// Canonical form with a trailing newline, as written to disk.
pub fn to_file_string<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let mut s = to_string(value)?;
    s.push('\n');
    Ok(s)
}

fn write_value(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            // sort explicitly: serde_json may be built with `preserve_order`
            let mut entries: Vec<(&String, &Value)> = map.iter().collect();
            entries.sort_by(|a, b| a.0.cmp(b.0));
            out.push('{');
            for (i, (k, v)) in entries.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_value(v, out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(v, out);
            }
            out.push(']');
        }
        scalar => out.push_str(&scalar.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn keys_are_sorted_recursively() {
        let v = json!({"b": 1, "a": {"z": [1.5, {"y": 0, "x": null}], "c": "s"}});
        assert_eq!(
            to_string(&v).unwrap(),
            r#"{"a":{"c":"s","z":[1.5,{"x":null,"y":0}]},"b":1}"#
        );
    }

    #[test]
    fn floats_use_shortest_round_trip() {
        let v = json!([0.1, 1.0, 2.0 * 4f64.ln(), 1e-12]);
        let s = to_string(&v).unwrap();
        assert_eq!(s, "[0.1,1.0,2.772588722239781,1e-12]");
        let back: Vec<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back[2], 2.0 * 4f64.ln());
    }
}
