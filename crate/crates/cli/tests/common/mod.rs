#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nsqkd"))
}

pub fn nsqkd(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

pub fn schema_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas").join(format!("{name}.schema.json"))
}

pub fn load_schema(name: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(schema_path(name)).unwrap()).unwrap()
}

/// Validates `doc` against one of the shipped schemas. Returns every error found.
pub fn validate(name: &str, doc: &Value) -> Vec<String> {
    let schema = load_schema(name);
    let mut errors = Vec::new();
    check(&schema, &schema, doc, "$", &mut errors);
    errors
}

pub fn assert_valid(name: &str, doc: &Value) {
    let errors = validate(name, doc);
    assert!(errors.is_empty(), "{name} schema violations:\n{}", errors.join("\n"));
}

fn type_matches(t: &str, v: &Value) -> bool {
    match t {
        "object" => v.is_object(),
        "array" => v.is_array(),
        "string" => v.is_string(),
        "boolean" => v.is_boolean(),
        "null" => v.is_null(),
        "number" => v.is_number(),
        "integer" => v.is_i64() || v.is_u64() || v.as_f64().is_some_and(|f| f.fract() == 0.0),
        other => panic!("unsupported schema type {other}"),
    }
}

/// The subset of JSON Schema used by the shipped schemas. Unknown keywords
/// panic so a schema edit cannot silently outgrow the checker.
fn check(root: &Value, schema: &Value, v: &Value, path: &str, errors: &mut Vec<String>) {
    let obj = schema.as_object().expect("schema nodes are objects");
    for (key, rule) in obj {
        match key.as_str() {
            "$schema" | "title" | "description" | "default" | "$defs" => {}
            "$ref" => {
                let name = rule.as_str().unwrap().strip_prefix("#/$defs/").expect("local refs only");
                check(root, &root["$defs"][name], v, path, errors);
            }
            "type" => {
                let ok = match rule {
                    Value::String(t) => type_matches(t, v),
                    Value::Array(ts) => ts.iter().any(|t| type_matches(t.as_str().unwrap(), v)),
                    _ => panic!("bad type keyword"),
                };
                if !ok {
                    errors.push(format!("{path}: expected type {rule}, found {v}"));
                }
            }
            "const" => {
                if v != rule {
                    errors.push(format!("{path}: expected {rule}, found {v}"));
                }
            }
            "enum" => {
                if !rule.as_array().unwrap().contains(v) {
                    errors.push(format!("{path}: {v} not in {rule}"));
                }
            }
            "minimum" => {
                if let (Some(x), Some(m)) = (v.as_f64(), rule.as_f64()) {
                    if x < m {
                        errors.push(format!("{path}: {x} < minimum {m}"));
                    }
                }
            }
            "maximum" => {
                if let (Some(x), Some(m)) = (v.as_f64(), rule.as_f64()) {
                    if x > m {
                        errors.push(format!("{path}: {x} > maximum {m}"));
                    }
                }
            }
            "minItems" | "maxItems" => {
                if let Some(a) = v.as_array() {
                    let n = rule.as_u64().unwrap() as usize;
                    if (key == "minItems" && a.len() < n) || (key == "maxItems" && a.len() > n) {
                        errors.push(format!("{path}: {} items violates {key} {n}", a.len()));
                    }
                }
            }
            "items" => {
                if let Some(a) = v.as_array() {
                    for (i, item) in a.iter().enumerate() {
                        check(root, rule, item, &format!("{path}[{i}]"), errors);
                    }
                }
            }
            "required" => {
                if let Some(o) = v.as_object() {
                    for k in rule.as_array().unwrap() {
                        if !o.contains_key(k.as_str().unwrap()) {
                            errors.push(format!("{path}: missing required {k}"));
                        }
                    }
                }
            }
            "properties" => {
                if let Some(o) = v.as_object() {
                    for (k, sub) in rule.as_object().unwrap() {
                        if let Some(child) = o.get(k) {
                            check(root, sub, child, &format!("{path}.{k}"), errors);
                        }
                    }
                }
            }
            "additionalProperties" => {
                assert_eq!(rule, &Value::Bool(false), "only additionalProperties: false is supported");
                if let Some(o) = v.as_object() {
                    let known = obj.get("properties").and_then(Value::as_object);
                    for k in o.keys() {
                        if !known.is_some_and(|p| p.contains_key(k)) {
                            errors.push(format!("{path}: unexpected property {k}"));
                        }
                    }
                }
            }
            other => panic!("unsupported schema keyword {other}"),
        }
    }
}
