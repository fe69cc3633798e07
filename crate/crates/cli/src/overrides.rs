//! `key=value` overrides applied to a spec's JSON before it is deserialized.

use serde_json::{Map, Value};

/// Top-level keys of an experiment spec.
pub const SPEC_KEYS: &[&str] = &[
    "problem",
    "discount",
    "algorithms",
    "n_iterations",
    "n_runs",
    "master_seed",
    "checkpoints",
    "start_state",
    "theta0",
    "output_path",
    "dump_runs",
    "strict_assumptions",
    "mixing_truncation",
    "mixing_tolerance",
    "delta",
];

/// A problem with the user's input, reported with exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Candidates within a small edit distance of `key`, closest first.
pub fn did_you_mean<'a>(key: &str, candidates: impl IntoIterator<Item = &'a str>) -> Vec<&'a str> {
    let mut scored: Vec<(f64, &str)> = candidates
        .into_iter()
        .map(|c| (strsim::jaro_winkler(key, c), c))
        .filter(|(s, _)| *s > 0.8)
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    scored.into_iter().map(|(_, c)| c).collect()
}

fn unknown_key(key: &str, candidates: &[&str]) -> UsageError {
    let hints = did_you_mean(key, candidates.iter().copied());
    let mut msg = format!("unknown key `{key}`");
    if !hints.is_empty() {
        msg.push_str(&format!("; did you mean {}?", hints.iter().map(|h| format!("`{h}`")).collect::<Vec<_>>().join(" or ")));
    }
    msg.push_str(&format!(" (valid keys: {})", candidates.join(", ")));
    UsageError(msg)
}

/// Reject top-level keys that are not spec fields.
pub fn check_keys(spec: &Value) -> Result<(), UsageError> {
    let obj = spec
        .as_object()
        .ok_or_else(|| UsageError("spec must be a JSON object".into()))?;
    for key in obj.keys() {
        if !SPEC_KEYS.contains(&key.as_str()) {
            return Err(unknown_key(key, SPEC_KEYS));
        }
    }
    Ok(())
}

/// Apply one `path=value` override. `path` is a top-level key, or a dotted
/// path into an existing object (`problem.seed`). The value is parsed as JSON
/// and taken as a plain string if that fails.
pub fn apply(spec: &mut Value, assignment: &str) -> Result<(), UsageError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| UsageError(format!("override `{assignment}` is not of the form key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut parts = path.split('.').peekable();
    let first = parts.next().unwrap_or_default();
    if !SPEC_KEYS.contains(&first) {
        return Err(unknown_key(first, SPEC_KEYS));
    }
    let mut cursor: &mut Map<String, Value> = spec
        .as_object_mut()
        .ok_or_else(|| UsageError("spec must be a JSON object".into()))?;
    let mut key = first.to_string();
    while let Some(next) = parts.next() {
        let child = cursor
            .get_mut(&key)
            .and_then(Value::as_object_mut)
            .ok_or_else(|| UsageError(format!("`{key}` is not an object in this spec")))?;
        if parts.peek().is_none() && !child.contains_key(next) {
            let existing: Vec<&str> = child.keys().map(String::as_str).collect();
            return Err(unknown_key(next, &existing));
        }
        cursor = child;
        key = next.to_string();
    }
    cursor.insert(key, value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn top_level_and_nested_overrides() {
        let mut v = json!({"n_runs": 50, "problem": {"kind": "example2", "seed": 1}});
        apply(&mut v, "n_runs=1").unwrap();
        apply(&mut v, "problem.seed=9").unwrap();
        apply(&mut v, "output_path=out/trace.csv").unwrap();
        assert_eq!(v["n_runs"], json!(1));
        assert_eq!(v["problem"]["seed"], json!(9));
        assert_eq!(v["output_path"], json!("out/trace.csv"));
    }

    #[test]
    fn unknown_keys_get_suggestions() {
        let mut v = json!({"n_runs": 50});
        let err = apply(&mut v, "n_runz=3").unwrap_err().0;
        assert!(err.contains("did you mean `n_runs`"), "{err}");
        let err = check_keys(&json!({"mastr_seed": 1})).unwrap_err().0;
        assert!(err.contains("`master_seed`"), "{err}");
        assert!(apply(&mut v, "n_runs").is_err());
    }
}
