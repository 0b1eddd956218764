//! `key=value` overrides on a serialized config tree.
//!
//! A key is either a dotted path from the root (`task.train_fraction`,
//! `phases.0.optimizer.learning_rate`) or a bare name that occurs as a leaf
//! exactly once anywhere in the tree (`train_fraction`).

use toml::Value;

use crate::error::{Error, Result};

/// Splits `key=value`, parsing the value as a TOML literal and falling back
/// to a plain string.
pub fn parse_assignment(text: &str) -> Result<(String, Value)> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override '{text}' is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::config(format!("override '{text}' has an empty key")));
    }
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed table has the key"),
        Err(_) => Value::String(raw.to_string()),
    };
    Ok((key.to_string(), value))
}

fn child<'a>(v: &'a mut Value, seg: &str) -> Option<&'a mut Value> {
    match v {
        Value::Table(t) => t.get_mut(seg),
        Value::Array(a) => seg.parse::<usize>().ok().and_then(|i| a.get_mut(i)),
        _ => None,
    }
}

fn child_ref<'a>(v: &'a Value, seg: &str) -> Option<&'a Value> {
    match v {
        Value::Table(t) => t.get(seg),
        Value::Array(a) => seg.parse::<usize>().ok().and_then(|i| a.get(i)),
        _ => None,
    }
}

fn leaf_paths(v: &Value, name: &str, prefix: &mut Vec<String>, out: &mut Vec<Vec<String>>) {
    match v {
        Value::Table(t) => {
            for (k, inner) in t {
                prefix.push(k.clone());
                if k == name {
                    out.push(prefix.clone());
                }
                leaf_paths(inner, name, prefix, out);
                prefix.pop();
            }
        }
        Value::Array(a) => {
            for (i, inner) in a.iter().enumerate() {
                prefix.push(i.to_string());
                leaf_paths(inner, name, prefix, out);
                prefix.pop();
            }
        }
        _ => {}
    }
}

/// Resolves `key` against `root` to a full path. A dotted path must exist
/// up to its parent; the final key may be new, and typed deserialization
/// later rejects names the config does not know.
pub fn resolve_path(root: &Value, key: &str) -> Result<Vec<String>> {
    let segs: Vec<String> = key.split('.').map(str::to_string).collect();
    if segs.iter().any(String::is_empty) {
        return Err(Error::config(format!("malformed key '{key}'")));
    }
    let mut cur = root;
    for seg in &segs[..segs.len() - 1] {
        cur = child_ref(cur, seg).ok_or_else(|| Error::config(format!("unknown config key '{key}'")))?;
    }
    let last = &segs[segs.len() - 1];
    let exists = child_ref(cur, last).is_some();
    if exists || segs.len() > 1 {
        if !matches!(cur, Value::Table(_)) && !exists {
            return Err(Error::config(format!("unknown config key '{key}'")));
        }
        return Ok(segs);
    }
    let mut found = Vec::new();
    leaf_paths(root, last, &mut Vec::new(), &mut found);
    match found.len() {
        0 => Err(Error::config(format!("unknown config key '{key}'"))),
        1 => Ok(found.pop().expect("one match")),
        _ => {
            let names: Vec<String> = found.iter().map(|p| p.join(".")).collect();
            Err(Error::config(format!(
                "key '{key}' is ambiguous, use one of: {}",
                names.join(", ")
            )))
        }
    }
}

/// Applies one `key=value` override in place and returns the full path
/// that was set.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<String> {
    let (key, value) = parse_assignment(assignment)?;
    let path = resolve_path(root, &key)?;
    let (last, parents) = path.split_last().expect("nonempty path");
    let mut cur = &mut *root;
    for seg in parents {
        cur = child(cur, seg).expect("path was resolved");
    }
    match cur {
        Value::Table(t) => {
            t.insert(last.clone(), value);
        }
        Value::Array(a) => {
            let i: usize = last.parse().expect("resolved array index");
            a[i] = value;
        }
        _ => return Err(Error::config(format!("cannot set '{key}'"))),
    }
    Ok(path.join("."))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tree() -> Value {
        toml::from_str(
            r#"
            seeds = [0]
            [task]
            kind = "modular_addition"
            train_fraction = 0.9
            [[phases]]
            iterations = 10
            [phases.optimizer]
            learning_rate = 0.1
            [[phases]]
            iterations = 5
            [phases.optimizer]
            learning_rate = 0.2
            "#,
        )
        .unwrap()
    }

    #[test]
    fn dotted_and_leaf_keys() {
        let mut t = tree();
        assert_eq!(apply_override(&mut t, "train_fraction=0.5").unwrap(), "task.train_fraction");
        assert_eq!(t["task"]["train_fraction"].as_float(), Some(0.5));
        apply_override(&mut t, "phases.1.optimizer.learning_rate=3e-4").unwrap();
        assert_eq!(t["phases"][1]["optimizer"]["learning_rate"].as_float(), Some(3e-4));
        apply_override(&mut t, "seeds=[1, 2]").unwrap();
        assert_eq!(t["seeds"].as_array().unwrap().len(), 2);
        apply_override(&mut t, "task.kind=sine_sum_1d").unwrap();
        assert_eq!(t["task"]["kind"].as_str(), Some("sine_sum_1d"));
    }

    #[test]
    fn bad_keys() {
        let mut t = tree();
        assert!(apply_override(&mut t, "nonsense=1").is_err());
        assert!(apply_override(&mut t, "learning_rate=1").unwrap_err().to_string().contains("ambiguous"));
        assert!(apply_override(&mut t, "phases.7.iterations=1").is_err());
        assert!(apply_override(&mut t, "no_equals_sign").is_err());
    }
}
