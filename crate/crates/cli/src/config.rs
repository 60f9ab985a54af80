//! `--config` overlay: keys of a JSON object replace flag values.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use memgauge::study::StudyError;

pub fn overlay<T: Serialize + DeserializeOwned>(args: &T, path: &Path) -> Result<T, StudyError> {
    let bad = |m: String| StudyError::Config(format!("{}: {m}", path.display()));
    let text = std::fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    let Value::Object(overrides) = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))? else {
        return Err(bad("config must be a JSON object".into()));
    };
    let Value::Object(mut fields) = serde_json::to_value(args).map_err(|e| bad(e.to_string()))? else {
        unreachable!("argument structs serialize to objects");
    };
    for (key, value) in overrides {
        if !fields.contains_key(&key) {
            return Err(bad(format!("unknown key `{key}`")));
        }
        fields.insert(key, value);
    }
    serde_json::from_value(Value::Object(fields)).map_err(|e| bad(e.to_string()))
}

pub fn with_config<T, F>(args: T, config: F) -> Result<T, StudyError>
where
    T: Serialize + DeserializeOwned,
    F: Fn(&T) -> &Option<PathBuf>,
{
    match config(&args).clone() {
        Some(path) => overlay(&args, &path),
        None => Ok(args),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Serialize, Deserialize, Debug, PartialEq)]
    struct A {
        rate: f64,
        name: String,
        #[serde(skip)]
        config: Option<PathBuf>,
    }

    #[test]
    fn keys_override_flags() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"rate": 0.5}"#).unwrap();
        let a = A { rate: 0.1, name: "x".into(), config: Some(p.clone()) };
        let b = with_config(a, |a| &a.config).unwrap();
        assert_eq!((b.rate, b.name.as_str()), (0.5, "x"));

        std::fs::write(&p, r#"{"nope": 1}"#).unwrap();
        let a = A { rate: 0.1, name: "x".into(), config: Some(p.clone()) };
        assert_eq!(with_config(a, |a| &a.config).unwrap_err().exit_code(), 2);
        std::fs::write(&p, "[1]").unwrap();
        assert!(overlay(&A { rate: 0.0, name: String::new(), config: None }, &p).is_err());
    }
}
