//! Flat `key = value` config files.
//!
//! One assignment per line, `#` starts a comment outside double quotes.
//! Values are typed by their literal: `true`/`false`, integers, reals, and
//! strings (bare or double-quoted). Integers are accepted where reals are
//! expected. Keys not declared for the command are rejected.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(i64),
    Real(f64),
    Str(String),
    Bool(bool),
}

impl Value {
    fn from_literal(raw: &str) -> Value {
        if let Some(inner) = raw.strip_prefix('"').and_then(|r| r.strip_suffix('"')) {
            return Value::Str(inner.to_string());
        }
        match raw {
            "true" => return Value::Bool(true),
            "false" => return Value::Bool(false),
            _ => {}
        }
        if let Ok(i) = raw.parse::<i64>() {
            return Value::Int(i);
        }
        match raw.parse::<f64>() {
            Ok(r) => Value::Real(r),
            Err(_) => Value::Str(raw.to_string()),
        }
    }

    fn kind(&self) -> Kind {
        match self {
            Value::Int(_) => Kind::Int,
            Value::Real(_) => Kind::Real,
            Value::Str(_) => Kind::Str,
            Value::Bool(_) => Kind::Bool,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Int,
    Real,
    Str,
    Bool,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kind::Int => "int",
            Kind::Real => "real",
            Kind::Str => "string",
            Kind::Bool => "bool",
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct KeySpec {
    pub name: &'static str,
    pub kind: Kind,
    pub help: &'static str,
}

const fn key(name: &'static str, kind: Kind, help: &'static str) -> KeySpec {
    KeySpec { name, kind, help }
}

pub const VERIFY_KEYS: &[KeySpec] = &[
    key("seed", Kind::Int, "root seed for every random instance (default 0)"),
    key("cases", Kind::Int, "instances per manifold check (default 1000)"),
    key("grad_cases", Kind::Int, "instances per gradient check (default 50)"),
];

pub const RAYLEIGH_KEYS: &[KeySpec] = &[
    key("n", Kind::Int, "ambient dimension (default 8; ignored with diag)"),
    key("p", Kind::Int, "subspace dimension (default 3)"),
    key("steps", Kind::Int, "optimizer steps (default 10000)"),
    key("gamma", Kind::Real, "step size (default 0.01)"),
    key("optimizer", Kind::Str, "rsgd or radam (default rsgd)"),
    key("seed", Kind::Int, "seed for A and the starting point (default 0)"),
    key(
        "tol",
        Kind::Real,
        "convergence tolerance on the objective gap (default 1e-6)",
    ),
    key(
        "diag",
        Kind::Str,
        "comma separated diagonal of A, e.g. \"5,3,1\" (default: random symmetric A)",
    ),
];

pub const DECOUPLE_KEYS: &[KeySpec] = &[
    key("channels", Kind::Int, "feature channels (default 16)"),
    key("positions", Kind::Int, "spatial positions per feature map (default 8)"),
    key(
        "related",
        Kind::Int,
        "leading channels carrying the domain signal (default 4)",
    ),
    key("samples", Kind::Int, "samples per domain (default 512)"),
    key(
        "mixing",
        Kind::Real,
        "cross-channel leakage strength in [0, 1) (default 0.1)",
    ),
    key("noise", Kind::Real, "additive Gaussian noise (default 0.05)"),
    key("signal", Kind::Real, "domain offset of related channels (default 1.0)"),
    key("seed", Kind::Int, "root seed (default 0)"),
    key("epochs", Kind::Int, "training epochs (default 50)"),
    key("batch_size", Kind::Int, "samples per batch (default 32)"),
    key("layers", Kind::Int, "hidden layers of the projection head (default 2)"),
    key(
        "optimizer",
        Kind::Str,
        "rsgd or radam for the constrained head (default rsgd)",
    ),
    key(
        "lr",
        Kind::Real,
        "head learning rate, held then decayed to zero (default 2e-4)",
    ),
    key("dwfc_lr", Kind::Real, "classifier Adam learning rate (default 0.01)"),
    key(
        "penalty_lambda",
        Kind::Real,
        "weight of the orthogonality penalty arm (default 1.0)",
    ),
    key("tau", Kind::Real, "contrastive temperature (default 0.07)"),
    key(
        "detach_weights",
        Kind::Bool,
        "stop gradients into the heat vectors (default true)",
    ),
    key("update", Kind::Str, "joint or alternating (default joint)"),
    key(
        "arms",
        Kind::Str,
        "comma separated subset of omlp,penalty,unconstrained (default all)",
    ),
];

/// Renders a key table for `--help`.
pub fn describe(keys: &[KeySpec]) -> String {
    let width = keys.iter().map(|k| k.name.len()).max().unwrap_or(0);
    keys.iter()
        .map(|k| format!("  {:width$}  {:6}  {}", k.name, k.kind.to_string(), k.help))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, Value>,
}

fn strip_comment(line: &str) -> &str {
    let mut quoted = false;
    for (i, ch) in line.char_indices() {
        match ch {
            '"' => quoted = !quoted,
            '#' if !quoted => return &line[..i],
            _ => {}
        }
    }
    line
}

impl RunConfig {
    pub fn parse(text: &str, keys: &[KeySpec]) -> CliResult<Self> {
        let mut values = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::Syntax {
                    line: line_no,
                    msg: format!("expected `key = value`, got {line:?}"),
                });
            };
            let (k, v) = (k.trim(), v.trim());
            let spec = keys.iter().find(|s| s.name == k).ok_or_else(|| CliError::UnknownKey {
                key: k.to_string(),
                line: line_no,
            })?;
            if v.is_empty() {
                return Err(CliError::BadValue {
                    key: k.into(),
                    msg: "missing value".into(),
                });
            }
            let value = coerce(spec, Value::from_literal(v))?;
            if values.insert(k.to_string(), value).is_some() {
                return Err(CliError::BadValue {
                    key: k.into(),
                    msg: format!("set twice (line {line_no})"),
                });
            }
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path, keys: &[KeySpec]) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, keys)
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.values.get(key)
    }

    pub fn usize(&self, key: &str) -> CliResult<Option<usize>> {
        match self.get(key) {
            Some(Value::Int(i)) => usize::try_from(*i).map(Some).map_err(|_| CliError::BadValue {
                key: key.into(),
                msg: format!("must be >= 0, got {i}"),
            }),
            _ => Ok(None),
        }
    }

    pub fn u64(&self, key: &str) -> CliResult<Option<u64>> {
        Ok(self.usize(key)?.map(|v| v as u64))
    }

    pub fn real(&self, key: &str) -> Option<f64> {
        match self.get(key) {
            Some(Value::Real(r)) => Some(*r),
            Some(Value::Int(i)) => Some(*i as f64),
            _ => None,
        }
    }

    pub fn str(&self, key: &str) -> Option<&str> {
        match self.get(key) {
            Some(Value::Str(s)) => Some(s),
            _ => None,
        }
    }

    pub fn bool(&self, key: &str) -> Option<bool> {
        match self.get(key) {
            Some(Value::Bool(b)) => Some(*b),
            _ => None,
        }
    }
}

fn coerce(spec: &KeySpec, value: Value) -> CliResult<Value> {
    match (spec.kind, value) {
        (Kind::Real, Value::Int(i)) => Ok(Value::Real(i as f64)),
        // A bare string key may look numeric, e.g. `diag = 5`.
        (Kind::Str, Value::Int(i)) => Ok(Value::Str(i.to_string())),
        (Kind::Str, Value::Real(r)) => Ok(Value::Str(r.to_string())),
        (want, v) if v.kind() == want => Ok(v),
        (want, v) => Err(CliError::BadValue {
            key: spec.name.to_string(),
            msg: format!("expected {want}, got {} {v:?}", v.kind()),
        }),
    }
}

/// Maps a parse failure from the core crate onto the offending key.
pub fn key_error(key: &str, e: impl fmt::Display) -> CliError {
    CliError::BadValue {
        key: key.into(),
        msg: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn typed_values_and_comments() {
        let text = "# header\nseed = 3\nlr = 1e-3 # trailing\nepochs=5\noptimizer = \"radam\"\nupdate = joint\ndetach_weights = false\n\n";
        let c = RunConfig::parse(text, DECOUPLE_KEYS).unwrap();
        assert_eq!(c.u64("seed").unwrap(), Some(3));
        assert_eq!(c.real("lr"), Some(1e-3));
        assert_eq!(c.usize("epochs").unwrap(), Some(5));
        assert_eq!(c.str("optimizer"), Some("radam"));
        assert_eq!(c.str("update"), Some("joint"));
        assert_eq!(c.bool("detach_weights"), Some(false));
        assert_eq!(c.get("channels"), None);
    }

    #[test]
    fn int_accepted_for_real() {
        let c = RunConfig::parse("mixing = 0\n", DECOUPLE_KEYS).unwrap();
        assert_eq!(c.real("mixing"), Some(0.0));
    }

    #[test]
    fn hash_inside_quotes_kept() {
        let c = RunConfig::parse("diag = \"5,3#,1\"", RAYLEIGH_KEYS).unwrap();
        assert_eq!(c.str("diag"), Some("5,3#,1"));
    }

    #[test]
    fn unknown_key_named() {
        let e = RunConfig::parse("seed = 1\nlearning_rate = 0.1\n", DECOUPLE_KEYS).unwrap_err();
        assert!(matches!(&e, CliError::UnknownKey { key, line: 2 } if key == "learning_rate"));
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("learning_rate"));
    }

    #[test]
    fn type_mismatch_rejected() {
        for text in [
            "epochs = 1.5",
            "epochs = ten",
            "detach_weights = 1",
            "lr = yes",
            "seed = -1",
        ] {
            let e = RunConfig::parse(text, DECOUPLE_KEYS).and_then(|c| c.usize("seed").map(|_| c));
            let e = e.unwrap_err();
            assert!(matches!(e, CliError::BadValue { .. }), "{text}: {e:?}");
            assert_eq!(e.exit_code(), 2);
        }
    }

    #[test]
    fn syntax_and_duplicates() {
        assert!(matches!(
            RunConfig::parse("seed 3", DECOUPLE_KEYS),
            Err(CliError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            RunConfig::parse("seed = 1\nseed = 2", DECOUPLE_KEYS),
            Err(CliError::BadValue { .. })
        ));
        assert!(matches!(
            RunConfig::parse("seed =", DECOUPLE_KEYS),
            Err(CliError::BadValue { .. })
        ));
    }

    #[test]
    fn help_lists_every_key() {
        let text = describe(DECOUPLE_KEYS);
        for k in DECOUPLE_KEYS {
            assert!(text.contains(k.name));
        }
    }
}
