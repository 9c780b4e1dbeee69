use std::collections::BTreeMap;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;

pub const SCHEMA_VERSION: u32 = 1;
pub const SIGNIFICANT_DIGITS: usize = 12;

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct WallClock {
    pub started_unix_ms: u128,
    pub elapsed_ms: f64,
}

/// Everything a command produced. Only `wall_clock` varies between runs with
/// the same inputs and seed.
#[derive(Debug, Clone, Serialize)]
pub struct ReportDocument {
    pub schema_version: u32,
    pub command: String,
    pub argv: Vec<String>,
    pub toolkit_version: String,
    pub inputs: BTreeMap<String, InputDigest>,
    pub parameters: Value,
    pub results: Value,
    pub warnings: Vec<String>,
    pub seed: Option<u64>,
    pub wall_clock: WallClock,
}

pub struct Clock {
    started: SystemTime,
    instant: Instant,
}

impl Clock {
    pub fn start() -> Self {
        Self {
            started: SystemTime::now(),
            instant: Instant::now(),
        }
    }

    pub fn stop(&self) -> WallClock {
        WallClock {
            started_unix_ms: self.started.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis()),
            elapsed_ms: self.instant.elapsed().as_secs_f64() * 1e3,
        }
    }
}

/// `x` rounded to 12 significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x).parse().unwrap_or(x)
}

/// Rounds every float in a JSON tree; integers are left alone.
pub fn round_floats(value: Value) -> Value {
    match value {
        Value::Number(n) if n.is_f64() => {
            let x = round_sig(n.as_f64().unwrap_or_default());
            serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
        }
        Value::Array(items) => Value::Array(items.into_iter().map(round_floats).collect()),
        Value::Object(map) => Value::Object(map.into_iter().map(|(k, v)| (k, round_floats(v))).collect()),
        other => other,
    }
}

pub fn format_number(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let a = x.abs();
    if !(1e-4..1e12).contains(&a) {
        format!("{:e}", round_sig(x))
    } else {
        round_sig(x).to_string()
    }
}

fn flatten(prefix: &str, value: &Value, out: &mut Vec<(String, String)>) {
    let key = |k: &str| {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}.{k}")
        }
    };
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                flatten(&key(k), v, out);
            }
        }
        Value::Array(items) if items.iter().any(|v| v.is_object() || v.is_array()) => {
            for (i, v) in items.iter().enumerate() {
                flatten(&key(&i.to_string()), v, out);
            }
        }
        Value::Array(items) => {
            let parts: Vec<String> = items.iter().map(scalar).collect();
            out.push((prefix.to_string(), format!("[{}]", parts.join(", "))));
        }
        other => out.push((prefix.to_string(), scalar(other))),
    }
}

fn scalar(v: &Value) -> String {
    match v {
        Value::Number(n) => match n.as_f64() {
            Some(x) if n.is_f64() => format_number(x),
            _ => n.to_string(),
        },
        Value::String(s) => s.clone(),
        Value::Null => "-".into(),
        other => other.to_string(),
    }
}

impl ReportDocument {
    pub fn to_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("report serialises");
        if let Value::Object(map) = &mut value {
            for key in ["parameters", "results"] {
                if let Some(v) = map.remove(key) {
                    map.insert(key.to_string(), round_floats(v));
                }
            }
        }
        let mut out = serde_json::to_string_pretty(&value).expect("report serialises");
        out.push('\n');
        out
    }

    pub fn to_table(&self) -> String {
        let mut rows = Vec::new();
        rows.push(("command".to_string(), self.command.clone()));
        if let Some(seed) = self.seed {
            rows.push(("seed".into(), seed.to_string()));
        }
        for (role, input) in &self.inputs {
            rows.push((
                format!("input.{role}"),
                format!("{} (sha256 {})", input.path, &input.sha256[..12]),
            ));
        }
        flatten("parameters", &self.parameters, &mut rows);
        flatten("results", &self.results, &mut rows);
        for w in &self.warnings {
            rows.push(("warning".into(), w.clone()));
        }
        let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            out.push_str(&format!("{k:<width$}  {v}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_keeps_twelve_digits() {
        assert_eq!(round_sig(0.283_874_410_521_938), 0.283_874_410_522);
        assert_eq!(round_sig(1.0 / 3.0), 0.333_333_333_333);
        assert_eq!(round_sig(4.248_354_255_291_589e-18), 4.248_354_255_29e-18);
        assert_eq!(round_sig(0.0), 0.0);
    }

    #[test]
    fn integers_are_untouched() {
        let v = round_floats(serde_json::json!({"n": 123456789012345u64, "x": 0.1234567890123456}));
        assert_eq!(v["n"], 123456789012345u64);
        assert_eq!(v["x"], 0.123456789012);
    }

    #[test]
    fn number_formatting() {
        assert_eq!(format_number(0.5), "0.5");
        assert_eq!(format_number(4.248_354_255_291_589e-18), "4.24835425529e-18");
        assert_eq!(format_number(0.0), "0");
    }
}
