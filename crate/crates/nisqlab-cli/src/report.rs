//! The versioned run report and its serialization.

use serde::Serialize;
use serde_json::Value;

use nisqlab::error::{Error, Result};

pub const REPORT_VERSION: u32 = 1;

/// The envelope written by every command. `results` is bit-reproducible for
/// a fixed seed; `wall_ms` is informational and excluded from that
/// guarantee.
#[derive(Debug, Serialize)]
pub struct RunReport {
    pub version: u32,
    /// The invoked subcommand and its salient arguments.
    pub command: String,
    pub seed: u64,
    pub backend: Option<String>,
    pub wall_ms: u128,
    pub results: Value,
}

impl RunReport {
    pub fn new(command: String, seed: u64, backend: Option<String>) -> Self {
        RunReport {
            version: REPORT_VERSION,
            command,
            seed,
            backend,
            wall_ms: 0,
            results: Value::Null,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Flatten point-series payloads to CSV. Supported for results that
    /// carry a `curve` array of {x, y} rows or a `histogram` object.
    pub fn to_csv(&self) -> Result<String> {
        let mut out = String::new();
        if let Some(curve) = self.results.get("curve").and_then(|v| v.as_array()) {
            out.push_str("x,y\n");
            for row in curve {
                let x = row.get("x").and_then(|v| v.as_f64()).unwrap_or(f64::NAN);
                let y = row.get("y").and_then(|v| v.as_f64()).unwrap_or(f64::NAN);
                out.push_str(&format!("{x},{y}\n"));
            }
            return Ok(out);
        }
        if let Some(hist) = self.results.get("histogram").and_then(|v| v.as_object()) {
            out.push_str("bitstring,count\n");
            for (k, v) in hist {
                out.push_str(&format!("{k},{}\n", v.as_u64().unwrap_or(0)));
            }
            return Ok(out);
        }
        Err(Error::InvalidInput(
            "this report has no point-series payload; use --format json".into(),
        ))
    }
}
