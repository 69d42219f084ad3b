use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const SCHEMA: &str = "tpsurf.report/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub inputs: Vec<InputDigest>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub elapsed_seconds: f64,
    pub threads: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub command: String,
    pub provenance: Provenance,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub config: Option<RunConfig>,
    pub result: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timing: Option<Timing>,
}

impl Report {
    pub fn new(command: &str, inputs: Vec<InputDigest>, config: Option<RunConfig>, result: serde_json::Value) -> Self {
        Report {
            schema: SCHEMA.to_string(),
            command: command.to_string(),
            provenance: Provenance {
                tool: env!("CARGO_PKG_NAME").to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                inputs,
            },
            config,
            result,
            timing: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Reads an input file and records its digest.
pub fn read_input(path: &Path) -> Result<(Vec<u8>, InputDigest)> {
    let bytes = std::fs::read(path).map_err(|source| CliError::Input {
        path: path.to_path_buf(),
        source,
    })?;
    let digest = Sha256::digest(&bytes);
    let sha256 = digest.iter().map(|b| format!("{b:02x}")).collect();
    let info = InputDigest {
        path: path.display().to_string(),
        sha256,
        bytes: bytes.len() as u64,
    };
    Ok((bytes, info))
}

/// Writes `text` to `path`, or to stdout when the path is `-`.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let fail = |source| CliError::Output {
        path: PathBuf::from(path),
        source,
    };
    if path.as_os_str() == "-" {
        let mut out = std::io::stdout().lock();
        out.write_all(text.as_bytes()).map_err(fail)?;
        out.flush().map_err(fail)
    } else {
        std::fs::write(path, text).map_err(fail)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_round_trips() {
        let r = Report::new(
            "energy",
            vec![InputDigest {
                path: "a.obj".into(),
                sha256: "00".into(),
                bytes: 3,
            }],
            None,
            serde_json::json!({ "total_energy": 0.1 + 0.2, "tiny": 5e-324, "big": 1.7976931348623157e308 }),
        );
        let text = r.to_json().unwrap();
        let back: Report = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_json().unwrap(), text);
        assert_eq!(back.result["total_energy"].as_f64().unwrap(), 0.1 + 0.2);
        assert_eq!(back.result["tiny"].as_f64().unwrap(), 5e-324);
    }
}
