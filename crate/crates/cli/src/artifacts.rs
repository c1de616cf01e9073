//! Output files. Everything is written to a temporary sibling and renamed
//! into place, and every artifact carries the tool version and config hash.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{CliError, ErrorBlock};

pub const TOOL: &str = "polykin";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Output directory: `POLYKIN_OUT` wins over `--out`, which wins over `./out`.
pub fn resolve_out_dir(flag: Option<&Path>) -> PathBuf {
    if let Some(dir) = std::env::var_os("POLYKIN_OUT").filter(|s| !s.is_empty()) {
        return PathBuf::from(dir);
    }
    flag.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("out"))
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let name = path.file_name().ok_or_else(|| CliError::Io(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Where a command writes, and what it stamps on its artifacts.
#[derive(Debug, Clone)]
pub struct ArtifactSink {
    pub dir: PathBuf,
    pub config_hash: String,
    pub command: String,
}

impl ArtifactSink {
    pub fn new(dir: PathBuf, config_hash: impl Into<String>, command: impl Into<String>) -> Self {
        ArtifactSink { dir, config_hash: config_hash.into(), command: command.into() }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn stamp(&self) -> String {
        format!("# {TOOL} {VERSION} config={}\n", self.config_hash)
    }

    /// CSV with a provenance comment line in front.
    pub fn write_csv(&self, name: &str, body: &str) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        let mut text = self.stamp();
        text.push_str(body);
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }

    pub fn write_json(&self, name: &str, value: &impl Serialize) -> Result<PathBuf, CliError> {
        let mut v = serde_json::to_value(value).map_err(|e| CliError::Io(e.to_string()))?;
        if let Value::Object(map) = &mut v {
            map.insert("tool".into(), json!(TOOL));
            map.insert("version".into(), json!(VERSION));
            map.insert("config_hash".into(), json!(self.config_hash));
        }
        let path = self.path(name);
        let text = serde_json::to_string_pretty(&v).map_err(|e| CliError::Io(e.to_string()))?;
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }

    /// `report.json` for a successful command.
    pub fn write_report(&self, body: Value) -> Result<PathBuf, CliError> {
        self.write_json("report.json", &self.envelope("ok", None, body))
    }

    /// `report.json` for a failed command; `body` holds whatever was measured.
    pub fn write_error_report(&self, err: &CliError, body: Value) -> Result<PathBuf, CliError> {
        self.write_json("report.json", &self.envelope("error", Some(err.block()), body))
    }

    fn envelope(&self, status: &str, error: Option<ErrorBlock>, body: Value) -> Value {
        let mut v = json!({ "command": self.command, "status": status });
        if let Some(e) = error {
            v["error"] = serde_json::to_value(e).unwrap_or(Value::Null);
        }
        if let Value::Object(map) = body {
            for (k, val) in map {
                v[k] = val;
            }
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let sink = ArtifactSink::new(dir.path().join("nested"), "abc", "simulate");
        sink.write_csv("series.csv", "t,V\n0,1\n").unwrap();
        let names: Vec<_> = fs::read_dir(dir.path().join("nested")).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, vec![std::ffi::OsString::from("series.csv")]);
        let text = fs::read_to_string(sink.path("series.csv")).unwrap();
        assert!(text.starts_with("# polykin ") && text.contains("config=abc"));
    }

    #[test]
    fn reports_are_stamped() {
        let dir = tempfile::tempdir().unwrap();
        let sink = ArtifactSink::new(dir.path().to_path_buf(), "abc", "steady");
        let err = CliError::Runtime { message: "leak".into(), x_max_suggested: Some(8.0) };
        sink.write_error_report(&err, json!({ "partial": 1 })).unwrap();
        let v: Value = serde_json::from_str(&fs::read_to_string(sink.path("report.json")).unwrap()).unwrap();
        assert_eq!(v["status"], "error");
        assert_eq!(v["error"]["exit_code"], 3);
        assert_eq!(v["error"]["grid_hint"]["x_max_suggested"], 8.0);
        assert_eq!(v["config_hash"], "abc");
        assert_eq!(v["version"], VERSION);
        assert_eq!(v["partial"], 1);
    }
}
