//! Run manifests: key=value records of every resolved setting, sufficient
//! to replay a run, plus an optional key=value defaults file.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use decs_core::{Error, Result};

/// Ordered key=value settings collected while resolving a command.
#[derive(Default)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let mut m = Self::default();
        m.set("tool_version", env!("CARGO_PKG_VERSION"));
        m.set("command", command);
        m
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        for (k, v) in &self.entries {
            writeln!(out, "{k}={v}")?;
        }
        let stamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        writeln!(out, "written_unix={stamp}")?;
        out.flush()?;
        Ok(())
    }
}

/// Parses a simple key=value defaults file. Blank lines and lines starting
/// with '#' are skipped.
pub fn load_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Format(format!(
                "{}:{}: expected key=value",
                path.display(),
                line_no + 1
            )));
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Resolves one setting: the command-line value wins, then the config file,
/// then the built-in default.
pub fn resolve<T: std::str::FromStr>(
    cli: Option<T>,
    config: &BTreeMap<String, String>,
    key: &str,
    default: T,
) -> Result<T> {
    if let Some(v) = cli {
        return Ok(v);
    }
    match config.get(key) {
        Some(raw) => raw.parse::<T>().map_err(|_| {
            Error::Format(format!("config key {key}: cannot parse {raw:?}"))
        }),
        None => Ok(default),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_parsing_and_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        fs::write(&path, "# defaults\nepochs = 25\nseed=7\n").unwrap();
        let map = load_config_file(&path).unwrap();
        assert_eq!(resolve(None, &map, "epochs", 500usize).unwrap(), 25);
        assert_eq!(resolve(Some(3usize), &map, "epochs", 500).unwrap(), 3);
        assert_eq!(resolve(None, &map, "batch_size", 256usize).unwrap(), 256);
    }

    #[test]
    fn config_file_rejects_junk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.conf");
        fs::write(&path, "not a pair\n").unwrap();
        assert!(load_config_file(&path).is_err());
    }
}
