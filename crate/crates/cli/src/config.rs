//! Key-value config files and the flag > file > default resolution rule.
//!
//! Every run writes the resolved values back out in the same format, so a
//! snapshot can be replayed with `--config`.

use crate::CliError;
use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Parsed `key = value` file; `#` starts a comment, blank lines are skipped.
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
    source: Option<PathBuf>,
}

impl ConfigFile {
    pub fn empty() -> ConfigFile {
        ConfigFile {
            entries: BTreeMap::new(),
            source: None,
        }
    }

    pub fn load(path: Option<&Path>) -> Result<ConfigFile, CliError> {
        let Some(path) = path else {
            return Ok(ConfigFile::empty());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        let mut entries = BTreeMap::new();
        for (number, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::input(format!(
                    "{}:{}: expected key = value",
                    path.display(),
                    number + 1
                )));
            };
            entries.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(ConfigFile {
            entries,
            source: Some(path.to_path_buf()),
        })
    }

    /// Typed lookup; a present but unparseable value is an input error.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|_| {
                CliError::input(format!(
                    "{}: bad value for {key}: {raw:?}",
                    self.source
                        .as_deref()
                        .map(|p| p.display().to_string())
                        .unwrap_or_else(|| "config".to_string())
                ))
            }),
        }
    }

    /// flag > config file > default.
    pub fn resolve<T: FromStr>(
        &self,
        flag: Option<T>,
        key: &str,
        default: T,
    ) -> Result<T, CliError> {
        Ok(match flag {
            Some(v) => v,
            None => self.get(key)?.unwrap_or(default),
        })
    }
}

/// Resolved settings of one run, written beside the outputs.
pub struct Snapshot {
    command: &'static str,
    entries: Vec<(String, String)>,
}

impl Snapshot {
    pub fn new(command: &'static str) -> Snapshot {
        Snapshot {
            command,
            entries: Vec::new(),
        }
    }

    pub fn put(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    pub fn render(&self) -> String {
        let mut out = format!("# resolved configuration: {}\n", self.command);
        let mut entries = self.entries.clone();
        entries.sort();
        for (key, value) in entries {
            out.push_str(&format!("{key} = {value}\n"));
        }
        out
    }

    /// Writes `config.snapshot.txt` into a directory output.
    pub fn write_in_dir(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join("config.snapshot.txt");
        std::fs::write(&path, self.render())
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))
    }

    /// Writes `<name>.config.txt` beside a file output.
    pub fn write_beside(&self, output: &Path) -> Result<(), CliError> {
        let name = output
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_else(|| "output".to_string());
        let path = output.with_file_name(format!("{name}.config.txt"));
        std::fs::write(&path, self.render())
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))
    }

    /// Logs the resolved values to stderr for commands without file outputs.
    pub fn log_to_stderr(&self) {
        for line in self.render().lines() {
            eprintln!("{line}");
        }
    }
}
