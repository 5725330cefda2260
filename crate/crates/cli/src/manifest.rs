//! Run manifest: inputs with digests, config echo, seed, version, timing.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};

use crate::error::{CliError, CliResult};
use crate::ingest::InputFile;

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone)]
pub struct RunManifest {
    pub command: String,
    /// `(label, path, sha256)`
    pub inputs: Vec<(String, PathBuf, String)>,
    pub config: String,
    pub seed: u64,
    pub version: String,
    pub started: DateTime<Utc>,
    pub finished: Option<DateTime<Utc>>,
    /// Command-specific facts such as draw counts.
    pub facts: Vec<(String, String)>,
}

impl RunManifest {
    pub fn start(command: &str, seed: u64, config: String) -> Self {
        Self {
            command: command.to_string(),
            inputs: Vec::new(),
            config,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started: Utc::now(),
            finished: None,
            facts: Vec::new(),
        }
    }

    pub fn add_input(&mut self, f: &InputFile) {
        self.inputs
            .push((f.label.clone(), f.path.clone(), f.digest.clone()));
    }

    pub fn fact(&mut self, key: &str, value: impl ToString) {
        self.facts.push((key.to_string(), value.to_string()));
    }

    pub fn to_text(&self) -> String {
        let ts = |t: &DateTime<Utc>| t.to_rfc3339_opts(SecondsFormat::Millis, true);
        let mut s = String::new();
        let _ = writeln!(s, "command = {}", self.command);
        let _ = writeln!(s, "version = {}", self.version);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "started = {}", ts(&self.started));
        if let Some(f) = &self.finished {
            let _ = writeln!(s, "finished = {}", ts(f));
        }
        for (label, path, digest) in &self.inputs {
            let _ = writeln!(s, "input.{label} = {}", path.display());
            let _ = writeln!(s, "sha256.{label} = {digest}");
        }
        for (k, v) in &self.facts {
            let _ = writeln!(s, "{k} = {v}");
        }
        for line in self.config.lines().filter(|l| !l.trim().is_empty()) {
            let _ = writeln!(s, "config.{}", line.trim());
        }
        s
    }

    /// Stamps the finish time and writes `manifest.txt` into `dir`.
    pub fn finish(mut self, dir: &Path) -> CliResult<()> {
        self.finished = Some(Utc::now());
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, self.to_text()).map_err(|e| CliError::write(&path, e))
    }
}

/// Looks up `key` in a manifest written by [`RunManifest::finish`].
pub fn manifest_value(dir: &Path, key: &str) -> Option<String> {
    let text = std::fs::read_to_string(dir.join(MANIFEST_FILE)).ok()?;
    text.lines().find_map(|l| {
        let (k, v) = l.split_once('=')?;
        (k.trim() == key).then(|| v.trim().to_string())
    })
}
