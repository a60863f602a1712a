use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Result;
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct Versions {
    /// The library is built from the same workspace, so it shares the version.
    pub seqsel: &'static str,
    pub cli: &'static str,
}

#[derive(Debug, Serialize)]
pub struct Timing {
    pub started_unix: f64,
    pub elapsed_seconds: f64,
}

/// Record of one invocation, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub workers: usize,
    pub parallel: bool,
    pub versions: Versions,
    pub timing: Timing,
    pub outputs: Vec<PathBuf>,
}

pub struct Recorder {
    command: &'static str,
    started: Instant,
    started_unix: f64,
    workers: usize,
}

impl Recorder {
    pub fn start(command: &'static str, workers: usize) -> Self {
        let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
        Recorder { command, started: Instant::now(), started_unix, workers }
    }

    pub fn finish(&self, config: &impl Serialize, seed: Option<u64>, outputs: Vec<PathBuf>) -> Result<RunManifest> {
        Ok(RunManifest {
            command: self.command.to_string(),
            argv: std::env::args().collect(),
            config: serde_json::to_value(config)?,
            seed,
            workers: self.workers,
            parallel: seqsel::par::Execution::is_parallel_available() && self.workers > 1,
            versions: Versions { seqsel: env!("CARGO_PKG_VERSION"), cli: env!("CARGO_PKG_VERSION") },
            timing: Timing { started_unix: self.started_unix, elapsed_seconds: self.started.elapsed().as_secs_f64() },
            outputs,
        })
    }
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// `out.csv` -> `out.csv.manifest.json`.
pub fn beside(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}
