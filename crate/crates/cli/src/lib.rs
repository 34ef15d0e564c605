//! Batch driver: configuration, subcommands, artifacts.

pub mod commands;
pub mod config;
pub mod io;

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

pub use commands::Command;
pub use config::RunConfig;

/// Failure of a run, mapped onto the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Malformed or inconsistent configuration; exit 2.
    Config(String),
    /// Numerical failure or failed checks; exit 1.
    Numerical(String),
    /// Reading or writing artifacts; exit 1.
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) | CliError::Io(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Numerical(_) => "numerical",
            CliError::Io(_) => "io",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Numerical(m) | CliError::Io(m) => m,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error: {}", self.kind(), self.message())
    }
}

impl From<schrodinger_core::Error> for CliError {
    fn from(e: schrodinger_core::Error) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Machine-readable failure record, printed to stderr and saved as
/// `error.json`.
#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub status: String,
    pub kind: String,
    pub exit_code: u8,
    pub command: String,
    pub message: String,
}

impl ErrorRecord {
    pub fn new(command: &str, e: &CliError) -> Self {
        Self {
            status: "error".into(),
            kind: e.kind().into(),
            exit_code: e.exit_code(),
            command: command.into(),
            message: e.message().into(),
        }
    }
}

/// Written next to the tables of every run.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub status: String,
    pub seed: u64,
    pub git_describe: String,
    pub threads: usize,
    pub started_unix: u64,
    pub wall_seconds: f64,
    pub outputs: Vec<String>,
    pub config: RunConfig,
}

/// Output directory that remembers what was written to it.
pub struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
    quiet: bool,
}

impl Artifacts {
    pub fn new(dir: &Path, quiet: bool) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            quiet,
        })
    }

    /// Registers `name` and returns its path.
    pub fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    pub fn csv(&mut self, name: &str) -> Result<csv::Writer<std::fs::File>, CliError> {
        let p = self.path(name);
        Ok(csv::Writer::from_path(p)?)
    }

    pub fn progress(&self, msg: &str) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }
}

/// `git describe --always --dirty`, or `unknown` outside a work tree.
pub fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

/// Validates, runs `command`, and writes the manifest. Failed checks still
/// leave their tables and a manifest behind.
pub fn execute(command: Command, config: RunConfig, out: &Path, quiet: bool) -> Result<(), CliError> {
    config.validate()?;
    let started = Instant::now();
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let mut art = Artifacts::new(out, quiet)?;
    let outcome = commands::run(command, &config, &mut art);
    if matches!(outcome, Err(CliError::Config(_))) {
        return outcome;
    }
    let manifest = Manifest {
        tool: "schrodinger".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.name().into(),
        status: if outcome.is_ok() { "ok" } else { "failed" }.into(),
        seed: config.seed,
        git_describe: git_describe(),
        threads: rayon::current_num_threads(),
        started_unix,
        wall_seconds: started.elapsed().as_secs_f64(),
        outputs: art.files.clone(),
        config,
    };
    std::fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    outcome
}
