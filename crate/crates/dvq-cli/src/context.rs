//! Shared command plumbing: error-to-exit-code mapping, the run manifest,
//! and deterministic artifact writing.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub const MANIFEST_SCHEMA: &str = "dvq.manifest/1";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Process exit codes. Zero is success; everything else is one of these.
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

/// What went wrong, coarse enough to pick an exit code: bad configuration
/// (flags, config files, or parameter values), bad input data, or a run
/// that diverged.
#[derive(Debug)]
pub enum CliError {
    /// Unusable flags or configuration, including an output directory that
    /// belongs to a different run.
    Config(String),
    /// Inputs that exist but cannot be used (malformed, inconsistent).
    Data(String),
    /// An error surfaced by the library while running.
    Run(dvq::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) => EXIT_DATA,
            CliError::Run(e) => match e {
                dvq::Error::Diverged { .. } => EXIT_DIVERGED,
                // Parameter problems are configuration mistakes even when
                // the library catches them later than the config parser.
                dvq::Error::InvalidArgument(_) | dvq::Error::EmptyInput(_) => EXIT_CONFIG,
                _ => EXIT_DATA,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) | CliError::Data(msg) => f.write_str(msg),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

impl From<dvq::Error> for CliError {
    fn from(e: dvq::Error) -> Self {
        CliError::Run(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Everything needed to reproduce a run, written to `manifest.json` before
/// any computation starts. Deliberately carries no timestamps or host
/// details: two runs of the same manifest must produce identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub command: String,
    /// Crate version that produced the artifacts.
    pub version: String,
    /// Resolved seed (after any `--seed` override); absent for commands
    /// without randomness.
    pub seed: Option<u64>,
    /// The fully resolved configuration with all defaults materialized.
    pub config: serde_json::Value,
    /// Artifact file names this command writes under the output directory.
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn new<C: Serialize>(
        command: &str,
        seed: Option<u64>,
        config: &C,
        artifacts: &[&str],
    ) -> CliResult<Self> {
        let config = serde_json::to_value(config)
            .map_err(|e| CliError::Config(format!("could not serialize the resolved config: {e}")))?;
        Ok(RunManifest {
            schema: MANIFEST_SCHEMA.to_string(),
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            artifacts: artifacts.iter().map(|s| s.to_string()).collect(),
        })
    }

    /// Same run? Version and artifact list may drift across releases; the
    /// experiment identity is command + seed + resolved config.
    fn same_run(&self, other: &RunManifest) -> bool {
        self.command == other.command && self.seed == other.seed && self.config == other.config
    }
}

/// A prepared output directory with its manifest already on disk.
pub struct OutDir {
    root: PathBuf,
    /// True when the directory already held a manifest for this exact run,
    /// so commands may resume from partial artifacts.
    pub resuming: bool,
}

impl OutDir {
    /// Creates the directory, guards against clobbering a different run,
    /// and writes the manifest. An existing manifest for the *same* run
    /// enables resume; one for a different run is a configuration error.
    pub fn prepare(out: Option<&Path>, manifest: &RunManifest) -> CliResult<OutDir> {
        let root = out
            .ok_or_else(|| CliError::Config("--out DIR is required for this command".to_string()))?
            .to_path_buf();
        std::fs::create_dir_all(&root)
            .map_err(|e| CliError::Config(format!("could not create {}: {e}", root.display())))?;
        let manifest_path = root.join(MANIFEST_FILE);
        let mut resuming = false;
        if manifest_path.exists() {
            let text = std::fs::read_to_string(&manifest_path)
                .map_err(|e| CliError::Data(format!("could not read existing manifest: {e}")))?;
            let existing: RunManifest = serde_json::from_str(&text).map_err(|e| {
                CliError::Data(format!("existing manifest.json is not parseable: {e}"))
            })?;
            if !existing.same_run(manifest) {
                return Err(CliError::Config(format!(
                    "{} already holds a different run (command {:?}); choose a fresh --out",
                    root.display(),
                    existing.command
                )));
            }
            resuming = true;
        }
        let dir = OutDir { root, resuming };
        dir.write_json(MANIFEST_FILE, manifest)?;
        Ok(dir)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Pretty-printed JSON with a trailing newline; byte-deterministic for
    /// a given value.
    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Config(format!("could not serialize {name}: {e}")))?;
        text.push('\n');
        std::fs::write(self.path(name), text)
            .map_err(|e| CliError::Data(format!("could not write {name}: {e}")))?;
        Ok(())
    }

    pub fn create(&self, name: &str) -> CliResult<BufWriter<File>> {
        let f = File::create(self.path(name))
            .map_err(|e| CliError::Data(format!("could not create {name}: {e}")))?;
        Ok(BufWriter::new(f))
    }
}

/// Prints a value as pretty JSON on stdout (the dry-run output format).
pub fn print_json<T: Serialize>(value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Config(format!("could not serialize plan: {e}")))?;
    println!("{text}");
    Ok(())
}

/// Flush helper for buffered artifact writers.
pub fn finish<W: Write>(mut w: BufWriter<W>, name: &str) -> CliResult<()> {
    w.flush()
        .map_err(|e| CliError::Data(format!("could not flush {name}: {e}")))?;
    Ok(())
}
