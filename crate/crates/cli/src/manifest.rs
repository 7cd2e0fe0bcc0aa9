//! Run manifests: enough to re-execute a command and reproduce its outputs.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

pub const RUN_MANIFEST_NAME: &str = "run_manifest.json";

static INVOCATION: OnceLock<Vec<String>> = OnceLock::new();

/// Records the arguments of the command being run. A rerun records the
/// replayed arguments, not its own.
pub fn set_invocation(argv: Vec<String>) {
    let _ = INVOCATION.set(argv);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Arguments after the program name, exactly as given.
    pub argv: Vec<String>,
    /// Working directory the arguments are relative to.
    pub cwd: PathBuf,
    pub seed: Option<u64>,
    /// Effective configuration of every stage the command ran.
    pub config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(command: &str, seed: Option<u64>, config: serde_json::Value) -> Self {
        Self {
            tool: "gazeload".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            argv: INVOCATION
                .get()
                .cloned()
                .unwrap_or_else(|| std::env::args().skip(1).collect()),
            cwd: std::env::current_dir().unwrap_or_default(),
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(path, text + "\n")
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    /// Argument vector with the output flag pointed at `target`.
    pub fn redirected_argv(&self, target: &Path) -> Option<Vec<String>> {
        let mut argv = self.argv.clone();
        let target = target.to_string_lossy().into_owned();
        for flag in ["--out-dir", "--out"] {
            if let Some(i) = argv.iter().position(|a| a == flag) {
                *argv.get_mut(i + 1)? = target;
                return Some(argv);
            }
            let prefix = format!("{flag}=");
            if let Some(a) = argv.iter_mut().find(|a| a.starts_with(&prefix)) {
                *a = format!("{prefix}{target}");
                return Some(argv);
            }
        }
        None
    }
}

/// Manifest location for a single-file output: `<file>.run.json`.
pub fn manifest_for_file(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".run.json");
    out.with_file_name(name)
}
