use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub qpc_core: &'static str,
    pub qpc_cli: &'static str,
}

#[derive(Debug, Serialize)]
pub struct Stage {
    pub name: String,
    pub seconds: f64,
}

/// Record of one run: what went in, how long each stage took, what came out.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of the configuration file bytes, when one was loaded.
    pub config_sha256: Option<String>,
    pub inputs: Vec<InputDigest>,
    pub versions: Versions,
    pub precision_digits: u32,
    pub stages: Vec<Stage>,
    pub outputs: Vec<String>,
    #[serde(skip)]
    out_dir: PathBuf,
    #[serde(skip)]
    clock: Instant,
}

impl RunManifest {
    pub fn new(command: &str, out_dir: &Path, digits: u32) -> Result<Self> {
        fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        Ok(Self {
            command: command.to_string(),
            config_sha256: None,
            inputs: Vec::new(),
            versions: Versions {
                qpc_core: qpc_core::VERSION,
                qpc_cli: env!("CARGO_PKG_VERSION"),
            },
            precision_digits: digits,
            stages: Vec::new(),
            outputs: Vec::new(),
            out_dir: out_dir.to_path_buf(),
            clock: Instant::now(),
        })
    }

    pub fn add_input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(bytes),
        });
    }

    /// Closes the current stage under `name`.
    pub fn stage(&mut self, name: &str) {
        let now = Instant::now();
        self.stages.push(Stage {
            name: name.to_string(),
            seconds: (now - self.clock).as_secs_f64(),
        });
        self.clock = now;
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.out_dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(name.to_string());
        Ok(path)
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.outputs.push("manifest.json".into());
        let path = self.out_dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self)? + "\n";
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
