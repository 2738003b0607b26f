use std::path::Path;

use proxylearn::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
struct InputDigest {
    role: String,
    path: String,
    sha256: String,
}

/// Reproducibility record written next to every output. Holds no timestamps
/// so identical runs produce identical manifests.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    subcommand: &'static str,
    version: &'static str,
    seed: Option<u64>,
    options: serde_json::Value,
    inputs: Vec<InputDigest>,
}

impl RunManifest {
    pub fn new(subcommand: &'static str, options: &impl Serialize, seed: Option<u64>) -> Result<Self> {
        let options = serde_json::to_value(options).map_err(|e| Error::Data(e.to_string()))?;
        Ok(RunManifest { subcommand, version: env!("CARGO_PKG_VERSION"), seed, options, inputs: Vec::new() })
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<&mut Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        self.inputs.push(InputDigest {
            role: role.into(),
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(self)
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::Data(e.to_string()))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }

    /// `<output>.manifest.json`
    pub fn write_beside(&self, output: &Path) -> Result<()> {
        let mut name = output.as_os_str().to_owned();
        name.push(".manifest.json");
        self.write_to(Path::new(&name))
    }
}
