//! File access and the provenance header carried by every output.

use std::fs;
use std::io::Write;
use std::path::Path;

use molfrag::wlhash::digest64;

use crate::error::CliError;

pub const TOOL: &str = concat!("molfrag ", env!("CARGO_PKG_VERSION"));

/// Identifies the run that produced a file.
#[derive(Debug, Clone)]
pub struct Provenance {
    pub command: String,
    pub config_digest: String,
    pub seed: u64,
}

impl Provenance {
    /// `config` is the canonical text of every setting the command used.
    pub fn new(command: &str, config: &str, seed: u64) -> Self {
        Provenance {
            command: command.to_string(),
            config_digest: format!("{:016x}", digest64(config.as_bytes())),
            seed,
        }
    }

    /// `# key: value` lines for text outputs.
    pub fn comment_header(&self) -> String {
        format!(
            "# tool: {TOOL}\n# command: {}\n# config_digest: {}\n# seed: {}\n",
            self.command, self.config_digest, self.seed
        )
    }

    pub fn pairs(&self) -> Vec<(String, String)> {
        vec![
            ("tool".into(), TOOL.into()),
            ("command".into(), self.command.clone()),
            ("config_digest".into(), self.config_digest.clone()),
            ("seed".into(), self.seed.to_string()),
        ]
    }
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Writes `body` after the header to `path`, or to stdout when absent.
pub fn emit(path: Option<&Path>, prov: &Provenance, body: &str) -> Result<(), CliError> {
    let text = format!("{}{body}", prov.comment_header());
    match path {
        Some(p) => write_bytes(p, text.as_bytes()),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .map_err(|e| CliError::io(Path::new("<stdout>"), e))
        }
    }
}
