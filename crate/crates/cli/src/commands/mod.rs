//! One module per subcommand. Each returns the run directory it created.

pub mod evaluate;
pub mod infer;
pub mod plot;
pub mod synth;
pub mod train;

use std::path::PathBuf;

use crate::config::PipelineConfig;
use crate::error::CliResult;
use crate::io::{create_run_dir, write_text};

/// Resolved configuration plus the base directory for new runs.
#[derive(Clone, Debug)]
pub struct Context {
    pub config: PipelineConfig,
    pub out_base: PathBuf,
}

impl Context {
    /// Fresh run directory holding a copy of the resolved configuration.
    pub fn run_dir(&self, command: &str) -> CliResult<PathBuf> {
        let dir = create_run_dir(&self.out_base, command)?;
        write_text(&dir.join("config.toml"), &self.config.to_toml())?;
        Ok(dir)
    }
}

/// Progress line on stderr; stdout is reserved for the run directory.
pub(crate) fn note(msg: impl AsRef<str>) {
    eprintln!("{}", msg.as_ref());
}
