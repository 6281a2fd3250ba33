use std::net::SocketAddr;
use std::path::PathBuf;

use hspace_core::{Error, Result};
use hspace_explorer::{ExplorerConfig, SessionState};
use serde::{Deserialize, Serialize};

use super::{default_out, Ran};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeConfig {
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub archive: Option<PathBuf>,
    #[serde(default)]
    pub map: Option<PathBuf>,
    #[serde(default)]
    pub report: Option<PathBuf>,
    #[serde(default)]
    pub backend_config: Option<PathBuf>,
    #[serde(default)]
    pub rankings: Option<PathBuf>,
    #[serde(default)]
    pub gaps: Option<PathBuf>,
    #[serde(default)]
    pub images: Option<PathBuf>,
    #[serde(default = "default_host")]
    pub host: String,
    #[serde(default = "default_port")]
    pub port: u16,
}

fn default_host() -> String {
    "127.0.0.1".into()
}

fn default_port() -> u16 {
    8080
}

impl ServeConfig {
    fn explorer(&self) -> ExplorerConfig {
        ExplorerConfig {
            archive: self.archive.clone(),
            map: self.map.clone(),
            report: self.report.clone(),
            backend_config: self.backend_config.clone(),
            rankings: self.rankings.clone(),
            gaps: self.gaps.clone(),
            images: self.images.clone().unwrap_or_else(|| self.out.join("images")),
            port: self.port,
        }
    }
}

/// Load everything, then block serving. Startup failures return normally
/// so they get the usual exit code.
pub fn run(config: &ServeConfig) -> Result<Ran> {
    let explorer = config.explorer();
    let state = SessionState::from_config(&explorer)?;
    let addr: SocketAddr = format!("{}:{}", config.host, config.port)
        .parse()
        .map_err(|e| Error::Config(format!("host: {e}")))?;
    crate::write_start_manifest("serve", config, &config.out)?;
    hspace_explorer::serve(state, addr)?;
    Ok(Ran::default())
}
