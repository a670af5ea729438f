//! TOML configuration for the servers and the benchmark driver.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};

use super::kernels::ComputeProfile;
use super::model::{OutputHead, ServingModel};
use crate::error::{Error, Result};
use crate::types::CompressionRate;
use crate::vico::{fit_flash_router, load_checkpoint, FlashConfig};
use crate::vision::{RatePolicy, RouterParams, VisionModel};

/// Overrides the config path given on the command line.
pub const CONFIG_ENV: &str = "DVD_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// Vision and language run back to back on one executor.
    Monolith,
    /// Separate vision and language servers joined by a feature stream.
    Dvd,
    /// `Dvd` with the resolution router choosing each tile's rate.
    DvdVir,
}

impl Topology {
    pub const ALL: [Topology; 3] = [Topology::Monolith, Topology::Dvd, Topology::DvdVir];

    pub fn as_str(self) -> &'static str {
        match self {
            Topology::Monolith => "monolith",
            Topology::Dvd => "dvd",
            Topology::DvdVir => "dvd_vir",
        }
    }

    pub fn is_split(self) -> bool {
        self != Topology::Monolith
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "monolith" => Ok(Topology::Monolith),
            "dvd" => Ok(Topology::Dvd),
            "dvd_vir" | "dvd-vir" => Ok(Topology::DvdVir),
            other => Err(Error::InvalidConfig(format!("unknown topology {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub tile_size: usize,
    pub max_tiles: usize,
    /// Encoder width; the language side sees `4 · dim`.
    pub dim: usize,
    pub vocab: u32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            tile_size: 448,
            max_tiles: 12,
            dim: 8,
            vocab: 32_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VisionServerConfig {
    pub listen: String,
    pub workers: usize,
    pub batch_tiles: usize,
    pub batch_window_ms: f64,
}

impl Default for VisionServerConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:7401".into(),
            workers: 1,
            batch_tiles: 8,
            batch_window_ms: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LanguageServerConfig {
    /// Where the vision server streams feature frames.
    pub feature_listen: String,
    /// Where clients send `Expect` messages and read responses.
    pub client_listen: String,
}

impl Default for LanguageServerConfig {
    fn default() -> Self {
        Self {
            feature_listen: "127.0.0.1:7402".into(),
            client_listen: "127.0.0.1:7403".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonolithServerConfig {
    pub listen: String,
}

impl Default for MonolithServerConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:7400".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportConfig {
    pub window: usize,
    pub nodelay: bool,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            window: crate::transport::DEFAULT_WINDOW,
            nodelay: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RouterConfig {
    /// Checkpoint for `dvd_vir`; without one a router is fitted at startup.
    pub checkpoint: Option<PathBuf>,
    pub threshold: f64,
    /// Pins every tile to one rate, ignoring the checkpoint.
    pub pin: Option<CompressionRate>,
}

impl Default for RouterConfig {
    fn default() -> Self {
        Self {
            checkpoint: None,
            threshold: 0.5,
            pin: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServingConfig {
    pub topology: Topology,
    pub seed: u64,
    pub model: ModelConfig,
    pub profile: ComputeProfile,
    pub vision: VisionServerConfig,
    pub language: LanguageServerConfig,
    pub monolith: MonolithServerConfig,
    pub transport: TransportConfig,
    pub router: RouterConfig,
    /// Line-delimited JSON spans are written here when set.
    pub trace_path: Option<PathBuf>,
}

impl Default for ServingConfig {
    fn default() -> Self {
        Self {
            topology: Topology::Dvd,
            seed: 7,
            model: ModelConfig::default(),
            profile: ComputeProfile::default(),
            vision: VisionServerConfig::default(),
            language: LanguageServerConfig::default(),
            monolith: MonolithServerConfig::default(),
            transport: TransportConfig::default(),
            router: RouterConfig::default(),
            trace_path: None,
        }
    }
}

impl ServingConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// `DVD_CONFIG` wins over `cli_path`; with neither, defaults apply.
    pub fn resolve(cli_path: Option<&Path>) -> Result<Self> {
        match std::env::var_os(CONFIG_ENV).map(PathBuf::from).or_else(|| cli_path.map(Path::to_path_buf)) {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.profile.validate()?;
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.model.vocab == 0 {
            return bad("model.vocab must be positive");
        }
        if self.model.max_tiles == 0 {
            return bad("model.max_tiles must be positive");
        }
        if self.vision.workers == 0 || self.vision.batch_tiles == 0 {
            return bad("vision.workers and vision.batch_tiles must be positive");
        }
        if !(self.vision.batch_window_ms >= 0.0 && self.vision.batch_window_ms.is_finite()) {
            return bad("vision.batch_window_ms must be a finite non-negative number");
        }
        if self.transport.window == 0 {
            return bad("transport.window must be positive");
        }
        if !(self.router.threshold > 0.0 && self.router.threshold < 1.0) {
            return bad("router.threshold must lie in (0, 1)");
        }
        Ok(())
    }

    pub fn build_vision(&self) -> Result<VisionModel> {
        VisionModel::new(self.model.tile_size, self.model.max_tiles, self.model.dim, self.seed)
    }

    pub fn build_model(&self) -> Result<ServingModel> {
        Ok(ServingModel::new(
            self.build_vision()?,
            OutputHead::Hash { vocab: self.model.vocab },
        ))
    }

    /// Rate policy of the vision side for `topology`.
    pub fn rate_policy(&self, topology: Topology, vision: &VisionModel) -> Result<RatePolicy> {
        if topology != Topology::DvdVir {
            return Ok(RatePolicy::Fixed(CompressionRate::Quarter));
        }
        let params = if let Some(rate) = self.router.pin {
            RouterParams::pinned(vision.dim(), rate)
        } else if let Some(path) = &self.router.checkpoint {
            load_checkpoint(path).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?
        } else {
            info!("no router checkpoint configured; fitting one (seed {})", self.seed);
            fit_flash_router(
                vision,
                &FlashConfig {
                    seed: self.seed,
                    ..FlashConfig::default()
                },
            )?
            .router
        };
        if params.dim() != vision.dim() {
            return Err(Error::InvalidConfig(format!(
                "router expects features of width {}, encoder produces {}",
                params.dim(),
                vision.dim()
            )));
        }
        Ok(RatePolicy::Routed {
            params,
            threshold: self.router.threshold,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = ServingConfig::default();
        let text = c.to_toml_string().unwrap();
        assert_eq!(ServingConfig::from_toml_str(&text).unwrap(), c);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = ServingConfig::from_toml_str(
            r#"
topology = "dvd_vir"
seed = 3

[profile]
vision_work_per_tile = 1
prefill_work_per_token = 2
decode_work_per_token = 3

[router]
pin = "quarter"
"#,
        )
        .unwrap();
        assert_eq!(c.topology, Topology::DvdVir);
        assert_eq!(c.profile.decode_work_per_token, 3);
        assert_eq!(c.model, ModelConfig::default());
        assert_eq!(c.router.pin, Some(CompressionRate::Quarter));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(ServingConfig::from_toml_str("colour = 1").is_err());
        assert!(ServingConfig::from_toml_str("[model]\nvocab = 0").is_err());
        assert!(ServingConfig::from_toml_str("[router]\nthreshold = 1.0").is_err());
    }

    #[test]
    fn topology_names() {
        for t in Topology::ALL {
            assert_eq!(t.as_str().parse::<Topology>().unwrap(), t);
        }
        assert!("mesh".parse::<Topology>().is_err());
    }

    #[test]
    fn pinned_policy() {
        let mut c = ServingConfig::default();
        c.model.tile_size = 64;
        c.router.pin = Some(CompressionRate::Sixteenth);
        let vision = c.build_vision().unwrap();
        match c.rate_policy(Topology::DvdVir, &vision).unwrap() {
            RatePolicy::Routed { params, .. } => assert_eq!(params, RouterParams::pinned(8, CompressionRate::Sixteenth)),
            other => panic!("{other:?}"),
        }
        assert_eq!(
            c.rate_policy(Topology::Dvd, &vision).unwrap(),
            RatePolicy::Fixed(CompressionRate::Quarter)
        );
    }
}
