//! Node configuration file.
//!
//! TOML with optional sections. Every key has a default, so an empty file
//! is a valid configuration. A few paths and ports can be overridden from
//! the environment (see [`ENV_OVERRIDES`]).

use std::net::{IpAddr, Ipv4Addr};
use std::path::{Path, PathBuf};
use std::time::Duration;
use std::{fmt, fs};

use serde::{Deserialize, Serialize};

use crate::model::{ConfigError, ConsensusConfig};
use crate::rp::ExternalRpConfig;
use crate::rtr::Timing;

/// Named parameter sets. A profile only supplies the refresh interval; an
/// explicit `refresh_interval` still wins.
#[derive(Clone, Copy, Debug, Eq, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// Validation restarts 10 s after a cycle.
    ExperimentA,
    /// Validation restarts 10 min after a cycle.
    ExperimentB,
}

impl Profile {
    pub fn refresh_interval(self) -> Duration {
        match self {
            Profile::ExperimentA => Duration::from_secs(10),
            Profile::ExperimentB => Duration::from_secs(600),
        }
    }
}

/// Where local VRPs come from.
#[derive(Clone, Copy, Debug, Default, Eq, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// The simulated publication-point environment.
    #[default]
    Sim,
    /// An external relying-party executable.
    Live,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Sim => "sim",
            Mode::Live => "live",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ListenConfig {
    /// Bound for both services. Peers identify this node by it.
    pub address: IpAddr,
    pub https_port: u16,
    pub rtr_port: u16,
}

impl Default for ListenConfig {
    fn default() -> Self {
        ListenConfig {
            address: IpAddr::V4(Ipv4Addr::LOCALHOST),
            https_port: 8443,
            rtr_port: 8323,
        }
    }
}

/// PEM files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TlsConfig {
    pub cert: PathBuf,
    pub key: PathBuf,
    /// Trust root shared by all nodes.
    pub root: PathBuf,
}

impl Default for TlsConfig {
    fn default() -> Self {
        TlsConfig {
            cert: "certs/node.pem".into(),
            key: "certs/node.key".into(),
            root: "certs/root.pem".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RtrConfig {
    /// End-of-data timing parameters, in seconds.
    pub refresh: u32,
    pub retry: u32,
    pub expire: u32,
}

impl Default for RtrConfig {
    fn default() -> Self {
        let t = Timing::default();
        RtrConfig { refresh: t.refresh, retry: t.retry, expire: t.expire }
    }
}

impl RtrConfig {
    pub fn timing(&self) -> Timing {
        Timing { refresh: self.refresh, retry: self.retry, expire: self.expire }
    }
}

/// Simulated relying party.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Preset name or path of a scenario JSON file.
    pub scenario: String,
    /// Selects per-node scenario behavior and the random stream.
    pub node_index: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { scenario: "benign-A".into(), node_index: 0, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NodeConfig {
    pub profile: Option<Profile>,
    pub mode: Mode,
    #[serde(with = "humantime_serde")]
    pub refresh_interval: Duration,
    /// Initial peers, one address per line.
    pub bootstrap: Option<PathBuf>,
    /// Local skiplist sidecar and other node state.
    pub data_dir: PathBuf,
    pub consensus: ConsensusConfig,
    pub listen: ListenConfig,
    pub tls: TlsConfig,
    pub rtr: RtrConfig,
    pub sim: SimConfig,
    /// Required in live mode.
    pub live: Option<ExternalRpConfig>,
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawConfig {
    profile: Option<Profile>,
    mode: Mode,
    #[serde(with = "humantime_serde")]
    refresh_interval: Option<Duration>,
    bootstrap: Option<PathBuf>,
    data_dir: PathBuf,
    consensus: ConsensusConfig,
    listen: ListenConfig,
    tls: TlsConfig,
    rtr: RtrConfig,
    sim: SimConfig,
    live: Option<ExternalRpConfig>,
}

impl Default for RawConfig {
    fn default() -> Self {
        RawConfig {
            profile: None,
            mode: Mode::default(),
            refresh_interval: None,
            bootstrap: None,
            data_dir: "data".into(),
            consensus: ConsensusConfig::default(),
            listen: ListenConfig::default(),
            tls: TlsConfig::default(),
            rtr: RtrConfig::default(),
            sim: SimConfig::default(),
            live: None,
        }
    }
}

impl Default for NodeConfig {
    fn default() -> Self {
        NodeConfig::from_raw(RawConfig::default())
    }
}

/// Environment variables consulted by [`NodeConfig::apply_env`].
pub const ENV_OVERRIDES: [&str; 8] = [
    "BYZRP_LISTEN_ADDRESS",
    "BYZRP_HTTPS_PORT",
    "BYZRP_RTR_PORT",
    "BYZRP_TLS_CERT",
    "BYZRP_TLS_KEY",
    "BYZRP_TLS_ROOT",
    "BYZRP_BOOTSTRAP",
    "BYZRP_DATA_DIR",
];

impl NodeConfig {
    fn from_raw(raw: RawConfig) -> Self {
        let refresh_interval = raw
            .refresh_interval
            .or(raw.profile.map(Profile::refresh_interval))
            .unwrap_or(Profile::ExperimentA.refresh_interval());
        NodeConfig {
            profile: raw.profile,
            mode: raw.mode,
            refresh_interval,
            bootstrap: raw.bootstrap,
            data_dir: raw.data_dir,
            consensus: raw.consensus,
            listen: raw.listen,
            tls: raw.tls,
            rtr: raw.rtr,
            sim: raw.sim,
            live: raw.live,
        }
    }

    /// Parses and validates, without environment overrides.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::new(text);
        let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            ConfigError::new(if path == "." { String::new() } else { path }, inner.message().trim())
        })?;
        let config = NodeConfig::from_raw(raw);
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("serializable")
    }

    /// Applies overrides from `lookup` (normally the process environment).
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(var: &str, v: &str) -> Result<T, ConfigError>
        where
            T::Err: fmt::Display,
        {
            v.parse().map_err(|e| ConfigError::new(var, format!("{e}")))
        }
        for var in ENV_OVERRIDES {
            let Some(v) = lookup(var) else { continue };
            match var {
                "BYZRP_LISTEN_ADDRESS" => self.listen.address = parse(var, &v)?,
                "BYZRP_HTTPS_PORT" => self.listen.https_port = parse(var, &v)?,
                "BYZRP_RTR_PORT" => self.listen.rtr_port = parse(var, &v)?,
                "BYZRP_TLS_CERT" => self.tls.cert = v.into(),
                "BYZRP_TLS_KEY" => self.tls.key = v.into(),
                "BYZRP_TLS_ROOT" => self.tls.root = v.into(),
                "BYZRP_BOOTSTRAP" => self.bootstrap = Some(v.into()),
                "BYZRP_DATA_DIR" => self.data_dir = v.into(),
                _ => unreachable!(),
            }
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.consensus.validate().map_err(|e| e.within("consensus"))?;
        if self.refresh_interval.is_zero() {
            return Err(ConfigError::new("refresh_interval", "must be positive"));
        }
        if self.listen.https_port == self.listen.rtr_port {
            return Err(ConfigError::new(
                "listen.rtr_port",
                format!("must differ from listen.https_port ({})", self.listen.https_port),
            ));
        }
        if self.rtr.refresh == 0 || self.rtr.retry == 0 || self.rtr.expire == 0 {
            return Err(ConfigError::new("rtr", "timing parameters must be positive"));
        }
        if self.mode == Mode::Live && self.live.is_none() {
            return Err(ConfigError::new("live", "required in live mode"));
        }
        Ok(())
    }
}

/// Reads `path`, applies the process environment and validates.
pub fn load_config(path: &Path) -> Result<NodeConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError::new("", format!("{}: {e}", path.display())))?;
    let mut config = NodeConfig::from_toml(&text)?;
    config.apply_env(|k| std::env::var(k).ok())?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn empty_file_gives_defaults() {
        let c = NodeConfig::from_toml("").unwrap();
        assert_eq!(c.consensus.c, 0.5);
        assert_eq!(c.consensus.staleness_tolerance, Duration::from_secs(3600));
        assert_eq!(c.consensus.poll_period, Duration::from_secs(10));
        assert_eq!(c.refresh_interval, Duration::from_secs(10));
        assert_eq!(c.mode, Mode::Sim);
        assert_eq!(c, NodeConfig::default());
    }

    #[test]
    fn out_of_range_factor() {
        let e = NodeConfig::from_toml("[consensus]\nc = 1.5\n").unwrap_err();
        assert_eq!(e.field, "consensus.c");
    }

    #[test]
    fn profiles() {
        let c = NodeConfig::from_toml("profile = \"experiment-b\"").unwrap();
        assert_eq!(c.refresh_interval, Duration::from_secs(600));
        let c = NodeConfig::from_toml("profile = \"experiment-b\"\nrefresh_interval = \"30s\"").unwrap();
        assert_eq!(c.refresh_interval, Duration::from_secs(30));
    }

    #[test]
    fn schema_errors_name_the_field() {
        let e = NodeConfig::from_toml("[consensus]\npoll_period = \"soon\"\n").unwrap_err();
        assert_eq!(e.field, "consensus.poll_period");
        let e = NodeConfig::from_toml("[listen]\nhttps_port = 70000\n").unwrap_err();
        assert_eq!(e.field, "listen.https_port");
        let e = NodeConfig::from_toml("[tls]\ncerts = \"x\"\n").unwrap_err();
        assert!(e.reason.contains("certs"), "{e}");
        let e = NodeConfig::from_toml("[listen]\nhttps_port = 9000\nrtr_port = 9000\n").unwrap_err();
        assert_eq!(e.field, "listen.rtr_port");
        let e = NodeConfig::from_toml("mode = \"live\"").unwrap_err();
        assert_eq!(e.field, "live");
        let e = NodeConfig::from_toml("refresh_interval = \"0s\"").unwrap_err();
        assert_eq!(e.field, "refresh_interval");
    }

    #[test]
    fn env_overrides() {
        let env: HashMap<&str, &str> =
            HashMap::from([("BYZRP_HTTPS_PORT", "9443"), ("BYZRP_TLS_ROOT", "/etc/root.pem")]);
        let mut c = NodeConfig::default();
        c.apply_env(|k| env.get(k).map(|v| v.to_string())).unwrap();
        assert_eq!(c.listen.https_port, 9443);
        assert_eq!(c.tls.root, PathBuf::from("/etc/root.pem"));
        let err = c.apply_env(|k| (k == "BYZRP_RTR_PORT").then(|| "x".into())).unwrap_err();
        assert_eq!(err.field, "BYZRP_RTR_PORT");
        let err = c.apply_env(|k| (k == "BYZRP_RTR_PORT").then(|| "9443".into())).unwrap_err();
        assert_eq!(err.field, "listen.rtr_port");
    }

    #[test]
    fn round_trip() {
        let mut c = NodeConfig::from_toml("profile = \"experiment-a\"\n[sim]\nnode_index = 3\n").unwrap();
        c.bootstrap = Some("peers.txt".into());
        assert_eq!(NodeConfig::from_toml(&c.to_toml()).unwrap(), c);
    }
}
