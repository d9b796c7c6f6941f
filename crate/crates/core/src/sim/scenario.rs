//! Scenario files and the built-in presets.

use std::collections::BTreeSet;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::model::{Asn, Domain, Prefix, Vrp, VrpSet};

/// Behavior of a publication point when visited.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PpBehavior {
    /// Answers normally. `latency_ms` overrides the scenario-wide range.
    Benign {
        #[serde(default)]
        latency_ms: Option<[u64; 2]>,
    },
    /// Reachable with probability `availability` per visit.
    Flaky { availability: f64 },
    /// Drops each VRP with probability `drop` per visit.
    Jitter { drop: f64 },
    /// Holds the connection open for `hold`.
    Stalling {
        #[serde(with = "humantime_serde")]
        hold: Duration,
    },
    /// Makes the relying party exit abnormally once connected.
    Crashing,
}

impl Default for PpBehavior {
    fn default() -> Self {
        PpBehavior::Benign { latency_ms: None }
    }
}

impl PpBehavior {
    fn validate(&self) -> Result<(), String> {
        let prob = |p: f64, name: &str| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(format!("{name} must lie in [0, 1], got {p}"))
            }
        };
        match self {
            PpBehavior::Benign { latency_ms: Some([lo, hi]) } if lo > hi => {
                Err(format!("latency range {lo}..{hi} is empty"))
            }
            PpBehavior::Flaky { availability } => prob(*availability, "availability"),
            PpBehavior::Jitter { drop } => prob(*drop, "drop"),
            PpBehavior::Stalling { hold } if hold.is_zero() => Err("hold must be positive".into()),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpConfig {
    pub domain: Domain,
    pub ip: IpAddr,
    #[serde(default)]
    pub behavior: PpBehavior,
    /// What the publication point contributes, in VRP file form.
    #[serde(default)]
    pub vrps: VrpSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TalConfig {
    pub name: String,
    /// Publication points in visiting order.
    pub pps: Vec<PpConfig>,
}

/// A timed behavior switch.
///
/// Between `at` and `until` (scenario time), the publication point `pp`
/// behaves as `behavior` for the listed nodes, or for every node when
/// `nodes` is absent. Later entries take precedence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    #[serde(with = "humantime_serde")]
    pub at: Duration,
    #[serde(default, with = "humantime_serde")]
    pub until: Option<Duration>,
    pub pp: Domain,
    pub behavior: PpBehavior,
    #[serde(default)]
    pub nodes: Option<Vec<usize>>,
}

impl ScheduleEntry {
    fn applies(&self, t: Duration, node: usize) -> bool {
        t >= self.at
            && self.until.is_none_or(|u| t < u)
            && self.nodes.as_ref().is_none_or(|n| n.contains(&node))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(with = "humantime_serde")]
    pub refresh_interval: Duration,
    /// Default per-visit latency range in milliseconds.
    #[serde(default = "default_latency")]
    pub latency_ms: [u64; 2],
    pub tals: Vec<TalConfig>,
    #[serde(default)]
    pub schedule: Vec<ScheduleEntry>,
}

fn default_latency() -> [u64; 2] {
    [50, 500]
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: ScenarioConfig =
            serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |what: String| Err(ScenarioError::Invalid(what));
        if self.refresh_interval.is_zero() {
            return bad("refresh_interval must be positive".into());
        }
        if self.latency_ms[0] > self.latency_ms[1] {
            return bad("latency_ms range is empty".into());
        }
        let mut tals = BTreeSet::new();
        let mut domains = BTreeSet::new();
        let mut ips = BTreeSet::new();
        for tal in &self.tals {
            if !tals.insert(&tal.name) {
                return bad(format!("duplicate TAL {}", tal.name));
            }
            for pp in &tal.pps {
                if !domains.insert(&pp.domain) {
                    return bad(format!("publication point {} listed twice", pp.domain));
                }
                if !ips.insert(pp.ip) {
                    return bad(format!("address {} used twice", pp.ip));
                }
                pp.behavior
                    .validate()
                    .or_else(|e| bad(format!("{}: {e}", pp.domain)))?;
            }
        }
        for (i, entry) in self.schedule.iter().enumerate() {
            if !domains.contains(&entry.pp) {
                return bad(format!("schedule[{i}]: unknown publication point {}", entry.pp));
            }
            if entry.until.is_some_and(|u| u <= entry.at) {
                return bad(format!("schedule[{i}]: until must follow at"));
            }
            entry
                .behavior
                .validate()
                .or_else(|e| bad(format!("schedule[{i}]: {e}")))?;
        }
        Ok(())
    }

    pub fn tal(&self, name: &str) -> Option<&TalConfig> {
        self.tals.iter().find(|t| t.name == name)
    }

    pub fn pp(&self, domain: &Domain) -> Option<&PpConfig> {
        self.tals.iter().flat_map(|t| &t.pps).find(|p| p.domain == *domain)
    }

    /// Behavior of `pp` at scenario time `t` as seen by `node`.
    pub fn behavior_at<'a>(&'a self, pp: &'a PpConfig, t: Duration, node: usize) -> &'a PpBehavior {
        self.schedule
            .iter()
            .rev()
            .find(|e| e.pp == pp.domain && e.applies(t, node))
            .map_or(&pp.behavior, |e| &e.behavior)
    }

    /// Maps every publication point's address to its domain.
    pub fn dnsbook(&self) -> crate::model::DnsBook {
        self.tals
            .iter()
            .flat_map(|t| &t.pps)
            .map(|p| (p.ip, p.domain.clone()))
            .collect()
    }

    /// Union of all contributions.
    pub fn ground_truth(&self) -> VrpSet {
        self.ground_truth_without(&BTreeSet::new())
    }

    /// Union of all contributions except those of the given domains.
    pub fn ground_truth_without(&self, excluded: &BTreeSet<Domain>) -> VrpSet {
        let mut res = VrpSet::new();
        for pp in self.tals.iter().flat_map(|t| &t.pps) {
            if !excluded.contains(&pp.domain) {
                res.extend(&pp.vrps);
            }
        }
        res
    }
}

#[derive(Clone, Debug, Eq, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
}

//------------ Presets -------------------------------------------------------

pub const PRESET_NAMES: [&str; 4] = ["benign-A", "benign-B", "dos-ripe", "blackout"];

/// The publication point the `dos-ripe` preset turns hostile.
pub const DOS_TARGET: &str = "rpki.ripe.net";

/// The publication point disturbed in the `blackout` preset.
pub const BLACKOUT_TARGET: &str = "rpki.apnic.net";

// (TAL, publication points with their number of v4 and v6 ROAs)
type PpLayout = (&'static str, u32, u32);

const LAYOUT: [(&str, &[PpLayout]); 5] = [
    ("AFRINIC", &[("rpki.afrinic.net", 18, 4), ("rpki.example-za.net", 7, 2)]),
    (
        "APNIC",
        &[
            ("rpki.apnic.net", 40, 12),
            ("rpki.example-jp.net", 11, 3),
            ("rpki.example-au.net", 9, 2),
        ],
    ),
    (
        "ARIN",
        &[
            ("rrdp.arin.net", 45, 10),
            ("rpki.example-us.net", 14, 4),
            ("rpki.example-ca.net", 6, 1),
        ],
    ),
    ("LACNIC", &[("repository.lacnic.net", 21, 5), ("rpki.example-br.net", 8, 2)]),
    (
        "RIPE",
        &[
            ("rpki.ripe.net", 52, 14),
            ("rpki.example-de.net", 16, 5),
            ("rpki.example-nl.net", 12, 3),
            ("rpki.example-se.net", 5, 1),
        ],
    ),
];

fn base_scenario(name: &str, refresh: Duration) -> ScenarioConfig {
    let mut tals = Vec::new();
    let mut index = 0u8;
    for (tal, pps) in LAYOUT {
        let mut list = Vec::new();
        for (domain, v4, v6) in pps.iter().copied() {
            index += 1;
            let asn = Asn(64_495 + u32::from(index));
            let mut vrps = VrpSet::new();
            for j in 0..v4 {
                let prefix = Prefix::v4(Ipv4Addr::new(10, index, j as u8, 0), 24).expect("valid");
                let max_len = 24 + 2 * (j % 3) as u8;
                vrps.insert(Vrp::roa(asn, prefix, max_len, tal).expect("valid"));
            }
            for j in 0..v6 {
                let addr = Ipv6Addr::new(0x2001, 0xdb8, u16::from(index), j as u16, 0, 0, 0, 0);
                let prefix = Prefix::v6(addr, 64).expect("valid");
                vrps.insert(Vrp::roa(asn, prefix, 64, tal).expect("valid"));
            }
            list.push(PpConfig {
                domain: domain.parse().expect("valid domain"),
                ip: IpAddr::V4(Ipv4Addr::new(198, 51, 100, index)),
                behavior: PpBehavior::default(),
                vrps,
            });
        }
        tals.push(TalConfig {
            name: tal.to_string(),
            pps: list,
        });
    }
    ScenarioConfig {
        name: name.to_string(),
        seed: 0,
        refresh_interval: refresh,
        latency_ms: default_latency(),
        tals,
        schedule: Vec::new(),
    }
}

/// Looks up a built-in scenario.
pub fn scenario_preset(name: &str) -> Result<ScenarioConfig, ScenarioError> {
    let minute = Duration::from_secs(60);
    match name {
        "benign-A" => Ok(base_scenario(name, Duration::from_secs(10))),
        "benign-B" => Ok(base_scenario(name, 10 * minute)),
        "dos-ripe" => {
            let mut s = base_scenario(name, Duration::from_secs(10));
            s.schedule.push(ScheduleEntry {
                at: 15 * minute,
                until: None,
                pp: DOS_TARGET.parse().expect("valid"),
                behavior: PpBehavior::Crashing,
                nodes: None,
            });
            Ok(s)
        }
        "blackout" => {
            let mut s = base_scenario(name, Duration::from_secs(10));
            s.schedule.push(ScheduleEntry {
                at: 10 * minute,
                until: Some(12 * minute),
                pp: BLACKOUT_TARGET.parse().expect("valid"),
                behavior: PpBehavior::Jitter { drop: 0.9 },
                nodes: Some(vec![0]),
            });
            Ok(s)
        }
        other => Err(ScenarioError::UnknownPreset(other.to_string())),
    }
}

/// All presets by name.
pub fn scenario_presets() -> Vec<ScenarioConfig> {
    PRESET_NAMES
        .iter()
        .map(|n| scenario_preset(n).expect("preset exists"))
        .collect()
}
