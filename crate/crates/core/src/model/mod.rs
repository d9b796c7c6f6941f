//! Shared domain types and the node-data file formats.

mod peerlist;
mod skiplist;
mod vrp;

pub use self::peerlist::{PeerAddr, PeerAddrError, Peerlist, PeerlistError};
pub use self::skiplist::{
    parse_skiplist, serialize_skiplist, Domain, DomainError, Skiplist, SkiplistEntry,
    SkiplistError, SkiplistSource,
};
pub use self::vrp::{Asn, Prefix, Roa, Vrp, VrpError, VrpFileError, VrpKind, VrpSet};

use std::collections::{BTreeMap, BTreeSet};
use std::net::IpAddr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::time::Timestamp;

/// Non-empty lines with `#` comments stripped, numbered from 1.
pub(crate) fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let line = match line.find('#') {
            Some(pos) => &line[..pos],
            None => line,
        }
        .trim();
        (!line.is_empty()).then_some((i + 1, line))
    })
}

//------------ PeerSnapshot --------------------------------------------------

/// The latest data fetched from one peer.
#[derive(Clone, Debug)]
pub struct PeerSnapshot {
    pub peer: PeerAddr,
    pub fetched_at: Timestamp,
    pub vrps: Arc<VrpSet>,
    pub skiplist: Arc<BTreeSet<Domain>>,
    pub peerlist: Arc<Peerlist>,
}

impl PeerSnapshot {
    pub fn is_fresh(&self, now: Timestamp, staleness_tolerance: Duration) -> bool {
        now.since(self.fetched_at) <= staleness_tolerance
    }
}

//------------ DnsBook -------------------------------------------------------

/// Maps remote addresses seen on the wire back to publication-point domains.
#[derive(Clone, Debug, Default, Eq, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DnsBook(BTreeMap<IpAddr, Domain>);

impl DnsBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, ip: IpAddr, domain: Domain) {
        self.0.insert(ip, domain);
    }

    pub fn get(&self, ip: &IpAddr) -> Option<&Domain> {
        self.0.get(ip)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Parses `ip domain` lines.
    pub fn parse(text: &str) -> Result<Self, DnsBookError> {
        let mut book = DnsBook::new();
        for (line, entry) in lines(text) {
            let mut parts = entry.split_whitespace();
            let (Some(ip), Some(domain), None) = (parts.next(), parts.next(), parts.next())
            else {
                return Err(DnsBookError {
                    line,
                    reason: "expected `<ip> <domain>`".into(),
                });
            };
            let ip = ip.parse().map_err(|_| DnsBookError {
                line,
                reason: format!("invalid address {ip:?}"),
            })?;
            let domain = domain.parse().map_err(|e: DomainError| DnsBookError {
                line,
                reason: e.to_string(),
            })?;
            book.insert(ip, domain);
        }
        Ok(book)
    }
}

impl FromIterator<(IpAddr, Domain)> for DnsBook {
    fn from_iter<I: IntoIterator<Item = (IpAddr, Domain)>>(iter: I) -> Self {
        DnsBook(iter.into_iter().collect())
    }
}

#[derive(Clone, Debug, Eq, PartialEq, thiserror::Error)]
#[error("dnsbook line {line}: {reason}")]
pub struct DnsBookError {
    pub line: usize,
    pub reason: String,
}

//------------ ConsensusConfig -----------------------------------------------

/// Parameters of the vote, the peering cadence and the monitor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsensusConfig {
    /// Consensus factor; the fault bound is `floor(c * |P|)`.
    pub c: f64,
    #[serde(with = "humantime_serde")]
    pub staleness_tolerance: Duration,
    #[serde(with = "humantime_serde")]
    pub poll_period: Duration,
    #[serde(with = "humantime_serde")]
    pub blacklist_expiry: Duration,
    /// Fraction of the per-connection timeout after which an open
    /// connection counts as stalling.
    pub stall_fraction: f64,
    /// The relying party's global timeout. Individual connections time out
    /// after a quarter of it.
    #[serde(with = "humantime_serde")]
    pub global_timeout: Duration,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        ConsensusConfig {
            c: 0.5,
            staleness_tolerance: Duration::from_secs(3600),
            poll_period: Duration::from_secs(10),
            blacklist_expiry: Duration::from_secs(24 * 3600),
            stall_fraction: 0.9,
            global_timeout: Duration::from_secs(3600),
        }
    }
}

impl ConsensusConfig {
    pub fn connection_timeout(&self) -> Duration {
        self.global_timeout / 4
    }

    /// Age beyond which an open connection is flagged as stalling.
    pub fn stall_threshold(&self) -> Duration {
        self.connection_timeout().mul_f64(self.stall_fraction)
    }

    /// Checks the invariants, naming the offending field.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.c) {
            return Err(ConfigError::new("c", format!("must lie in [0, 1], got {}", self.c)));
        }
        if !(self.stall_fraction > 0.0 && self.stall_fraction <= 1.0) {
            return Err(ConfigError::new(
                "stall_fraction",
                format!("must lie in (0, 1], got {}", self.stall_fraction),
            ));
        }
        for (name, d) in [
            ("staleness_tolerance", self.staleness_tolerance),
            ("poll_period", self.poll_period),
            ("blacklist_expiry", self.blacklist_expiry),
            ("global_timeout", self.global_timeout),
        ] {
            if d.is_zero() {
                return Err(ConfigError::new(name, "must be positive"));
            }
        }
        Ok(())
    }
}

/// A configuration value that violates its constraints.
#[derive(Clone, Debug, Eq, PartialEq, thiserror::Error)]
#[error("{field}: {reason}")]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Prefixes the field path with a section name.
    pub fn within(mut self, section: &str) -> Self {
        self.field = format!("{section}.{}", self.field);
        self
    }
}
