//! Publication-point domains and the skiplist.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::time::Timestamp;

use super::lines;

//------------ Domain --------------------------------------------------------

/// A lower-case publication-point host name without scheme, port or path.
#[derive(Clone, Debug, Eq, Hash, Ord, PartialEq, PartialOrd)]
pub struct Domain(String);

impl Domain {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl FromStr for Domain {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let host = s.strip_suffix('.').unwrap_or(s);
        if host.is_empty() {
            return Err(DomainError::Empty);
        }
        if host.len() > 253 {
            return Err(DomainError::Invalid(s.to_string()));
        }
        for label in host.split('.') {
            let valid = !label.is_empty()
                && label.len() <= 63
                && label
                    .bytes()
                    .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_');
            if !valid {
                return Err(DomainError::Invalid(s.to_string()));
            }
        }
        Ok(Domain(host.to_ascii_lowercase()))
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for Domain {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Domain {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, Eq, PartialEq, thiserror::Error)]
pub enum DomainError {
    #[error("empty domain")]
    Empty,
    #[error("invalid domain {0:?}")]
    Invalid(String),
}

//------------ SkiplistSource ------------------------------------------------

/// Why a domain was skiplisted.
#[derive(Clone, Copy, Debug, Eq, Hash, Ord, PartialEq, PartialOrd)]
pub enum SkiplistSource {
    Crash,
    Stall,
    PeerConsensus,
}

impl SkiplistSource {
    pub fn as_str(self) -> &'static str {
        match self {
            SkiplistSource::Crash => "crash",
            SkiplistSource::Stall => "stall",
            SkiplistSource::PeerConsensus => "peer-consensus",
        }
    }
}

impl FromStr for SkiplistSource {
    type Err = SkiplistError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "crash" => Ok(SkiplistSource::Crash),
            "stall" => Ok(SkiplistSource::Stall),
            "peer-consensus" => Ok(SkiplistSource::PeerConsensus),
            other => Err(SkiplistError::Source(other.to_string())),
        }
    }
}

//------------ SkiplistEntry / Skiplist --------------------------------------

#[derive(Clone, Debug, Eq, PartialEq)]
pub struct SkiplistEntry {
    pub domain: Domain,
    pub added_at: Timestamp,
    pub source: SkiplistSource,
}

/// A node's skiplist with per-entry insertion times.
#[derive(Clone, Debug, Default, Eq, PartialEq)]
pub struct Skiplist {
    entries: BTreeMap<Domain, SkiplistEntry>,
}

impl Skiplist {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, domain: &Domain) -> bool {
        self.entries.contains_key(domain)
    }

    pub fn get(&self, domain: &Domain) -> Option<&SkiplistEntry> {
        self.entries.get(domain)
    }

    pub fn entries(&self) -> impl Iterator<Item = &SkiplistEntry> {
        self.entries.values()
    }

    /// The domains only, as carried on the wire.
    pub fn domains(&self) -> BTreeSet<Domain> {
        self.entries.keys().cloned().collect()
    }

    /// Inserts `domains`, refreshing the timestamp of entries already present.
    pub fn update<'a, I>(&mut self, domains: I, now: Timestamp, source: SkiplistSource)
    where
        I: IntoIterator<Item = &'a Domain>,
    {
        for domain in domains {
            self.entries.insert(
                domain.clone(),
                SkiplistEntry {
                    domain: domain.clone(),
                    added_at: now,
                    source,
                },
            );
        }
    }

    /// Drops entries older than `expiry`; an entry aged exactly `expiry` stays.
    pub fn expire(&mut self, now: Timestamp, expiry: Duration) -> Vec<Domain> {
        let expired: Vec<Domain> = self
            .entries
            .values()
            .filter(|e| now.since(e.added_at) > expiry)
            .map(|e| e.domain.clone())
            .collect();
        for d in &expired {
            self.entries.remove(d);
        }
        expired
    }

    /// Parses the sidecar file that keeps entry metadata next to the
    /// domains-only wire format: `domain<TAB>added_at<TAB>source` per line.
    pub fn parse_sidecar(text: &str) -> Result<Self, SkiplistError> {
        let mut res = Skiplist::new();
        for (lineno, line) in lines(text) {
            let mut fields = line.split('\t');
            let (Some(domain), Some(added), Some(source), None) =
                (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(SkiplistError::Line {
                    line: lineno,
                    reason: "expected three tab-separated fields".into(),
                });
            };
            let domain: Domain = domain.trim().parse().map_err(|e: DomainError| {
                SkiplistError::Line {
                    line: lineno,
                    reason: e.to_string(),
                }
            })?;
            let added_at =
                Timestamp::parse_rfc3339(added.trim()).map_err(|e| SkiplistError::Line {
                    line: lineno,
                    reason: e.to_string(),
                })?;
            let source = source.trim().parse()?;
            res.entries.insert(
                domain.clone(),
                SkiplistEntry {
                    domain,
                    added_at,
                    source,
                },
            );
        }
        Ok(res)
    }

    pub fn to_sidecar(&self) -> String {
        let mut out = String::new();
        for e in self.entries.values() {
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                e.domain,
                e.added_at.to_rfc3339(),
                e.source.as_str()
            ));
        }
        out
    }
}

/// Parses the wire skiplist: one domain per line, `#` comments.
pub fn parse_skiplist(text: &str) -> Result<BTreeSet<Domain>, SkiplistError> {
    lines(text)
        .map(|(lineno, line)| {
            line.parse::<Domain>().map_err(|e| SkiplistError::Line {
                line: lineno,
                reason: e.to_string(),
            })
        })
        .collect()
}

pub fn serialize_skiplist<'a, I>(domains: I) -> String
where
    I: IntoIterator<Item = &'a Domain>,
{
    let mut out = String::new();
    for d in domains {
        out.push_str(d.as_str());
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug, Eq, PartialEq, thiserror::Error)]
pub enum SkiplistError {
    #[error("line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error("unknown skiplist source {0:?}")]
    Source(String),
}
