//! Peer addresses and the peerlist.

use std::fmt;
use std::net::{IpAddr, SocketAddr};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::lines;

/// A peer's address: an IP address or host name, with an optional port.
///
/// Stored in normalized text form (`1.2.3.4`, `1.2.3.4:8443`, `[::1]:8443`,
/// `node.example`), which is also how it appears in the peerlist file.
#[derive(Clone, Debug, Eq, Hash, Ord, PartialEq, PartialOrd)]
pub struct PeerAddr(String);

impl PeerAddr {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Host part without brackets.
    pub fn host(&self) -> &str {
        self.split().0
    }

    pub fn port(&self) -> Option<u16> {
        self.split().1
    }

    pub fn ip(&self) -> Option<IpAddr> {
        self.host().parse().ok()
    }

    pub fn from_ip(ip: IpAddr) -> Self {
        PeerAddr(ip.to_string())
    }

    pub fn from_socket(addr: SocketAddr) -> Self {
        PeerAddr(addr.to_string())
    }

    fn split(&self) -> (&str, Option<u16>) {
        let s = self.0.as_str();
        if let Some(rest) = s.strip_prefix('[') {
            let (host, tail) = rest.split_once(']').expect("normalized");
            return (host, tail.strip_prefix(':').and_then(|p| p.parse().ok()));
        }
        if s.parse::<IpAddr>().is_ok() {
            return (s, None);
        }
        match s.rsplit_once(':') {
            Some((host, port)) => (host, port.parse().ok()),
            None => (s, None),
        }
    }
}

fn valid_hostname(host: &str) -> bool {
    !host.is_empty()
        && host.len() <= 253
        && host.split('.').all(|l| {
            !l.is_empty()
                && l.len() <= 63
                && l.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-')
                && !l.starts_with('-')
        })
}

fn parse_port(s: &str) -> Option<u16> {
    if s.is_empty() || s.len() > 5 || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok().filter(|p| *p != 0)
}

impl FromStr for PeerAddr {
    type Err = PeerAddrError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || PeerAddrError(s.to_string());
        if let Ok(ip) = s.parse::<IpAddr>() {
            return Ok(PeerAddr(ip.to_string()));
        }
        if let Some(rest) = s.strip_prefix('[') {
            let (host, tail) = rest.split_once(']').ok_or_else(bad)?;
            let ip: std::net::Ipv6Addr = host.parse().map_err(|_| bad())?;
            return match tail {
                "" => Ok(PeerAddr(ip.to_string())),
                t => {
                    let port = t.strip_prefix(':').and_then(parse_port).ok_or_else(bad)?;
                    Ok(PeerAddr(format!("[{ip}]:{port}")))
                }
            };
        }
        let (host, port) = match s.rsplit_once(':') {
            Some((h, p)) => (h, Some(parse_port(p).ok_or_else(bad)?)),
            None => (s, None),
        };
        let host = match host.parse::<IpAddr>() {
            Ok(IpAddr::V4(v4)) => v4.to_string(),
            Ok(IpAddr::V6(_)) => return Err(bad()),
            Err(_) if valid_hostname(host) => host.to_ascii_lowercase(),
            Err(_) => return Err(bad()),
        };
        Ok(PeerAddr(match port {
            Some(p) => format!("{host}:{p}"),
            None => host,
        }))
    }
}

impl fmt::Display for PeerAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for PeerAddr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for PeerAddr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, Eq, PartialEq, thiserror::Error)]
#[error("invalid peer address {0:?}")]
pub struct PeerAddrError(pub String);

/// Known peers in insertion order, without duplicates.
#[derive(Clone, Debug, Default, Eq, PartialEq)]
pub struct Peerlist {
    peers: Vec<PeerAddr>,
}

impl Peerlist {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.peers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peers.is_empty()
    }

    pub fn contains(&self, addr: &PeerAddr) -> bool {
        self.peers.contains(addr)
    }

    /// Appends `addr` unless already present.
    pub fn insert(&mut self, addr: PeerAddr) -> bool {
        if self.contains(&addr) {
            false
        } else {
            self.peers.push(addr);
            true
        }
    }

    pub fn iter(&self) -> std::slice::Iter<'_, PeerAddr> {
        self.peers.iter()
    }

    /// Parses the peerlist file: one address per line, `#` comments.
    pub fn parse(text: &str) -> Result<Self, PeerlistError> {
        let mut res = Peerlist::new();
        for (line, entry) in lines(text) {
            let addr = entry.parse().map_err(|e: PeerAddrError| PeerlistError {
                line,
                reason: e.to_string(),
            })?;
            res.insert(addr);
        }
        Ok(res)
    }

    /// Serializes the peerlist, leaving out the node's own address.
    pub fn serialize(&self, own: Option<&PeerAddr>) -> String {
        let mut out = String::new();
        for p in self.peers.iter().filter(|p| Some(*p) != own) {
            out.push_str(p.as_str());
            out.push('\n');
        }
        out
    }
}

impl FromIterator<PeerAddr> for Peerlist {
    fn from_iter<I: IntoIterator<Item = PeerAddr>>(iter: I) -> Self {
        let mut res = Peerlist::new();
        for p in iter {
            res.insert(p);
        }
        res
    }
}

impl<'a> IntoIterator for &'a Peerlist {
    type Item = &'a PeerAddr;
    type IntoIter = std::slice::Iter<'a, PeerAddr>;

    fn into_iter(self) -> Self::IntoIter {
        self.peers.iter()
    }
}

#[derive(Clone, Debug, Eq, PartialEq, thiserror::Error)]
#[error("line {line}: {reason}")]
pub struct PeerlistError {
    pub line: usize,
    pub reason: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_listing() {
        let list = Peerlist::parse("172.17.0.2\n172.17.0.3").unwrap();
        assert_eq!(list.len(), 2);
        assert!(Peerlist::parse("").unwrap().is_empty());
    }

    #[test]
    fn address_forms() {
        for (input, norm, host, port) in [
            ("172.17.0.2", "172.17.0.2", "172.17.0.2", None),
            ("172.17.0.2:8443", "172.17.0.2:8443", "172.17.0.2", Some(8443)),
            ("2001:DB8::1", "2001:db8::1", "2001:db8::1", None),
            ("[2001:db8::1]:8443", "[2001:db8::1]:8443", "2001:db8::1", Some(8443)),
            ("Node-1.Example", "node-1.example", "node-1.example", None),
            ("node.example:9000", "node.example:9000", "node.example", Some(9000)),
        ] {
            let a: PeerAddr = input.parse().unwrap();
            assert_eq!(a.as_str(), norm);
            assert_eq!(a.host(), host);
            assert_eq!(a.port(), port);
        }
        for bad in ["", "a b", "node:0", "node:99999", "[::1", "http://x", "-x.example", "::1]:4"] {
            assert!(bad.parse::<PeerAddr>().is_err(), "{bad}");
        }
    }

    #[test]
    fn dedupes_and_excludes_self() {
        let list = Peerlist::parse("# peers\n10.0.0.1\n10.0.0.2\n10.0.0.1\n").unwrap();
        assert_eq!(list.len(), 2);
        let me: PeerAddr = "10.0.0.1".parse().unwrap();
        assert_eq!(list.serialize(Some(&me)), "10.0.0.2\n");
        assert!(Peerlist::parse("10.0.0.1\nnot an address\n").is_err());
    }
}
