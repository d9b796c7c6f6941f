//! Serial-numbered snapshots of the route origins served to routers.

use std::collections::{BTreeSet, VecDeque};
use std::net::IpAddr;
use std::sync::Arc;

use crate::model::{Asn, Prefix, Roa, VrpSet};

use super::pdu::{Pdu, FLAG_ANNOUNCE};

/// Number of serials kept for incremental updates.
pub const SNAPSHOT_WINDOW: usize = 10;

/// A route origin as carried over RTR. The trust anchor is not part of it,
/// so origins that differ only in trust anchor collapse.
#[derive(Clone, Copy, Debug, Eq, Hash, Ord, PartialEq, PartialOrd)]
pub struct RouteOrigin {
    pub prefix: Prefix,
    pub max_len: u8,
    pub asn: Asn,
}

impl RouteOrigin {
    pub fn from_roa(roa: &Roa) -> Self {
        RouteOrigin {
            prefix: roa.prefix,
            max_len: roa.max_len,
            asn: roa.asn,
        }
    }

    pub fn to_pdu(self, announce: bool) -> Pdu {
        let flags = if announce { FLAG_ANNOUNCE } else { 0 };
        let prefix_len = self.prefix.len();
        match self.prefix.addr() {
            IpAddr::V4(prefix) => Pdu::Ipv4Prefix {
                flags,
                prefix_len,
                max_len: self.max_len,
                prefix,
                asn: self.asn.0,
            },
            IpAddr::V6(prefix) => Pdu::Ipv6Prefix {
                flags,
                prefix_len,
                max_len: self.max_len,
                prefix,
                asn: self.asn.0,
            },
        }
    }

    /// Reads a prefix PDU, returning the origin and the announce flag.
    pub fn from_pdu(pdu: &Pdu) -> Option<(Self, bool)> {
        let (flags, addr, len, max_len, asn) = match *pdu {
            Pdu::Ipv4Prefix { flags, prefix_len, max_len, prefix, asn } => {
                (flags, IpAddr::V4(prefix), prefix_len, max_len, asn)
            }
            Pdu::Ipv6Prefix { flags, prefix_len, max_len, prefix, asn } => {
                (flags, IpAddr::V6(prefix), prefix_len, max_len, asn)
            }
            _ => return None,
        };
        let prefix = Prefix::new(addr, len).ok()?;
        Some((
            RouteOrigin {
                prefix,
                max_len,
                asn: Asn(asn),
            },
            flags & FLAG_ANNOUNCE != 0,
        ))
    }
}

/// The route origins in a VRP set.
pub fn route_origins(vrps: &VrpSet) -> BTreeSet<RouteOrigin> {
    vrps.roas
        .iter()
        .filter_map(|v| v.as_roa())
        .map(RouteOrigin::from_roa)
        .collect()
}

/// Timing values sent in End of Data, in seconds.
#[derive(Clone, Copy, Debug, Eq, PartialEq)]
pub struct Timing {
    pub refresh: u32,
    pub retry: u32,
    pub expire: u32,
}

impl Default for Timing {
    fn default() -> Self {
        Timing {
            refresh: 3600,
            retry: 600,
            expire: 7200,
        }
    }
}

/// The data a cache serves, with the last [`SNAPSHOT_WINDOW`] serials.
///
/// The state is a value: updates return a new state, so sessions holding
/// the old one never see a partial update.
#[derive(Clone, Debug)]
pub struct CacheState {
    session_id: u16,
    timing: Timing,
    snapshots: VecDeque<(u32, Arc<BTreeSet<RouteOrigin>>)>,
}

/// Announcements and withdrawals between two serials.
#[derive(Clone, Debug, Default, Eq, PartialEq)]
pub struct Diff {
    pub announce: Vec<RouteOrigin>,
    pub withdraw: Vec<RouteOrigin>,
}

impl CacheState {
    pub fn new(session_id: u16, timing: Timing) -> Self {
        CacheState {
            session_id,
            timing,
            snapshots: VecDeque::new(),
        }
    }

    pub fn session_id(&self) -> u16 {
        self.session_id
    }

    pub fn timing(&self) -> Timing {
        self.timing
    }

    /// Current serial; `None` until data has been published.
    pub fn serial(&self) -> Option<u32> {
        self.snapshots.back().map(|(s, _)| *s)
    }

    pub fn current(&self) -> Option<&Arc<BTreeSet<RouteOrigin>>> {
        self.snapshots.back().map(|(_, set)| set)
    }

    pub fn snapshot(&self, serial: u32) -> Option<&Arc<BTreeSet<RouteOrigin>>> {
        self.snapshots.iter().find(|(s, _)| *s == serial).map(|(_, set)| set)
    }

    pub fn serials(&self) -> impl Iterator<Item = u32> + '_ {
        self.snapshots.iter().map(|(s, _)| *s)
    }

    /// Returns the state after publishing `vrps`, and whether it changed.
    ///
    /// The first publication gets serial 0. Later ones increment the
    /// serial only if the route origins differ.
    pub fn publish_update(&self, vrps: &VrpSet) -> (CacheState, bool) {
        let origins = route_origins(vrps);
        let serial = match self.snapshots.back() {
            Some((_, cur)) if **cur == origins => return (self.clone(), false),
            Some((s, _)) => s.wrapping_add(1),
            None => 0,
        };
        let mut next = self.clone();
        next.snapshots.push_back((serial, Arc::new(origins)));
        while next.snapshots.len() > SNAPSHOT_WINDOW {
            next.snapshots.pop_front();
        }
        (next, true)
    }

    /// Changes from `serial` to the current serial, if `serial` is still in
    /// the window.
    pub fn diff(&self, serial: u32) -> Option<Diff> {
        let from = self.snapshot(serial)?;
        let to = self.current()?;
        Some(Diff {
            announce: to.difference(from).copied().collect(),
            withdraw: from.difference(to).copied().collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Vrp;

    fn vrps(items: &[(u32, &str, u8, &str)]) -> VrpSet {
        items
            .iter()
            .map(|(asn, p, m, ta)| Vrp::roa(Asn(*asn), p.parse().unwrap(), *m, ta).unwrap())
            .collect()
    }

    #[test]
    fn first_publish_is_serial_zero() {
        let cache = CacheState::new(1, Timing::default());
        assert_eq!(cache.serial(), None);
        let (cache, changed) = cache.publish_update(&vrps(&[(1, "10.0.0.0/8", 8, "RIPE")]));
        assert!(changed);
        assert_eq!(cache.serial(), Some(0));
    }

    #[test]
    fn unchanged_set_keeps_serial() {
        let a = vrps(&[(1, "10.0.0.0/8", 8, "RIPE")]);
        let (cache, _) = CacheState::new(1, Timing::default()).publish_update(&a);
        let (same, changed) = cache.publish_update(&a);
        assert!(!changed);
        assert_eq!(same.serial(), Some(0));
        // a second trust anchor with the same origin changes nothing on the wire
        let b = vrps(&[(1, "10.0.0.0/8", 8, "RIPE"), (1, "10.0.0.0/8", 8, "ARIN")]);
        assert!(!cache.publish_update(&b).1);
    }

    #[test]
    fn addition_yields_announce() {
        let (c0, _) = CacheState::new(1, Timing::default()).publish_update(&vrps(&[(1, "10.0.0.0/8", 8, "R")]));
        let (c1, changed) = c0.publish_update(&vrps(&[(1, "10.0.0.0/8", 8, "R"), (2, "10.1.0.0/16", 16, "R")]));
        assert!(changed);
        assert_eq!(c1.serial(), Some(1));
        let d = c1.diff(0).unwrap();
        assert_eq!(d.announce.len(), 1);
        assert!(d.withdraw.is_empty());
        assert_eq!(d.announce[0].asn, Asn(2));
    }

    #[test]
    fn window_evicts_oldest() {
        let mut cache = CacheState::new(1, Timing::default());
        for i in 0..=SNAPSHOT_WINDOW as u32 {
            cache = cache.publish_update(&vrps(&[(i, "10.0.0.0/8", 8, "R")])).0;
        }
        assert_eq!(cache.serial(), Some(SNAPSHOT_WINDOW as u32));
        assert!(cache.diff(0).is_none());
        assert!(cache.diff(1).is_some());
    }

    #[test]
    fn pdu_round_trip() {
        let set = vrps(&[(65537, "192.0.2.0/24", 24, "ARIN"), (12345, "2001:db8::/32", 48, "RIPE")]);
        for o in route_origins(&set) {
            for announce in [true, false] {
                assert_eq!(RouteOrigin::from_pdu(&o.to_pdu(announce)), Some((o, announce)));
            }
        }
    }
}
