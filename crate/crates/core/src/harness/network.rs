//! In-memory transport between simulated nodes.
//!
//! Identity is the node index. A node whose certificate does not chain to
//! the shared root can neither be fetched from nor fetch from others, and
//! its failed requests never reach an access log.

use std::collections::{BTreeMap, BTreeSet};
use std::net::{IpAddr, Ipv4Addr};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::model::{Domain, PeerAddr, Peerlist, VrpSet};
use crate::peering::{AccessLogEntry, FetchError, PeerClient, Resource};
use crate::time::Timestamp;

/// Address of simulated node `index`.
pub fn node_address(index: usize) -> PeerAddr {
    let ip = Ipv4Addr::new(172, 17, (2 + index / 250) as u8, (2 + index % 250) as u8);
    PeerAddr::from_ip(IpAddr::V4(ip))
}

/// Address the harness uses when it observes or audits nodes.
pub fn observer_address() -> PeerAddr {
    PeerAddr::from_ip(IpAddr::V4(Ipv4Addr::new(198, 18, 0, 1)))
}

/// How a byzantine node manipulates the VRPs it serves on `/vrps` and
/// `/master`. Underneath it runs like an honest node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ByzantineBehavior {
    /// Adds `objects` for everyone.
    Poison { objects: VrpSet },
    /// Withholds `objects` from everyone.
    Censor { objects: VrpSet },
    /// Adds `objects` only for the listed node indices. `observer` includes
    /// the harness itself among the targets.
    Split {
        targets: BTreeSet<usize>,
        #[serde(default)]
        observer: bool,
        objects: VrpSet,
    },
}

impl ByzantineBehavior {
    /// The set served to `requester` (`None` for the observer).
    pub fn apply(&self, requester: Option<usize>, vrps: &Arc<VrpSet>) -> Arc<VrpSet> {
        match self {
            ByzantineBehavior::Poison { objects } => Arc::new(vrps.union(objects)),
            ByzantineBehavior::Censor { objects } => Arc::new(vrps.difference(objects)),
            ByzantineBehavior::Split { targets, observer, objects } => {
                let hit = match requester {
                    Some(i) => targets.contains(&i),
                    None => *observer,
                };
                if hit {
                    Arc::new(vrps.union(objects))
                } else {
                    vrps.clone()
                }
            }
        }
    }
}

/// The files a node currently serves.
#[derive(Clone, Debug, Default)]
pub struct Served {
    pub peerlist: Arc<Peerlist>,
    pub skiplist: Arc<BTreeSet<Domain>>,
    pub vrps: Arc<VrpSet>,
    pub master: Arc<VrpSet>,
}

pub struct Network {
    addrs: Vec<PeerAddr>,
    index: BTreeMap<PeerAddr, usize>,
    pub(super) served: Vec<Served>,
    pub(super) up: Vec<bool>,
    trusted: Vec<bool>,
    byzantine: Vec<Option<ByzantineBehavior>>,
    access_log: Mutex<Vec<Vec<AccessLogEntry>>>,
    pub(super) now: Timestamp,
}

impl Network {
    pub fn new(
        nodes: usize,
        untrusted: &BTreeSet<usize>,
        byzantine: &BTreeMap<usize, ByzantineBehavior>,
        now: Timestamp,
    ) -> Self {
        let addrs: Vec<PeerAddr> = (0..nodes).map(node_address).collect();
        Network {
            index: addrs.iter().cloned().enumerate().map(|(i, a)| (a, i)).collect(),
            addrs,
            served: vec![Served::default(); nodes],
            up: vec![false; nodes],
            trusted: (0..nodes).map(|i| !untrusted.contains(&i)).collect(),
            byzantine: (0..nodes).map(|i| byzantine.get(&i).cloned()).collect(),
            access_log: Mutex::new(vec![Vec::new(); nodes]),
            now,
        }
    }

    pub fn address(&self, node: usize) -> &PeerAddr {
        &self.addrs[node]
    }

    pub fn node_index(&self, addr: &PeerAddr) -> Option<usize> {
        self.index.get(addr).copied()
    }

    pub fn is_up(&self, node: usize) -> bool {
        self.up[node]
    }

    pub fn byzantine(&self, node: usize) -> Option<&ByzantineBehavior> {
        self.byzantine[node].as_ref()
    }

    /// Removes and returns the requests `node` has served so far.
    pub fn take_access_log(&self, node: usize) -> Vec<AccessLogEntry> {
        std::mem::take(&mut self.access_log.lock().expect("not poisoned")[node])
    }

    /// VRPs node `target` shows to `requester`, without any access checks.
    pub fn view_vrps(&self, target: usize, requester: Option<usize>, master: bool) -> Arc<VrpSet> {
        let served = &self.served[target];
        let base = if master { &served.master } else { &served.vrps };
        match &self.byzantine[target] {
            Some(b) => b.apply(requester, base),
            None => base.clone(),
        }
    }

    pub fn client(&self, requester: Option<usize>) -> NetClient<'_> {
        NetClient { net: self, requester }
    }

    fn connect(
        &self,
        requester: Option<usize>,
        peer: &PeerAddr,
        resource: Resource,
    ) -> Result<usize, FetchError> {
        let target = self
            .node_index(peer)
            .ok_or_else(|| FetchError::Unreachable(format!("no route to {peer}")))?;
        if !self.up[target] {
            return Err(FetchError::Unreachable(format!("{peer} is down")));
        }
        if !self.trusted[target] {
            return Err(FetchError::Auth(format!("certificate of {peer} is not trusted")));
        }
        if let Some(i) = requester {
            if !self.trusted[i] {
                return Err(FetchError::Auth(format!("{peer} rejected the client certificate")));
            }
        }
        let client = match requester {
            Some(i) => self.addrs[i].clone(),
            None => observer_address(),
        };
        self.access_log.lock().expect("not poisoned")[target].push(AccessLogEntry {
            client,
            path: resource.path().to_string(),
            timestamp: self.now,
        });
        Ok(target)
    }
}

/// A node's (or the observer's) view of the network.
#[derive(Clone, Copy)]
pub struct NetClient<'a> {
    net: &'a Network,
    requester: Option<usize>,
}

impl PeerClient for NetClient<'_> {
    async fn fetch_peerlist(&self, peer: &PeerAddr) -> Result<Arc<Peerlist>, FetchError> {
        let t = self.net.connect(self.requester, peer, Resource::Peerlist)?;
        Ok(self.net.served[t].peerlist.clone())
    }

    async fn fetch_skiplist(&self, peer: &PeerAddr) -> Result<Arc<BTreeSet<Domain>>, FetchError> {
        let t = self.net.connect(self.requester, peer, Resource::Skiplist)?;
        Ok(self.net.served[t].skiplist.clone())
    }

    async fn fetch_vrps(&self, peer: &PeerAddr) -> Result<Arc<VrpSet>, FetchError> {
        let t = self.net.connect(self.requester, peer, Resource::Vrps)?;
        Ok(self.net.view_vrps(t, self.requester, false))
    }

    async fn fetch_master(&self, peer: &PeerAddr) -> Result<Arc<VrpSet>, FetchError> {
        let t = self.net.connect(self.requester, peer, Resource::Master)?;
        Ok(self.net.view_vrps(t, self.requester, true))
    }
}
