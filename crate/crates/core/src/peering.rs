//! Peer polling, discovery and admission.
//!
//! A peering round polls every known peer for its peerlist, local skiplist
//! and local VRPs, admits newly discovered peers, and recomputes the master
//! outputs from whatever snapshots are fresh at the end of the round.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::future::Future;
use std::sync::Arc;

use futures::future::join_all;
use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::model::{ConsensusConfig, Domain, PeerAddr, PeerSnapshot, Peerlist, VrpSet};
use crate::time::{Clock, Timestamp};
use crate::vote::{compute_master, MasterState};

/// Upper bound on probes per round, so a hostile peerlist cannot keep a
/// round busy indefinitely.
pub const MAX_ADMISSIONS_PER_ROUND: usize = 64;

//------------ Resource ------------------------------------------------------

/// The files a node serves to its peers.
#[derive(Clone, Copy, Debug, Eq, Hash, Ord, PartialEq, PartialOrd)]
pub enum Resource {
    Peerlist,
    Skiplist,
    Vrps,
    Master,
}

impl Resource {
    pub const ALL: [Resource; 4] = [
        Resource::Peerlist,
        Resource::Skiplist,
        Resource::Vrps,
        Resource::Master,
    ];

    pub fn path(self) -> &'static str {
        match self {
            Resource::Peerlist => "/peerlist",
            Resource::Skiplist => "/skiplist",
            Resource::Vrps => "/vrps",
            Resource::Master => "/master",
        }
    }

    pub fn from_path(path: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.path() == path)
    }
}

//------------ PeerClient ----------------------------------------------------

#[derive(Clone, Debug, Eq, PartialEq, thiserror::Error)]
pub enum FetchError {
    #[error("peer unreachable: {0}")]
    Unreachable(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("request timed out")]
    Timeout,
}

/// Client side of the node endpoints.
///
/// Implementations authenticate the remote end; a peer whose certificate
/// does not verify must yield [`FetchError::Auth`].
pub trait PeerClient: Sync {
    fn fetch_peerlist(
        &self,
        peer: &PeerAddr,
    ) -> impl Future<Output = Result<Arc<Peerlist>, FetchError>> + Send;

    fn fetch_skiplist(
        &self,
        peer: &PeerAddr,
    ) -> impl Future<Output = Result<Arc<BTreeSet<Domain>>, FetchError>> + Send;

    fn fetch_vrps(
        &self,
        peer: &PeerAddr,
    ) -> impl Future<Output = Result<Arc<VrpSet>, FetchError>> + Send;

    fn fetch_master(
        &self,
        peer: &PeerAddr,
    ) -> impl Future<Output = Result<Arc<VrpSet>, FetchError>> + Send;
}

/// Fetches the three peer files. Any failure fails the whole poll.
pub async fn poll_peer<C: PeerClient, K: Clock + ?Sized>(
    client: &C,
    clock: &K,
    peer: &PeerAddr,
) -> Result<PeerSnapshot, FetchError> {
    let (peerlist, skiplist, vrps) = futures::try_join!(
        client.fetch_peerlist(peer),
        client.fetch_skiplist(peer),
        client.fetch_vrps(peer),
    )?;
    Ok(PeerSnapshot {
        peer: peer.clone(),
        fetched_at: clock.now(),
        vrps,
        skiplist,
        peerlist,
    })
}

//------------ AccessLogEntry ------------------------------------------------

/// One authenticated request to the node's endpoints.
#[derive(Clone, Debug, Eq, PartialEq)]
pub struct AccessLogEntry {
    pub client: PeerAddr,
    pub path: String,
    pub timestamp: Timestamp,
}

//------------ PeeringState --------------------------------------------------

/// What happened to a peer during a round.
#[derive(Clone, Debug, Eq, PartialEq)]
pub enum PeerEvent {
    Polled(PeerAddr),
    PollFailed(PeerAddr, FetchError),
    Admitted(PeerAddr),
    Rejected(PeerAddr, FetchError),
}

#[derive(Clone, Debug)]
pub struct PeeringState {
    self_address: PeerAddr,
    peerlist: Peerlist,
    snapshots: BTreeMap<PeerAddr, PeerSnapshot>,
    candidates: BTreeSet<PeerAddr>,
    last_poll: Option<Timestamp>,
}

impl PeeringState {
    /// Starts from a bootstrap list. The node's own address is dropped.
    pub fn new(self_address: PeerAddr, bootstrap: &Peerlist) -> Self {
        let peerlist = bootstrap
            .iter()
            .filter(|p| **p != self_address)
            .cloned()
            .collect();
        PeeringState {
            self_address,
            peerlist,
            snapshots: BTreeMap::new(),
            candidates: BTreeSet::new(),
            last_poll: None,
        }
    }

    pub fn self_address(&self) -> &PeerAddr {
        &self.self_address
    }

    pub fn peerlist(&self) -> &Peerlist {
        &self.peerlist
    }

    pub fn snapshots(&self) -> impl Iterator<Item = &PeerSnapshot> {
        self.snapshots.values()
    }

    pub fn snapshot(&self, peer: &PeerAddr) -> Option<&PeerSnapshot> {
        self.snapshots.get(peer)
    }

    pub fn candidates(&self) -> &BTreeSet<PeerAddr> {
        &self.candidates
    }

    pub fn last_poll(&self) -> Option<Timestamp> {
        self.last_poll
    }

    /// Stores a snapshot unless an equally new or newer one is present.
    pub fn record_snapshot(&mut self, snap: PeerSnapshot) -> bool {
        if !self.peerlist.contains(&snap.peer) {
            return false;
        }
        match self.snapshots.get(&snap.peer) {
            Some(old) if old.fetched_at > snap.fetched_at => false,
            _ => {
                self.snapshots.insert(snap.peer.clone(), snap);
                true
            }
        }
    }

    /// Addresses from peerlists and `/peerlist` requests that are neither
    /// known peers nor this node.
    pub fn discover_candidates<'a, P, A>(&self, peerlists: P, access_log: A) -> BTreeSet<PeerAddr>
    where
        P: IntoIterator<Item = &'a Peerlist>,
        A: IntoIterator<Item = &'a AccessLogEntry>,
    {
        let from_lists = peerlists.into_iter().flat_map(|l| l.iter().cloned());
        let from_log = access_log
            .into_iter()
            .filter(|e| e.path == Resource::Peerlist.path())
            .map(|e| e.client.clone());
        from_lists
            .chain(from_log)
            .filter(|a| *a != self.self_address && !self.peerlist.contains(a))
            .collect()
    }

    pub fn add_candidates(&mut self, found: impl IntoIterator<Item = PeerAddr>) {
        for addr in found {
            if addr != self.self_address && !self.peerlist.contains(&addr) {
                self.candidates.insert(addr);
            }
        }
    }

    /// Probes a candidate and adds it to the peerlist on success.
    ///
    /// A failed candidate is dropped; it is probed again only once it is
    /// rediscovered.
    pub async fn admit_candidate<C: PeerClient, K: Clock + ?Sized>(
        &mut self,
        client: &C,
        clock: &K,
        addr: &PeerAddr,
    ) -> Result<(), AdmitError> {
        self.candidates.remove(addr);
        if *addr == self.self_address {
            return Err(AdmitError::SelfAddress);
        }
        if self.peerlist.contains(addr) {
            return Ok(());
        }
        let snap = poll_peer(client, clock, addr).await?;
        self.peerlist.insert(addr.clone());
        self.snapshots.insert(addr.clone(), snap);
        Ok(())
    }
}

#[derive(Clone, Debug, Eq, PartialEq, thiserror::Error)]
pub enum AdmitError {
    #[error("candidate is this node")]
    SelfAddress,
    #[error(transparent)]
    Fetch(#[from] FetchError),
}

/// Runs one round: poll, discover, admit, vote.
///
/// Peers are polled concurrently in random order. Every admitted candidate's
/// peerlist is searched in the same round, up to
/// [`MAX_ADMISSIONS_PER_ROUND`] probes.
#[allow(clippy::too_many_arguments)]
pub async fn peering_round<C, K, R>(
    state: &mut PeeringState,
    client: &C,
    clock: &K,
    access_log: &[AccessLogEntry],
    own: &PeerSnapshot,
    config: &ConsensusConfig,
    rng: &mut R,
    events: &mut Vec<PeerEvent>,
) -> MasterState
where
    C: PeerClient,
    K: Clock + ?Sized,
    R: Rng + ?Sized,
{
    let mut order: Vec<PeerAddr> = state.peerlist.iter().cloned().collect();
    order.shuffle(rng);
    let results = join_all(order.iter().map(|p| poll_peer(client, clock, p))).await;

    let mut fetched_lists = Vec::new();
    for (peer, res) in order.into_iter().zip(results) {
        match res {
            Ok(snap) => {
                fetched_lists.push(snap.peerlist.clone());
                state.record_snapshot(snap);
                events.push(PeerEvent::Polled(peer));
            }
            Err(err) => {
                debug!("poll of {peer} failed: {err}");
                events.push(PeerEvent::PollFailed(peer, err));
            }
        }
    }

    let found = state.discover_candidates(fetched_lists.iter().map(|l| l.as_ref()), access_log);
    state.add_candidates(found);

    let mut queue: VecDeque<PeerAddr> = {
        let mut c: Vec<_> = state.candidates.iter().cloned().collect();
        c.shuffle(rng);
        c.into()
    };
    let mut probes = 0;
    while let Some(addr) = queue.pop_front() {
        if probes == MAX_ADMISSIONS_PER_ROUND {
            break;
        }
        if state.peerlist.contains(&addr) || addr == state.self_address {
            state.candidates.remove(&addr);
            continue;
        }
        probes += 1;
        match state.admit_candidate(client, clock, &addr).await {
            Ok(()) => {
                info!("admitted peer {addr}");
                let list = state.snapshots[&addr].peerlist.clone();
                let more = state.discover_candidates([list.as_ref()], []);
                for m in more {
                    if state.candidates.insert(m.clone()) {
                        queue.push_back(m);
                    }
                }
                events.push(PeerEvent::Admitted(addr));
            }
            Err(AdmitError::Fetch(err)) => {
                warn!("candidate {addr} rejected: {err}");
                events.push(PeerEvent::Rejected(addr, err));
            }
            Err(AdmitError::SelfAddress) => {}
        }
    }

    let now = clock.now();
    state.last_poll = Some(now);
    compute_master(state.snapshots.values(), own, config, now)
}
