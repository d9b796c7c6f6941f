//! The per-object threshold vote.
//!
//! Every participant contributes one local set. An object enters the global
//! set if at least `T = min(f + 1, n)` participants hold it, where
//! `f = floor(c * n)`. With `c = 0` this is the union of the local sets, with
//! `c = 1` their intersection. Objects are voted on independently and the
//! result does not depend on participant order.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Duration;

use crate::model::{ConsensusConfig, Domain, PeerAddr, PeerSnapshot, VrpKind, VrpSet};
use crate::time::Timestamp;

// Absorbs rounding in products such as 0.29 * 100.
const FACTOR_EPSILON: f64 = 1e-9;

/// Maximum number of faulty participants tolerated: `floor(c * n)`.
pub fn fault_bound(c: f64, n: usize) -> usize {
    debug_assert!((0.0..=1.0).contains(&c));
    let f = (c * n as f64 + FACTOR_EPSILON).floor();
    (f.max(0.0) as usize).min(n)
}

/// Votes an object needs: `f + 1`, clamped to the participant count.
pub fn vote_threshold(c: f64, n: usize) -> usize {
    (fault_bound(c, n) + 1).min(n.max(1))
}

/// Objects held by at least `vote_threshold(c, n)` of the given sets.
pub fn threshold_vote<'a, T, I>(sets: I, c: f64) -> BTreeSet<T>
where
    T: Ord + Clone + 'a,
    I: IntoIterator<Item = &'a BTreeSet<T>>,
{
    let mut n = 0;
    let mut votes: BTreeMap<&T, usize> = BTreeMap::new();
    for set in sets {
        n += 1;
        for obj in set {
            *votes.entry(obj).or_default() += 1;
        }
    }
    let threshold = vote_threshold(c, n);
    votes
        .into_iter()
        .filter(|(_, v)| *v >= threshold)
        .map(|(o, _)| o.clone())
        .collect()
}

/// One vote: the participants' local sets and the consensus factor.
#[derive(Clone, Debug)]
pub struct VoteInstance<T> {
    participants: Vec<(PeerAddr, BTreeSet<T>)>,
    c: f64,
}

impl<T: Ord + Clone> VoteInstance<T> {
    pub fn new(participants: Vec<(PeerAddr, BTreeSet<T>)>, c: f64) -> Result<Self, VoteError> {
        if !(0.0..=1.0).contains(&c) {
            return Err(VoteError::Factor(c));
        }
        let mut seen = BTreeSet::new();
        for (id, _) in &participants {
            if !seen.insert(id) {
                return Err(VoteError::DuplicateParticipant(id.clone()));
            }
        }
        Ok(VoteInstance { participants, c })
    }

    pub fn participant_count(&self) -> usize {
        self.participants.len()
    }

    pub fn threshold(&self) -> usize {
        vote_threshold(self.c, self.participants.len())
    }

    pub fn run(&self) -> BTreeSet<T> {
        threshold_vote(self.participants.iter().map(|(_, s)| s), self.c)
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum VoteError {
    #[error("consensus factor {0} outside [0, 1]")]
    Factor(f64),
    #[error("participant {0} appears twice")]
    DuplicateParticipant(PeerAddr),
}

/// The node's consensus outputs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MasterState {
    pub vrps: VrpSet,
    pub skiplist: BTreeSet<Domain>,
    pub computed_at: Timestamp,
    pub participant_count: usize,
    pub fault_bound: usize,
}

impl MasterState {
    pub fn threshold(&self) -> usize {
        (self.fault_bound + 1).min(self.participant_count.max(1))
    }
}

/// Votes over the node's own snapshot and every fresh peer snapshot.
///
/// Stale peers are left out of the participant count; with no fresh peers
/// the master equals the node's own output.
pub fn compute_master<'a, I>(
    peers: I,
    own: &'a PeerSnapshot,
    config: &ConsensusConfig,
    now: Timestamp,
) -> MasterState
where
    I: IntoIterator<Item = &'a PeerSnapshot>,
{
    let participants = fresh_participants(peers, own, config.staleness_tolerance, now);
    let n = participants.len();
    let mut vrps = VrpSet::new();
    for kind in VrpKind::ALL {
        *vrps.get_mut(kind) = threshold_vote(participants.iter().map(|p| p.vrps.get(kind)), config.c);
    }
    let skiplist = threshold_vote(participants.iter().map(|p| p.skiplist.as_ref()), config.c);
    MasterState {
        vrps,
        skiplist,
        computed_at: now,
        participant_count: n,
        fault_bound: fault_bound(config.c, n),
    }
}

fn fresh_participants<'a, I>(
    peers: I,
    own: &'a PeerSnapshot,
    tolerance: Duration,
    now: Timestamp,
) -> Vec<&'a PeerSnapshot>
where
    I: IntoIterator<Item = &'a PeerSnapshot>,
{
    let mut res = vec![own];
    let mut seen: BTreeSet<&PeerAddr> = [&own.peer].into();
    for snap in peers {
        if snap.is_fresh(now, tolerance) && seen.insert(&snap.peer) {
            res.push(snap);
        }
    }
    res
}

/// Builds a snapshot for a node's own current outputs.
pub fn own_snapshot(
    address: PeerAddr,
    now: Timestamp,
    vrps: Arc<VrpSet>,
    skiplist: Arc<BTreeSet<Domain>>,
    peerlist: Arc<crate::model::Peerlist>,
) -> PeerSnapshot {
    PeerSnapshot {
        peer: address,
        fetched_at: now,
        vrps,
        skiplist,
        peerlist,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(items: &[&'static str]) -> BTreeSet<&'static str> {
        items.iter().copied().collect()
    }

    #[test]
    fn fault_bounds() {
        assert_eq!(fault_bound(0.5, 3), 1);
        assert_eq!(fault_bound(0.5, 5), 2);
        assert_eq!(fault_bound(0.0, 7), 0);
        assert_eq!(fault_bound(0.29, 100), 29);
        assert_eq!(fault_bound(1.0, 4), 4);
    }

    #[test]
    fn thresholds() {
        assert_eq!(vote_threshold(0.5, 3), 2);
        assert_eq!(vote_threshold(0.5, 5), 3);
        assert_eq!(vote_threshold(1.0, 4), 4);
        assert_eq!(vote_threshold(0.0, 5), 1);
        assert_eq!(vote_threshold(0.5, 1), 1);
    }

    #[test]
    fn three_node_example() {
        let sets = [set(&["a", "b"]), set(&["b"]), set(&["b", "c"])];
        assert_eq!(threshold_vote(&sets, 0.5), set(&["b"]));
    }

    #[test]
    fn duplicate_participants_rejected() {
        let p: PeerAddr = "10.0.0.1".parse().unwrap();
        let res = VoteInstance::new(vec![(p.clone(), set(&["a"])), (p, set(&["b"]))], 0.5);
        assert!(matches!(res, Err(VoteError::DuplicateParticipant(_))));
        assert!(matches!(
            VoteInstance::<&str>::new(vec![], 1.5),
            Err(VoteError::Factor(_))
        ));
    }

    fn snap(peer: &str, at: i64, skip: &[&str]) -> PeerSnapshot {
        PeerSnapshot {
            peer: peer.parse().unwrap(),
            fetched_at: Timestamp::from_millis(at),
            vrps: Default::default(),
            skiplist: Arc::new(skip.iter().map(|d| d.parse().unwrap()).collect()),
            peerlist: Default::default(),
        }
    }

    #[test]
    fn master_skiplist_vote() {
        let cfg = ConsensusConfig::default();
        let now = Timestamp::from_millis(10_000);
        let own = snap("10.0.0.1", 10_000, &["x.example"]);
        let peers = [snap("10.0.0.2", 9_000, &["x.example"]), snap("10.0.0.3", 9_000, &[])];
        let m = compute_master(&peers, &own, &cfg, now);
        assert_eq!(m.participant_count, 3);
        assert_eq!(m.fault_bound, 1);
        assert_eq!(m.skiplist.len(), 1);
    }

    #[test]
    fn stale_peers_do_not_count() {
        let cfg = ConsensusConfig::default();
        let hour = 3_600_000;
        let now = Timestamp::from_millis(3 * hour);
        let own = snap("10.0.0.1", 3 * hour, &[]);
        let peers = [
            snap("10.0.0.2", 3 * hour - 1_000, &[]),
            snap("10.0.0.3", 3 * hour - 2_000, &[]),
            snap("10.0.0.4", hour - 1, &[]),
            snap("10.0.0.5", 0, &[]),
        ];
        let m = compute_master(&peers, &own, &cfg, now);
        assert_eq!(m.participant_count, 3);
    }

    #[test]
    fn lone_node_masters_its_own_output() {
        let cfg = ConsensusConfig::default();
        let own = snap("10.0.0.1", 0, &["x.example"]);
        let m = compute_master(std::iter::empty(), &own, &cfg, Timestamp::EPOCH);
        assert_eq!(m.participant_count, 1);
        assert_eq!(m.threshold(), 1);
        assert_eq!(m.skiplist.len(), 1);
    }

    fn instance() -> impl Strategy<Value = (Vec<BTreeSet<u8>>, f64)> {
        (
            prop::collection::vec(prop::collection::btree_set(0u8..10, 0..10), 1..7),
            0.0f64..=1.0,
        )
    }

    proptest! {
        #[test]
        fn bounded_by_union_and_intersection((sets, c) in instance()) {
            let g = threshold_vote(&sets, c);
            let union: BTreeSet<u8> = sets.iter().flatten().copied().collect();
            let inter: BTreeSet<u8> = union
                .iter()
                .filter(|o| sets.iter().all(|s| s.contains(o)))
                .copied()
                .collect();
            prop_assert!(g.is_subset(&union));
            prop_assert!(inter.is_subset(&g));
        }

        #[test]
        fn monotone_in_each_local_set((mut sets, c) in instance(), obj in 0u8..10, who in 0usize..6) {
            let before = threshold_vote(&sets, c);
            let idx = who % sets.len();
            sets[idx].insert(obj);
            let after = threshold_vote(&sets, c);
            prop_assert!(before.is_subset(&after));
        }

        #[test]
        fn permutation_invariant((mut sets, c) in instance(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let before = threshold_vote(&sets, c);
            sets.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(before, threshold_vote(&sets, c));
        }

        #[test]
        fn poisoning_needs_threshold_supporters((sets, c) in instance(), k in 0usize..7) {
            // an object outside every set, injected into k participants
            let n = sets.len();
            let k = k.min(n);
            let mut sets = sets;
            for s in sets.iter_mut().take(k) {
                s.insert(200);
            }
            let g = threshold_vote(&sets, c);
            prop_assert_eq!(g.contains(&200), k >= vote_threshold(c, n));
        }
    }
}
