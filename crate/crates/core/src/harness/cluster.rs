//! Discrete-event simulation of a node cluster under a virtual clock.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::sync::Arc;
use std::time::Duration;

use futures::executor::block_on;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{ConsensusConfig, ConfigError, Domain, PeerAddr, Peerlist, VrpSet};
use crate::monitor::{Monitor, MonitorEvent};
use crate::peering::{peering_round, PeerClient, PeerEvent, PeeringState};
use crate::sim::{ScenarioConfig, SimulatedRp};
use crate::time::{FixedClock, Timestamp};
use crate::vote::{own_snapshot, threshold_vote, MasterState};

use super::audit::MasterObservation;
use super::metrics::{MetricsSample, NodeSample, NodeStatus};
use super::network::{ByzantineBehavior, Network};

/// Wall time of scenario time zero in simulated clusters.
pub const SIM_EPOCH: Timestamp = Timestamp::from_millis(1_704_067_200_000);

/// Initial peerlists.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "peers", rename_all = "kebab-case")]
pub enum Topology {
    /// Everyone knows everyone.
    #[default]
    Mesh,
    /// Node `i` knows `i + 1`; the last node knows its predecessor.
    Chain,
    /// Bootstrap peers per node index.
    Custom(Vec<Vec<usize>>),
}

impl Topology {
    pub fn bootstrap(&self, nodes: usize, node: usize) -> Vec<usize> {
        match self {
            Topology::Mesh => (0..nodes).filter(|&j| j != node).collect(),
            Topology::Chain if nodes < 2 => Vec::new(),
            Topology::Chain if node + 1 < nodes => vec![node + 1],
            Topology::Chain => vec![node - 1],
            Topology::Custom(lists) => lists.get(node).cloned().unwrap_or_default(),
        }
    }
}

/// A node being down between two scenario times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outage {
    pub node: usize,
    #[serde(with = "humantime_serde")]
    pub from: Duration,
    #[serde(default, with = "humantime_serde")]
    pub until: Option<Duration>,
}

/// Everything that determines a cluster run.
#[derive(Clone, Debug)]
pub struct ClusterSpec {
    pub nodes: usize,
    pub scenario: Arc<ScenarioConfig>,
    pub config: ConsensusConfig,
    /// Overrides the scenario's refresh interval.
    pub refresh_interval: Option<Duration>,
    pub duration: Duration,
    pub seed: u64,
    pub topology: Topology,
    pub byzantine: BTreeMap<usize, ByzantineBehavior>,
    /// Nodes whose certificates do not chain to the trust root.
    pub untrusted: BTreeSet<usize>,
    pub outages: Vec<Outage>,
    /// Nodes that only come up at the given scenario time.
    pub join_at: BTreeMap<usize, Duration>,
    /// Nodes start their first validation and peering round at a random
    /// offset below this.
    pub start_spread: Duration,
    pub sample_interval: Duration,
}

impl ClusterSpec {
    pub fn new(nodes: usize, scenario: ScenarioConfig) -> Self {
        let config = ConsensusConfig::default();
        ClusterSpec {
            nodes,
            scenario: Arc::new(scenario),
            sample_interval: config.poll_period,
            start_spread: config.poll_period,
            config,
            refresh_interval: None,
            duration: Duration::from_secs(30 * 60),
            seed: 0,
            topology: Topology::Mesh,
            byzantine: BTreeMap::new(),
            untrusted: BTreeSet::new(),
            outages: Vec::new(),
            join_at: BTreeMap::new(),
        }
    }

    pub fn refresh_interval(&self) -> Duration {
        self.refresh_interval.unwrap_or(self.scenario.refresh_interval)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.nodes == 0 {
            return Err(ConfigError::new("nodes", "at least one node is required"));
        }
        self.config.validate().map_err(|e| e.within("consensus"))?;
        if self.refresh_interval().is_zero() {
            return Err(ConfigError::new("refresh_interval", "must be positive"));
        }
        if self.sample_interval.is_zero() {
            return Err(ConfigError::new("sample_interval", "must be positive"));
        }
        let check = |field: &str, i: usize| {
            if i < self.nodes {
                Ok(())
            } else {
                Err(ConfigError::new(field, format!("node {i} does not exist")))
            }
        };
        for i in self.byzantine.keys() {
            check("byzantine", *i)?;
        }
        for i in &self.untrusted {
            check("untrusted", *i)?;
        }
        for o in &self.outages {
            check("outages", o.node)?;
        }
        for i in self.join_at.keys() {
            check("join_at", *i)?;
        }
        if let Topology::Custom(lists) = &self.topology {
            for i in lists.iter().flatten() {
                check("topology", *i)?;
            }
        }
        Ok(())
    }

    /// Whether `node` is up at scenario time `t`.
    pub fn is_up(&self, node: usize, t: Duration) -> bool {
        let joined = self.join_at.get(&node).is_none_or(|j| t >= *j);
        joined
            && !self
                .outages
                .iter()
                .any(|o| o.node == node && t >= o.from && o.until.is_none_or(|u| t < u))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ClusterEventKind {
    Monitor(MonitorEvent),
    Peer(PeerEvent),
    MasterChanged { vrps: usize, skiplist: Vec<Domain> },
    Up,
    Down,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterEvent {
    pub at: Timestamp,
    pub node: usize,
    pub kind: ClusterEventKind,
}

#[derive(Clone, Copy, Debug, Eq, Ord, PartialEq, PartialOrd)]
enum Action {
    Lifecycle,
    Monitor,
    Peering,
    Sample,
}

struct SimNode {
    monitor: Monitor,
    rp: SimulatedRp,
    peering: PeeringState,
    rng: ChaCha8Rng,
    master: Arc<MasterState>,
    history: Vec<Arc<MasterState>>,
}

/// A running cluster.
pub struct Cluster {
    spec: ClusterSpec,
    net: Network,
    nodes: Vec<SimNode>,
    queue: BinaryHeap<Reverse<(Timestamp, Action, usize)>>,
    now: Timestamp,
    samples: Vec<MetricsSample>,
    events: Vec<ClusterEvent>,
}

impl Cluster {
    pub fn new(spec: ClusterSpec) -> Result<Self, ConfigError> {
        spec.validate()?;
        let mut net = Network::new(spec.nodes, &spec.untrusted, &spec.byzantine, SIM_EPOCH);
        let mut queue = BinaryHeap::new();
        let tals: Vec<String> = spec.scenario.tals.iter().map(|t| t.name.clone()).collect();
        let mut nodes = Vec::with_capacity(spec.nodes);
        for i in 0..spec.nodes {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(1 << 32 | i as u64);
            let join = SIM_EPOCH + spec.join_at.get(&i).copied().unwrap_or_default();
            let spread = spec.start_spread.as_millis().max(1) as u64;
            let monitor_start = join + Duration::from_millis(rng.random_range(0..spread));
            let peering_start = join + Duration::from_millis(rng.random_range(0..spread));
            let bootstrap: Peerlist = spec
                .topology
                .bootstrap(spec.nodes, i)
                .into_iter()
                .map(|j| net.address(j).clone())
                .collect();
            let master = Arc::new(MasterState {
                vrps: VrpSet::new(),
                skiplist: BTreeSet::new(),
                computed_at: SIM_EPOCH,
                participant_count: 0,
                fault_bound: 0,
            });
            net.served[i].peerlist = Arc::new(bootstrap.clone());
            nodes.push(SimNode {
                monitor: Monitor::new(i, tals.clone(), spec.config.clone(), spec.refresh_interval(), monitor_start),
                rp: SimulatedRp::new(spec.scenario.clone(), i, spec.seed, SIM_EPOCH, &spec.config),
                peering: PeeringState::new(net.address(i).clone(), &bootstrap),
                rng,
                history: vec![master.clone()],
                master,
            });
            queue.push(Reverse((monitor_start, Action::Monitor, i)));
            queue.push(Reverse((peering_start, Action::Peering, i)));
        }
        let mut boundaries: BTreeSet<(Duration, usize)> = BTreeSet::new();
        for i in 0..spec.nodes {
            boundaries.insert((Duration::ZERO, i));
        }
        for (i, t) in &spec.join_at {
            boundaries.insert((*t, *i));
        }
        for o in &spec.outages {
            boundaries.insert((o.from, o.node));
            if let Some(u) = o.until {
                boundaries.insert((u, o.node));
            }
        }
        for (t, i) in boundaries {
            queue.push(Reverse((SIM_EPOCH + t, Action::Lifecycle, i)));
        }
        queue.push(Reverse((SIM_EPOCH, Action::Sample, 0)));
        Ok(Cluster {
            spec,
            net,
            nodes,
            queue,
            now: SIM_EPOCH,
            samples: Vec::new(),
            events: Vec::new(),
        })
    }

    pub fn spec(&self) -> &ClusterSpec {
        &self.spec
    }

    pub fn now(&self) -> Timestamp {
        self.now
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn address(&self, node: usize) -> &PeerAddr {
        self.net.address(node)
    }

    pub fn samples(&self) -> &[MetricsSample] {
        &self.samples
    }

    pub fn events(&self) -> &[ClusterEvent] {
        &self.events
    }

    pub fn master(&self, node: usize) -> &Arc<MasterState> {
        &self.nodes[node].master
    }

    /// The master node `node` held at `t`.
    pub fn master_at(&self, node: usize, t: Timestamp) -> &Arc<MasterState> {
        let h = &self.nodes[node].history;
        let idx = h.partition_point(|m| m.computed_at <= t);
        &h[idx.saturating_sub(1)]
    }

    pub fn master_history(&self, node: usize) -> &[Arc<MasterState>] {
        &self.nodes[node].history
    }

    pub fn local_vrps(&self, node: usize) -> &Arc<VrpSet> {
        self.nodes[node].monitor.local_vrps()
    }

    pub fn monitor(&self, node: usize) -> &Monitor {
        &self.nodes[node].monitor
    }

    pub fn peerlist(&self, node: usize) -> &Peerlist {
        self.nodes[node].peering.peerlist()
    }

    pub fn is_honest(&self, node: usize) -> bool {
        !self.spec.byzantine.contains_key(&node)
    }

    pub fn honest_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.spec.nodes).filter(|i| self.is_honest(*i))
    }

    /// Runs the whole configured duration.
    pub fn run(&mut self) {
        self.run_until(SIM_EPOCH + self.spec.duration);
    }

    /// Processes every action scheduled up to and including `end`.
    pub fn run_until(&mut self, end: Timestamp) {
        while let Some(&Reverse((t, action, node))) = self.queue.peek() {
            if t > end {
                break;
            }
            self.queue.pop();
            self.now = t;
            self.net.now = t;
            match action {
                Action::Lifecycle => self.lifecycle(node),
                Action::Monitor => self.monitor_tick(node),
                Action::Peering => self.peering_tick(node),
                Action::Sample => self.sample(),
            }
        }
        self.now = self.now.max(end);
        self.net.now = self.now;
    }

    fn lifecycle(&mut self, i: usize) {
        let up = self.spec.is_up(i, self.now.since(SIM_EPOCH));
        if up != self.net.up[i] {
            self.net.up[i] = up;
            let kind = if up { ClusterEventKind::Up } else { ClusterEventKind::Down };
            self.events.push(ClusterEvent { at: self.now, node: i, kind });
        }
    }

    fn monitor_tick(&mut self, i: usize) {
        let now = self.now;
        if !self.net.up[i] {
            self.queue.push(Reverse((now + crate::monitor::STATUS_POLL, Action::Monitor, i)));
            return;
        }
        let node = &mut self.nodes[i];
        let master = node.master.clone();
        let published = node.monitor.published_at();
        let next = node.monitor.tick(now, &mut node.rp, &master.skiplist, &mut node.rng);
        for ev in node.monitor.take_events() {
            self.events.push(ClusterEvent {
                at: now,
                node: i,
                kind: ClusterEventKind::Monitor(ev),
            });
        }
        let served = &mut self.net.served[i];
        if node.monitor.published_at() != published {
            served.vrps = node.monitor.local_vrps().clone();
        }
        let skiplist = node.monitor.skiplist().domains();
        if *served.skiplist != skiplist {
            served.skiplist = Arc::new(skiplist);
        }
        self.queue.push(Reverse((next.max(now + Duration::from_millis(1)), Action::Monitor, i)));
    }

    fn peering_tick(&mut self, i: usize) {
        let now = self.now;
        self.queue.push(Reverse((now + self.spec.config.poll_period, Action::Peering, i)));
        if !self.net.up[i] {
            return;
        }
        let access = self.net.take_access_log(i);
        let node = &mut self.nodes[i];
        let own = own_snapshot(
            self.net.address(i).clone(),
            now,
            node.monitor.local_vrps().clone(),
            self.net.served[i].skiplist.clone(),
            Arc::new(node.peering.peerlist().clone()),
        );
        let client = self.net.client(Some(i));
        let mut peer_events = Vec::new();
        let master = block_on(peering_round(
            &mut node.peering,
            &client,
            &FixedClock(now),
            &access,
            &own,
            &self.spec.config,
            &mut node.rng,
            &mut peer_events,
        ));
        for ev in peer_events {
            if !matches!(ev, PeerEvent::Polled(_)) {
                self.events.push(ClusterEvent {
                    at: now,
                    node: i,
                    kind: ClusterEventKind::Peer(ev),
                });
            }
        }
        let changed = master.vrps != node.master.vrps || master.skiplist != node.master.skiplist;
        let master = Arc::new(master);
        if changed {
            self.events.push(ClusterEvent {
                at: now,
                node: i,
                kind: ClusterEventKind::MasterChanged {
                    vrps: master.vrps.len(),
                    skiplist: master.skiplist.iter().cloned().collect(),
                },
            });
            node.history.push(master.clone());
        }
        node.master = master;
        let served = &mut self.net.served[i];
        served.master = Arc::new(node.master.vrps.clone());
        if *served.peerlist != *node.peering.peerlist() {
            served.peerlist = Arc::new(node.peering.peerlist().clone());
        }
    }

    /// Union and threshold vote over what every node that is up serves to
    /// an outside observer.
    pub fn global_view(&self) -> (VrpSet, VrpSet) {
        let served: Vec<Arc<VrpSet>> = (0..self.spec.nodes)
            .filter(|i| self.net.up[*i])
            .map(|i| self.net.view_vrps(i, None, false))
            .collect();
        let mut union = VrpSet::new();
        let mut consensus = VrpSet::new();
        for s in &served {
            union.extend(s);
        }
        for kind in crate::model::VrpKind::ALL {
            *consensus.get_mut(kind) = threshold_vote(served.iter().map(|s| s.get(kind)), self.spec.config.c);
        }
        (union, consensus)
    }

    fn sample(&mut self) {
        self.queue.push(Reverse((self.now + self.spec.sample_interval, Action::Sample, 0)));
        let (union, consensus) = self.global_view();
        let nodes = (0..self.spec.nodes)
            .map(|i| {
                let node = &self.nodes[i];
                let status = if !self.net.up[i] {
                    NodeStatus::Down
                } else if node.monitor.is_running() {
                    NodeStatus::Validating
                } else {
                    NodeStatus::Idle
                };
                NodeSample {
                    status,
                    local: node.monitor.local_vrps().len(),
                    master: node.master.vrps.len(),
                    skiplist: node.monitor.skiplist().len(),
                    master_skiplist: node.master.skiplist.len(),
                    peers: node.peering.peerlist().len(),
                }
            })
            .collect();
        self.samples.push(MetricsSample {
            at: self.now.since(SIM_EPOCH),
            union: union.len(),
            consensus: consensus.len(),
            nodes,
        });
    }

    /// Fetches every node's master as the observer, logging the requests.
    pub fn observe_masters(&self) -> Vec<MasterObservation> {
        let client = self.net.client(None);
        (0..self.spec.nodes)
            .map(|i| {
                let addr = self.net.address(i).clone();
                let result = block_on(client.fetch_master(&addr)).map_err(|e| e.to_string());
                MasterObservation {
                    node: addr,
                    at: self.now,
                    result,
                }
            })
            .collect()
    }
}

/// Builds and runs a cluster for its whole duration.
pub fn run_cluster(spec: ClusterSpec) -> Result<Cluster, ConfigError> {
    let mut cluster = Cluster::new(spec)?;
    cluster.run();
    Ok(cluster)
}
