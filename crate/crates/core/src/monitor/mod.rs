//! Supervision of the relying party.
//!
//! [`Monitor`] runs one validation per TAL in shuffled order under the
//! master skiplist, adds publication points that crash or stall the
//! relying party to the local skiplist, and publishes the union of the
//! per-TAL outputs after each cycle. It is a state machine driven by
//! [`Monitor::tick`], so the same code runs under a virtual clock and in
//! real time.

mod connlog;

pub use self::connlog::{
    detect_crash, detect_stalling, ConnectionLog, ConnectionRecord, Direction, PacketEvent,
    PacketEventError, TcpFlags,
};

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Duration;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::model::{ConsensusConfig, Domain, Skiplist, SkiplistSource, VrpSet};
use crate::rp::{RelyingParty, RpHandle, RpStatus};
use crate::time::Timestamp;

/// Interval between status polls of a running validation.
pub const STATUS_POLL: Duration = Duration::from_secs(1);

/// TAL order for the next cycle.
///
/// On the first run node `i` starts with TAL `i mod len` so that nodes
/// begin on different TALs; the remaining TALs, and every later order, are
/// shuffled uniformly.
pub fn shuffle_tals<R: Rng + ?Sized>(
    tals: &[String],
    node_index: usize,
    first_run: bool,
    rng: &mut R,
) -> Vec<String> {
    let mut order = tals.to_vec();
    if order.is_empty() {
        return order;
    }
    if first_run {
        let first = order.remove(node_index % tals.len());
        order.shuffle(rng);
        order.insert(0, first);
    } else {
        order.shuffle(rng);
    }
    order
}

#[derive(Clone, Debug, Eq, PartialEq)]
pub enum MonitorEvent {
    ValidationStarted { tal: String, at: Timestamp },
    Contacted { domain: Domain, at: Timestamp },
    Crash { tal: String, domains: Vec<Domain>, at: Timestamp },
    Stall { tal: String, domains: Vec<Domain>, at: Timestamp },
    TalFinished { tal: String, status: RpStatus, at: Timestamp },
    SkiplistExpired { domains: Vec<Domain>, at: Timestamp },
    CycleCompleted { at: Timestamp, vrps: usize },
}

enum Phase {
    Idle { until: Timestamp },
    Running { handle: Box<dyn RpHandle>, remaining: Vec<String> },
}

pub struct Monitor {
    node_index: usize,
    config: ConsensusConfig,
    refresh_interval: Duration,
    tals: Vec<String>,
    first_run: bool,
    phase: Phase,
    skiplist: Skiplist,
    retained: BTreeMap<String, (Timestamp, Arc<VrpSet>)>,
    local: Arc<VrpSet>,
    published_at: Option<Timestamp>,
    cycles: u64,
    events: Vec<MonitorEvent>,
}

impl Monitor {
    /// A monitor whose first cycle starts at `start`.
    pub fn new(
        node_index: usize,
        tals: Vec<String>,
        config: ConsensusConfig,
        refresh_interval: Duration,
        start: Timestamp,
    ) -> Self {
        Monitor {
            node_index,
            config,
            refresh_interval,
            tals,
            first_run: true,
            phase: Phase::Idle { until: start },
            skiplist: Skiplist::new(),
            retained: BTreeMap::new(),
            local: Arc::default(),
            published_at: None,
            cycles: 0,
            events: Vec::new(),
        }
    }

    /// Restores a persisted local skiplist.
    pub fn with_skiplist(mut self, skiplist: Skiplist) -> Self {
        self.skiplist = skiplist;
        self
    }

    pub fn skiplist(&self) -> &Skiplist {
        &self.skiplist
    }

    /// The published local VRPs.
    pub fn local_vrps(&self) -> &Arc<VrpSet> {
        &self.local
    }

    pub fn published_at(&self) -> Option<Timestamp> {
        self.published_at
    }

    pub fn cycles_completed(&self) -> u64 {
        self.cycles
    }

    pub fn is_running(&self) -> bool {
        matches!(self.phase, Phase::Running { .. })
    }

    pub fn take_events(&mut self) -> Vec<MonitorEvent> {
        std::mem::take(&mut self.events)
    }

    /// Advances the monitor to `now` and returns when it wants to run next.
    pub fn tick<R: Rng + ?Sized>(
        &mut self,
        now: Timestamp,
        rp: &mut dyn RelyingParty,
        master_skiplist: &BTreeSet<Domain>,
        rng: &mut R,
    ) -> Timestamp {
        loop {
            match &mut self.phase {
                Phase::Idle { until } => {
                    if now < *until {
                        return *until;
                    }
                    let mut order = shuffle_tals(&self.tals, self.node_index, self.first_run, rng);
                    order.reverse();
                    if !self.start_next(now, rp, master_skiplist, order) {
                        continue;
                    }
                    return now + STATUS_POLL;
                }
                Phase::Running { handle, .. } => {
                    let status = handle.poll(now);
                    for ev in handle.take_events() {
                        let syn = ev.flags.contains(TcpFlags::SYN) && !ev.flags.contains(TcpFlags::ACK);
                        if ev.direction == Direction::Out && syn {
                            if let Some(domain) = rp.dnsbook().get(&ev.dst) {
                                self.events.push(MonitorEvent::Contacted {
                                    domain: domain.clone(),
                                    at: ev.time,
                                });
                            }
                        }
                    }
                    let Phase::Running { handle, remaining } =
                        std::mem::replace(&mut self.phase, Phase::Idle { until: now })
                    else {
                        unreachable!()
                    };
                    match self.step(now, rp, handle, status) {
                        Some(handle) => {
                            self.phase = Phase::Running { handle, remaining };
                            return now + STATUS_POLL;
                        }
                        None => {
                            if self.start_next(now, rp, master_skiplist, remaining) {
                                return now + STATUS_POLL;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Handles one status observation; returns the handle if the run goes on.
    fn step(
        &mut self,
        now: Timestamp,
        rp: &mut dyn RelyingParty,
        mut handle: Box<dyn RpHandle>,
        status: RpStatus,
    ) -> Option<Box<dyn RpHandle>> {
        let tal = handle.tal().to_string();
        match status {
            RpStatus::Running => {
                let stalled = detect_stalling(handle.log(), rp.dnsbook(), now, &self.config);
                if stalled.is_empty() {
                    return Some(handle);
                }
                handle.kill(now);
                handle.take_events();
                info!("{tal}: stalling publication points {stalled:?}, relying party killed");
                self.skiplist.update(&stalled, now, SkiplistSource::Stall);
                self.events.push(MonitorEvent::Stall {
                    tal: tal.clone(),
                    domains: stalled,
                    at: now,
                });
                self.events.push(MonitorEvent::TalFinished {
                    tal,
                    status: RpStatus::Killed,
                    at: now,
                });
            }
            RpStatus::Exited(0) => match handle.collect_output() {
                Ok(out) => {
                    let vrps = out.vrps.unwrap_or_default();
                    self.retained.insert(tal.clone(), (now, Arc::new(vrps)));
                    self.events.push(MonitorEvent::TalFinished { tal, status, at: now });
                }
                Err(err) => {
                    warn!("{tal}: unusable output: {err}");
                    self.events.push(MonitorEvent::TalFinished {
                        tal,
                        status: RpStatus::Exited(-1),
                        at: now,
                    });
                }
            },
            RpStatus::Exited(code) => {
                let crashed = detect_crash(handle.log(), rp.dnsbook());
                info!("{tal}: relying party exited with {code}, open connections to {crashed:?}");
                if !crashed.is_empty() {
                    self.skiplist.update(&crashed, now, SkiplistSource::Crash);
                    self.events.push(MonitorEvent::Crash {
                        tal: tal.clone(),
                        domains: crashed,
                        at: now,
                    });
                }
                self.events.push(MonitorEvent::TalFinished { tal, status, at: now });
            }
            RpStatus::Killed => {
                self.events.push(MonitorEvent::TalFinished { tal, status, at: now });
            }
        }
        None
    }

    /// Starts the next TAL from `remaining` (popped from the back). Returns
    /// false once the cycle has been published.
    fn start_next(
        &mut self,
        now: Timestamp,
        rp: &mut dyn RelyingParty,
        master_skiplist: &BTreeSet<Domain>,
        mut remaining: Vec<String>,
    ) -> bool {
        let expired = self.skiplist.expire(now, self.config.blacklist_expiry);
        if !expired.is_empty() {
            self.events.push(MonitorEvent::SkiplistExpired { domains: expired, at: now });
        }
        while let Some(tal) = remaining.pop() {
            match rp.start_validation(&tal, master_skiplist, now) {
                Ok(handle) => {
                    self.events.push(MonitorEvent::ValidationStarted { tal, at: now });
                    self.phase = Phase::Running { handle, remaining };
                    return true;
                }
                Err(err) => {
                    warn!("{tal}: cannot start validation: {err}");
                    self.events.push(MonitorEvent::TalFinished {
                        tal,
                        status: RpStatus::Exited(-1),
                        at: now,
                    });
                }
            }
        }
        self.publish(now);
        false
    }

    fn publish(&mut self, now: Timestamp) {
        let tolerance = self.config.staleness_tolerance;
        self.retained.retain(|_, (at, _)| now.since(*at) <= tolerance);
        let mut local = VrpSet::new();
        for (_, vrps) in self.retained.values() {
            local.extend(vrps);
        }
        let count = local.len();
        self.local = Arc::new(local);
        self.published_at = Some(now);
        self.cycles += 1;
        self.first_run = false;
        self.phase = Phase::Idle {
            until: now + self.refresh_interval,
        };
        self.events.push(MonitorEvent::CycleCompleted { at: now, vrps: count });
    }

    /// Ticks until the current or next cycle completes, advancing time as
    /// requested by the monitor. Returns the completion time.
    pub fn run_cycle<R: Rng + ?Sized>(
        &mut self,
        mut now: Timestamp,
        rp: &mut dyn RelyingParty,
        master_skiplist: &BTreeSet<Domain>,
        rng: &mut R,
    ) -> Timestamp {
        let target = self.cycles + 1;
        while self.cycles < target {
            now = self.tick(now, rp, master_skiplist, rng).max(now);
        }
        self.published_at.expect("cycle completed")
    }
}
