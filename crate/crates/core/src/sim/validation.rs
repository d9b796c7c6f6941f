//! Simulated validation runs.

use std::collections::BTreeSet;
use std::net::{IpAddr, Ipv4Addr};
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{ConsensusConfig, DnsBook, Domain, VrpSet};
use crate::monitor::{ConnectionLog, Direction, PacketEvent, TcpFlags};
use crate::rp::{RelyingParty, RpError, RpHandle, RpStatus, ValidationOutcome};
use crate::time::Timestamp;

use super::scenario::{PpBehavior, ScenarioConfig};

/// A fully precomputed validation run.
#[derive(Clone, Debug, PartialEq)]
pub struct SimRun {
    /// Packet events in time order.
    pub events: Vec<PacketEvent>,
    pub end: Timestamp,
    pub exit_code: i32,
    /// Present iff `exit_code` is 0.
    pub vrps: Option<VrpSet>,
    /// Publication points contacted, in order.
    pub contacted: Vec<Domain>,
}

/// Fixed inputs for simulating one node's relying party.
#[derive(Clone, Copy, Debug)]
pub struct SimContext<'a> {
    pub scenario: &'a ScenarioConfig,
    /// Wall time corresponding to scenario time zero.
    pub epoch: Timestamp,
    pub node: usize,
    pub rp_ip: IpAddr,
    pub global_timeout: Duration,
}

impl SimContext<'_> {
    fn connection_timeout(&self) -> Duration {
        self.global_timeout / 4
    }
}

/// Simulates validating `tal` from `start`.
///
/// Publication points are visited in order, one connection at a time. A
/// benign visit produces SYN, SYN-ACK after a fifth of the sampled latency,
/// and FIN at the full latency. A failed flaky visit is refused with RST. A
/// stalling point holds the connection until its hold time or the
/// connection timeout, whichever is earlier, and contributes only if it
/// finished in time. A crashing point ends the run with status 1 while its
/// connection is open. Runs exceeding the global timeout exit with status 1.
pub fn simulate_validation<R: Rng + ?Sized>(
    ctx: &SimContext<'_>,
    tal: &str,
    skiplist: &BTreeSet<Domain>,
    start: Timestamp,
    rng: &mut R,
) -> Result<SimRun, RpError> {
    let tal_cfg = ctx
        .scenario
        .tal(tal)
        .ok_or_else(|| RpError::UnknownTal(tal.to_string()))?;
    let deadline = start + ctx.global_timeout;
    let mut events = Vec::new();
    let mut contacted = Vec::new();
    let mut vrps = VrpSet::new();
    let mut t = start;

    let packet = |time: Timestamp, dir: Direction, flags: TcpFlags, remote: IpAddr| {
        let (src, dst) = match dir {
            Direction::Out => (ctx.rp_ip, remote),
            Direction::In => (remote, ctx.rp_ip),
        };
        PacketEvent {
            time,
            direction: dir,
            flags,
            src,
            dst,
        }
    };

    for pp in tal_cfg.pps.iter().filter(|p| !skiplist.contains(&p.domain)) {
        let behavior = ctx.scenario.behavior_at(pp, t.since(ctx.epoch), ctx.node);
        let [lo, hi] = match behavior {
            PpBehavior::Benign { latency_ms: Some(r) } => *r,
            _ => ctx.scenario.latency_ms,
        };
        let latency = Duration::from_millis(rng.random_range(lo..=hi));
        let handshake = t + latency / 5;
        contacted.push(pp.domain.clone());
        events.push(packet(t, Direction::Out, TcpFlags::SYN, pp.ip));
        match behavior {
            PpBehavior::Benign { .. } => {
                events.push(packet(handshake, Direction::In, TcpFlags::SYN | TcpFlags::ACK, pp.ip));
                t += latency;
                events.push(packet(t, Direction::Out, TcpFlags::FIN | TcpFlags::ACK, pp.ip));
                vrps.extend(&pp.vrps);
            }
            PpBehavior::Flaky { availability } => {
                if rng.random_bool(*availability) {
                    events.push(packet(handshake, Direction::In, TcpFlags::SYN | TcpFlags::ACK, pp.ip));
                    t += latency;
                    events.push(packet(t, Direction::Out, TcpFlags::FIN | TcpFlags::ACK, pp.ip));
                    vrps.extend(&pp.vrps);
                } else {
                    t = handshake;
                    events.push(packet(t, Direction::In, TcpFlags::RST, pp.ip));
                }
            }
            PpBehavior::Jitter { drop } => {
                events.push(packet(handshake, Direction::In, TcpFlags::SYN | TcpFlags::ACK, pp.ip));
                t += latency;
                events.push(packet(t, Direction::Out, TcpFlags::FIN | TcpFlags::ACK, pp.ip));
                for vrp in pp.vrps.iter() {
                    if !rng.random_bool(*drop) {
                        vrps.insert(vrp.clone());
                    }
                }
            }
            PpBehavior::Stalling { hold } => {
                events.push(packet(handshake, Direction::In, TcpFlags::SYN | TcpFlags::ACK, pp.ip));
                let timeout = ctx.connection_timeout();
                if *hold < timeout {
                    t = handshake + *hold;
                    events.push(packet(t, Direction::In, TcpFlags::FIN | TcpFlags::ACK, pp.ip));
                    vrps.extend(&pp.vrps);
                } else {
                    t = handshake + timeout;
                    events.push(packet(t, Direction::Out, TcpFlags::RST, pp.ip));
                }
            }
            PpBehavior::Crashing => {
                events.push(packet(handshake, Direction::In, TcpFlags::SYN | TcpFlags::ACK, pp.ip));
                let end = handshake + Duration::from_millis(1);
                return Ok(truncate(SimRun {
                    events,
                    end,
                    exit_code: 1,
                    vrps: None,
                    contacted,
                }, deadline, ctx.rp_ip));
            }
        }
    }
    Ok(truncate(
        SimRun {
            events,
            end: t,
            exit_code: 0,
            vrps: Some(vrps),
            contacted,
        },
        deadline,
        ctx.rp_ip,
    ))
}

/// Cuts a run at the global timeout: later events are dropped, the open
/// connection is reset and the run fails.
fn truncate(mut run: SimRun, deadline: Timestamp, rp_ip: IpAddr) -> SimRun {
    if run.end <= deadline {
        return run;
    }
    run.events.retain(|e| e.time <= deadline);
    let mut log = ConnectionLog::new();
    for e in &run.events {
        log.record_packet(e);
    }
    for rec in log.records().filter(|r| r.is_open()) {
        run.events.push(PacketEvent {
            time: deadline,
            direction: Direction::Out,
            flags: TcpFlags::RST,
            src: rp_ip,
            dst: rec.remote,
        });
    }
    run.end = deadline;
    run.exit_code = 1;
    run.vrps = None;
    run
}

//------------ SimulatedRp ---------------------------------------------------

/// A relying party backed by the scenario.
///
/// Each node draws from its own random stream derived from the seed and
/// the node index.
pub struct SimulatedRp {
    scenario: Arc<ScenarioConfig>,
    dnsbook: DnsBook,
    epoch: Timestamp,
    node: usize,
    rp_ip: IpAddr,
    global_timeout: Duration,
    rng: ChaCha8Rng,
}

impl SimulatedRp {
    pub fn new(
        scenario: Arc<ScenarioConfig>,
        node: usize,
        seed: u64,
        epoch: Timestamp,
        config: &ConsensusConfig,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ scenario.seed);
        rng.set_stream(node as u64);
        SimulatedRp {
            dnsbook: scenario.dnsbook(),
            scenario,
            epoch,
            node,
            rp_ip: IpAddr::V4(Ipv4Addr::new(100, 64, (node >> 8) as u8, node as u8)),
            global_timeout: config.global_timeout,
            rng,
        }
    }

    pub fn scenario(&self) -> &ScenarioConfig {
        &self.scenario
    }
}

impl RelyingParty for SimulatedRp {
    fn tals(&self) -> Vec<String> {
        self.scenario.tals.iter().map(|t| t.name.clone()).collect()
    }

    fn dnsbook(&self) -> &DnsBook {
        &self.dnsbook
    }

    fn start_validation(
        &mut self,
        tal: &str,
        skiplist: &BTreeSet<Domain>,
        now: Timestamp,
    ) -> Result<Box<dyn RpHandle>, RpError> {
        let ctx = SimContext {
            scenario: &self.scenario,
            epoch: self.epoch,
            node: self.node,
            rp_ip: self.rp_ip,
            global_timeout: self.global_timeout,
        };
        let run = simulate_validation(&ctx, tal, skiplist, now, &mut self.rng)?;
        Ok(Box::new(SimHandle {
            tal: tal.to_string(),
            started_at: now,
            run,
            applied: 0,
            pending: Vec::new(),
            log: ConnectionLog::new(),
            status: RpStatus::Running,
            ended_at: None,
            rp_ip: self.rp_ip,
        }))
    }
}

struct SimHandle {
    tal: String,
    started_at: Timestamp,
    run: SimRun,
    applied: usize,
    pending: Vec<PacketEvent>,
    log: ConnectionLog,
    status: RpStatus,
    ended_at: Option<Timestamp>,
    rp_ip: IpAddr,
}

impl SimHandle {
    fn advance(&mut self, now: Timestamp) {
        while let Some(ev) = self.run.events.get(self.applied) {
            if ev.time > now {
                break;
            }
            self.log.record_packet(ev);
            self.pending.push(ev.clone());
            self.applied += 1;
        }
    }
}

impl RpHandle for SimHandle {
    fn tal(&self) -> &str {
        &self.tal
    }

    fn started_at(&self) -> Timestamp {
        self.started_at
    }

    fn poll(&mut self, now: Timestamp) -> RpStatus {
        if self.status.is_running() {
            self.advance(now);
            if now >= self.run.end {
                self.status = RpStatus::Exited(self.run.exit_code);
                self.ended_at = Some(self.run.end);
            }
        }
        self.status
    }

    fn take_events(&mut self) -> Vec<PacketEvent> {
        std::mem::take(&mut self.pending)
    }

    fn log(&self) -> &ConnectionLog {
        &self.log
    }

    fn kill(&mut self, now: Timestamp) {
        if !self.status.is_running() {
            return;
        }
        self.advance(now);
        let open: Vec<IpAddr> = self
            .log
            .records()
            .filter(|r| r.is_open())
            .map(|r| r.remote)
            .collect();
        for remote in open {
            let ev = PacketEvent {
                time: now,
                direction: Direction::Out,
                flags: TcpFlags::RST,
                src: self.rp_ip,
                dst: remote,
            };
            self.log.record_packet(&ev);
            self.pending.push(ev);
        }
        self.status = RpStatus::Killed;
        self.ended_at = Some(now);
    }

    fn collect_output(&mut self) -> Result<ValidationOutcome, RpError> {
        let Some(ended_at) = self.ended_at else {
            return Err(RpError::StillRunning);
        };
        let vrps = match self.status {
            RpStatus::Exited(0) => self.run.vrps.clone(),
            _ => None,
        };
        Ok(ValidationOutcome {
            tal: self.tal.clone(),
            status: self.status,
            vrps,
            log: self.log.clone(),
            started_at: self.started_at,
            ended_at,
        })
    }
}
