//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use bytesize::ByteSize;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use byzrp_core::harness::{
    audit, run_cluster, traffic_extrapolation, verify_presence, write_events_csv, write_metrics_csv,
    ByzantineBehavior, Cluster, ClusterEventKind, ClusterSpec, DiffLabel, Outage, Topology, TrafficParams,
    SIM_EPOCH,
};
use byzrp_core::model::{Asn, ConsensusConfig, DnsBook, Domain, Vrp, VrpSet};
use byzrp_core::monitor::{detect_crash, detect_stalling, ConnectionLog, Direction, MonitorEvent, PacketEvent, TcpFlags};
use byzrp_core::rtr::{route_origins, CacheState, ErrorCode, Pdu, RtrClient, Timing};
use byzrp_core::sim::{scenario_preset, PpBehavior, ScheduleEntry, BLACKOUT_TARGET, DOS_TARGET, PRESET_NAMES};
use byzrp_core::time::Timestamp;
use byzrp_core::vote::threshold_vote;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err(format!($($arg)+));
        }
    };
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

//------------ 1, 2: vote ----------------------------------------------------

// Consensus factors as exact fractions, so the oracle can use integer
// arithmetic: f = floor(p * n / q).
const FACTORS: [(usize, usize); 9] = [(0, 1), (1, 5), (1, 4), (1, 3), (1, 2), (3, 5), (2, 3), (3, 4), (1, 1)];

fn random_sets(r: &mut ChaCha8Rng, n: usize, alphabet: u8) -> Vec<BTreeSet<u8>> {
    (0..n)
        .map(|_| (0..alphabet).filter(|_| r.random_bool(0.5)).collect())
        .collect()
}

fn oracle_vote(sets: &[BTreeSet<u8>], p: usize, q: usize, alphabet: u8) -> BTreeSet<u8> {
    let n = sets.len();
    let f = p * n / q;
    let t = if f + 1 > n { n } else { f + 1 };
    let mut out = BTreeSet::new();
    for obj in 0..alphabet {
        let mut votes = 0;
        for s in sets {
            if s.iter().any(|x| *x == obj) {
                votes += 1;
            }
        }
        if votes >= t {
            out.insert(obj);
        }
    }
    out
}

fn vote_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let instances = 500;
    for k in 0..instances {
        let n = r.random_range(1..=6);
        let alphabet = r.random_range(1..=10);
        let sets = random_sets(&mut r, n, alphabet);
        let (p, q) = *FACTORS.choose(&mut r).expect("nonempty");
        let got = threshold_vote(sets.iter(), p as f64 / q as f64);
        let want = oracle_vote(&sets, p, q, alphabet);
        ensure!(got == want, "instance {k}: n={n} c={p}/{q} got {got:?} want {want:?}");
    }
    let took = start.elapsed();
    ensure!(took < Duration::from_secs(1), "took {took:?}");
    Ok(format!("{instances} instances equal to oracle in {took:?}"))
}

fn vote_limit_cases() -> Outcome {
    let mut r = rng(2);
    let instances = 200;
    for k in 0..instances {
        let n = r.random_range(1..=8);
        let sets = random_sets(&mut r, n, 12);
        let union: BTreeSet<u8> = sets.iter().flatten().copied().collect();
        let inter: BTreeSet<u8> = union.iter().copied().filter(|o| sets.iter().all(|s| s.contains(o))).collect();
        ensure!(threshold_vote(sets.iter(), 0.0) == union, "instance {k}: c=0 is not the union");
        ensure!(threshold_vote(sets.iter(), 1.0) == inter, "instance {k}: c=1 is not the intersection");
    }
    Ok(format!("{instances} instances: c=0 union, c=1 intersection"))
}

//------------ cluster helpers -----------------------------------------------

fn spec(n: usize, preset: &str, minutes: u64, seed: u64) -> ClusterSpec {
    let mut s = ClusterSpec::new(n, scenario_preset(preset).expect("preset"));
    s.duration = Duration::from_secs(minutes * 60);
    s.seed = seed;
    s
}

fn bogus(count: u32) -> VrpSet {
    (0..count)
        .map(|i| {
            let p = byzrp_core::model::Prefix::v4(Ipv4Addr::new(203, 0, 113, (i * 16) as u8), 28).expect("valid");
            Vrp::roa(Asn(64_666), p, 28, "RIPE").expect("valid")
        })
        .collect()
}

fn half_fault_bound(n: usize) -> usize {
    n / 2
}

fn half_threshold(n: usize) -> usize {
    (n / 2 + 1).min(n)
}

/// First time all listed nodes hold exactly `want` as master, and whether
/// they keep holding it afterwards.
fn stable_from(c: &Cluster, nodes: &[usize], want: &VrpSet) -> Option<Timestamp> {
    let mut latest = SIM_EPOCH;
    for &i in nodes {
        let h = c.master_history(i);
        let last = h.last()?;
        if last.vrps != *want {
            return None;
        }
        let mut from = last.computed_at;
        for m in h.iter().rev().skip(1) {
            if m.vrps != *want {
                break;
            }
            from = m.computed_at;
        }
        latest = latest.max(from);
    }
    Some(latest)
}

fn mins(t: Timestamp) -> String {
    let s = t.since(SIM_EPOCH).as_secs();
    format!("{}m{:02}s", s / 60, s % 60)
}

//------------ 3: poisoning --------------------------------------------------

fn poisoning_bound() -> Outcome {
    let objects = bogus(2);
    let mut runs = 0;
    for n in [3, 5, 7] {
        let f = half_fault_bound(n);
        for seed in [11, 12, 13] {
            for stubs in [f, f + 1] {
                let mut s = spec(n, "benign-A", 4, seed);
                for i in 0..stubs {
                    s.byzantine.insert(i, ByzantineBehavior::Poison { objects: objects.clone() });
                }
                let c = run_cluster(s).map_err(|e| e.to_string())?;
                runs += 1;
                for i in c.honest_nodes() {
                    let history = c.master_history(i);
                    let poisoned: Vec<&Arc<_>> =
                        history.iter().filter(|m| objects.iter().any(|o| m.vrps.contains(o))).collect();
                    if stubs == f {
                        ensure!(
                            poisoned.is_empty(),
                            "n={n} seed={seed}: {f} stubs poisoned node {i} at {}",
                            mins(poisoned[0].computed_at)
                        );
                    } else {
                        ensure!(
                            objects.is_subset(&c.master(i).vrps),
                            "n={n} seed={seed}: {stubs} stubs failed to poison node {i}"
                        );
                    }
                }
            }
        }
    }
    Ok(format!("{runs} runs: f stubs never poison, f+1 always do (n = 3, 5, 7)"))
}

//------------ 4: censoring --------------------------------------------------

fn censoring_bound() -> Outcome {
    let base = scenario_preset("benign-A").expect("preset");
    let truth = base.ground_truth();
    let target: VrpSet = truth.roas.iter().take(3).cloned().collect();
    let mut runs = 0;
    let mut censored_runs = 0;
    for n in 3..=7usize {
        for d in 0..=1usize {
            for m in 0..n - d {
                let mut s = spec(n, "benign-A", 3, 21 + n as u64);
                for i in 0..m {
                    s.byzantine.insert(i, ByzantineBehavior::Censor { objects: target.clone() });
                }
                for i in n - d..n {
                    s.outages.push(Outage { node: i, from: Duration::ZERO, until: None });
                }
                let c = run_cluster(s).map_err(|e| e.to_string())?;
                runs += 1;
                let honest_supporters = n - m - d;
                let t = half_threshold(n - d);
                let expect_censored = honest_supporters < t;
                censored_runs += usize::from(expect_censored);
                for i in m..n - d {
                    let master = c.master(i);
                    ensure!(
                        master.participant_count == n - d,
                        "n={n} m={m} d={d}: node {i} counted {} participants",
                        master.participant_count
                    );
                    let present = target.is_subset(&master.vrps);
                    let absent = target.iter().all(|v| !master.vrps.contains(v));
                    ensure!(
                        if expect_censored { absent } else { present },
                        "n={n} m={m} d={d}: node {i} expected censored={expect_censored}"
                    );
                    let others = truth.difference(&target);
                    ensure!(others.is_subset(&master.vrps), "n={n} m={m} d={d}: node {i} lost uncensored VRPs");
                }
            }
        }
    }
    Ok(format!("{runs} runs ({censored_runs} censored): censored iff honest supporters < T"))
}

//------------ 5: DoS --------------------------------------------------------

fn crash_times(c: &Cluster, domain: &Domain) -> BTreeMap<usize, Timestamp> {
    let mut out = BTreeMap::new();
    for ev in c.events() {
        if let ClusterEventKind::Monitor(MonitorEvent::Crash { domains, at, .. }) = &ev.kind {
            if domains.contains(domain) {
                out.entry(ev.node).or_insert(*at);
            }
        }
    }
    out
}

fn dos_scenario() -> Outcome {
    let wall = Instant::now();
    let target: Domain = DOS_TARGET.parse().expect("domain");
    let s = spec(5, "dos-ripe", 40, 5);
    let truth = s.scenario.ground_truth();
    let reduced = s.scenario.ground_truth_without(&BTreeSet::from([target.clone()]));
    let c = run_cluster(s).map_err(|e| e.to_string())?;
    let nodes: Vec<usize> = (0..5).collect();

    let crashes = crash_times(&c, &target);
    ensure!(crashes.len() >= 3, "only {} nodes crashed", crashes.len());
    let mut times: Vec<Timestamp> = crashes.values().copied().collect();
    times.sort();
    let third = times[2];

    // plateau reached before the attack
    let attack = SIM_EPOCH + Duration::from_secs(15 * 60);
    let plateau = nodes
        .iter()
        .map(|&i| c.master_history(i).iter().find(|m| m.vrps == truth).map(|m| m.computed_at))
        .collect::<Option<Vec<_>>>()
        .ok_or("some node never reached the benign plateau")?
        .into_iter()
        .max()
        .expect("nodes");
    ensure!(plateau < attack, "benign plateau only at {}", mins(plateau));

    // (a) masters and the global vote unchanged until the third crash
    for &i in &nodes {
        for m in c.master_history(i) {
            if m.computed_at >= plateau && m.computed_at < third {
                ensure!(m.vrps == truth, "(a) node {i} master changed at {}", mins(m.computed_at));
            }
        }
    }
    for sample in c.samples() {
        let at = SIM_EPOCH + sample.at;
        if at >= plateau && at < third {
            ensure!(sample.consensus == truth.len(), "(a) consensus {} at {}", sample.consensus, mins(at));
        }
    }
    for ev in c.events() {
        if let ClusterEventKind::MasterChanged { skiplist, .. } = &ev.kind {
            ensure!(
                !skiplist.contains(&target) || ev.at >= third,
                "master skiplist of node {} held {target} before the third crash",
                ev.node
            );
        }
    }

    // (b) new plateau is exactly the benign one minus the target's share
    let settled = stable_from(&c, &nodes, &reduced).ok_or("(b) masters did not settle on the reduced set")?;
    ensure!(settled >= third, "(b) reduced plateau before the third crash");
    let last = c.samples().last().expect("samples");
    ensure!(last.consensus == reduced.len(), "(b) final consensus {} != {}", last.consensus, reduced.len());
    let dropped = truth.len() - reduced.len();

    // (c) offending domain in every master skiplist
    for &i in &nodes {
        ensure!(c.master(i).skiplist.contains(&target), "(c) node {i} master skiplist lacks {target}");
    }

    // (d) with a short expiry the point is contacted again
    let mut s = spec(5, "dos-ripe", 45, 5);
    s.config.blacklist_expiry = Duration::from_secs(10 * 60);
    let c2 = run_cluster(s).map_err(|e| e.to_string())?;
    let crashes2 = crash_times(&c2, &target);
    let mut recontact = None;
    for ev in c2.events() {
        if let ClusterEventKind::Monitor(MonitorEvent::Contacted { domain, at }) = &ev.kind {
            if *domain == target {
                if let Some(first) = crashes2.get(&ev.node) {
                    if *at >= *first + Duration::from_secs(10 * 60) {
                        recontact = Some((ev.node, *at, *first));
                        break;
                    }
                }
            }
        }
    }
    let (node, at, first) = recontact.ok_or("(d) target never contacted again after expiry")?;
    let expired = c2.events().iter().any(|ev| {
        ev.node == node
            && ev.at <= at
            && matches!(&ev.kind, ClusterEventKind::Monitor(MonitorEvent::SkiplistExpired { domains, .. }) if domains.contains(&target))
    });
    ensure!(expired, "(d) node {node} re-contacted {target} without an expiry event");

    let took = wall.elapsed();
    ensure!(took < Duration::from_secs(10), "wall time {took:?}");
    Ok(format!(
        "3rd crash at {}, plateau {} -> {} (-{dropped}) from {}, re-contact by node {node} at {} (crash {}), {took:.1?}",
        mins(third),
        truth.len(),
        reduced.len(),
        mins(settled),
        mins(at),
        mins(first)
    ))
}

//------------ 6: detectors --------------------------------------------------

struct OracleRecord {
    start: Timestamp,
    established: bool,
    open: bool,
}

// Scans each remote's events from its latest outbound SYN.
fn oracle_records(events: &[PacketEvent]) -> BTreeMap<IpAddr, OracleRecord> {
    let mut out = BTreeMap::new();
    let remotes: BTreeSet<IpAddr> = events.iter().map(|e| e.remote()).collect();
    for remote in remotes {
        let mine: Vec<&PacketEvent> = events.iter().filter(|e| e.remote() == remote).collect();
        let is_syn = |e: &&PacketEvent| {
            e.direction == Direction::Out && e.flags.contains(TcpFlags::SYN) && !e.flags.contains(TcpFlags::ACK)
        };
        let Some(pos) = mine.iter().rposition(is_syn) else {
            continue;
        };
        let after = &mine[pos + 1..];
        let close = after.iter().position(|e| e.flags.intersects(TcpFlags::FIN | TcpFlags::RST));
        let before_close = &after[..close.unwrap_or(after.len())];
        let established = before_close
            .iter()
            .any(|e| e.direction == Direction::In && e.flags.contains(TcpFlags::SYN | TcpFlags::ACK));
        out.insert(remote, OracleRecord { start: mine[pos].time, established, open: close.is_none() });
    }
    out
}

fn detectors() -> Outcome {
    let mut r = rng(6);
    let local = IpAddr::V4(Ipv4Addr::new(100, 64, 0, 1));
    let flag_sets = [
        TcpFlags::SYN,
        TcpFlags::SYN | TcpFlags::ACK,
        TcpFlags::ACK,
        TcpFlags::FIN | TcpFlags::ACK,
        TcpFlags::RST,
        TcpFlags::RST | TcpFlags::ACK,
    ];
    let instances = 500;
    let mut flagged = (0, 0);
    for k in 0..instances {
        let remotes: Vec<IpAddr> = (0..r.random_range(1..6u8)).map(|i| IpAddr::V4(Ipv4Addr::new(198, 51, 100, i + 1))).collect();
        let mut book = DnsBook::new();
        for (i, ip) in remotes.iter().enumerate() {
            // two addresses share a domain; one is unknown
            if i == 4 {
                continue;
            }
            let name = format!("pp{}.example", i.min(2));
            book.insert(*ip, name.parse().expect("domain"));
        }
        let mut t = 0i64;
        let mut events = Vec::new();
        for _ in 0..r.random_range(0..40) {
            t += r.random_range(0..20_000);
            let remote = *remotes.choose(&mut r).expect("nonempty");
            // half the packets are handshake halves so connections actually open
            let (direction, flags) = match r.random_range(0..4) {
                0 => (Direction::Out, TcpFlags::SYN),
                1 => (Direction::In, TcpFlags::SYN | TcpFlags::ACK),
                _ => (
                    if r.random_bool(0.5) { Direction::Out } else { Direction::In },
                    *flag_sets.choose(&mut r).expect("nonempty"),
                ),
            };
            let (src, dst) = match direction {
                Direction::Out => (local, remote),
                Direction::In => (remote, local),
            };
            events.push(PacketEvent {
                time: Timestamp::from_millis(t),
                direction,
                flags,
                src,
                dst,
            });
        }
        let mut log = ConnectionLog::new();
        for e in &events {
            log.record_packet(e);
        }
        let config = ConsensusConfig {
            global_timeout: Duration::from_secs(r.random_range(60..1200)),
            stall_fraction: r.random_range(0.05..=1.0),
            ..ConsensusConfig::default()
        };
        let now = Timestamp::from_millis(t + r.random_range(0..120_000));
        let threshold = config.global_timeout.mul_f64(config.stall_fraction) / 4;
        let oracle = oracle_records(&events);
        let pick = |stall: bool| -> Vec<Domain> {
            let set: BTreeSet<Domain> = oracle
                .iter()
                .filter(|(_, rec)| rec.established && rec.open)
                .filter(|(_, rec)| !stall || now.since(rec.start) > threshold)
                .filter_map(|(ip, _)| book.get(ip).cloned())
                .collect();
            set.into_iter().collect()
        };
        let (want_crash, want_stall) = (pick(false), pick(true));
        let got_crash = detect_crash(&log, &book);
        let got_stall = detect_stalling(&log, &book, now, &config);
        ensure!(got_crash == want_crash, "instance {k}: crash {got_crash:?} != {want_crash:?}");
        ensure!(got_stall == want_stall, "instance {k}: stall {got_stall:?} != {want_stall:?}");
        flagged.0 += want_crash.len();
        flagged.1 += want_stall.len();
    }
    ensure!(flagged.0 > 0 && flagged.1 > 0, "random logs never exercised the detectors");
    // the documented example: 300 s global timeout, 0.9 -> 67.5 s
    let config = ConsensusConfig {
        global_timeout: Duration::from_secs(300),
        ..ConsensusConfig::default()
    };
    ensure!(config.stall_threshold() == Duration::from_millis(67_500), "stall threshold arithmetic");
    Ok(format!("{instances} random logs match the oracle ({} crash, {} stall flags)", flagged.0, flagged.1))
}

//------------ 7: benign convergence -----------------------------------------

fn benign_convergence() -> Outcome {
    let mut worst = Duration::ZERO;
    for n in 3..=15usize {
        let s = spec(n, "benign-A", 3, 70 + n as u64);
        let poll = s.config.poll_period;
        let truth = s.scenario.ground_truth();
        let c = run_cluster(s).map_err(|e| e.to_string())?;
        let mut firsts: BTreeMap<usize, Timestamp> = BTreeMap::new();
        for ev in c.events() {
            if let ClusterEventKind::Monitor(MonitorEvent::CycleCompleted { at, .. }) = &ev.kind {
                firsts.entry(ev.node).or_insert(*at);
            }
        }
        let mut times: Vec<Timestamp> = firsts.values().copied().collect();
        times.sort();
        let k = (n + 1).div_ceil(2);
        let tk = *times.get(k - 1).ok_or(format!("n={n}: only {} nodes completed", times.len()))?;
        let deadline = tk + 2 * poll;
        for i in 0..n {
            let m = c.master_at(i, deadline);
            ensure!(m.vrps == truth, "n={n}: node {i} master has {} of {} VRPs at {}", m.vrps.len(), truth.len(), mins(deadline));
            let reached = c.master_history(i).iter().find(|m| m.vrps == truth).expect("reached").computed_at;
            worst = worst.max(reached.since(tk));
        }
        for sample in c.samples() {
            if SIM_EPOCH + sample.at >= deadline {
                ensure!(sample.consensus == truth.len(), "n={n}: consensus {} at {:?}", sample.consensus, sample.at);
            }
        }
    }
    Ok(format!("n = 3..15: masters equal ground truth at most {worst:?} after the majority completion"))
}

//------------ 8: jitter -----------------------------------------------------

fn jitter_resilience() -> Outcome {
    let target: Domain = BLACKOUT_TARGET.parse().expect("domain");
    let mut notes = Vec::new();
    for n in 3..=7usize {
        // odd n: f afflicted nodes; even n: n - T, the most a vote can lose
        let afflicted = if n % 2 == 1 { half_fault_bound(n) } else { n - half_threshold(n) };
        let mut scenario = scenario_preset("blackout").expect("preset");
        scenario.schedule = vec![ScheduleEntry {
            at: Duration::from_secs(8 * 60),
            until: Some(Duration::from_secs(12 * 60)),
            pp: target.clone(),
            behavior: PpBehavior::Jitter { drop: 0.9 },
            nodes: Some((0..afflicted).collect()),
        }];
        let mut s = ClusterSpec::new(n, scenario);
        s.duration = Duration::from_secs(15 * 60);
        s.seed = 80 + n as u64;
        let truth = s.scenario.ground_truth();
        let c = run_cluster(s).map_err(|e| e.to_string())?;
        let nodes: Vec<usize> = (0..n).collect();
        let plateau = stable_from(&c, &nodes, &truth).ok_or(format!("n={n}: masters not at the benign plateau at the end"))?;
        ensure!(plateau < SIM_EPOCH + Duration::from_secs(8 * 60), "n={n}: a master left the plateau at {}", mins(plateau));
        let mut min_local = truth.len();
        for sample in c.samples() {
            if SIM_EPOCH + sample.at >= plateau {
                ensure!(sample.consensus == truth.len(), "n={n}: consensus {} at {:?}", sample.consensus, sample.at);
                for i in 0..afflicted {
                    min_local = min_local.min(sample.nodes[i].local);
                }
            }
        }
        ensure!(min_local < truth.len(), "n={n}: jitter never reduced a local set");
        notes.push(format!("n={n}/{afflicted} dip to {min_local}"));
    }
    Ok(format!("consensus held at the plateau ({})", notes.join(", ")))
}

//------------ 9: RTR --------------------------------------------------------

fn random_pdu(r: &mut ChaCha8Rng) -> Pdu {
    match r.random_range(0..9) {
        0 => Pdu::SerialNotify { session_id: r.random(), serial: r.random() },
        1 => Pdu::SerialQuery { session_id: r.random(), serial: r.random() },
        2 => Pdu::ResetQuery,
        3 => Pdu::CacheResponse { session_id: r.random() },
        4 => {
            let max_len = r.random_range(0..=32);
            Pdu::Ipv4Prefix {
                flags: r.random_range(0..=1),
                prefix_len: r.random_range(0..=max_len),
                max_len,
                prefix: Ipv4Addr::from(r.random::<u32>()),
                asn: r.random(),
            }
        }
        5 => {
            let max_len = r.random_range(0..=128);
            Pdu::Ipv6Prefix {
                flags: r.random_range(0..=1),
                prefix_len: r.random_range(0..=max_len),
                max_len,
                prefix: Ipv6Addr::from(r.random::<u128>()),
                asn: r.random(),
            }
        }
        6 => Pdu::EndOfData {
            session_id: r.random(),
            serial: r.random(),
            refresh: r.random(),
            retry: r.random(),
            expire: r.random(),
        },
        7 => Pdu::CacheReset,
        _ => Pdu::ErrorReport {
            code: ErrorCode(r.random_range(0..=8)),
            pdu: (0..r.random_range(0..40)).map(|_| r.random()).collect(),
            text: (0..r.random_range(0..20)).map(|_| r.random_range('a'..='z')).collect(),
        },
    }
}

fn random_vrps(r: &mut ChaCha8Rng) -> VrpSet {
    (0..r.random_range(0..30))
        .map(|_| {
            let asn = Asn(r.random_range(1..5));
            if r.random_bool(0.7) {
                let p = byzrp_core::model::Prefix::v4(Ipv4Addr::new(10, r.random_range(0..8), 0, 0), 16).expect("valid");
                Vrp::roa(asn, p, r.random_range(16..=18), "RIPE").expect("valid")
            } else {
                let p = byzrp_core::model::Prefix::v6(Ipv6Addr::new(0x2001, 0xdb8, r.random_range(0..8), 0, 0, 0, 0, 0), 48)
                    .expect("valid");
                Vrp::roa(asn, p, 48, ["ARIN", "RIPE"][r.random_range(0..2)]).expect("valid")
            }
        })
        .collect()
}

fn rtr_conformance() -> Outcome {
    let mut r = rng(9);
    let mut pdus = 0;
    for k in 0..5_000 {
        let pdu = random_pdu(&mut r);
        let bytes = pdu.encode();
        let (back, used) = Pdu::decode(&bytes).map_err(|e| format!("pdu {k}: {e}"))?;
        ensure!(back == pdu && used == bytes.len(), "pdu {k}: round trip changed {pdu:?}");
        pdus += 1;
    }
    let mut pairs = 0;
    for trial in 0..50 {
        let mut cache = CacheState::new(trial, Timing::default());
        for _ in 0..r.random_range(1..25) {
            let vrps = random_vrps(&mut r);
            cache = cache.publish_update(&vrps).0;
            let current = cache.current().expect("published").clone();
            ensure!(*current == route_origins(&vrps), "trial {trial}: cache differs from its input");

            let mut fresh = RtrClient::new();
            fresh.sync_with(&cache).map_err(|e| format!("trial {trial}: {e}"))?;
            ensure!(fresh.origins == *current, "trial {trial}: reset exchange incomplete");

            for serial in cache.serials() {
                let from = cache.snapshot(serial).expect("in window").clone();
                let mut client = RtrClient::new();
                client.session_id = Some(cache.session_id());
                client.serial = Some(serial);
                client.origins = (*from).clone();
                client.sync_with(&cache).map_err(|e| format!("trial {trial} serial {serial}: {e}"))?;
                ensure!(client.origins == *current, "trial {trial}: diff from {serial} unsound");
                let diff = cache.diff(serial).expect("in window");
                let announce: BTreeSet<_> = current.difference(&from).copied().collect();
                let withdraw: BTreeSet<_> = from.difference(&current).copied().collect();
                ensure!(
                    diff.announce.iter().copied().collect::<BTreeSet<_>>() == announce
                        && diff.withdraw.iter().copied().collect::<BTreeSet<_>>() == withdraw,
                    "trial {trial}: diff from {serial} differs from set difference"
                );
                pairs += 1;
            }
        }
    }
    Ok(format!("{pdus} PDUs round-trip, {pairs} snapshot pairs sound"))
}

//------------ 10: traffic ---------------------------------------------------

fn bytes(s: &str) -> u64 {
    s.parse::<ByteSize>().expect("size").as_u64()
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol * target
}

fn traffic() -> Outcome {
    let a = traffic_extrapolation(&TrafficParams {
        n_rp: 3156,
        n_node: 15,
        s_obj: bytes("562 MB"),
        s_vrp: bytes("6.2 MB"),
    });
    ensure!((60.0..=66.0).contains(&a.ratio), "ratio {}", a.ratio);
    ensure!(within(a.after_bytes as f64, 28e9, 0.05), "after {}", a.after_bytes);
    let b = traffic_extrapolation(&TrafficParams {
        n_rp: 128_000,
        n_node: 15,
        s_obj: bytes("1.2 GB"),
        s_vrp: bytes("12.9 MB"),
    });
    ensure!(within(b.after_bytes as f64, 1.7e12, 0.05), "after {}", b.after_bytes);
    ensure!(within(b.before_bytes as f64, 153e12, 0.02), "before {}", b.before_bytes);
    Ok(format!(
        "ratio {:.2}, after {:.2} GB; second case before {:.1} TB, after {:.3} TB",
        a.ratio,
        a.after_bytes as f64 / 1e9,
        b.before_bytes as f64 / 1e12,
        b.after_bytes as f64 / 1e12
    ))
}

//------------ 11: discovery -------------------------------------------------

fn peer_discovery() -> Outcome {
    for seed in 0..10 {
        let mut s = spec(4, "benign-A", 1, 110 + seed);
        s.topology = Topology::Chain;
        let poll = s.config.poll_period;
        let mut c = Cluster::new(s).map_err(|e| e.to_string())?;
        // every node has run exactly two rounds by then
        c.run_until(SIM_EPOCH + 2 * poll - Duration::from_millis(1));
        for i in 0..4 {
            ensure!(c.peerlist(i).len() == 3, "seed {seed}: node {i} knows {} peers after 2 rounds", c.peerlist(i).len());
        }
    }

    let mut slowest = Duration::ZERO;
    for seed in 0..10 {
        let mut s = spec(5, "benign-A", 6, 120 + seed);
        s.topology = Topology::Custom(vec![vec![1, 2, 3], vec![0, 2, 3], vec![0, 1, 3], vec![0, 1, 2], vec![0]]);
        s.join_at.insert(4, Duration::from_secs(180));
        let poll = s.config.poll_period;
        let c = run_cluster(s).map_err(|e| e.to_string())?;
        let joiner = c.address(4).clone();
        let first_round = c
            .events()
            .iter()
            .find(|e| e.node == 4 && matches!(e.kind, ClusterEventKind::Peer(_)))
            .map(|e| e.at)
            .ok_or("joiner never ran a round")?;
        for i in 0..4 {
            let admitted = c
                .events()
                .iter()
                .find(|e| e.node == i && matches!(&e.kind, ClusterEventKind::Peer(byzrp_core::peering::PeerEvent::Admitted(a)) if *a == joiner))
                .map(|e| e.at)
                .ok_or(format!("seed {seed}: node {i} never admitted the joiner"))?;
            ensure!(admitted <= first_round + 2 * poll, "seed {seed}: node {i} admitted the joiner only at {}", mins(admitted));
            slowest = slowest.max(admitted.since(first_round));
        }
        ensure!(c.peerlist(4).len() == 4, "seed {seed}: joiner knows {} peers", c.peerlist(4).len());
    }
    Ok(format!("chain meshed within 2 rounds (10 seeds); joiner admitted by all within {slowest:?}"))
}

//------------ 12: audit and verify ------------------------------------------

fn audit_and_verify() -> Outcome {
    let objects = bogus(1);
    let object = objects.iter().next().expect("one").clone();

    let benign = run_cluster(spec(5, "benign-A", 3, 120)).map_err(|e| e.to_string())?;
    ensure!(audit(&[benign.observe_masters()]).is_consistent(), "benign cluster not consistent");

    let mut s = spec(5, "benign-A", 3, 121);
    s.byzantine.insert(
        4,
        ByzantineBehavior::Split { targets: BTreeSet::from([0, 1]), observer: true, objects: objects.clone() },
    );
    let poll = s.config.poll_period;
    let mut c = run_cluster(s).map_err(|e| e.to_string())?;
    let first = c.observe_masters();
    c.run_until(c.now() + poll);
    let report = audit(&[first, c.observe_masters()]);
    let named: BTreeSet<&Vrp> = report.lasting().map(|d| &d.object).collect();
    ensure!(named == BTreeSet::from([&object]), "audit named {named:?}");
    ensure!(
        report.diffs.iter().all(|d| d.holder == *c.address(4) && d.label == DiffLabel::Persistent),
        "unexpected diff holders or labels:\n{report}"
    );
    for i in c.honest_nodes() {
        ensure!(!c.master(i).vrps.contains(&object), "split stub alone reached node {i}");
    }

    let injected = bogus(3);
    let mut s = spec(5, "benign-A", 3, 122);
    for i in 0..3 {
        s.byzantine.insert(i, ByzantineBehavior::Poison { objects: injected.clone() });
    }
    let truth = s.scenario.ground_truth();
    let c = run_cluster(s).map_err(|e| e.to_string())?;
    let verify = verify_presence(&c.master(4).vrps, &truth);
    let suspects: VrpSet = verify.suspects.iter().cloned().collect();
    ensure!(suspects == injected, "verify flagged {} objects, injected {}", suspects.len(), injected.len());
    Ok(format!("split stub named in {} persistent diffs; verify flagged exactly {} injected VRPs", report.diffs.len(), injected.len()))
}

//------------ 13: determinism -----------------------------------------------

fn csvs(c: &Cluster) -> (Vec<u8>, Vec<u8>) {
    let mut m = Vec::new();
    let mut e = Vec::new();
    write_metrics_csv(c.samples(), c.spec().nodes, &mut m).expect("in memory");
    write_events_csv(c.events(), &mut e).expect("in memory");
    (m, e)
}

fn determinism() -> Outcome {
    let mut total = 0;
    for preset in PRESET_NAMES {
        let minutes = if preset == "benign-B" { 25 } else { 20 };
        let a = run_cluster(spec(5, preset, minutes, 1313)).map_err(|e| e.to_string())?;
        let b = run_cluster(spec(5, preset, minutes, 1313)).map_err(|e| e.to_string())?;
        let (ma, ea) = csvs(&a);
        let (mb, eb) = csvs(&b);
        ensure!(ma == mb, "{preset}: metrics differ");
        ensure!(ea == eb, "{preset}: events differ");
        let other = run_cluster(spec(5, preset, minutes, 1314)).map_err(|e| e.to_string())?;
        ensure!(csvs(&other).1 != ea, "{preset}: seed has no effect");
        total += ma.len();
    }
    Ok(format!("{} presets byte-identical across runs ({total} bytes of metrics)", PRESET_NAMES.len()))
}

//------------ main ----------------------------------------------------------

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 13] = [
        ("vote matches brute-force oracle", vote_oracle_equivalence),
        ("vote limit cases", vote_limit_cases),
        ("poisoning bound", poisoning_bound),
        ("censoring bound", censoring_bound),
        ("DoS on one publication point", dos_scenario),
        ("crash and stall detectors", detectors),
        ("benign convergence", benign_convergence),
        ("resilience to jitter", jitter_resilience),
        ("RTR conformance", rtr_conformance),
        ("traffic extrapolation", traffic),
        ("peer discovery", peer_discovery),
        ("audit and verify", audit_and_verify),
        ("determinism", determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{took:.2?}]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} [{took:.2?}]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
