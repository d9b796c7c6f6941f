//! Connection tracking and the crash and stall detectors.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::IpAddr;
use std::str::FromStr;

use bitflags::bitflags;
use log::warn;

use crate::model::{ConsensusConfig, DnsBook, Domain};
use crate::time::Timestamp;

//------------ PacketEvent ---------------------------------------------------

#[derive(Clone, Copy, Debug, Eq, Hash, Ord, PartialEq, PartialOrd)]
pub enum Direction {
    /// Towards the relying party.
    In,
    /// From the relying party.
    Out,
}

bitflags! {
    #[derive(Clone, Copy, Debug, Eq, Hash, Ord, PartialEq, PartialOrd)]
    pub struct TcpFlags: u8 {
        const FIN = 0x01;
        const SYN = 0x02;
        const RST = 0x04;
        const ACK = 0x10;
    }
}

const FLAG_NAMES: [(TcpFlags, &str); 4] = [
    (TcpFlags::SYN, "syn"),
    (TcpFlags::ACK, "ack"),
    (TcpFlags::FIN, "fin"),
    (TcpFlags::RST, "rst"),
];

/// One TCP segment seen on the relying party's traffic.
///
/// The text form is `<unix-ms> <in|out> <flags> <src> <dst>`, with flags
/// written as a comma-separated list such as `syn,ack`.
#[derive(Clone, Debug, Eq, PartialEq)]
pub struct PacketEvent {
    pub time: Timestamp,
    pub direction: Direction,
    pub flags: TcpFlags,
    pub src: IpAddr,
    pub dst: IpAddr,
}

impl PacketEvent {
    pub fn remote(&self) -> IpAddr {
        match self.direction {
            Direction::Out => self.dst,
            Direction::In => self.src,
        }
    }
}

impl fmt::Display for PacketEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dir = match self.direction {
            Direction::In => "in",
            Direction::Out => "out",
        };
        let flags: Vec<&str> = FLAG_NAMES
            .iter()
            .filter(|(fl, _)| self.flags.contains(*fl))
            .map(|(_, n)| *n)
            .collect();
        let flags = if flags.is_empty() { "-".to_string() } else { flags.join(",") };
        write!(f, "{} {dir} {flags} {} {}", self.time.as_millis(), self.src, self.dst)
    }
}

impl FromStr for PacketEvent {
    type Err = PacketEventError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |what: &str| PacketEventError(format!("{what} in {s:?}"));
        let mut parts = s.split_whitespace();
        let (Some(time), Some(dir), Some(flags), Some(src), Some(dst), None) = (
            parts.next(),
            parts.next(),
            parts.next(),
            parts.next(),
            parts.next(),
            parts.next(),
        ) else {
            return Err(bad("expected five fields"));
        };
        let time = Timestamp::from_millis(time.parse().map_err(|_| bad("bad time"))?);
        let direction = match dir {
            "in" => Direction::In,
            "out" => Direction::Out,
            _ => return Err(bad("bad direction")),
        };
        let mut fl = TcpFlags::empty();
        if flags != "-" {
            for name in flags.split(',') {
                let (flag, _) = FLAG_NAMES
                    .iter()
                    .find(|(_, n)| n.eq_ignore_ascii_case(name))
                    .ok_or_else(|| bad("bad flag"))?;
                fl |= *flag;
            }
        }
        Ok(PacketEvent {
            time,
            direction,
            flags: fl,
            src: src.parse().map_err(|_| bad("bad source"))?,
            dst: dst.parse().map_err(|_| bad("bad destination"))?,
        })
    }
}

#[derive(Clone, Debug, Eq, PartialEq, thiserror::Error)]
#[error("invalid packet event: {0}")]
pub struct PacketEventError(pub String);

//------------ ConnectionLog -------------------------------------------------

#[derive(Clone, Debug, Eq, PartialEq)]
pub struct ConnectionRecord {
    pub remote: IpAddr,
    pub start_time: Timestamp,
    pub established: bool,
    pub end_time: Option<Timestamp>,
}

impl ConnectionRecord {
    pub fn is_open(&self) -> bool {
        self.end_time.is_none()
    }
}

/// Latest connection per remote address.
#[derive(Clone, Debug, Default, Eq, PartialEq)]
pub struct ConnectionLog {
    records: BTreeMap<IpAddr, ConnectionRecord>,
}

impl ConnectionLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, remote: &IpAddr) -> Option<&ConnectionRecord> {
        self.records.get(remote)
    }

    pub fn records(&self) -> impl Iterator<Item = &ConnectionRecord> {
        self.records.values()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Applies one packet.
    ///
    /// An outbound SYN opens a new record for the destination, an inbound
    /// SYN-ACK marks it established and FIN or RST in either direction
    /// closes it. Packets for remotes without a prior SYN are ignored.
    pub fn record_packet(&mut self, ev: &PacketEvent) {
        let remote = ev.remote();
        let syn = ev.flags.contains(TcpFlags::SYN);
        let ack = ev.flags.contains(TcpFlags::ACK);
        if ev.direction == Direction::Out && syn && !ack {
            self.records.insert(
                remote,
                ConnectionRecord {
                    remote,
                    start_time: ev.time,
                    established: false,
                    end_time: None,
                },
            );
            return;
        }
        let Some(rec) = self.records.get_mut(&remote) else {
            return;
        };
        if ev.direction == Direction::In && syn && ack && rec.is_open() {
            rec.established = true;
        }
        if ev.flags.intersects(TcpFlags::FIN | TcpFlags::RST) && rec.is_open() {
            rec.end_time = Some(ev.time.max(rec.start_time));
        }
    }

    /// Closes every open connection, as a killed process would.
    pub fn close_all(&mut self, now: Timestamp) {
        for rec in self.records.values_mut().filter(|r| r.is_open()) {
            rec.end_time = Some(now.max(rec.start_time));
        }
    }
}

//------------ Detectors -----------------------------------------------------

fn to_domains<'a>(
    records: impl Iterator<Item = &'a ConnectionRecord>,
    dnsbook: &DnsBook,
) -> Vec<Domain> {
    let mut out = BTreeSet::new();
    for rec in records {
        match dnsbook.get(&rec.remote) {
            Some(domain) => {
                out.insert(domain.clone());
            }
            None => warn!("no dnsbook entry for {}, not skiplisted", rec.remote),
        }
    }
    out.into_iter().collect()
}

/// Domains with an established connection still open when the relying
/// party exited abnormally.
pub fn detect_crash(log: &ConnectionLog, dnsbook: &DnsBook) -> Vec<Domain> {
    to_domains(log.records().filter(|r| r.established && r.is_open()), dnsbook)
}

/// Domains with an established connection open for longer than the stall
/// threshold.
pub fn detect_stalling(
    log: &ConnectionLog,
    dnsbook: &DnsBook,
    now: Timestamp,
    config: &ConsensusConfig,
) -> Vec<Domain> {
    let threshold = config.stall_threshold();
    to_domains(
        log.records()
            .filter(|r| r.established && r.is_open() && now.since(r.start_time) > threshold),
        dnsbook,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::time::Duration;

    const RP: &str = "192.0.2.1";

    fn ev(t: i64, dir: Direction, flags: TcpFlags, remote: &str) -> PacketEvent {
        let (src, dst) = match dir {
            Direction::Out => (RP, remote),
            Direction::In => (remote, RP),
        };
        PacketEvent {
            time: Timestamp::from_millis(t),
            direction: dir,
            flags,
            src: src.parse().unwrap(),
            dst: dst.parse().unwrap(),
        }
    }

    fn book() -> DnsBook {
        [
            ("10.0.0.5".parse().unwrap(), "pp.evil.example".parse().unwrap()),
            ("10.0.0.6".parse().unwrap(), "pp.good.example".parse().unwrap()),
            ("10.0.0.7".parse().unwrap(), "pp.evil.example".parse().unwrap()),
        ]
        .into_iter()
        .collect()
    }

    #[test]
    fn connection_lifecycle() {
        let ip: IpAddr = "10.0.0.5".parse().unwrap();
        let mut log = ConnectionLog::new();
        log.record_packet(&ev(100, Direction::Out, TcpFlags::SYN, "10.0.0.5"));
        let r = log.get(&ip).unwrap();
        assert!(!r.established && r.end_time.is_none());
        assert_eq!(r.start_time.as_millis(), 100);
        log.record_packet(&ev(150, Direction::In, TcpFlags::SYN | TcpFlags::ACK, "10.0.0.5"));
        assert!(log.get(&ip).unwrap().established);
        log.record_packet(&ev(900, Direction::Out, TcpFlags::FIN | TcpFlags::ACK, "10.0.0.5"));
        assert_eq!(log.get(&ip).unwrap().end_time, Some(Timestamp::from_millis(900)));
        // a later RST does not move the end time
        log.record_packet(&ev(950, Direction::In, TcpFlags::RST, "10.0.0.5"));
        assert_eq!(log.get(&ip).unwrap().end_time, Some(Timestamp::from_millis(900)));
    }

    #[test]
    fn unknown_remote_ignored() {
        let mut log = ConnectionLog::new();
        log.record_packet(&ev(1, Direction::In, TcpFlags::SYN | TcpFlags::ACK, "10.0.0.5"));
        log.record_packet(&ev(2, Direction::In, TcpFlags::FIN, "10.0.0.5"));
        assert!(log.is_empty());
    }

    #[test]
    fn crash_examples() {
        let mut log = ConnectionLog::new();
        log.record_packet(&ev(0, Direction::Out, TcpFlags::SYN, "10.0.0.5"));
        log.record_packet(&ev(5, Direction::In, TcpFlags::SYN | TcpFlags::ACK, "10.0.0.5"));
        log.record_packet(&ev(10, Direction::Out, TcpFlags::SYN, "10.0.0.6"));
        let found = detect_crash(&log, &book());
        assert_eq!(found, vec!["pp.evil.example".parse::<Domain>().unwrap()]);

        let mut closed = log.clone();
        closed.close_all(Timestamp::from_millis(20));
        assert!(detect_crash(&closed, &book()).is_empty());
    }

    #[test]
    fn missing_dnsbook_entry_skipped() {
        let mut log = ConnectionLog::new();
        log.record_packet(&ev(0, Direction::Out, TcpFlags::SYN, "10.9.9.9"));
        log.record_packet(&ev(5, Direction::In, TcpFlags::SYN | TcpFlags::ACK, "10.9.9.9"));
        assert!(detect_crash(&log, &book()).is_empty());
    }

    #[test]
    fn stall_threshold() {
        let cfg = ConsensusConfig {
            global_timeout: Duration::from_secs(300),
            ..Default::default()
        };
        let mut log = ConnectionLog::new();
        for remote in ["10.0.0.5", "10.0.0.7"] {
            log.record_packet(&ev(0, Direction::Out, TcpFlags::SYN, remote));
            log.record_packet(&ev(1, Direction::In, TcpFlags::SYN | TcpFlags::ACK, remote));
        }
        let b = book();
        assert!(detect_stalling(&log, &b, Timestamp::from_millis(10_000), &cfg).is_empty());
        assert!(detect_stalling(&log, &b, Timestamp::from_millis(67_500), &cfg).is_empty());
        // two stalled connections to one domain, reported once
        let found = detect_stalling(&log, &b, Timestamp::from_millis(67_501), &cfg);
        assert_eq!(found.len(), 1);
    }

    #[test]
    fn event_text_form() {
        let e: PacketEvent = "1700000000000 in syn,ack 10.0.0.5 192.0.2.1".parse().unwrap();
        assert_eq!(e.flags, TcpFlags::SYN | TcpFlags::ACK);
        assert_eq!(e.remote(), "10.0.0.5".parse::<IpAddr>().unwrap());
        assert_eq!(e.to_string().parse::<PacketEvent>().unwrap(), e);
        for bad in ["", "1 in syn 10.0.0.5", "x in syn 1.1.1.1 2.2.2.2", "1 up syn 1.1.1.1 2.2.2.2", "1 in psh 1.1.1.1 2.2.2.2"] {
            assert!(bad.parse::<PacketEvent>().is_err(), "{bad}");
        }
    }

    fn arb_flags() -> impl Strategy<Value = TcpFlags> {
        prop_oneof![
            Just(TcpFlags::SYN),
            Just(TcpFlags::SYN | TcpFlags::ACK),
            Just(TcpFlags::ACK),
            Just(TcpFlags::FIN | TcpFlags::ACK),
            Just(TcpFlags::RST),
        ]
    }

    fn arb_events() -> impl Strategy<Value = Vec<PacketEvent>> {
        prop::collection::vec((0i64..1000, any::<bool>(), arb_flags(), 5u8..9), 0..40).prop_map(
            |raw| {
                let mut t = 0;
                raw.into_iter()
                    .map(|(dt, out, flags, host)| {
                        t += dt;
                        let dir = if out { Direction::Out } else { Direction::In };
                        ev(t, dir, flags, &format!("10.0.0.{host}"))
                    })
                    .collect()
            },
        )
    }

    /// Replays the event sequence per remote without a shared map.
    fn naive_open(events: &[PacketEvent], remote: IpAddr) -> Option<(Timestamp, bool)> {
        let mut state: Option<(Timestamp, bool, bool)> = None;
        for e in events.iter().filter(|e| e.remote() == remote) {
            let syn = e.flags.contains(TcpFlags::SYN);
            let ack = e.flags.contains(TcpFlags::ACK);
            let closes = e.flags.intersects(TcpFlags::FIN | TcpFlags::RST);
            if e.direction == Direction::Out && syn && !ack {
                state = Some((e.time, false, false));
            } else if let Some((_, est, closed)) = state.as_mut() {
                if e.direction == Direction::In && syn && ack && !*closed {
                    *est = true;
                }
                if closes {
                    *closed = true;
                }
            }
        }
        state.and_then(|(start, est, closed)| (!closed).then_some((start, est)))
    }

    proptest! {
        #[test]
        fn detectors_match_naive_oracle(events in arb_events(), now_off in 0i64..100_000) {
            let cfg = ConsensusConfig {
                global_timeout: Duration::from_secs(40),
                ..Default::default()
            };
            let b = book();
            let mut log = ConnectionLog::new();
            for e in &events {
                log.record_packet(e);
            }
            let now = Timestamp::from_millis(events.last().map_or(0, |e| e.time.as_millis()) + now_off);
            let mut crash = BTreeSet::new();
            let mut stall = BTreeSet::new();
            for host in 5..9 {
                let ip: IpAddr = format!("10.0.0.{host}").parse().unwrap();
                if let (Some((start, true)), Some(d)) = (naive_open(&events, ip), b.get(&ip)) {
                    crash.insert(d.clone());
                    if now.since(start) > cfg.stall_threshold() {
                        stall.insert(d.clone());
                    }
                }
            }
            prop_assert_eq!(detect_crash(&log, &b), crash.into_iter().collect::<Vec<_>>());
            prop_assert_eq!(detect_stalling(&log, &b, now, &cfg), stall.into_iter().collect::<Vec<_>>());
        }

        #[test]
        fn event_lines_round_trip(events in arb_events()) {
            for e in events {
                prop_assert_eq!(e.to_string().parse::<PacketEvent>().unwrap(), e);
            }
        }
    }
}
