//! Running a relying party for one TAL under a skiplist.
//!
//! [`RelyingParty`] starts validations and [`RpHandle`] tracks one running
//! validation. The simulated implementation lives in [`crate::sim`];
//! [`ExternalRp`] wraps a real validator process.

mod external;

pub use self::external::{ExternalRp, ExternalRpConfig, ExternalTal};

use std::collections::BTreeSet;
use std::fmt;

use crate::model::{DnsBook, Domain, VrpSet};
use crate::monitor::{ConnectionLog, PacketEvent};
use crate::time::Timestamp;

#[derive(Clone, Copy, Debug, Eq, PartialEq)]
pub enum RpStatus {
    Running,
    Exited(i32),
    Killed,
}

impl RpStatus {
    pub fn is_running(self) -> bool {
        self == RpStatus::Running
    }
}

impl fmt::Display for RpStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RpStatus::Running => f.write_str("running"),
            RpStatus::Exited(code) => write!(f, "exited({code})"),
            RpStatus::Killed => f.write_str("killed"),
        }
    }
}

/// The result of a finished validation run.
#[derive(Clone, Debug)]
pub struct ValidationOutcome {
    pub tal: String,
    pub status: RpStatus,
    /// Present iff the run exited with status 0.
    pub vrps: Option<VrpSet>,
    pub log: ConnectionLog,
    pub started_at: Timestamp,
    pub ended_at: Timestamp,
}

impl ValidationOutcome {
    pub fn exit_status(&self) -> Option<i32> {
        match self.status {
            RpStatus::Exited(code) => Some(code),
            _ => None,
        }
    }
}

/// One validation run.
///
/// Status only moves from running to exited or killed.
pub trait RpHandle: Send {
    fn tal(&self) -> &str;

    fn started_at(&self) -> Timestamp;

    /// Non-blocking status check. Packet events up to `now` are applied to
    /// the connection log first.
    fn poll(&mut self, now: Timestamp) -> RpStatus;

    /// Packet events applied since the previous call.
    fn take_events(&mut self) -> Vec<PacketEvent>;

    fn log(&self) -> &ConnectionLog;

    /// Terminates the run and closes its open connections.
    fn kill(&mut self, now: Timestamp);

    fn collect_output(&mut self) -> Result<ValidationOutcome, RpError>;
}

pub trait RelyingParty: Send {
    fn tals(&self) -> Vec<String>;

    fn dnsbook(&self) -> &DnsBook;

    /// Starts validating `tal`. Domains on `skiplist` are never contacted.
    fn start_validation(
        &mut self,
        tal: &str,
        skiplist: &BTreeSet<Domain>,
        now: Timestamp,
    ) -> Result<Box<dyn RpHandle>, RpError>;
}

#[derive(Debug, thiserror::Error)]
pub enum RpError {
    #[error("unknown TAL {0:?}")]
    UnknownTal(String),
    #[error("validation still running")]
    StillRunning,
    #[error("cannot start relying party: {0}")]
    Spawn(#[source] std::io::Error),
    #[error("cannot read relying-party output: {0}")]
    Output(String),
}
