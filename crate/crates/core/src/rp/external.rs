//! A relying party run as an external process.
//!
//! The validator command and an optional capture command are given as
//! argument vectors with placeholders: `{tal}` (name), `{tal_path}`,
//! `{skiplist}` (path of the skiplist file written before each run) and
//! `{outdir}`. The capture command must print one packet event per line in
//! the [`PacketEvent`] text form; it is started before the validator and
//! stopped when the validator ends.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader};
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::{fs, thread};

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::model::{serialize_skiplist, DnsBook, Domain, VrpSet};
use crate::monitor::{ConnectionLog, PacketEvent};
use crate::time::Timestamp;

use super::{RelyingParty, RpError, RpHandle, RpStatus, ValidationOutcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalRpConfig {
    /// Validator command line.
    pub command: Vec<String>,
    /// Capture command line, if packet events are available.
    #[serde(default)]
    pub capture: Option<Vec<String>>,
    /// TAL names and their file paths.
    pub tals: Vec<ExternalTal>,
    /// Directory for per-run skiplists and output directories.
    pub workdir: PathBuf,
    /// VRP file produced by a run, relative to `{outdir}`.
    #[serde(default = "default_output_file")]
    pub output_file: String,
    /// File mapping remote addresses to publication-point domains.
    #[serde(default)]
    pub dnsbook: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalTal {
    pub name: String,
    pub path: PathBuf,
}

fn default_output_file() -> String {
    "json".into()
}

pub struct ExternalRp {
    config: ExternalRpConfig,
    dnsbook: DnsBook,
}

impl ExternalRp {
    pub fn new(config: ExternalRpConfig) -> Result<Self, RpError> {
        let dnsbook = match &config.dnsbook {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(RpError::Spawn)?;
                DnsBook::parse(&text).map_err(|e| RpError::Output(e.to_string()))?
            }
            None => DnsBook::new(),
        };
        if config.command.is_empty() {
            return Err(RpError::Output("empty relying-party command".into()));
        }
        Ok(ExternalRp { config, dnsbook })
    }

    /// Replaces the dnsbook, for instance after resolving PP names.
    pub fn set_dnsbook(&mut self, dnsbook: DnsBook) {
        self.dnsbook = dnsbook;
    }
}

fn expand(args: &[String], vars: &[(&str, String)]) -> Vec<String> {
    args.iter()
        .map(|a| {
            vars.iter()
                .fold(a.clone(), |acc, (k, v)| acc.replace(&format!("{{{k}}}"), v))
        })
        .collect()
}

impl RelyingParty for ExternalRp {
    fn tals(&self) -> Vec<String> {
        self.config.tals.iter().map(|t| t.name.clone()).collect()
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
        let tal_cfg = self
            .config
            .tals
            .iter()
            .find(|t| t.name == tal)
            .ok_or_else(|| RpError::UnknownTal(tal.to_string()))?;
        let outdir = self.config.workdir.join(format!("out-{tal}"));
        let skip_path = self.config.workdir.join(format!("skiplist-{tal}"));
        if outdir.exists() {
            fs::remove_dir_all(&outdir).map_err(RpError::Spawn)?;
        }
        fs::create_dir_all(&outdir).map_err(RpError::Spawn)?;
        fs::write(&skip_path, serialize_skiplist(skiplist)).map_err(RpError::Spawn)?;
        let vars = [
            ("tal", tal.to_string()),
            ("tal_path", tal_cfg.path.display().to_string()),
            ("skiplist", skip_path.display().to_string()),
            ("outdir", outdir.display().to_string()),
        ];

        let (tx, rx) = mpsc::channel();
        let capture = match &self.config.capture {
            Some(cmd) => {
                let argv = expand(cmd, &vars);
                let mut child = Command::new(&argv[0])
                    .args(&argv[1..])
                    .stdout(Stdio::piped())
                    .stdin(Stdio::null())
                    .spawn()
                    .map_err(RpError::Spawn)?;
                let stdout = child.stdout.take().expect("piped");
                thread::spawn(move || {
                    for line in BufReader::new(stdout).lines() {
                        let Ok(line) = line else { break };
                        match line.parse::<PacketEvent>() {
                            Ok(ev) => {
                                if tx.send(ev).is_err() {
                                    break;
                                }
                            }
                            Err(err) => debug!("capture: {err}"),
                        }
                    }
                });
                Some(child)
            }
            None => None,
        };

        let argv = expand(&self.config.command, &vars);
        let child = Command::new(&argv[0])
            .args(&argv[1..])
            .stdin(Stdio::null())
            .spawn()
            .map_err(RpError::Spawn)?;
        Ok(Box::new(ExternalHandle {
            tal: tal.to_string(),
            started_at: now,
            child,
            capture,
            events: rx,
            pending: Vec::new(),
            log: ConnectionLog::new(),
            status: RpStatus::Running,
            ended_at: None,
            output: outdir.join(&self.config.output_file),
        }))
    }
}

struct ExternalHandle {
    tal: String,
    started_at: Timestamp,
    child: Child,
    capture: Option<Child>,
    events: mpsc::Receiver<PacketEvent>,
    pending: Vec<PacketEvent>,
    log: ConnectionLog,
    status: RpStatus,
    ended_at: Option<Timestamp>,
    output: PathBuf,
}

impl ExternalHandle {
    fn drain(&mut self) {
        while let Ok(ev) = self.events.try_recv() {
            self.log.record_packet(&ev);
            self.pending.push(ev);
        }
    }

    fn stop_capture(&mut self) {
        if let Some(mut cap) = self.capture.take() {
            let _ = cap.kill();
            let _ = cap.wait();
        }
    }
}

impl RpHandle for ExternalHandle {
    fn tal(&self) -> &str {
        &self.tal
    }

    fn started_at(&self) -> Timestamp {
        self.started_at
    }

    fn poll(&mut self, now: Timestamp) -> RpStatus {
        self.drain();
        if self.status.is_running() {
            match self.child.try_wait() {
                Ok(Some(st)) => {
                    // A signal death has no code; report it as a failure.
                    self.status = RpStatus::Exited(st.code().unwrap_or(-1));
                    self.ended_at = Some(now);
                    self.drain();
                    self.stop_capture();
                }
                Ok(None) => {}
                Err(err) => {
                    warn!("cannot poll relying party: {err}");
                    self.status = RpStatus::Exited(-1);
                    self.ended_at = Some(now);
                    self.stop_capture();
                }
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
        if self.status.is_running() {
            let _ = self.child.kill();
            let _ = self.child.wait();
            self.drain();
            self.stop_capture();
            self.log.close_all(now);
            self.status = RpStatus::Killed;
            self.ended_at = Some(now);
        }
    }

    fn collect_output(&mut self) -> Result<ValidationOutcome, RpError> {
        let Some(ended_at) = self.ended_at else {
            return Err(RpError::StillRunning);
        };
        let vrps = match self.status {
            RpStatus::Exited(0) => {
                let bytes = fs::read(&self.output)
                    .map_err(|e| RpError::Output(format!("{}: {e}", self.output.display())))?;
                Some(VrpSet::from_json_slice(&bytes).map_err(|e| RpError::Output(e.to_string()))?)
            }
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

impl Drop for ExternalHandle {
    fn drop(&mut self) {
        if self.status.is_running() {
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
        self.stop_capture();
    }
}
