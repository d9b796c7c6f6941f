//! Wiring of one node: monitor, peering, endpoints and RTR.
//!
//! The monitor runs on its own thread because relying parties are
//! blocking. Peering, the HTTPS endpoints and the RTR server run on the
//! tokio runtime. The master skiplist flows from peering back into the
//! next monitor cycle.

use std::collections::BTreeSet;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{mpsc, Arc, Mutex};
use std::thread;
use std::time::Duration;

use log::{debug, info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio::task::JoinHandle;
use tokio_rustls::TlsAcceptor;

use byzrp_core::config::{Mode, NodeConfig};
use byzrp_core::model::{Domain, PeerAddr, PeerSnapshot, Peerlist, Skiplist, VrpSet};
use byzrp_core::monitor::Monitor;
use byzrp_core::peering::{peering_round, PeerEvent, PeeringState};
use byzrp_core::rp::{ExternalRp, RelyingParty};
use byzrp_core::sim::{scenario_preset, ScenarioConfig, SimulatedRp};
use byzrp_core::time::{SystemClock, Timestamp};
use byzrp_core::vote::MasterState;

use crate::client::HttpsClient;
use crate::rtr::{serve_rtr, RtrPublisher};
use crate::server::{serve_https, NodeState};
use crate::tls::Identity;

const SIDECAR: &str = "skiplist.sidecar";

#[derive(Debug, thiserror::Error)]
pub enum NodeError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("identity: {0}")]
    Identity(#[from] crate::tls::IdentityError),
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("{path}: {reason}")]
    File { path: PathBuf, reason: String },
}

fn file_error(path: &Path, reason: impl ToString) -> NodeError {
    NodeError::File { path: path.into(), reason: reason.to_string() }
}

/// Outputs shared between the monitor thread and the peering task.
#[derive(Default)]
struct Shared {
    local: Arc<VrpSet>,
    local_skiplist: Arc<BTreeSet<Domain>>,
    master: Option<Arc<MasterState>>,
    peerlist: Peerlist,
}

/// A running node.
pub struct NodeHandle {
    address: PeerAddr,
    shared: Arc<Mutex<Shared>>,
    state: Arc<NodeState>,
    rtr: Arc<RtrPublisher>,
    shutdown: watch::Sender<bool>,
    monitor_stop: mpsc::Sender<()>,
    tasks: Vec<JoinHandle<()>>,
    monitor: Option<thread::JoinHandle<()>>,
}

impl NodeHandle {
    pub fn address(&self) -> &PeerAddr {
        &self.address
    }

    pub fn peerlist(&self) -> Peerlist {
        self.shared.lock().expect("not poisoned").peerlist.clone()
    }

    pub fn master(&self) -> Option<Arc<MasterState>> {
        self.shared.lock().expect("not poisoned").master.clone()
    }

    pub fn local_vrps(&self) -> Arc<VrpSet> {
        self.shared.lock().expect("not poisoned").local.clone()
    }

    pub fn endpoints(&self) -> &Arc<NodeState> {
        &self.state
    }

    pub fn rtr(&self) -> &Arc<RtrPublisher> {
        &self.rtr
    }

    /// Stops all components and waits for them.
    pub async fn shutdown(mut self) {
        let _ = self.shutdown.send(true);
        let _ = self.monitor_stop.send(());
        for t in self.tasks.drain(..) {
            let _ = t.await;
        }
        if let Some(m) = self.monitor.take() {
            let _ = tokio::task::spawn_blocking(move || m.join()).await;
        }
    }

    /// Runs until the process is interrupted.
    pub async fn run_until_ctrl_c(self) {
        if let Err(err) = tokio::signal::ctrl_c().await {
            warn!("cannot wait for interrupt: {err}");
        }
        info!("shutting down");
        self.shutdown().await;
    }
}

fn load_scenario(name: &str) -> Result<ScenarioConfig, NodeError> {
    if let Ok(s) = scenario_preset(name) {
        return Ok(s);
    }
    let path = Path::new(name);
    let text = fs::read_to_string(path).map_err(|e| file_error(path, e))?;
    ScenarioConfig::from_json(&text).map_err(|e| file_error(path, e))
}

fn relying_party(config: &NodeConfig, epoch: Timestamp) -> Result<Box<dyn RelyingParty>, NodeError> {
    match config.mode {
        Mode::Sim => {
            let scenario = Arc::new(load_scenario(&config.sim.scenario)?);
            Ok(Box::new(SimulatedRp::new(scenario, config.sim.node_index, config.sim.seed, epoch, &config.consensus)))
        }
        Mode::Live => {
            let live = config.live.clone().ok_or_else(|| NodeError::Config("live: required in live mode".into()))?;
            Ok(Box::new(ExternalRp::new(live).map_err(|e| NodeError::Config(format!("live: {e}")))?))
        }
    }
}

fn load_bootstrap(config: &NodeConfig) -> Result<Peerlist, NodeError> {
    match &config.bootstrap {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| file_error(path, e))?;
            Peerlist::parse(&text).map_err(|e| file_error(path, e))
        }
        None => Ok(Peerlist::new()),
    }
}

fn load_skiplist(dir: &Path) -> Skiplist {
    let path = dir.join(SIDECAR);
    match fs::read_to_string(&path) {
        Ok(text) => Skiplist::parse_sidecar(&text).unwrap_or_else(|err| {
            warn!("{}: {err}, starting with an empty skiplist", path.display());
            Skiplist::new()
        }),
        Err(_) => Skiplist::new(),
    }
}

async fn bind(addr: SocketAddr) -> Result<TcpListener, NodeError> {
    TcpListener::bind(addr).await.map_err(|source| NodeError::Bind { addr, source })
}

/// Starts a node. Errors are limited to configuration, identity and
/// binding problems; everything later is logged and retried.
pub async fn node_main(config: NodeConfig) -> Result<NodeHandle, NodeError> {
    config.validate().map_err(|e| NodeError::Config(e.to_string()))?;
    let identity = Identity::load(&config.tls)?;
    let epoch = Timestamp::now();
    let mut rp = relying_party(&config, epoch)?;
    let bootstrap = load_bootstrap(&config)?;
    fs::create_dir_all(&config.data_dir).map_err(|e| file_error(&config.data_dir, e))?;

    let address = PeerAddr::from_ip(config.listen.address);
    let state = Arc::new(NodeState::new(address.clone(), epoch));
    let rtr = Arc::new(RtrPublisher::new(rand::rng().random(), config.rtr.timing()));
    let shared = Arc::new(Mutex::new(Shared { peerlist: bootstrap.clone(), ..Shared::default() }));
    let (shutdown, shutdown_rx) = watch::channel(false);

    let https = bind(SocketAddr::new(config.listen.address, config.listen.https_port)).await?;
    let rtr_listener = bind(SocketAddr::new(config.listen.address, config.listen.rtr_port)).await?;
    info!("node {address}: https {}, rtr {}", config.listen.https_port, config.listen.rtr_port);

    let mut tasks = Vec::new();
    let acceptor = TlsAcceptor::from(identity.server_config()?);
    tasks.push(tokio::spawn(serve_https(https, acceptor, state.clone(), shutdown_rx.clone())));
    tasks.push(tokio::spawn(serve_rtr(rtr_listener, rtr.subscribe(), shutdown_rx.clone())));

    let client = HttpsClient::new(identity.client_config()?, Some(config.listen.address), config.listen.https_port);
    tasks.push(tokio::spawn(peering_loop(
        config.clone(),
        PeeringState::new(address.clone(), &bootstrap),
        client,
        state.clone(),
        rtr.clone(),
        shared.clone(),
        shutdown_rx,
    )));

    let (monitor_stop, stop_rx) = mpsc::channel();
    let monitor = {
        let skiplist = load_skiplist(&config.data_dir);
        let monitor = Monitor::new(
            config.sim.node_index,
            rp.tals(),
            config.consensus.clone(),
            config.refresh_interval,
            epoch,
        )
        .with_skiplist(skiplist);
        let (state, shared, dir) = (state.clone(), shared.clone(), config.data_dir.clone());
        let rng = ChaCha8Rng::seed_from_u64(config.sim.seed ^ rand::rng().random::<u64>());
        thread::Builder::new()
            .name("monitor".into())
            .spawn(move || monitor_loop(monitor, rp.as_mut(), rng, state, shared, dir, stop_rx))
            .map_err(|e| NodeError::Config(format!("cannot start monitor: {e}")))?
    };

    Ok(NodeHandle {
        address,
        shared,
        state,
        rtr,
        shutdown,
        monitor_stop,
        tasks,
        monitor: Some(monitor),
    })
}

fn monitor_loop(
    mut monitor: Monitor,
    rp: &mut dyn RelyingParty,
    mut rng: ChaCha8Rng,
    state: Arc<NodeState>,
    shared: Arc<Mutex<Shared>>,
    dir: PathBuf,
    stop: mpsc::Receiver<()>,
) {
    let mut published = None;
    let mut skiplist = BTreeSet::new();
    loop {
        let now = Timestamp::now();
        let master_skiplist = shared
            .lock()
            .expect("not poisoned")
            .master
            .as_ref()
            .map(|m| m.skiplist.clone())
            .unwrap_or_default();
        let next = monitor.tick(now, rp, &master_skiplist, &mut rng);
        for ev in monitor.take_events() {
            debug!("monitor: {ev:?}");
        }
        let current = monitor.skiplist().domains();
        if monitor.published_at() != published || current != skiplist {
            published = monitor.published_at();
            if current != skiplist {
                let path = dir.join(SIDECAR);
                if let Err(err) = fs::write(&path, monitor.skiplist().to_sidecar()) {
                    warn!("{}: {err}", path.display());
                }
                skiplist = current;
            }
            let local = monitor.local_vrps().clone();
            state.publish_local(&local, &skiplist, now);
            let mut s = shared.lock().expect("not poisoned");
            s.local = local;
            s.local_skiplist = Arc::new(skiplist.clone());
        }
        let wait = next.since(Timestamp::now()).max(Duration::from_millis(10));
        match stop.recv_timeout(wait) {
            Err(mpsc::RecvTimeoutError::Timeout) => {}
            _ => break,
        }
    }
}

async fn peering_loop(
    config: NodeConfig,
    mut peering: PeeringState,
    client: HttpsClient,
    state: Arc<NodeState>,
    rtr: Arc<RtrPublisher>,
    shared: Arc<Mutex<Shared>>,
    mut shutdown: watch::Receiver<bool>,
) {
    let mut rng = ChaCha8Rng::from_rng(&mut rand::rng());
    let mut interval = tokio::time::interval(config.consensus.poll_period);
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        tokio::select! {
            _ = interval.tick() => {}
            _ = shutdown.changed() => break,
        }
        let own = {
            let s = shared.lock().expect("not poisoned");
            PeerSnapshot {
                peer: peering.self_address().clone(),
                fetched_at: Timestamp::now(),
                vrps: s.local.clone(),
                skiplist: s.local_skiplist.clone(),
                peerlist: Arc::new(peering.peerlist().clone()),
            }
        };
        let access = state.take_access_log();
        let mut events = Vec::new();
        let master = peering_round(
            &mut peering,
            &client,
            &SystemClock,
            &access,
            &own,
            &config.consensus,
            &mut rng,
            &mut events,
        )
        .await;
        for ev in &events {
            match ev {
                PeerEvent::Polled(_) => {}
                PeerEvent::Admitted(p) => info!("admitted {p}"),
                other => debug!("{other:?}"),
            }
        }
        state.publish_peering(peering.peerlist(), &master.vrps, master.computed_at);
        if rtr.publish(&master.vrps) {
            info!("master now {} VRPs, RTR serial {:?}", master.vrps.len(), rtr.current().serial());
        }
        let mut s = shared.lock().expect("not poisoned");
        s.peerlist = peering.peerlist().clone();
        s.master = Some(Arc::new(master));
    }
}
