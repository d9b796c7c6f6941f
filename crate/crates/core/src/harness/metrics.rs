//! Time series written by cluster runs.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::time::Duration;

use crate::monitor::MonitorEvent;
use crate::peering::PeerEvent;

use super::cluster::{Cluster, ClusterEvent, ClusterEventKind, SIM_EPOCH};

#[derive(Clone, Copy, Debug, Eq, PartialEq)]
pub enum NodeStatus {
    Down,
    Validating,
    Idle,
}

impl fmt::Display for NodeStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeStatus::Down => "down",
            NodeStatus::Validating => "validating",
            NodeStatus::Idle => "idle",
        })
    }
}

#[derive(Clone, Debug, Eq, PartialEq)]
pub struct NodeSample {
    pub status: NodeStatus,
    pub local: usize,
    pub master: usize,
    pub skiplist: usize,
    pub master_skiplist: usize,
    pub peers: usize,
}

/// Cluster state at one instant.
///
/// `union` and `consensus` are computed over the local VRPs every node that
/// is up serves to an outside observer.
#[derive(Clone, Debug, Eq, PartialEq)]
pub struct MetricsSample {
    /// Scenario time.
    pub at: Duration,
    pub union: usize,
    pub consensus: usize,
    pub nodes: Vec<NodeSample>,
}

const NODE_COLUMNS: [&str; 6] = ["local", "master", "skiplist", "master_skiplist", "peers", "status"];

fn seconds(d: Duration) -> String {
    format!("{}.{:03}", d.as_secs(), d.subsec_millis())
}

pub fn write_metrics_csv<W: Write>(samples: &[MetricsSample], nodes: usize, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["time_s".to_string(), "union".into(), "consensus".into()];
    for i in 0..nodes {
        header.extend(NODE_COLUMNS.iter().map(|c| format!("{c}_{i}")));
    }
    w.write_record(&header)?;
    for s in samples {
        let mut row = vec![seconds(s.at), s.union.to_string(), s.consensus.to_string()];
        for n in &s.nodes {
            row.extend([
                n.local.to_string(),
                n.master.to_string(),
                n.skiplist.to_string(),
                n.master_skiplist.to_string(),
                n.peers.to_string(),
                n.status.to_string(),
            ]);
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(" ")
}

fn describe(kind: &ClusterEventKind) -> Option<(&'static str, String)> {
    Some(match kind {
        ClusterEventKind::Monitor(ev) => match ev {
            MonitorEvent::ValidationStarted { tal, .. } => ("validation-started", tal.clone()),
            MonitorEvent::Contacted { .. } => return None,
            MonitorEvent::Crash { tal, domains, .. } => ("crash", format!("{tal}: {}", join(domains))),
            MonitorEvent::Stall { tal, domains, .. } => ("stall", format!("{tal}: {}", join(domains))),
            MonitorEvent::TalFinished { tal, status, .. } => ("tal-finished", format!("{tal}: {status}")),
            MonitorEvent::SkiplistExpired { domains, .. } => ("skiplist-expired", join(domains)),
            MonitorEvent::CycleCompleted { vrps, .. } => ("cycle-completed", vrps.to_string()),
        },
        ClusterEventKind::Peer(ev) => match ev {
            PeerEvent::Polled(p) => ("polled", p.to_string()),
            PeerEvent::PollFailed(p, e) => ("poll-failed", format!("{p}: {e}")),
            PeerEvent::Admitted(p) => ("admitted", p.to_string()),
            PeerEvent::Rejected(p, e) => ("rejected", format!("{p}: {e}")),
        },
        ClusterEventKind::MasterChanged { vrps, skiplist } => {
            ("master-changed", format!("{vrps} vrps; skiplist: {}", join(skiplist)))
        }
        ClusterEventKind::Up => ("up", String::new()),
        ClusterEventKind::Down => ("down", String::new()),
    })
}

/// Writes the cluster events, leaving out individual contacts with
/// publication points.
pub fn write_events_csv<W: Write>(events: &[ClusterEvent], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time_s", "node", "event", "detail"])?;
    for ev in events {
        if let Some((name, detail)) = describe(&ev.kind) {
            w.write_record([seconds(ev.at.since(SIM_EPOCH)), ev.node.to_string(), name.into(), detail])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// A gnuplot script plotting `metrics.csv` from the same directory.
pub fn gnuplot_script(nodes: usize) -> String {
    let stride = NODE_COLUMNS.len();
    format!(
        "set datafile separator \",\"\n\
         set key outside right\n\
         set xlabel \"time (s)\"\n\
         set ylabel \"VRPs\"\n\
         set terminal pngcairo size 1200,600\n\
         set output \"metrics.png\"\n\
         plot \"metrics.csv\" using 1:2 skip 1 with lines lw 2 title \"union\", \\\n\
         \x20    \"\" using 1:3 skip 1 with lines lw 2 title \"consensus\", \\\n\
         \x20    for [i=0:{last}] \"\" using 1:(column(4+{stride}*i)) skip 1 with lines title sprintf(\"local %d\", i)\n",
        last = nodes.saturating_sub(1),
    )
}

/// Writes `metrics.csv`, `events.csv` and `plot.gp` into `dir`.
pub fn write_outputs(cluster: &Cluster, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let nodes = cluster.spec().nodes;
    let file = |name: &str| fs::File::create(dir.join(name)).map(io::BufWriter::new);
    write_metrics_csv(cluster.samples(), nodes, file("metrics.csv")?).map_err(io::Error::other)?;
    write_events_csv(cluster.events(), file("events.csv")?).map_err(io::Error::other)?;
    fs::write(dir.join("plot.gp"), gnuplot_script(nodes))
}
