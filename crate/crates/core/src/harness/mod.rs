//! Simulated clusters, their metrics, auditing and traffic estimates.

mod audit;
mod cluster;
mod metrics;
mod network;
mod traffic;

pub use self::audit::{audit, verify_presence, AuditReport, DiffLabel, MasterObservation, ObjectDiff, VerifyReport};
pub use self::cluster::{
    run_cluster, Cluster, ClusterEvent, ClusterEventKind, ClusterSpec, Outage, Topology, SIM_EPOCH,
};
pub use self::metrics::{
    gnuplot_script, write_events_csv, write_metrics_csv, write_outputs, MetricsSample, NodeSample, NodeStatus,
};
pub use self::network::{node_address, observer_address, ByzantineBehavior, NetClient, Network, Served};
pub use self::traffic::{traffic_extrapolation, TrafficParams, TrafficReport};
