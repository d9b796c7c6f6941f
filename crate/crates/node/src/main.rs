use std::fs;
use std::net::IpAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context};
use bytesize::ByteSize;
use clap::{Args, Parser, Subcommand};

use byzrp_core::config::{load_config, TlsConfig};
use byzrp_core::harness::{audit, run_cluster, traffic_extrapolation, verify_presence, write_outputs, ClusterSpec, MasterObservation, TrafficParams};
use byzrp_core::model::{ConfigError, Peerlist, VrpSet};
use byzrp_core::peering::Resource;
use byzrp_core::sim::{scenario_preset, ScenarioConfig};
use byzrp_core::time::Timestamp;
use byzrp_node::client::HttpsClient;
use byzrp_node::tls::{certgen, Identity};

#[derive(Parser)]
#[command(name = "byzrp", version, about = "Relying-party network node and experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a cluster and write metrics.csv, events.csv and plot.gp.
    Run(RunArgs),
    /// Compare the master VRPs of running nodes.
    Audit(AuditArgs),
    /// List master VRPs missing from an independent reference.
    Verify {
        #[arg(long)]
        master: PathBuf,
        #[arg(long)]
        reference: PathBuf,
    },
    /// Repository traffic with and without the node network.
    Traffic {
        #[arg(long)]
        n_rp: u64,
        #[arg(long)]
        n_node: u64,
        /// Object download per relying party, e.g. "562 MB".
        #[arg(long)]
        s_obj: ByteSize,
        /// Compressed VRP file, e.g. "6.2 MB".
        #[arg(long)]
        s_vrp: ByteSize,
    },
    /// Generate a trust root and one leaf certificate per address.
    Certgen {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        addresses: Vec<IpAddr>,
    },
    /// Run a node.
    Node {
        #[arg(long, env = "BYZRP_CONFIG")]
        config: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value_t = 5)]
    nodes: usize,
    /// Preset name or scenario JSON file.
    #[arg(long, default_value = "benign-A")]
    scenario: String,
    #[arg(long)]
    consensus_factor: Option<f64>,
    /// Overrides the scenario's refresh interval.
    #[arg(long, value_parser = humantime::parse_duration)]
    refresh: Option<Duration>,
    #[arg(long, value_parser = humantime::parse_duration, default_value = "30m")]
    duration: Duration,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct AuditArgs {
    /// Node addresses, one per line.
    #[arg(long)]
    nodes_file: PathBuf,
    #[arg(long)]
    cert: PathBuf,
    #[arg(long)]
    key: PathBuf,
    #[arg(long)]
    root: PathBuf,
    /// Source address; must match the certificate.
    #[arg(long)]
    bind: Option<IpAddr>,
    #[arg(long, default_value_t = 8443)]
    port: u16,
    /// Passes over all nodes; differences seen in every pass are persistent.
    #[arg(long, default_value_t = 2)]
    passes: usize,
    #[arg(long, value_parser = humantime::parse_duration, default_value = "10s")]
    interval: Duration,
}

fn load_scenario(name: &str) -> anyhow::Result<ScenarioConfig> {
    if let Ok(s) = scenario_preset(name) {
        return Ok(s);
    }
    let text = fs::read_to_string(name).with_context(|| format!("scenario {name}"))?;
    ScenarioConfig::from_json(&text).with_context(|| format!("scenario {name}"))
}

fn read_vrps(path: &Path) -> anyhow::Result<VrpSet> {
    let bytes = fs::read(path).with_context(|| path.display().to_string())?;
    VrpSet::from_json_slice(&bytes).with_context(|| path.display().to_string())
}

fn run(args: RunArgs) -> anyhow::Result<ExitCode> {
    let mut spec = ClusterSpec::new(args.nodes, load_scenario(&args.scenario)?);
    if let Some(c) = args.consensus_factor {
        spec.config.c = c;
    }
    spec.refresh_interval = args.refresh.or(spec.refresh_interval);
    spec.duration = args.duration;
    spec.seed = args.seed;
    let cluster = run_cluster(spec).map_err(|e: ConfigError| anyhow::anyhow!(e))?;
    write_outputs(&cluster, &args.out).with_context(|| args.out.display().to_string())?;
    let (union, consensus) = cluster.global_view();
    println!(
        "{} nodes, {:?} simulated: union {} VRPs, consensus {} VRPs; output in {}",
        args.nodes,
        args.duration,
        union.len(),
        consensus.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

async fn run_audit(args: AuditArgs) -> anyhow::Result<ExitCode> {
    if args.passes == 0 {
        bail!("--passes must be at least 1");
    }
    let text = fs::read_to_string(&args.nodes_file).with_context(|| args.nodes_file.display().to_string())?;
    let nodes = Peerlist::parse(&text)?;
    let identity = Identity::load(&TlsConfig { cert: args.cert, key: args.key, root: args.root })?;
    let client = HttpsClient::new(identity.client_config()?, args.bind, args.port);
    let mut passes = Vec::new();
    for pass in 0..args.passes {
        if pass > 0 {
            tokio::time::sleep(args.interval).await;
        }
        let mut observations = Vec::new();
        for node in nodes.iter() {
            let fetched = client.fetch(node, Resource::Master).await;
            let at = fetched.as_ref().ok().and_then(|f| f.generated_at).unwrap_or_else(Timestamp::now);
            let result = fetched
                .map_err(|e| e.to_string())
                .and_then(|f| VrpSet::from_json_slice(&f.body).map_err(|e| e.to_string()))
                .map(std::sync::Arc::new);
            observations.push(MasterObservation { node: node.clone(), at, result });
        }
        passes.push(observations);
    }
    let report = audit(&passes);
    print!("{report}");
    Ok(if report.lasting().next().is_some() { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn main() -> anyhow::Result<ExitCode> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => run(args),
        Command::Audit(args) => tokio::runtime::Runtime::new()?.block_on(run_audit(args)),
        Command::Verify { master, reference } => {
            let report = verify_presence(&read_vrps(&master)?, &read_vrps(&reference)?);
            print!("{report}");
            Ok(if report.is_clean() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Traffic { n_rp, n_node, s_obj, s_vrp } => {
            let params = TrafficParams { n_rp, n_node, s_obj: s_obj.as_u64(), s_vrp: s_vrp.as_u64() };
            params.validate()?;
            print!("{}", traffic_extrapolation(&params));
            Ok(ExitCode::SUCCESS)
        }
        Command::Certgen { out, addresses } => {
            for path in certgen(&out, &addresses)? {
                println!("{}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Node { config } => {
            let config = load_config(&config)?;
            tokio::runtime::Runtime::new()?.block_on(async {
                let node = byzrp_node::node_main(config).await?;
                node.run_until_ctrl_c().await;
                Ok(ExitCode::SUCCESS)
            })
        }
    }
}
