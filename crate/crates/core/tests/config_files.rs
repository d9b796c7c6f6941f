//! The sample files under config/ stay loadable.

use std::fs;
use std::path::PathBuf;
use std::time::Duration;

use byzrp_core::config::{Mode, NodeConfig};
use byzrp_core::model::Peerlist;
use byzrp_core::sim::ScenarioConfig;

fn read(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../config").join(name);
    fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn documented_defaults_are_the_defaults() {
    let c = NodeConfig::from_toml(&read("node.toml")).unwrap();
    let expected = NodeConfig { bootstrap: Some("config/bootstrap.txt".into()), ..NodeConfig::default() };
    assert_eq!(c, expected);
}

#[test]
fn profiles() {
    let a = NodeConfig::from_toml(&read("experiment-a.toml")).unwrap();
    assert_eq!(a.refresh_interval, Duration::from_secs(10));
    let b = NodeConfig::from_toml(&read("experiment-b.toml")).unwrap();
    assert_eq!(b.refresh_interval, Duration::from_secs(600));
    assert_ne!(a.listen.address, b.listen.address);
}

#[test]
fn live() {
    let c = NodeConfig::from_toml(&read("live.toml")).unwrap();
    assert_eq!(c.mode, Mode::Live);
    let live = c.live.unwrap();
    assert_eq!(live.tals.len(), 2);
    assert!(live.capture.is_some());
}

#[test]
fn bootstrap_and_scenarios() {
    assert_eq!(Peerlist::parse(&read("bootstrap.txt")).unwrap().len(), 3);
    for name in ["scenario-tiny.json", "scenario-flaky.json"] {
        let s = ScenarioConfig::from_json(&read(name)).unwrap();
        assert!(!s.ground_truth().is_empty(), "{name}");
    }
}
