use std::process::Command;

use byzrp_core::model::{Asn, Vrp, VrpSet};

fn byzrp(args: &[&str]) -> (bool, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_byzrp")).args(args).output().unwrap();
    (out.status.success(), String::from_utf8_lossy(&out.stdout).into_owned())
}

fn vrp(asn: u32) -> Vrp {
    Vrp::roa(Asn(asn), "192.0.2.0/24".parse().unwrap(), 24, "ARIN").unwrap()
}

#[test]
fn traffic_report() {
    let (ok, out) = byzrp(&["traffic", "--n-rp", "3156", "--n-node", "15", "--s-obj", "562 MB", "--s-vrp", "6.2 MB"]);
    assert!(ok);
    assert!(out.contains("ratio:  63.35"), "{out}");
    assert!(out.contains("27997200000 bytes"), "{out}");
    let (ok, _) = byzrp(&["traffic", "--n-rp", "0", "--n-node", "1", "--s-obj", "1 B", "--s-vrp", "1 B"]);
    assert!(!ok);
}

#[test]
fn verify_flags_extra_vrps() {
    let dir = tempfile::tempdir().unwrap();
    let master: VrpSet = [vrp(1), vrp(666)].into_iter().collect();
    let reference: VrpSet = [vrp(1), vrp(2)].into_iter().collect();
    let (m, r) = (dir.path().join("master.json"), dir.path().join("reference.json"));
    std::fs::write(&m, master.to_json_bytes()).unwrap();
    std::fs::write(&r, reference.to_json_bytes()).unwrap();
    let (ok, out) = byzrp(&["verify", "--master", m.to_str().unwrap(), "--reference", r.to_str().unwrap()]);
    assert!(!ok);
    assert!(out.contains("AS666"), "{out}");
    assert!(out.contains("1 suspect"), "{out}");
    let (ok, _) = byzrp(&["verify", "--master", r.to_str().unwrap(), "--reference", r.to_str().unwrap()]);
    assert!(ok);
}

#[test]
fn run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let (ok, stdout) = byzrp(&[
        "run", "--nodes", "3", "--scenario", "benign-A", "--duration", "3m", "--seed", "4", "--out", out.to_str().unwrap(),
    ]);
    assert!(ok, "{stdout}");
    for f in ["metrics.csv", "events.csv", "plot.gp"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("time_s,union,consensus,local_0"));
    let (ok, _) = byzrp(&["run", "--nodes", "3", "--scenario", "no-such-preset", "--out", out.to_str().unwrap()]);
    assert!(!ok);
}

#[test]
fn certgen_files() {
    let dir = tempfile::tempdir().unwrap();
    let (ok, out) = byzrp(&["certgen", "--out", dir.path().to_str().unwrap(), "127.0.0.2", "127.0.0.3"]);
    assert!(ok);
    assert_eq!(out.lines().count(), 6);
    assert!(dir.path().join("127.0.0.3.key").exists());
}
