//! Repository traffic with and without the node network.

use std::fmt;

use bytesize::ByteSize;

use crate::model::ConfigError;

/// Sizes are in bytes.
#[derive(Clone, Copy, Debug, Eq, PartialEq)]
pub struct TrafficParams {
    /// Relying parties fetching from publication points today.
    pub n_rp: u64,
    /// Nodes in the network.
    pub n_node: u64,
    /// Object download per relying party.
    pub s_obj: u64,
    /// Compressed VRP file.
    pub s_vrp: u64,
}

impl TrafficParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [
            ("n_rp", self.n_rp),
            ("n_node", self.n_node),
            ("s_obj", self.s_obj),
            ("s_vrp", self.s_vrp),
        ] {
            if v == 0 {
                return Err(ConfigError::new(name, "must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrafficReport {
    pub before_bytes: u128,
    pub after_bytes: u128,
    pub ratio: f64,
    /// Requests publication points see, before and after.
    pub pp_requests: (u64, u64),
}

/// Every relying party downloading all objects, versus the nodes doing so
/// and relying parties downloading only the VRP file.
pub fn traffic_extrapolation(p: &TrafficParams) -> TrafficReport {
    let before = u128::from(p.n_rp) * u128::from(p.s_obj);
    let after = u128::from(p.n_rp) * u128::from(p.s_vrp) + u128::from(p.n_node) * u128::from(p.s_obj);
    TrafficReport {
        before_bytes: before,
        after_bytes: after,
        ratio: before as f64 / after as f64,
        pp_requests: (p.n_rp, p.n_node),
    }
}

fn size(b: u128) -> String {
    match u64::try_from(b) {
        Ok(b) => ByteSize(b).display().si().to_string(),
        Err(_) => format!("{b} B"),
    }
}

impl fmt::Display for TrafficReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "before: {} ({} bytes)", size(self.before_bytes), self.before_bytes)?;
        writeln!(f, "after:  {} ({} bytes)", size(self.after_bytes), self.after_bytes)?;
        writeln!(f, "ratio:  {:.2}", self.ratio)?;
        writeln!(
            f,
            "publication point requests: {} -> {}",
            self.pp_requests.0, self.pp_requests.1
        )
    }
}
