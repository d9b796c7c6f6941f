//! Comparing node outputs with each other and with an independent run.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use crate::model::{PeerAddr, Vrp, VrpSet};
use crate::time::Timestamp;

/// One node's master as fetched by an auditor.
#[derive(Clone, Debug)]
pub struct MasterObservation {
    pub node: PeerAddr,
    pub at: Timestamp,
    pub result: Result<Arc<VrpSet>, String>,
}

/// How a difference behaved across audit passes.
#[derive(Clone, Copy, Debug, Eq, Ord, PartialEq, PartialOrd)]
pub enum DiffLabel {
    /// Seen in every pass, and there was more than one.
    Persistent,
    /// Seen earlier but gone in the last pass: an update in flight.
    Transient,
    /// Seen only in the last pass or in a single-pass audit.
    Unconfirmed,
}

impl fmt::Display for DiffLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiffLabel::Persistent => "persistent",
            DiffLabel::Transient => "transient",
            DiffLabel::Unconfirmed => "unconfirmed",
        })
    }
}

/// An object held by `holder` but not by `other`.
#[derive(Clone, Debug, Eq, Ord, PartialEq, PartialOrd)]
pub struct ObjectDiff {
    pub holder: PeerAddr,
    pub other: PeerAddr,
    pub object: Vrp,
    pub label: DiffLabel,
}

#[derive(Clone, Debug, Default)]
pub struct AuditReport {
    pub passes: usize,
    /// Nodes that could not be fetched in the last pass, with the error.
    pub unreachable: Vec<(PeerAddr, String)>,
    pub diffs: Vec<ObjectDiff>,
}

impl AuditReport {
    pub fn is_consistent(&self) -> bool {
        self.diffs.is_empty()
    }

    /// Differences other than transient ones.
    pub fn lasting(&self) -> impl Iterator<Item = &ObjectDiff> {
        self.diffs.iter().filter(|d| d.label != DiffLabel::Transient)
    }

    /// Objects that appear in any difference.
    pub fn objects(&self) -> BTreeSet<&Vrp> {
        self.diffs.iter().map(|d| &d.object).collect()
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "audit over {} pass(es)", self.passes)?;
        for (node, err) in &self.unreachable {
            writeln!(f, "unreachable {node}: {err}")?;
        }
        if self.diffs.is_empty() {
            return writeln!(f, "all reachable masters agree");
        }
        for d in &self.diffs {
            writeln!(f, "{} only at {} (not at {}): {}", d.label, d.holder, d.other, d.object)?;
        }
        Ok(())
    }
}

type DiffKey = (PeerAddr, PeerAddr, Vrp);

fn pass_diffs(pass: &[MasterObservation]) -> BTreeSet<DiffKey> {
    let ok: Vec<(&PeerAddr, &VrpSet)> = pass
        .iter()
        .filter_map(|o| o.result.as_ref().ok().map(|v| (&o.node, v.as_ref())))
        .collect();
    let mut out = BTreeSet::new();
    for (a, va) in &ok {
        for (b, vb) in &ok {
            if a == b {
                continue;
            }
            for obj in va.difference(vb).iter() {
                out.insert(((*a).clone(), (*b).clone(), obj.clone()));
            }
        }
    }
    out
}

/// Reports pairwise differences between node masters over one or more
/// passes, oldest first.
pub fn audit(passes: &[Vec<MasterObservation>]) -> AuditReport {
    let Some(last) = passes.last() else {
        return AuditReport::default();
    };
    let per_pass: Vec<BTreeSet<DiffKey>> = passes.iter().map(|p| pass_diffs(p)).collect();
    let mut seen: BTreeMap<DiffKey, usize> = BTreeMap::new();
    for diffs in &per_pass {
        for key in diffs {
            *seen.entry(key.clone()).or_default() += 1;
        }
    }
    let in_last = per_pass.last().expect("nonempty");
    let diffs = seen
        .into_iter()
        .map(|(key, count)| {
            let label = if !in_last.contains(&key) {
                DiffLabel::Transient
            } else if count == passes.len() && passes.len() > 1 {
                DiffLabel::Persistent
            } else {
                DiffLabel::Unconfirmed
            };
            let (holder, other, object) = key;
            ObjectDiff { holder, other, object, label }
        })
        .collect();
    AuditReport {
        passes: passes.len(),
        unreachable: last
            .iter()
            .filter_map(|o| o.result.as_ref().err().map(|e| (o.node.clone(), e.clone())))
            .collect(),
        diffs,
    }
}

/// Master VRPs missing from an independent reference.
#[derive(Clone, Debug, Default, Eq, PartialEq)]
pub struct VerifyReport {
    pub checked: usize,
    /// VRPs the reference does not confirm.
    pub suspects: Vec<Vrp>,
}

impl VerifyReport {
    pub fn is_clean(&self) -> bool {
        self.suspects.is_empty()
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} VRPs checked, {} suspect", self.checked, self.suspects.len())?;
        for v in &self.suspects {
            writeln!(f, "suspect: {v}")?;
        }
        if !self.suspects.is_empty() {
            writeln!(
                f,
                "note: a suspect may also have been revoked or expired between the two runs"
            )?;
        }
        Ok(())
    }
}

/// Lists master VRPs the reference does not contain.
///
/// Only presence is checked. A VRP missing from the master proves nothing,
/// so the reverse direction is never reported.
pub fn verify_presence(master: &VrpSet, reference: &VrpSet) -> VerifyReport {
    VerifyReport {
        checked: master.len(),
        suspects: master.difference(reference).iter().cloned().collect(),
    }
}
