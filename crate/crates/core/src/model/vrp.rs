//! Validated payloads and the VRP file.
//!
//! A [`Vrp`] is identified solely by its canonical string. Route origins
//! are re-encoded from their parsed fields with a fixed key order
//! (`asn`, `prefix`, `maxLength`, `ta`), so two peers that emitted the same
//! payload with different spacing, key order or address notation still
//! produce byte-equal strings. ASPA and BGPsec router-key entries are opaque
//! JSON objects whose canonical form is the compact encoding with sorted
//! keys.

use std::cmp::Ordering;
use std::collections::btree_set;
use std::collections::BTreeSet;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::str::FromStr;
use std::sync::Arc;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

//------------ Asn -----------------------------------------------------------

/// An autonomous system number.
#[derive(Clone, Copy, Debug, Eq, Hash, Ord, PartialEq, PartialOrd)]
pub struct Asn(pub u32);

impl Asn {
    pub fn from_u64(v: u64) -> Result<Self, VrpError> {
        u32::try_from(v).map(Asn).map_err(|_| VrpError::AsnOutOfRange(v.to_string()))
    }
}

impl FromStr for Asn {
    type Err = VrpError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s
            .strip_prefix("AS")
            .or_else(|| s.strip_prefix("as"))
            .unwrap_or(s);
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(VrpError::InvalidAsn(s.to_string()));
        }
        digits
            .parse::<u32>()
            .map(Asn)
            .map_err(|_| VrpError::AsnOutOfRange(s.to_string()))
    }
}

impl fmt::Display for Asn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AS{}", self.0)
    }
}

//------------ Prefix --------------------------------------------------------

/// An IPv4 or IPv6 prefix with all host bits zero.
#[derive(Clone, Copy, Debug, Eq, Hash, Ord, PartialEq, PartialOrd)]
pub struct Prefix {
    addr: IpAddr,
    len: u8,
}

impl Prefix {
    pub fn new(addr: IpAddr, len: u8) -> Result<Self, VrpError> {
        let bad = || VrpError::InvalidPrefix(format!("{addr}/{len}"));
        match addr {
            IpAddr::V4(a) => {
                if len > 32 {
                    return Err(bad());
                }
                let bits = u32::from(a);
                if len < 32 && bits & (u32::MAX >> len) != 0 {
                    return Err(bad());
                }
            }
            IpAddr::V6(a) => {
                if len > 128 {
                    return Err(bad());
                }
                let bits = u128::from(a);
                if len < 128 && bits & (u128::MAX >> len) != 0 {
                    return Err(bad());
                }
            }
        }
        Ok(Prefix { addr, len })
    }

    pub fn addr(&self) -> IpAddr {
        self.addr
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> u8 {
        self.len
    }

    pub fn is_v4(&self) -> bool {
        self.addr.is_ipv4()
    }

    /// Longest prefix length for the address family.
    pub fn family_max_len(&self) -> u8 {
        if self.is_v4() {
            32
        } else {
            128
        }
    }

    pub fn v4(addr: Ipv4Addr, len: u8) -> Result<Self, VrpError> {
        Self::new(IpAddr::V4(addr), len)
    }

    pub fn v6(addr: Ipv6Addr, len: u8) -> Result<Self, VrpError> {
        Self::new(IpAddr::V6(addr), len)
    }
}

impl FromStr for Prefix {
    type Err = VrpError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || VrpError::InvalidPrefix(s.to_string());
        let (addr, len) = s.split_once('/').ok_or_else(bad)?;
        if len.is_empty() || len.len() > 3 || !len.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let addr = IpAddr::from_str(addr).map_err(|_| bad())?;
        let len = len.parse::<u8>().map_err(|_| bad())?;
        Prefix::new(addr, len).map_err(|_| bad())
    }
}

impl fmt::Display for Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.addr, self.len)
    }
}

//------------ Roa -----------------------------------------------------------

/// The fields of a validated route origin.
#[derive(Clone, Debug, Eq, Hash, Ord, PartialEq, PartialOrd)]
pub struct Roa {
    pub asn: Asn,
    pub prefix: Prefix,
    pub max_len: u8,
    pub ta: Arc<str>,
}

//------------ VrpKind -------------------------------------------------------

#[derive(Clone, Copy, Debug, Eq, Hash, Ord, PartialEq, PartialOrd)]
pub enum VrpKind {
    Roa,
    Aspa,
    BgpsecKey,
}

impl VrpKind {
    pub const ALL: [VrpKind; 3] = [VrpKind::Roa, VrpKind::Aspa, VrpKind::BgpsecKey];

    /// Key of the sublist in the VRP file.
    pub fn file_key(self) -> &'static str {
        match self {
            VrpKind::Roa => "roas",
            VrpKind::Aspa => "aspas",
            VrpKind::BgpsecKey => "bgpsec_keys",
        }
    }
}

//------------ Vrp -----------------------------------------------------------

/// A validated payload, identified by its canonical string.
#[derive(Clone, Debug)]
pub struct Vrp {
    kind: VrpKind,
    canonical: Arc<str>,
    roa: Option<Roa>,
}

impl Vrp {
    /// Builds the canonical route origin payload.
    pub fn roa(asn: Asn, prefix: Prefix, max_len: u8, ta: &str) -> Result<Self, VrpError> {
        if max_len < prefix.len() {
            return Err(VrpError::MaxLengthTooSmall {
                max_len,
                prefix_len: prefix.len(),
            });
        }
        if max_len > prefix.family_max_len() {
            return Err(VrpError::MaxLengthTooLarge(max_len));
        }
        if ta.is_empty() {
            return Err(VrpError::MissingField("ta"));
        }
        let ta_json = serde_json::to_string(ta).expect("string serialization");
        let canonical = format!(
            r#"{{"asn":"{asn}","prefix":"{prefix}","maxLength":{max_len},"ta":{ta_json}}}"#
        );
        Ok(Vrp {
            kind: VrpKind::Roa,
            canonical: canonical.into(),
            roa: Some(Roa {
                asn,
                prefix,
                max_len,
                ta: ta.into(),
            }),
        })
    }

    /// Canonicalizes one entry of the given sublist.
    pub fn from_json(kind: VrpKind, value: &Value) -> Result<Self, VrpError> {
        match kind {
            VrpKind::Roa => Self::roa_from_json(value),
            VrpKind::Aspa | VrpKind::BgpsecKey => {
                if !value.is_object() {
                    return Err(VrpError::NotAnObject);
                }
                // serde_json's map keeps keys sorted, giving a stable encoding.
                let canonical = serde_json::to_string(value).expect("value serialization");
                Ok(Vrp {
                    kind,
                    canonical: canonical.into(),
                    roa: None,
                })
            }
        }
    }

    fn roa_from_json(value: &Value) -> Result<Self, VrpError> {
        let obj = value.as_object().ok_or(VrpError::NotAnObject)?;
        let asn = match obj.get("asn").ok_or(VrpError::MissingField("asn"))? {
            Value::String(s) => s.parse()?,
            Value::Number(n) => Asn::from_u64(
                n.as_u64().ok_or_else(|| VrpError::AsnOutOfRange(n.to_string()))?,
            )?,
            _ => return Err(VrpError::InvalidField("asn")),
        };
        let prefix = obj
            .get("prefix")
            .ok_or(VrpError::MissingField("prefix"))?
            .as_str()
            .ok_or(VrpError::InvalidField("prefix"))?
            .parse::<Prefix>()?;
        let max_len = obj
            .get("maxLength")
            .ok_or(VrpError::MissingField("maxLength"))?
            .as_u64()
            .ok_or(VrpError::InvalidField("maxLength"))?;
        let max_len = u8::try_from(max_len).map_err(|_| VrpError::InvalidField("maxLength"))?;
        let ta = obj
            .get("ta")
            .ok_or(VrpError::MissingField("ta"))?
            .as_str()
            .ok_or(VrpError::InvalidField("ta"))?;
        Vrp::roa(asn, prefix, max_len, ta)
    }

    /// Parses a canonical (or any well-formed) JSON entry of the given kind.
    pub fn parse(kind: VrpKind, s: &str) -> Result<Self, VrpError> {
        let value: Value = serde_json::from_str(s).map_err(|e| VrpError::Json(e.to_string()))?;
        Self::from_json(kind, &value)
    }

    pub fn kind(&self) -> VrpKind {
        self.kind
    }

    pub fn canonical(&self) -> &str {
        &self.canonical
    }

    /// Route origin fields, for roa-kind payloads.
    pub fn as_roa(&self) -> Option<&Roa> {
        self.roa.as_ref()
    }
}

impl PartialEq for Vrp {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.canonical == other.canonical
    }
}

impl Eq for Vrp {}

impl Hash for Vrp {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.kind.hash(state);
        self.canonical.hash(state);
    }
}

impl Ord for Vrp {
    fn cmp(&self, other: &Self) -> Ordering {
        self.kind
            .cmp(&other.kind)
            .then_with(|| self.canonical.cmp(&other.canonical))
    }
}

impl PartialOrd for Vrp {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Vrp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical)
    }
}

//------------ VrpSet --------------------------------------------------------

/// The three independent sublists of a VRP file.
#[derive(Clone, Debug, Default, Eq, PartialEq)]
pub struct VrpSet {
    pub roas: BTreeSet<Vrp>,
    pub aspas: BTreeSet<Vrp>,
    pub bgpsec_keys: BTreeSet<Vrp>,
}

impl VrpSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, kind: VrpKind) -> &BTreeSet<Vrp> {
        match kind {
            VrpKind::Roa => &self.roas,
            VrpKind::Aspa => &self.aspas,
            VrpKind::BgpsecKey => &self.bgpsec_keys,
        }
    }

    pub fn get_mut(&mut self, kind: VrpKind) -> &mut BTreeSet<Vrp> {
        match kind {
            VrpKind::Roa => &mut self.roas,
            VrpKind::Aspa => &mut self.aspas,
            VrpKind::BgpsecKey => &mut self.bgpsec_keys,
        }
    }

    /// Inserts into the sublist matching the payload's kind.
    pub fn insert(&mut self, vrp: Vrp) -> bool {
        self.get_mut(vrp.kind()).insert(vrp)
    }

    pub fn contains(&self, vrp: &Vrp) -> bool {
        self.get(vrp.kind()).contains(vrp)
    }

    pub fn remove(&mut self, vrp: &Vrp) -> bool {
        self.get_mut(vrp.kind()).remove(vrp)
    }

    pub fn len(&self) -> usize {
        self.roas.len() + self.aspas.len() + self.bgpsec_keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All payloads, sublist by sublist.
    pub fn iter(&self) -> impl Iterator<Item = &Vrp> {
        self.roas
            .iter()
            .chain(self.aspas.iter())
            .chain(self.bgpsec_keys.iter())
    }

    pub fn extend(&mut self, other: &VrpSet) {
        for kind in VrpKind::ALL {
            self.get_mut(kind).extend(other.get(kind).iter().cloned());
        }
    }

    pub fn union(&self, other: &VrpSet) -> VrpSet {
        let mut res = self.clone();
        res.extend(other);
        res
    }

    pub fn difference(&self, other: &VrpSet) -> VrpSet {
        let mut res = VrpSet::new();
        for kind in VrpKind::ALL {
            *res.get_mut(kind) = self.get(kind).difference(other.get(kind)).cloned().collect();
        }
        res
    }

    pub fn is_subset(&self, other: &VrpSet) -> bool {
        VrpKind::ALL
            .iter()
            .all(|k| self.get(*k).is_subset(other.get(*k)))
    }

    /// Parses a VRP file.
    ///
    /// Absent sublists are empty, unknown top-level keys are ignored and
    /// duplicate entries collapse.
    pub fn from_json_slice(bytes: &[u8]) -> Result<Self, VrpFileError> {
        // Going through a map rejects top-level arrays, which serde would
        // otherwise accept as a struct in sequence form.
        let mut map: serde_json::Map<String, Value> = serde_json::from_slice(bytes)?;
        let mut take = |key: &str| -> Result<Option<Vec<Value>>, VrpFileError> {
            match map.remove(key) {
                None | Some(Value::Null) => Ok(None),
                Some(v) => Ok(Some(serde_json::from_value(v)?)),
            }
        };
        RawVrpFile {
            roas: take("roas")?,
            aspas: take("aspas")?,
            bgpsec_keys: take("bgpsec_keys")?,
        }
        .into_set()
    }

    /// Serializes to the VRP file format with each sublist sorted by
    /// canonical string.
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut out = String::with_capacity(64 + self.len() * 96);
        out.push_str("{\n");
        for (i, kind) in VrpKind::ALL.iter().enumerate() {
            out.push_str("  \"");
            out.push_str(kind.file_key());
            out.push_str("\": [");
            let set = self.get(*kind);
            for (j, vrp) in set.iter().enumerate() {
                out.push_str(if j == 0 { "\n    " } else { ",\n    " });
                out.push_str(vrp.canonical());
            }
            if !set.is_empty() {
                out.push_str("\n  ");
            }
            out.push(']');
            if i + 1 < VrpKind::ALL.len() {
                out.push(',');
            }
            out.push('\n');
        }
        out.push_str("}\n");
        out.into_bytes()
    }
}

impl<'a> IntoIterator for &'a VrpSet {
    type Item = &'a Vrp;
    type IntoIter = std::iter::Chain<
        std::iter::Chain<btree_set::Iter<'a, Vrp>, btree_set::Iter<'a, Vrp>>,
        btree_set::Iter<'a, Vrp>,
    >;

    fn into_iter(self) -> Self::IntoIter {
        self.roas
            .iter()
            .chain(self.aspas.iter())
            .chain(self.bgpsec_keys.iter())
    }
}

impl FromIterator<Vrp> for VrpSet {
    fn from_iter<I: IntoIterator<Item = Vrp>>(iter: I) -> Self {
        let mut set = VrpSet::new();
        for vrp in iter {
            set.insert(vrp);
        }
        set
    }
}

#[derive(Deserialize)]
struct RawVrpFile {
    #[serde(default)]
    roas: Option<Vec<Value>>,
    #[serde(default)]
    aspas: Option<Vec<Value>>,
    #[serde(default)]
    bgpsec_keys: Option<Vec<Value>>,
}

impl RawVrpFile {
    fn into_set(self) -> Result<VrpSet, VrpFileError> {
        let mut set = VrpSet::new();
        for (kind, list) in [
            (VrpKind::Roa, self.roas),
            (VrpKind::Aspa, self.aspas),
            (VrpKind::BgpsecKey, self.bgpsec_keys),
        ] {
            for (index, value) in list.unwrap_or_default().iter().enumerate() {
                let vrp = Vrp::from_json(kind, value).map_err(|source| VrpFileError::Entry {
                    list: kind.file_key(),
                    index,
                    source,
                })?;
                set.insert(vrp);
            }
        }
        Ok(set)
    }
}

impl Serialize for VrpSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(Some(3))?;
        for kind in VrpKind::ALL {
            let entries: Vec<Value> = self
                .get(kind)
                .iter()
                .map(|v| serde_json::from_str(v.canonical()).expect("canonical JSON"))
                .collect();
            map.serialize_entry(kind.file_key(), &entries)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for VrpSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        RawVrpFile::deserialize(deserializer)?
            .into_set()
            .map_err(D::Error::custom)
    }
}

//------------ Errors --------------------------------------------------------

#[derive(Clone, Debug, Eq, PartialEq, thiserror::Error)]
pub enum VrpError {
    #[error("invalid prefix {0:?}")]
    InvalidPrefix(String),
    #[error("invalid AS number {0:?}")]
    InvalidAsn(String),
    #[error("AS number {0} out of range")]
    AsnOutOfRange(String),
    #[error("maxLength {max_len} shorter than prefix length {prefix_len}")]
    MaxLengthTooSmall { max_len: u8, prefix_len: u8 },
    #[error("maxLength {0} exceeds the address family length")]
    MaxLengthTooLarge(u8),
    #[error("missing field {0:?}")]
    MissingField(&'static str),
    #[error("invalid field {0:?}")]
    InvalidField(&'static str),
    #[error("entry is not a JSON object")]
    NotAnObject,
    #[error("malformed JSON: {0}")]
    Json(String),
}

#[derive(Debug, thiserror::Error)]
pub enum VrpFileError {
    #[error("malformed VRP document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{list}[{index}]: {source}")]
    Entry {
        list: &'static str,
        index: usize,
        source: VrpError,
    },
}
