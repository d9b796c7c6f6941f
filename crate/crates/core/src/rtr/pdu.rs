//! RTR version 1 PDUs.
//!
//! Every PDU starts with an eight byte header: version, type, a 16 bit
//! field whose meaning depends on the type, and the total length. All
//! integers are big-endian.

use std::fmt;
use std::net::{Ipv4Addr, Ipv6Addr};

pub const VERSION: u8 = 1;

/// Longest PDU accepted from a peer. Only error reports are variable-sized.
pub const MAX_PDU_LEN: u32 = 64 * 1024;

const HEADER_LEN: usize = 8;

//------------ ErrorCode -----------------------------------------------------

#[derive(Clone, Copy, Debug, Eq, Hash, PartialEq)]
pub struct ErrorCode(pub u16);

impl ErrorCode {
    pub const CORRUPT_DATA: ErrorCode = ErrorCode(0);
    pub const INTERNAL_ERROR: ErrorCode = ErrorCode(1);
    pub const NO_DATA_AVAILABLE: ErrorCode = ErrorCode(2);
    pub const INVALID_REQUEST: ErrorCode = ErrorCode(3);
    pub const UNSUPPORTED_VERSION: ErrorCode = ErrorCode(4);
    pub const UNSUPPORTED_PDU_TYPE: ErrorCode = ErrorCode(5);
    pub const WITHDRAWAL_OF_UNKNOWN: ErrorCode = ErrorCode(6);
    pub const DUPLICATE_ANNOUNCEMENT: ErrorCode = ErrorCode(7);
    pub const UNEXPECTED_VERSION: ErrorCode = ErrorCode(8);

    /// Whether the session ends after sending or receiving this error.
    pub fn is_fatal(self) -> bool {
        self != ErrorCode::NO_DATA_AVAILABLE
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.0 {
            0 => "corrupt data",
            1 => "internal error",
            2 => "no data available",
            3 => "invalid request",
            4 => "unsupported protocol version",
            5 => "unsupported PDU type",
            6 => "withdrawal of unknown record",
            7 => "duplicate announcement received",
            8 => "unexpected protocol version",
            _ => return write!(f, "error {}", self.0),
        };
        f.write_str(name)
    }
}

//------------ Pdu -----------------------------------------------------------

pub const FLAG_ANNOUNCE: u8 = 1;

#[derive(Clone, Debug, Eq, PartialEq)]
pub enum Pdu {
    SerialNotify { session_id: u16, serial: u32 },
    SerialQuery { session_id: u16, serial: u32 },
    ResetQuery,
    CacheResponse { session_id: u16 },
    Ipv4Prefix { flags: u8, prefix_len: u8, max_len: u8, prefix: Ipv4Addr, asn: u32 },
    Ipv6Prefix { flags: u8, prefix_len: u8, max_len: u8, prefix: Ipv6Addr, asn: u32 },
    EndOfData { session_id: u16, serial: u32, refresh: u32, retry: u32, expire: u32 },
    CacheReset,
    ErrorReport { code: ErrorCode, pdu: Vec<u8>, text: String },
}

impl Pdu {
    pub fn pdu_type(&self) -> u8 {
        match self {
            Pdu::SerialNotify { .. } => 0,
            Pdu::SerialQuery { .. } => 1,
            Pdu::ResetQuery => 2,
            Pdu::CacheResponse { .. } => 3,
            Pdu::Ipv4Prefix { .. } => 4,
            Pdu::Ipv6Prefix { .. } => 6,
            Pdu::EndOfData { .. } => 7,
            Pdu::CacheReset => 8,
            Pdu::ErrorReport { .. } => 10,
        }
    }

    pub fn encoded_len(&self) -> usize {
        match self {
            Pdu::SerialNotify { .. } | Pdu::SerialQuery { .. } => 12,
            Pdu::ResetQuery | Pdu::CacheResponse { .. } | Pdu::CacheReset => 8,
            Pdu::Ipv4Prefix { .. } => 20,
            Pdu::Ipv6Prefix { .. } => 32,
            Pdu::EndOfData { .. } => 24,
            Pdu::ErrorReport { pdu, text, .. } => HEADER_LEN + 4 + pdu.len() + 4 + text.len(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out);
        out
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        let field: u16 = match self {
            Pdu::SerialNotify { session_id, .. }
            | Pdu::SerialQuery { session_id, .. }
            | Pdu::CacheResponse { session_id }
            | Pdu::EndOfData { session_id, .. } => *session_id,
            Pdu::ErrorReport { code, .. } => code.0,
            _ => 0,
        };
        out.push(VERSION);
        out.push(self.pdu_type());
        out.extend_from_slice(&field.to_be_bytes());
        out.extend_from_slice(&(self.encoded_len() as u32).to_be_bytes());
        match self {
            Pdu::SerialNotify { serial, .. } | Pdu::SerialQuery { serial, .. } => {
                out.extend_from_slice(&serial.to_be_bytes());
            }
            Pdu::Ipv4Prefix { flags, prefix_len, max_len, prefix, asn } => {
                out.extend_from_slice(&[*flags, *prefix_len, *max_len, 0]);
                out.extend_from_slice(&prefix.octets());
                out.extend_from_slice(&asn.to_be_bytes());
            }
            Pdu::Ipv6Prefix { flags, prefix_len, max_len, prefix, asn } => {
                out.extend_from_slice(&[*flags, *prefix_len, *max_len, 0]);
                out.extend_from_slice(&prefix.octets());
                out.extend_from_slice(&asn.to_be_bytes());
            }
            Pdu::EndOfData { serial, refresh, retry, expire, .. } => {
                for v in [serial, refresh, retry, expire] {
                    out.extend_from_slice(&v.to_be_bytes());
                }
            }
            Pdu::ErrorReport { pdu, text, .. } => {
                out.extend_from_slice(&(pdu.len() as u32).to_be_bytes());
                out.extend_from_slice(pdu);
                out.extend_from_slice(&(text.len() as u32).to_be_bytes());
                out.extend_from_slice(text.as_bytes());
            }
            Pdu::ResetQuery | Pdu::CacheResponse { .. } | Pdu::CacheReset => {}
        }
    }

    /// Decodes one PDU from the front of `buf`, returning it with the
    /// number of bytes consumed.
    pub fn decode(buf: &[u8]) -> Result<(Pdu, usize), DecodeError> {
        if buf.len() < HEADER_LEN {
            return Err(DecodeError::Incomplete(HEADER_LEN - buf.len()));
        }
        let version = buf[0];
        let pdu_type = buf[1];
        let field = u16::from_be_bytes([buf[2], buf[3]]);
        let len = u32::from_be_bytes([buf[4], buf[5], buf[6], buf[7]]);
        if version != VERSION {
            return Err(DecodeError::UnsupportedVersion(version));
        }
        if (len as usize) < HEADER_LEN || len > MAX_PDU_LEN {
            return Err(DecodeError::BadLength { pdu_type, len });
        }
        let expected = match pdu_type {
            0 | 1 => Some(12),
            2 | 3 | 8 => Some(8),
            4 => Some(20),
            6 => Some(32),
            7 => Some(24),
            10 => None,
            other => return Err(DecodeError::UnsupportedType(other)),
        };
        if expected.is_some_and(|e| e != len) {
            return Err(DecodeError::BadLength { pdu_type, len });
        }
        let len = len as usize;
        if buf.len() < len {
            return Err(DecodeError::Incomplete(len - buf.len()));
        }
        let body = &buf[HEADER_LEN..len];
        let u32_at = |i: usize| u32::from_be_bytes([body[i], body[i + 1], body[i + 2], body[i + 3]]);
        let zero_field = |pdu: Pdu| {
            if field != 0 {
                Err(DecodeError::Corrupt("non-zero reserved field"))
            } else {
                Ok(pdu)
            }
        };
        let pdu = match pdu_type {
            0 => Pdu::SerialNotify { session_id: field, serial: u32_at(0) },
            1 => Pdu::SerialQuery { session_id: field, serial: u32_at(0) },
            2 => zero_field(Pdu::ResetQuery)?,
            3 => Pdu::CacheResponse { session_id: field },
            4 | 6 => {
                let (flags, prefix_len, max_len) = (body[0], body[1], body[2]);
                let family_max = if pdu_type == 4 { 32 } else { 128 };
                if flags & !FLAG_ANNOUNCE != 0 {
                    return Err(DecodeError::Corrupt("unknown prefix flags"));
                }
                if prefix_len > max_len || max_len > family_max {
                    return Err(DecodeError::Corrupt("prefix length out of range"));
                }
                let pdu = if pdu_type == 4 {
                    let addr: [u8; 4] = body[4..8].try_into().expect("length checked");
                    Pdu::Ipv4Prefix { flags, prefix_len, max_len, prefix: addr.into(), asn: u32_at(8) }
                } else {
                    let addr: [u8; 16] = body[4..20].try_into().expect("length checked");
                    Pdu::Ipv6Prefix { flags, prefix_len, max_len, prefix: addr.into(), asn: u32_at(20) }
                };
                zero_field(pdu)?
            }
            7 => Pdu::EndOfData {
                session_id: field,
                serial: u32_at(0),
                refresh: u32_at(4),
                retry: u32_at(8),
                expire: u32_at(12),
            },
            8 => zero_field(Pdu::CacheReset)?,
            10 => {
                let corrupt = DecodeError::Corrupt("inconsistent error report lengths");
                if body.len() < 8 {
                    return Err(corrupt);
                }
                let pdu_len = u32_at(0) as usize;
                let rest = &body[4..];
                if rest.len() < pdu_len + 4 {
                    return Err(corrupt);
                }
                let inner = rest[..pdu_len].to_vec();
                let rest = &rest[pdu_len..];
                let text_len = u32::from_be_bytes([rest[0], rest[1], rest[2], rest[3]]) as usize;
                if rest.len() != 4 + text_len {
                    return Err(corrupt);
                }
                let text = String::from_utf8(rest[4..].to_vec())
                    .map_err(|_| DecodeError::Corrupt("error text is not UTF-8"))?;
                Pdu::ErrorReport { code: ErrorCode(field), pdu: inner, text }
            }
            _ => unreachable!("type checked above"),
        };
        Ok((pdu, len))
    }
}

#[derive(Clone, Debug, Eq, PartialEq, thiserror::Error)]
pub enum DecodeError {
    #[error("need {0} more bytes")]
    Incomplete(usize),
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u8),
    #[error("unsupported PDU type {0}")]
    UnsupportedType(u8),
    #[error("bad length {len} for PDU type {pdu_type}")]
    BadLength { pdu_type: u8, len: u32 },
    #[error("corrupt PDU: {0}")]
    Corrupt(&'static str),
}

impl DecodeError {
    /// The error code to report back, if any.
    pub fn error_code(&self) -> Option<ErrorCode> {
        match self {
            DecodeError::Incomplete(_) => None,
            DecodeError::UnsupportedVersion(_) => Some(ErrorCode::UNSUPPORTED_VERSION),
            DecodeError::UnsupportedType(_) => Some(ErrorCode::UNSUPPORTED_PDU_TYPE),
            DecodeError::BadLength { .. } | DecodeError::Corrupt(_) => Some(ErrorCode::CORRUPT_DATA),
        }
    }
}
