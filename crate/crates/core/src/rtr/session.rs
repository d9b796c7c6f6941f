//! Per-connection protocol handling, for both ends.

use std::collections::BTreeSet;

use super::cache::{CacheState, RouteOrigin};
use super::pdu::{DecodeError, ErrorCode, Pdu};

/// What to send back for one incoming PDU.
#[derive(Clone, Debug, Default, Eq, PartialEq)]
pub struct Response {
    pub pdus: Vec<Pdu>,
    /// Whether the connection is to be closed after sending.
    pub close: bool,
}

fn error(code: ErrorCode, offending: &[u8], text: &str) -> Response {
    Response {
        pdus: vec![Pdu::ErrorReport {
            code,
            pdu: offending.to_vec(),
            text: text.to_string(),
        }],
        close: code.is_fatal(),
    }
}

/// Answers one PDU received from a router.
///
/// `raw` is the PDU's wire form, echoed in error reports.
pub fn handle_pdu(cache: &CacheState, pdu: &Pdu, raw: &[u8]) -> Response {
    let session_id = cache.session_id();
    let timing = cache.timing();
    let (Some(serial), Some(current)) = (cache.serial(), cache.current()) else {
        return match pdu {
            Pdu::ResetQuery | Pdu::SerialQuery { .. } => {
                error(ErrorCode::NO_DATA_AVAILABLE, raw, "no data available yet")
            }
            Pdu::ErrorReport { .. } => Response { pdus: vec![], close: true },
            _ => error(ErrorCode::INVALID_REQUEST, raw, "unexpected PDU from router"),
        };
    };
    let end = Pdu::EndOfData {
        session_id,
        serial,
        refresh: timing.refresh,
        retry: timing.retry,
        expire: timing.expire,
    };
    match *pdu {
        Pdu::ResetQuery => {
            let mut pdus = Vec::with_capacity(current.len() + 2);
            pdus.push(Pdu::CacheResponse { session_id });
            pdus.extend(current.iter().map(|o| o.to_pdu(true)));
            pdus.push(end);
            Response { pdus, close: false }
        }
        Pdu::SerialQuery { session_id: sid, serial: theirs } => {
            let diff = if sid == session_id { cache.diff(theirs) } else { None };
            let Some(diff) = diff else {
                return Response {
                    pdus: vec![Pdu::CacheReset],
                    close: false,
                };
            };
            let mut pdus = Vec::with_capacity(diff.announce.len() + diff.withdraw.len() + 2);
            pdus.push(Pdu::CacheResponse { session_id });
            pdus.extend(diff.withdraw.iter().map(|o| o.to_pdu(false)));
            pdus.extend(diff.announce.iter().map(|o| o.to_pdu(true)));
            pdus.push(end);
            Response { pdus, close: false }
        }
        Pdu::ErrorReport { .. } => Response { pdus: vec![], close: true },
        _ => error(ErrorCode::INVALID_REQUEST, raw, "unexpected PDU from router"),
    }
}

/// Answers a frame that could not be decoded. `None` means more bytes are
/// needed.
pub fn handle_decode_error(err: &DecodeError, raw: &[u8]) -> Option<Response> {
    let code = err.error_code()?;
    let mut resp = error(code, raw, &err.to_string());
    resp.close = true;
    Some(resp)
}

/// The notification sent to connected routers after an update.
pub fn serial_notify(cache: &CacheState) -> Option<Pdu> {
    Some(Pdu::SerialNotify {
        session_id: cache.session_id(),
        serial: cache.serial()?,
    })
}

//------------ RtrClient -----------------------------------------------------

/// Router-side state, enough to check what a cache sends.
#[derive(Clone, Debug, Default)]
pub struct RtrClient {
    pub session_id: Option<u16>,
    pub serial: Option<u32>,
    pub origins: BTreeSet<RouteOrigin>,
    pending: Option<BTreeSet<RouteOrigin>>,
}

#[derive(Clone, Debug, Eq, PartialEq, thiserror::Error)]
pub enum ClientError {
    #[error("cache reported {0}: {1}")]
    Report(ErrorCode, String),
    #[error("{0}")]
    Protocol(ErrorCode),
    #[error("cache requests a reset")]
    Reset,
}

impl RtrClient {
    pub fn new() -> Self {
        Self::default()
    }

    /// The query to send next.
    pub fn query(&self) -> Pdu {
        match (self.session_id, self.serial) {
            (Some(session_id), Some(serial)) => Pdu::SerialQuery { session_id, serial },
            _ => Pdu::ResetQuery,
        }
    }

    /// Applies one PDU from the cache. Returns true at End of Data.
    pub fn apply(&mut self, pdu: &Pdu) -> Result<bool, ClientError> {
        match pdu {
            Pdu::CacheResponse { session_id } => {
                if self.session_id.is_some_and(|s| s != *session_id) && self.serial.is_some() {
                    return Err(ClientError::Protocol(ErrorCode::CORRUPT_DATA));
                }
                let base = if self.serial.is_some() {
                    self.origins.clone()
                } else {
                    BTreeSet::new()
                };
                self.session_id = Some(*session_id);
                self.pending = Some(base);
            }
            Pdu::Ipv4Prefix { .. } | Pdu::Ipv6Prefix { .. } => {
                let pending = self
                    .pending
                    .as_mut()
                    .ok_or(ClientError::Protocol(ErrorCode::CORRUPT_DATA))?;
                let (origin, announce) = RouteOrigin::from_pdu(pdu)
                    .ok_or(ClientError::Protocol(ErrorCode::CORRUPT_DATA))?;
                if announce && !pending.insert(origin) {
                    return Err(ClientError::Protocol(ErrorCode::DUPLICATE_ANNOUNCEMENT));
                }
                if !announce && !pending.remove(&origin) {
                    return Err(ClientError::Protocol(ErrorCode::WITHDRAWAL_OF_UNKNOWN));
                }
            }
            Pdu::EndOfData { session_id, serial, .. } => {
                let pending = self
                    .pending
                    .take()
                    .ok_or(ClientError::Protocol(ErrorCode::CORRUPT_DATA))?;
                if Some(*session_id) != self.session_id {
                    return Err(ClientError::Protocol(ErrorCode::CORRUPT_DATA));
                }
                self.origins = pending;
                self.serial = Some(*serial);
                return Ok(true);
            }
            Pdu::CacheReset => {
                self.serial = None;
                self.pending = None;
                return Err(ClientError::Reset);
            }
            Pdu::SerialNotify { .. } => {}
            Pdu::ErrorReport { code, text, .. } => {
                return Err(ClientError::Report(*code, text.clone()));
            }
            Pdu::ResetQuery | Pdu::SerialQuery { .. } => {
                return Err(ClientError::Protocol(ErrorCode::INVALID_REQUEST));
            }
        }
        Ok(false)
    }

    /// Queries `cache` in process until the client is in sync, falling back
    /// to a reset query when the cache asks for one.
    pub fn sync_with(&mut self, cache: &CacheState) -> Result<(), ClientError> {
        for _ in 0..2 {
            let query = self.query();
            let resp = handle_pdu(cache, &query, &query.encode());
            let mut result = Ok(false);
            for pdu in &resp.pdus {
                result = self.apply(pdu);
                if result.is_err() {
                    break;
                }
            }
            match result {
                Ok(true) => return Ok(()),
                Err(ClientError::Reset) => continue,
                Err(e) => return Err(e),
                Ok(false) => return Err(ClientError::Protocol(ErrorCode::CORRUPT_DATA)),
            }
        }
        Err(ClientError::Reset)
    }
}
