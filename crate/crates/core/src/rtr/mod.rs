//! RPKI-to-Router protocol, version 1: wire format, cache state and
//! session logic. Transport lives with the node service.

mod cache;
mod pdu;
mod session;

pub use self::cache::{route_origins, CacheState, Diff, RouteOrigin, Timing, SNAPSHOT_WINDOW};
pub use self::pdu::{DecodeError, ErrorCode, Pdu, FLAG_ANNOUNCE, MAX_PDU_LEN, VERSION};
pub use self::session::{handle_decode_error, handle_pdu, serial_notify, ClientError, Response, RtrClient};
