//! Node service for the byzrp relying-party network: mutual-TLS endpoints,
//! the HTTPS peer client, the RTR server and node lifecycle.

pub mod client;
pub mod node;
pub mod rtr;
pub mod server;
pub mod tls;

pub use self::node::{node_main, NodeError, NodeHandle};
