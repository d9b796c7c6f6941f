//! RTR over TCP: one session per connection, Serial Notify on updates.

use std::net::SocketAddr;
use std::sync::Arc;

use log::{debug, info, warn};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::watch;

use byzrp_core::model::VrpSet;
use byzrp_core::rtr::{handle_decode_error, handle_pdu, serial_notify, CacheState, DecodeError, Pdu, Timing};

/// Owner of the cache; sessions observe it through a watch channel, so
/// each response is built from one complete cache state.
pub struct RtrPublisher {
    tx: watch::Sender<Arc<CacheState>>,
}

impl RtrPublisher {
    pub fn new(session_id: u16, timing: Timing) -> Self {
        let (tx, _) = watch::channel(Arc::new(CacheState::new(session_id, timing)));
        RtrPublisher { tx }
    }

    pub fn subscribe(&self) -> watch::Receiver<Arc<CacheState>> {
        self.tx.subscribe()
    }

    pub fn current(&self) -> Arc<CacheState> {
        self.tx.borrow().clone()
    }

    /// Installs new master VRPs. Returns whether the served set changed;
    /// connected sessions are notified if so.
    pub fn publish(&self, master: &VrpSet) -> bool {
        let (next, changed) = self.tx.borrow().publish_update(master);
        if changed {
            self.tx.send_replace(Arc::new(next));
        }
        changed
    }
}

pub async fn serve_rtr(
    listener: TcpListener,
    cache: watch::Receiver<Arc<CacheState>>,
    mut shutdown: watch::Receiver<bool>,
) {
    loop {
        tokio::select! {
            res = listener.accept() => match res {
                Ok((stream, remote)) => {
                    tokio::spawn(session(stream, remote, cache.clone()));
                }
                Err(err) => warn!("rtr accept failed: {err}"),
            },
            _ = shutdown.changed() => break,
        }
    }
}

async fn write_pdus(stream: &mut TcpStream, pdus: &[Pdu]) -> std::io::Result<()> {
    let mut out = Vec::new();
    for p in pdus {
        p.encode_into(&mut out);
    }
    stream.write_all(&out).await
}

async fn session(mut stream: TcpStream, remote: SocketAddr, mut cache: watch::Receiver<Arc<CacheState>>) {
    info!("rtr client {remote} connected");
    cache.mark_unchanged();
    let mut buf = Vec::new();
    let mut chunk = [0u8; 4096];
    loop {
        tokio::select! {
            n = stream.read(&mut chunk) => {
                let n = match n {
                    Ok(0) | Err(_) => break,
                    Ok(n) => n,
                };
                buf.extend_from_slice(&chunk[..n]);
                loop {
                    match Pdu::decode(&buf) {
                        Ok((pdu, used)) => {
                            let raw: Vec<u8> = buf.drain(..used).collect();
                            let state = cache.borrow_and_update().clone();
                            let resp = handle_pdu(&state, &pdu, &raw);
                            if write_pdus(&mut stream, &resp.pdus).await.is_err() || resp.close {
                                return;
                            }
                        }
                        Err(DecodeError::Incomplete(_)) => break,
                        Err(err) => {
                            debug!("rtr client {remote}: {err}");
                            if let Some(resp) = handle_decode_error(&err, &buf) {
                                let _ = write_pdus(&mut stream, &resp.pdus).await;
                            }
                            return;
                        }
                    }
                }
            }
            changed = cache.changed() => {
                if changed.is_err() {
                    break;
                }
                let notify = serial_notify(&cache.borrow_and_update());
                if let Some(pdu) = notify {
                    if write_pdus(&mut stream, &[pdu]).await.is_err() {
                        break;
                    }
                }
            }
        }
    }
    info!("rtr client {remote} disconnected");
}

/// A minimal router-side client for tests and diagnostics.
pub mod client {
    use super::*;
    use byzrp_core::rtr::{ClientError, RtrClient};

    #[derive(Debug, thiserror::Error)]
    pub enum SyncError {
        #[error(transparent)]
        Io(#[from] std::io::Error),
        #[error("decode: {0}")]
        Decode(#[from] DecodeError),
        #[error(transparent)]
        Protocol(#[from] ClientError),
    }

    /// Reads one PDU, buffering partial input in `buf`.
    pub async fn read_pdu(stream: &mut TcpStream, buf: &mut Vec<u8>) -> Result<Pdu, SyncError> {
        loop {
            match Pdu::decode(buf) {
                Ok((pdu, used)) => {
                    buf.drain(..used);
                    return Ok(pdu);
                }
                Err(DecodeError::Incomplete(_)) => {
                    let mut chunk = [0u8; 4096];
                    let n = stream.read(&mut chunk).await?;
                    if n == 0 {
                        return Err(std::io::Error::from(std::io::ErrorKind::UnexpectedEof).into());
                    }
                    buf.extend_from_slice(&chunk[..n]);
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    /// Sends the client's next query and applies PDUs until End of Data.
    /// A Cache Reset is answered with a Reset Query.
    pub async fn sync(client: &mut RtrClient, stream: &mut TcpStream, buf: &mut Vec<u8>) -> Result<(), SyncError> {
        stream.write_all(&client.query().encode()).await?;
        loop {
            let pdu = read_pdu(stream, buf).await?;
            if matches!(pdu, Pdu::SerialNotify { .. }) {
                continue;
            }
            match client.apply(&pdu) {
                Ok(true) => return Ok(()),
                Ok(false) => {}
                Err(ClientError::Reset) => {
                    stream.write_all(&Pdu::ResetQuery.encode()).await?;
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
}
