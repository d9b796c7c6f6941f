//! Fetching peer files over mutually authenticated HTTPS.

use std::collections::BTreeSet;
use std::error::Error as _;
use std::io::Read;
use std::net::{IpAddr, SocketAddr};
use std::sync::Arc;
use std::time::Duration;

use bytes::Bytes;
use http_body_util::{BodyExt, Empty};
use hyper::header::{ACCEPT_ENCODING, CONTENT_ENCODING, HOST};
use hyper::{Request, StatusCode};
use hyper_util::rt::TokioIo;
use log::debug;
use rustls::pki_types::ServerName;
use rustls::ClientConfig;
use tokio::net::TcpSocket;
use tokio_rustls::TlsConnector;

use byzrp_core::model::{parse_skiplist, Domain, PeerAddr, Peerlist, VrpSet};
use byzrp_core::peering::{FetchError, PeerClient, Resource};
use byzrp_core::time::Timestamp;

use crate::server::GENERATED_AT;

/// Per-request limit covering connect, handshake and body.
pub const FETCH_TIMEOUT: Duration = Duration::from_secs(5);

/// A fetched file body after content decoding.
#[derive(Clone, Debug)]
pub struct Fetched {
    pub body: Bytes,
    pub generated_at: Option<Timestamp>,
}

#[derive(Clone)]
pub struct HttpsClient {
    connector: TlsConnector,
    /// Source address; peers identify this node by it.
    local_ip: Option<IpAddr>,
    default_port: u16,
    timeout: Duration,
}

/// Whether a TLS failure is somewhere in the error chain.
fn is_tls_error(err: &(dyn std::error::Error + 'static)) -> bool {
    let mut cur = Some(err);
    while let Some(e) = cur {
        if e.is::<rustls::Error>() {
            return true;
        }
        if let Some(io) = e.downcast_ref::<std::io::Error>() {
            if io.get_ref().is_some_and(|inner| inner.is::<rustls::Error>()) {
                return true;
            }
        }
        cur = e.source();
    }
    false
}

impl HttpsClient {
    pub fn new(config: Arc<ClientConfig>, local_ip: Option<IpAddr>, default_port: u16) -> Self {
        HttpsClient { connector: TlsConnector::from(config), local_ip, default_port, timeout: FETCH_TIMEOUT }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub async fn fetch(&self, peer: &PeerAddr, resource: Resource) -> Result<Fetched, FetchError> {
        match tokio::time::timeout(self.timeout, self.fetch_inner(peer, resource)).await {
            Ok(res) => res,
            Err(_) => Err(FetchError::Timeout),
        }
    }

    async fn resolve(&self, peer: &PeerAddr) -> Result<SocketAddr, FetchError> {
        let port = peer.port().unwrap_or(self.default_port);
        if let Some(ip) = peer.ip() {
            return Ok(SocketAddr::new(ip, port));
        }
        tokio::net::lookup_host((peer.host(), port))
            .await
            .ok()
            .and_then(|mut a| a.next())
            .ok_or_else(|| FetchError::Unreachable(format!("cannot resolve {}", peer.host())))
    }

    async fn fetch_inner(&self, peer: &PeerAddr, resource: Resource) -> Result<Fetched, FetchError> {
        let remote = self.resolve(peer).await?;
        let unreachable = |e: std::io::Error| FetchError::Unreachable(format!("{peer}: {e}"));
        let socket = if remote.is_ipv4() { TcpSocket::new_v4() } else { TcpSocket::new_v6() }.map_err(unreachable)?;
        if let Some(ip) = self.local_ip {
            socket.bind(SocketAddr::new(ip, 0)).map_err(unreachable)?;
        }
        let stream = socket.connect(remote).await.map_err(unreachable)?;
        let name = match peer.ip() {
            Some(ip) => ServerName::IpAddress(ip.into()),
            None => ServerName::try_from(peer.host().to_string())
                .map_err(|e| FetchError::Unreachable(format!("{peer}: {e}")))?,
        };
        let tls = self
            .connector
            .connect(name, stream)
            .await
            .map_err(|e| FetchError::Auth(format!("{peer}: {e}")))?;
        let (mut sender, conn) = hyper::client::conn::http1::handshake(TokioIo::new(tls))
            .await
            .map_err(|e| classify(peer, e))?;
        tokio::spawn(async move {
            if let Err(err) = conn.await {
                debug!("connection closed: {err}");
            }
        });
        let req = Request::get(resource.path())
            .header(HOST, peer.as_str())
            .header(ACCEPT_ENCODING, "gzip")
            .body(Empty::<Bytes>::new())
            .expect("valid request");
        let resp = sender.send_request(req).await.map_err(|e| classify(peer, e))?;
        if resp.status() != StatusCode::OK {
            return Err(FetchError::Malformed(format!("{peer}{}: status {}", resource.path(), resp.status())));
        }
        let gzip = resp.headers().get(CONTENT_ENCODING).is_some_and(|v| v == "gzip");
        let generated_at = resp
            .headers()
            .get(GENERATED_AT)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| Timestamp::parse_rfc3339(v).ok());
        let raw = resp.into_body().collect().await.map_err(|e| classify(peer, e))?.to_bytes();
        let body = if gzip {
            let mut out = Vec::new();
            flate2::read::GzDecoder::new(&raw[..])
                .read_to_end(&mut out)
                .map_err(|e| FetchError::Malformed(format!("{peer}: gzip: {e}")))?;
            out.into()
        } else {
            raw
        };
        Ok(Fetched { body, generated_at })
    }

    async fn fetch_text(&self, peer: &PeerAddr, resource: Resource) -> Result<String, FetchError> {
        let f = self.fetch(peer, resource).await?;
        String::from_utf8(f.body.to_vec()).map_err(|e| FetchError::Malformed(format!("{peer}: {e}")))
    }

    async fn fetch_json(&self, peer: &PeerAddr, resource: Resource) -> Result<Arc<VrpSet>, FetchError> {
        let f = self.fetch(peer, resource).await?;
        VrpSet::from_json_slice(&f.body)
            .map(Arc::new)
            .map_err(|e| FetchError::Malformed(format!("{peer}: {e}")))
    }
}

fn classify(peer: &PeerAddr, err: hyper::Error) -> FetchError {
    // A server that rejects our certificate does so after the client side
    // of a TLS 1.3 handshake has already finished.
    if is_tls_error(&err) {
        FetchError::Auth(format!("{peer}: {err}"))
    } else {
        let detail = err.source().map(|s| format!(": {s}")).unwrap_or_default();
        FetchError::Unreachable(format!("{peer}: {err}{detail}"))
    }
}

impl PeerClient for HttpsClient {
    async fn fetch_peerlist(&self, peer: &PeerAddr) -> Result<Arc<Peerlist>, FetchError> {
        let text = self.fetch_text(peer, Resource::Peerlist).await?;
        Peerlist::parse(&text).map(Arc::new).map_err(|e| FetchError::Malformed(format!("{peer}: {e}")))
    }

    async fn fetch_skiplist(&self, peer: &PeerAddr) -> Result<Arc<BTreeSet<Domain>>, FetchError> {
        let text = self.fetch_text(peer, Resource::Skiplist).await?;
        parse_skiplist(&text).map(Arc::new).map_err(|e| FetchError::Malformed(format!("{peer}: {e}")))
    }

    async fn fetch_vrps(&self, peer: &PeerAddr) -> Result<Arc<VrpSet>, FetchError> {
        self.fetch_json(peer, Resource::Vrps).await
    }

    async fn fetch_master(&self, peer: &PeerAddr) -> Result<Arc<VrpSet>, FetchError> {
        self.fetch_json(peer, Resource::Master).await
    }
}
