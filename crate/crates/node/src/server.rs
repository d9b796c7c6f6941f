//! The HTTPS endpoints a node serves to its peers.

use std::collections::BTreeSet;
use std::convert::Infallible;
use std::io::Write;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use bytes::Bytes;
use flate2::write::GzEncoder;
use flate2::Compression;
use http_body_util::Full;
use hyper::body::Incoming;
use hyper::header::{HeaderValue, ACCEPT_ENCODING, CONTENT_ENCODING, CONTENT_TYPE};
use hyper::service::service_fn;
use hyper::{Method, Request, Response, StatusCode};
use hyper_util::rt::TokioIo;
use log::{debug, warn};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::watch;
use tokio_rustls::TlsAcceptor;

use byzrp_core::model::{serialize_skiplist, Domain, PeerAddr, Peerlist, VrpSet};
use byzrp_core::peering::{AccessLogEntry, Resource};
use byzrp_core::time::Timestamp;

use crate::tls::cert_names_ip;

/// Header carrying the time a file was generated, in RFC 3339.
pub const GENERATED_AT: &str = "x-generated-at";

const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(10);

/// One file, ready to send.
#[derive(Clone, Debug)]
pub struct Rendered {
    pub body: Bytes,
    pub gzip: Bytes,
    pub generated_at: Timestamp,
    pub content_type: &'static str,
}

impl Rendered {
    fn new(body: Vec<u8>, content_type: &'static str, generated_at: Timestamp) -> Self {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&body).expect("in memory");
        Rendered {
            gzip: enc.finish().expect("in memory").into(),
            body: body.into(),
            generated_at,
            content_type,
        }
    }

    pub fn text(body: String, at: Timestamp) -> Self {
        Rendered::new(body.into_bytes(), "text/plain; charset=utf-8", at)
    }

    pub fn json(vrps: &VrpSet, at: Timestamp) -> Self {
        Rendered::new(vrps.to_json_bytes(), "application/json", at)
    }
}

/// Everything the endpoints serve. Replaced as a whole, so a response
/// never mixes two updates.
#[derive(Clone, Debug)]
pub struct Files {
    pub peerlist: Rendered,
    pub skiplist: Rendered,
    pub vrps: Rendered,
    pub master: Rendered,
}

impl Files {
    fn get(&self, r: Resource) -> &Rendered {
        match r {
            Resource::Peerlist => &self.peerlist,
            Resource::Skiplist => &self.skiplist,
            Resource::Vrps => &self.vrps,
            Resource::Master => &self.master,
        }
    }
}

/// State shared between the endpoints and the node's components.
pub struct NodeState {
    address: PeerAddr,
    files: RwLock<Arc<Files>>,
    access_log: Mutex<Vec<AccessLogEntry>>,
}

impl NodeState {
    pub fn new(address: PeerAddr, now: Timestamp) -> Self {
        let empty = VrpSet::new();
        NodeState {
            address,
            files: RwLock::new(Arc::new(Files {
                peerlist: Rendered::text(String::new(), now),
                skiplist: Rendered::text(String::new(), now),
                vrps: Rendered::json(&empty, now),
                master: Rendered::json(&empty, now),
            })),
            access_log: Mutex::new(Vec::new()),
        }
    }

    pub fn address(&self) -> &PeerAddr {
        &self.address
    }

    pub fn files(&self) -> Arc<Files> {
        self.files.read().expect("not poisoned").clone()
    }

    fn update(&self, f: impl FnOnce(&mut Files)) {
        let mut guard = self.files.write().expect("not poisoned");
        let mut next = (**guard).clone();
        f(&mut next);
        *guard = Arc::new(next);
    }

    /// Publishes the monitor's outputs.
    pub fn publish_local(&self, vrps: &VrpSet, skiplist: &BTreeSet<Domain>, at: Timestamp) {
        let vrps = Rendered::json(vrps, at);
        let skiplist = Rendered::text(serialize_skiplist(skiplist), at);
        self.update(|f| {
            f.vrps = vrps;
            f.skiplist = skiplist;
        });
    }

    /// Publishes the peering outputs.
    pub fn publish_peering(&self, peerlist: &Peerlist, master: &VrpSet, at: Timestamp) {
        let peerlist = Rendered::text(peerlist.serialize(Some(&self.address)), at);
        let master = Rendered::json(master, at);
        self.update(|f| {
            f.peerlist = peerlist;
            f.master = master;
        });
    }

    pub fn take_access_log(&self) -> Vec<AccessLogEntry> {
        std::mem::take(&mut *self.access_log.lock().expect("not poisoned"))
    }

    fn log_access(&self, entry: AccessLogEntry) {
        self.access_log.lock().expect("not poisoned").push(entry);
    }

    /// Builds the response for an authenticated request and logs it.
    pub fn respond(&self, client: &PeerAddr, method: &Method, path: &str, accept: Option<&str>) -> Response<Full<Bytes>> {
        self.log_access(AccessLogEntry { client: client.clone(), path: path.to_string(), timestamp: Timestamp::now() });
        let status = |code: StatusCode| {
            let mut r = Response::new(Full::new(Bytes::new()));
            *r.status_mut() = code;
            r
        };
        if method != Method::GET {
            return status(StatusCode::METHOD_NOT_ALLOWED);
        }
        let Some(resource) = Resource::from_path(path) else {
            return status(StatusCode::NOT_FOUND);
        };
        let files = self.files();
        let file = files.get(resource);
        let gzip = accept.is_some_and(|a| a.split(',').any(|e| e.trim().starts_with("gzip")));
        let mut r = Response::new(Full::new(if gzip { file.gzip.clone() } else { file.body.clone() }));
        let h = r.headers_mut();
        h.insert(CONTENT_TYPE, HeaderValue::from_static(file.content_type));
        if gzip {
            h.insert(CONTENT_ENCODING, HeaderValue::from_static("gzip"));
        }
        h.insert(GENERATED_AT, HeaderValue::from_str(&file.generated_at.to_rfc3339()).expect("ascii"));
        r
    }
}

/// Accepts mutually authenticated connections until `shutdown` flips.
pub async fn serve_https(
    listener: TcpListener,
    acceptor: TlsAcceptor,
    state: Arc<NodeState>,
    mut shutdown: watch::Receiver<bool>,
) {
    loop {
        tokio::select! {
            res = listener.accept() => match res {
                Ok((stream, remote)) => {
                    tokio::spawn(serve_connection(stream, remote, acceptor.clone(), state.clone()));
                }
                Err(err) => warn!("accept failed: {err}"),
            },
            _ = shutdown.changed() => break,
        }
    }
}

async fn serve_connection(stream: TcpStream, remote: SocketAddr, acceptor: TlsAcceptor, state: Arc<NodeState>) {
    let tls = match tokio::time::timeout(HANDSHAKE_TIMEOUT, acceptor.accept(stream)).await {
        Ok(Ok(tls)) => tls,
        Ok(Err(err)) => {
            debug!("handshake with {remote} failed: {err}");
            return;
        }
        Err(_) => {
            debug!("handshake with {remote} timed out");
            return;
        }
    };
    let ip = remote.ip().to_canonical();
    let bound = tls
        .get_ref()
        .1
        .peer_certificates()
        .and_then(|c| c.first())
        .is_some_and(|c| cert_names_ip(c, ip));
    if !bound {
        debug!("client certificate of {remote} does not name its address");
        return;
    }
    let client = PeerAddr::from_ip(ip);
    let service = service_fn(move |req: Request<Incoming>| {
        let accept = req.headers().get(ACCEPT_ENCODING).and_then(|v| v.to_str().ok()).map(str::to_string);
        let resp = state.respond(&client, req.method(), req.uri().path(), accept.as_deref());
        async move { Ok::<_, Infallible>(resp) }
    });
    if let Err(err) = hyper::server::conn::http1::Builder::new()
        .serve_connection(TokioIo::new(tls), service)
        .await
    {
        debug!("connection from {remote}: {err}");
    }
}
