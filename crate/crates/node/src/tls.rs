//! Node identities: certificate generation and mutual-TLS configuration.
//!
//! Every node holds a leaf certificate for its IP address, issued by a
//! trust root shared by the whole network. Servers require a client
//! certificate that chains to the root and names the connecting address.

use std::fs;
use std::net::IpAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rcgen::{
    BasicConstraints, CertificateParams, DnType, ExtendedKeyUsagePurpose, IsCa, KeyPair, KeyUsagePurpose,
    SanType,
};
use rustls::crypto::CryptoProvider;
use rustls::pki_types::pem::PemObject;
use rustls::pki_types::{CertificateDer, PrivateKeyDer, ServerName};
use rustls::server::WebPkiClientVerifier;
use rustls::{ClientConfig, RootCertStore, ServerConfig};

use byzrp_core::config::TlsConfig;

#[derive(Debug, thiserror::Error)]
pub enum IdentityError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{0}: no usable PEM content")]
    Pem(String),
    #[error("TLS setup: {0}")]
    Tls(#[from] rustls::Error),
    #[error("client verifier: {0}")]
    Verifier(#[from] rustls::server::VerifierBuilderError),
    #[error("certificate generation: {0}")]
    Generate(#[from] rcgen::Error),
}

fn provider() -> Arc<CryptoProvider> {
    Arc::new(rustls::crypto::ring::default_provider())
}

//------------ Generation ----------------------------------------------------

/// A freshly generated trust root.
pub struct Root {
    cert: rcgen::Certificate,
    key: KeyPair,
}

/// PEM-encoded certificate and private key.
pub struct Pem {
    pub cert: String,
    pub key: String,
}

impl Root {
    pub fn generate(name: &str) -> Result<Self, IdentityError> {
        let mut params = CertificateParams::new(Vec::<String>::new())?;
        params.is_ca = IsCa::Ca(BasicConstraints::Unconstrained);
        params.distinguished_name.push(DnType::CommonName, name);
        params.key_usages = vec![KeyUsagePurpose::KeyCertSign, KeyUsagePurpose::CrlSign];
        let key = KeyPair::generate()?;
        let cert = params.self_signed(&key)?;
        Ok(Root { cert, key })
    }

    pub fn pem(&self) -> Pem {
        Pem { cert: self.cert.pem(), key: self.key.serialize_pem() }
    }

    /// Issues a client-and-server certificate for `ip`.
    pub fn issue(&self, ip: IpAddr) -> Result<Pem, IdentityError> {
        let mut params = CertificateParams::new(Vec::<String>::new())?;
        params.subject_alt_names = vec![SanType::IpAddress(ip)];
        params.distinguished_name.push(DnType::CommonName, ip.to_string());
        params.is_ca = IsCa::ExplicitNoCa;
        params.key_usages = vec![KeyUsagePurpose::DigitalSignature];
        params.extended_key_usages = vec![ExtendedKeyUsagePurpose::ServerAuth, ExtendedKeyUsagePurpose::ClientAuth];
        params.use_authority_key_identifier_extension = true;
        let key = KeyPair::generate()?;
        let cert = params.signed_by(&key, &self.cert, &self.key)?;
        Ok(Pem { cert: cert.pem(), key: key.serialize_pem() })
    }
}

fn write(path: &Path, contents: &str) -> Result<(), IdentityError> {
    fs::write(path, contents).map_err(|source| IdentityError::Read { path: path.into(), source })
}

/// Writes `root.pem`, `root.key` and `<ip>.pem`/`<ip>.key` for each
/// address into `dir`. Returns the written paths.
pub fn certgen(dir: &Path, ips: &[IpAddr]) -> Result<Vec<PathBuf>, IdentityError> {
    fs::create_dir_all(dir).map_err(|source| IdentityError::Read { path: dir.into(), source })?;
    let root = Root::generate("byzrp trust root")?;
    let mut written = Vec::new();
    let mut emit = |name: String, pem: Pem| -> Result<(), IdentityError> {
        for (ext, body) in [("pem", pem.cert), ("key", pem.key)] {
            let path = dir.join(format!("{name}.{ext}"));
            write(&path, &body)?;
            written.push(path);
        }
        Ok(())
    };
    emit("root".into(), root.pem())?;
    for ip in ips {
        emit(ip.to_string(), root.issue(*ip)?)?;
    }
    Ok(written)
}

//------------ Identity ------------------------------------------------------

/// A loaded leaf certificate, its key and the trust root.
#[derive(Debug)]
pub struct Identity {
    chain: Vec<CertificateDer<'static>>,
    key: PrivateKeyDer<'static>,
    roots: Arc<RootCertStore>,
}

impl Clone for Identity {
    fn clone(&self) -> Self {
        Identity { chain: self.chain.clone(), key: self.key.clone_key(), roots: self.roots.clone() }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, IdentityError> {
    fs::read(path).map_err(|source| IdentityError::Read { path: path.into(), source })
}

impl Identity {
    pub fn load(paths: &TlsConfig) -> Result<Self, IdentityError> {
        Identity::from_pem(&read(&paths.cert)?, &read(&paths.key)?, &read(&paths.root)?)
    }

    pub fn from_pem(cert: &[u8], key: &[u8], root: &[u8]) -> Result<Self, IdentityError> {
        let chain = CertificateDer::pem_slice_iter(cert)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| IdentityError::Pem(format!("certificate: {e}")))?;
        if chain.is_empty() {
            return Err(IdentityError::Pem("certificate".into()));
        }
        let key = PrivateKeyDer::from_pem_slice(key).map_err(|e| IdentityError::Pem(format!("key: {e}")))?;
        let mut roots = RootCertStore::empty();
        for c in CertificateDer::pem_slice_iter(root) {
            let c = c.map_err(|e| IdentityError::Pem(format!("trust root: {e}")))?;
            roots.add(c)?;
        }
        if roots.is_empty() {
            return Err(IdentityError::Pem("trust root".into()));
        }
        Ok(Identity { chain, key, roots: Arc::new(roots) })
    }

    /// Server side: client certificates are mandatory.
    pub fn server_config(&self) -> Result<Arc<ServerConfig>, IdentityError> {
        let verifier = WebPkiClientVerifier::builder_with_provider(self.roots.clone(), provider()).build()?;
        let config = ServerConfig::builder_with_provider(provider())
            .with_safe_default_protocol_versions()?
            .with_client_cert_verifier(verifier)
            .with_single_cert(self.chain.clone(), self.key.clone_key())?;
        Ok(Arc::new(config))
    }

    pub fn client_config(&self) -> Result<Arc<ClientConfig>, IdentityError> {
        let config = ClientConfig::builder_with_provider(provider())
            .with_safe_default_protocol_versions()?
            .with_root_certificates(self.roots.clone())
            .with_client_auth_cert(self.chain.clone(), self.key.clone_key())?;
        Ok(Arc::new(config))
    }
}

/// Whether a verified end-entity certificate names `ip`.
pub fn cert_names_ip(cert: &CertificateDer<'_>, ip: IpAddr) -> bool {
    match webpki::EndEntityCert::try_from(cert) {
        Ok(ee) => ee.verify_is_valid_for_subject_name(&ServerName::IpAddress(ip.into())).is_ok(),
        Err(_) => false,
    }
}
