//! Certification chains for provenance markers.
//!
//! A chain runs leaf to root. Every certificate is signed by its parent over
//! the full to-be-signed body (ids, key and validity window); the root signs
//! itself and must be bytewise present in the trust store.

use std::fmt;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{self, KeyPair, PUBLIC_KEY_LEN, SIGNATURE_LEN};
use crate::marker::{Marker, Polarity};
use crate::model::{content_hash, ContentItem, Digest};
use crate::wire::{Reader, WireError, Writer};

const CERT_VERSION: u8 = 0x01;
const TBS_DOMAIN: &[u8] = b"DFCT-TBS";

/// Seconds since the Unix epoch.
pub type Timestamp = i64;

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Certificate {
    pub subject_id: String,
    pub public_key: Vec<u8>,
    pub issuer_id: String,
    pub signature: Vec<u8>,
    pub not_before: Timestamp,
    pub not_after: Timestamp,
}

impl fmt::Debug for Certificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Certificate")
            .field("subject_id", &self.subject_id)
            .field("issuer_id", &self.issuer_id)
            .field("public_key", &hex::encode(&self.public_key))
            .field("validity", &(self.not_before, self.not_after))
            .finish()
    }
}

impl Certificate {
    /// Issues a certificate for `subject_key` signed by `issuer_key`.
    pub fn issue(
        subject_id: &str,
        subject_key: &[u8],
        issuer_id: &str,
        issuer_key: &KeyPair,
        not_before: Timestamp,
        not_after: Timestamp,
    ) -> Self {
        let mut cert = Self {
            subject_id: subject_id.to_owned(),
            public_key: subject_key.to_vec(),
            issuer_id: issuer_id.to_owned(),
            signature: Vec::new(),
            not_before,
            not_after,
        };
        cert.signature = issuer_key.sign(&cert.tbs_bytes());
        cert
    }

    pub fn self_signed(
        subject_id: &str,
        key: &KeyPair,
        not_before: Timestamp,
        not_after: Timestamp,
    ) -> Self {
        Self::issue(
            subject_id,
            &key.public_key(),
            subject_id,
            key,
            not_before,
            not_after,
        )
    }

    pub fn is_self_issued(&self) -> bool {
        self.subject_id == self.issuer_id
    }

    pub fn tbs_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(TBS_DOMAIN)
            .u8(CERT_VERSION)
            .str(&self.subject_id)
            .bytes(&self.public_key)
            .str(&self.issuer_id)
            .i64(self.not_before)
            .i64(self.not_after);
        w.finish()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.write(&mut w);
        w.finish()
    }

    fn write(&self, w: &mut Writer) {
        w.u8(CERT_VERSION)
            .str(&self.subject_id)
            .bytes(&self.public_key)
            .str(&self.issuer_id)
            .bytes(&self.signature)
            .i64(self.not_before)
            .i64(self.not_after);
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let version = r.u8()?;
        if version != CERT_VERSION {
            return Err(WireError::Version(version));
        }
        Ok(Self {
            subject_id: r.string()?,
            public_key: r.bytes()?.to_vec(),
            issuer_id: r.string()?,
            signature: r.bytes()?.to_vec(),
            not_before: r.i64()?,
            not_after: r.i64()?,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let cert = Self::read(&mut r)?;
        r.finish()?;
        Ok(cert)
    }

    fn structurally_sound(&self) -> bool {
        !self.subject_id.is_empty()
            && !self.issuer_id.is_empty()
            && self.public_key.len() == PUBLIC_KEY_LEN
            && self.signature.len() == SIGNATURE_LEN
    }

    fn valid_at(&self, now: Timestamp) -> bool {
        self.not_before <= now && now <= self.not_after
    }
}

/// Leaf-to-root ordered certificates.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CertChain(pub Vec<Certificate>);

impl CertChain {
    pub fn leaf(&self) -> Option<&Certificate> {
        self.0.first()
    }

    pub fn root(&self) -> Option<&Certificate> {
        self.0.last()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub(crate) fn write(&self, w: &mut Writer) {
        w.u32(self.0.len() as u32);
        for cert in &self.0 {
            w.bytes(&cert.to_bytes());
        }
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let n = r.u32()? as usize;
        // Each entry needs at least its length prefix.
        let mut certs = Vec::with_capacity(n.min(64));
        for _ in 0..n {
            certs.push(Certificate::from_bytes(r.bytes()?)?);
        }
        Ok(Self(certs))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.write(&mut w);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let chain = Self::read(&mut r)?;
        r.finish()?;
        Ok(chain)
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Error,
)]
#[serde(rename_all = "snake_case")]
pub enum ChainFailure {
    #[error("certificate link does not verify")]
    BrokenLink,
    #[error("certificate outside its validity window")]
    Expired,
    #[error("root is not in the trust store")]
    UntrustedRoot,
    #[error("malformed certificate")]
    MalformedCert,
}

#[derive(Debug, Error)]
pub enum TrustStoreError {
    #[error("trust store is not a JSON array of strings: {0}")]
    Json(#[from] serde_json::Error),
    #[error("entry {index}: invalid base64")]
    Base64 { index: usize },
    #[error("entry {index}: {source}")]
    Cert {
        index: usize,
        #[source]
        source: WireError,
    },
    #[error("entry {index}: `{subject}` is not a self-issued root")]
    NotRoot { index: usize, subject: String },
}

/// Root certificates, compared bytewise.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrustStore {
    roots: Vec<Certificate>,
}

impl TrustStore {
    pub fn new(roots: impl IntoIterator<Item = Certificate>) -> Self {
        let mut store = Self::default();
        for r in roots {
            store.add(r);
        }
        store
    }

    pub fn add(&mut self, root: Certificate) {
        if !self.contains(&root) {
            self.roots.push(root);
        }
    }

    pub fn remove(&mut self, root: &Certificate) {
        let bytes = root.to_bytes();
        self.roots.retain(|r| r.to_bytes() != bytes);
    }

    pub fn contains(&self, cert: &Certificate) -> bool {
        let bytes = cert.to_bytes();
        self.roots.iter().any(|r| r.to_bytes() == bytes)
    }

    pub fn roots(&self) -> &[Certificate] {
        &self.roots
    }

    /// JSON array of base64-encoded certificates.
    pub fn from_json(text: &str) -> Result<Self, TrustStoreError> {
        let entries: Vec<String> = serde_json::from_str(text)?;
        let mut roots = Vec::with_capacity(entries.len());
        for (index, e) in entries.iter().enumerate() {
            let bytes = STANDARD
                .decode(e.trim())
                .map_err(|_| TrustStoreError::Base64 { index })?;
            let cert = Certificate::from_bytes(&bytes)
                .map_err(|source| TrustStoreError::Cert { index, source })?;
            if !cert.is_self_issued() {
                return Err(TrustStoreError::NotRoot {
                    index,
                    subject: cert.subject_id,
                });
            }
            roots.push(cert);
        }
        Ok(Self::new(roots))
    }

    pub fn to_json(&self) -> String {
        let entries: Vec<String> = self
            .roots
            .iter()
            .map(|c| STANDARD.encode(c.to_bytes()))
            .collect();
        serde_json::to_string_pretty(&entries).expect("strings serialize")
    }
}

/// Checks linkage and signatures first, then trust, then validity, so a
/// tampered certificate reports `BrokenLink` rather than a window failure.
pub fn verify_chain(
    chain: &CertChain,
    store: &TrustStore,
    now: Timestamp,
) -> Result<(), ChainFailure> {
    let certs = &chain.0;
    if certs.is_empty() || !certs.iter().all(Certificate::structurally_sound) {
        return Err(ChainFailure::MalformedCert);
    }
    let last = certs.len() - 1;
    for (i, cert) in certs.iter().enumerate() {
        let parent = if i == last {
            if !cert.is_self_issued() {
                return Err(ChainFailure::BrokenLink);
            }
            cert
        } else {
            let parent = &certs[i + 1];
            if cert.is_self_issued() || cert.issuer_id != parent.subject_id {
                return Err(ChainFailure::BrokenLink);
            }
            parent
        };
        if !crypto::verify(&parent.public_key, &cert.tbs_bytes(), &cert.signature) {
            return Err(ChainFailure::BrokenLink);
        }
    }
    if !store.contains(&certs[last]) {
        return Err(ChainFailure::UntrustedRoot);
    }
    if !certs.iter().all(|c| c.valid_at(now)) {
        return Err(ChainFailure::Expired);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureCode {
    BrokenLink,
    Expired,
    UntrustedRoot,
    MalformedCert,
    DigestMismatch,
    BadSignature,
    IssuerMismatch,
    MalformedPayload,
    MalformedMarkerBlock,
    ConflictingMarkers,
}

impl From<ChainFailure> for FailureCode {
    fn from(f: ChainFailure) -> Self {
        match f {
            ChainFailure::BrokenLink => FailureCode::BrokenLink,
            ChainFailure::Expired => FailureCode::Expired,
            ChainFailure::UntrustedRoot => FailureCode::UntrustedRoot,
            ChainFailure::MalformedCert => FailureCode::MalformedCert,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerificationStatus {
    ValidPositive,
    ValidNegative,
    Invalid,
    Absent,
}

impl VerificationStatus {
    pub fn is_valid(self) -> bool {
        matches!(self, Self::ValidPositive | Self::ValidNegative)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerVerification {
    pub status: VerificationStatus,
    pub reasons: Vec<FailureCode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marker: Option<Marker>,
}

impl MarkerVerification {
    pub fn absent() -> Self {
        Self {
            status: VerificationStatus::Absent,
            reasons: Vec::new(),
            marker: None,
        }
    }

    pub fn invalid(reasons: Vec<FailureCode>, marker: Option<Marker>) -> Self {
        debug_assert!(!reasons.is_empty());
        Self {
            status: VerificationStatus::Invalid,
            reasons,
            marker,
        }
    }
}

/// Total: never fails, never returns `Absent`.
pub fn verify_marker(
    marker: &Marker,
    item: &ContentItem,
    store: &TrustStore,
    now: Timestamp,
) -> MarkerVerification {
    let digest = content_hash(item).ok();
    verify_marker_digest(marker, digest.as_ref(), store, now)
}

/// As [`verify_marker`], against a previously computed content digest
/// (`None` when the payload did not decode).
pub fn verify_marker_digest(
    marker: &Marker,
    content_digest: Option<&Digest>,
    store: &TrustStore,
    now: Timestamp,
) -> MarkerVerification {
    let mut reasons = Vec::new();
    if let Err(f) = verify_chain(&marker.chain, store, now) {
        reasons.push(f.into());
    }
    match marker.chain.leaf() {
        Some(leaf) if leaf.subject_id == marker.issuer_id => {
            if !crypto::verify(
                &leaf.public_key,
                &marker.signing_message(),
                &marker.signature,
            ) {
                reasons.push(FailureCode::BadSignature);
            }
        }
        _ => reasons.push(FailureCode::IssuerMismatch),
    }
    match content_digest {
        None => reasons.push(FailureCode::MalformedPayload),
        Some(d) if *d != marker.payload_digest => reasons.push(FailureCode::DigestMismatch),
        Some(_) => {}
    }
    if reasons.is_empty() {
        let status = match marker.polarity {
            Polarity::Positive => VerificationStatus::ValidPositive,
            Polarity::Negative => VerificationStatus::ValidNegative,
        };
        MarkerVerification {
            status,
            reasons,
            marker: Some(marker.clone()),
        }
    } else {
        MarkerVerification::invalid(reasons, Some(marker.clone()))
    }
}

/// A root, an intermediate and an issuing leaf with its key; the shape used
/// by generated corpora, the CLI and the tests.
#[derive(Debug, Clone)]
pub struct IssuerPki {
    pub root: Certificate,
    pub chain: CertChain,
    pub issuer_id: String,
    pub issuer_key: KeyPair,
}

impl IssuerPki {
    pub fn generate(
        seed: u64,
        issuer_id: &str,
        not_before: Timestamp,
        not_after: Timestamp,
    ) -> Self {
        let root_key = KeyPair::derive(seed, &format!("{issuer_id}/root"));
        let mid_key = KeyPair::derive(seed, &format!("{issuer_id}/intermediate"));
        let leaf_key = KeyPair::derive(seed, &format!("{issuer_id}/leaf"));
        let root_id = format!("{issuer_id}-root");
        let mid_id = format!("{issuer_id}-ca");
        let root = Certificate::self_signed(&root_id, &root_key, not_before, not_after);
        let mid = Certificate::issue(
            &mid_id,
            &mid_key.public_key(),
            &root_id,
            &root_key,
            not_before,
            not_after,
        );
        let leaf = Certificate::issue(
            issuer_id,
            &leaf_key.public_key(),
            &mid_id,
            &mid_key,
            not_before,
            not_after,
        );
        Self {
            chain: CertChain(vec![leaf, mid, root.clone()]),
            root,
            issuer_id: issuer_id.to_owned(),
            issuer_key: leaf_key,
        }
    }

    pub fn trust_store(&self) -> TrustStore {
        TrustStore::new([self.root.clone()])
    }
}
