use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use modpipe_core::crypto::KeyPair;
use modpipe_core::trust::{CertChain, IssuerPki};
use serde::{Deserialize, Serialize};

use crate::{read_json, CliError};

/// An issuing key with its certificate chain, as stored on disk for
/// `mark embed` with a signed scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssuerBundle {
    pub issuer_id: String,
    /// Ed25519 seed, hex.
    pub secret_key: String,
    /// Leaf-first chain in wire format, base64.
    pub chain: String,
}

impl IssuerBundle {
    pub fn from_pki(pki: &IssuerPki) -> Self {
        Self {
            issuer_id: pki.issuer_id.clone(),
            secret_key: pki.issuer_key.secret_hex(),
            chain: STANDARD.encode(pki.chain.to_bytes()),
        }
    }

    pub fn load(path: &Path) -> Result<(KeyPair, CertChain), CliError> {
        let b: Self = read_json(path)?;
        let bad = |what: &str| CliError::Usage(format!("{}: bad {what}", path.display()));
        let key = KeyPair::from_hex(&b.secret_key).ok_or_else(|| bad("secret_key"))?;
        let bytes = STANDARD.decode(&b.chain).map_err(|_| bad("chain"))?;
        let chain = CertChain::from_bytes(&bytes).map_err(|_| bad("chain"))?;
        Ok((key, chain))
    }
}
