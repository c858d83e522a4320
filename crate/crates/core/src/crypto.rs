//! Ed25519 signing (RFC 8032, deterministic) used for certificates, markers,
//! verifier verdicts and co-signatures.

use std::fmt;

use ed25519_dalek::{Signature, Signer, SigningKey, VerifyingKey};

pub const PUBLIC_KEY_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;
pub const SIGNATURE_ALGORITHM: &str = "ed25519";

#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
}

impl KeyPair {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        Self {
            signing: SigningKey::from_bytes(&seed),
        }
    }

    /// Deterministic key from a 64-bit seed and a label; used for fixtures
    /// and generated corpora.
    pub fn derive(seed: u64, label: &str) -> Self {
        let mut bytes = [0u8; 32];
        let mut g = crate::prng::SplitMix64::new(crate::prng::derive_seed(seed, label.as_bytes()));
        for chunk in bytes.chunks_mut(8) {
            chunk.copy_from_slice(&g.next_u64().to_le_bytes());
        }
        Self::from_seed(bytes)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes: [u8; 32] = hex::decode(s.trim()).ok()?.try_into().ok()?;
        Some(Self::from_seed(bytes))
    }

    pub fn secret_hex(&self) -> String {
        hex::encode(self.signing.to_bytes())
    }

    pub fn public_key(&self) -> Vec<u8> {
        self.signing.verifying_key().to_bytes().to_vec()
    }

    pub fn sign(&self, msg: &[u8]) -> Vec<u8> {
        self.signing.sign(msg).to_bytes().to_vec()
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyPair({})", hex::encode(self.public_key()))
    }
}

/// Strict verification: rejects malformed keys, non-canonical signatures and
/// small-order points.
pub fn verify(public_key: &[u8], msg: &[u8], signature: &[u8]) -> bool {
    let Ok(pk) = <[u8; PUBLIC_KEY_LEN]>::try_from(public_key) else {
        return false;
    };
    let Ok(sig) = <[u8; SIGNATURE_LEN]>::try_from(signature) else {
        return false;
    };
    let Ok(vk) = VerifyingKey::from_bytes(&pk) else {
        return false;
    };
    vk.verify_strict(msg, &Signature::from_bytes(&sig)).is_ok()
}
