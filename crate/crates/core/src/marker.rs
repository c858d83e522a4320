//! Provenance markers carried in the metadata block.
//!
//! Block layout (one or more blocks concatenated):
//!
//! ```text
//! "DFMK" | version u8 (0x01) | scheme u8 | polarity u8
//!        | issuer_id str | key_id str
//!        | digest algorithm str | digest bytes
//!        | signature bytes | chain bytes
//! ```
//!
//! `str`/`bytes` fields are a big-endian `u32` length followed by the data.
//! The chain field holds a `u32` certificate count and one length-prefixed
//! certificate per entry.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::KeyPair;
use crate::model::{content_hash, ContentError, ContentItem, Digest};
use crate::trust::CertChain;
use crate::wire::{Reader, WireError, Writer};

pub const MARKER_MAGIC: &[u8; 4] = b"DFMK";
pub const MARKER_VERSION: u8 = 0x01;
const SIG_DOMAIN: &[u8] = b"DFMK-SIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Metadata,
    Frequency,
    Cryptographic,
    Statistical,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [
        Scheme::Metadata,
        Scheme::Frequency,
        Scheme::Cryptographic,
        Scheme::Statistical,
    ];

    fn tag(self) -> u8 {
        match self {
            Scheme::Metadata => 0x01,
            Scheme::Frequency => 0x02,
            Scheme::Cryptographic => 0x03,
            Scheme::Statistical => 0x04,
        }
    }

    fn from_tag(tag: u8) -> Result<Self, WireError> {
        Ok(match tag {
            0x01 => Scheme::Metadata,
            0x02 => Scheme::Frequency,
            0x03 => Scheme::Cryptographic,
            0x04 => Scheme::Statistical,
            _ => {
                return Err(WireError::BadTag {
                    field: "scheme",
                    tag,
                })
            }
        })
    }

    pub fn is_keyed(self) -> bool {
        matches!(self, Scheme::Frequency | Scheme::Statistical)
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "metadata" => Ok(Scheme::Metadata),
            "frequency" => Ok(Scheme::Frequency),
            "cryptographic" => Ok(Scheme::Cryptographic),
            "statistical" => Ok(Scheme::Statistical),
            other => Err(format!("unknown scheme `{other}`")),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Metadata => "metadata",
            Scheme::Frequency => "frequency",
            Scheme::Cryptographic => "cryptographic",
            Scheme::Statistical => "statistical",
        })
    }
}

/// Positive: generated or manipulated by AI. Negative: authenticity
/// attestation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    fn tag(self) -> u8 {
        match self {
            Polarity::Positive => 0x01,
            Polarity::Negative => 0x02,
        }
    }

    fn from_tag(tag: u8) -> Result<Self, WireError> {
        match tag {
            0x01 => Ok(Polarity::Positive),
            0x02 => Ok(Polarity::Negative),
            _ => Err(WireError::BadTag {
                field: "polarity",
                tag,
            }),
        }
    }

    /// Bit XORed into keyed watermark patterns: positive embeds the pattern
    /// as-is, negative embeds its complement.
    pub fn bit(self) -> bool {
        matches!(self, Polarity::Negative)
    }

    pub fn flipped(self) -> Self {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
        }
    }
}

impl FromStr for Polarity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "positive" => Ok(Polarity::Positive),
            "negative" => Ok(Polarity::Negative),
            other => Err(format!("unknown polarity `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Marker {
    pub scheme: Scheme,
    pub polarity: Polarity,
    pub issuer_id: String,
    #[serde(default)]
    pub key_id: String,
    pub payload_digest: Digest,
    #[serde(with = "crate::serde_util::b64_bytes")]
    pub signature: Vec<u8>,
    #[serde(with = "chain_b64")]
    pub chain: CertChain,
}

mod chain_b64 {
    use super::CertChain;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(chain: &CertChain, s: S) -> Result<S::Ok, S::Error> {
        crate::serde_util::b64_bytes::serialize(&chain.to_bytes(), s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CertChain, D::Error> {
        let bytes = crate::serde_util::b64_bytes::deserialize(d)?;
        CertChain::from_bytes(&bytes).map_err(serde::de::Error::custom)
    }
}

impl Marker {
    /// Bytes covered by the issuer's signature: every field except the
    /// signature itself and the chain.
    pub fn signing_message(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(SIG_DOMAIN)
            .u8(MARKER_VERSION)
            .u8(self.scheme.tag())
            .u8(self.polarity.tag())
            .str(&self.issuer_id)
            .str(&self.key_id)
            .str(&self.payload_digest.algorithm_id)
            .bytes(&self.payload_digest.bytes);
        w.finish()
    }

    pub fn to_block(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(MARKER_MAGIC)
            .u8(MARKER_VERSION)
            .u8(self.scheme.tag())
            .u8(self.polarity.tag())
            .str(&self.issuer_id)
            .str(&self.key_id)
            .str(&self.payload_digest.algorithm_id)
            .bytes(&self.payload_digest.bytes)
            .bytes(&self.signature)
            .bytes(&self.chain.to_bytes());
        w.finish()
    }

    fn read_block(r: &mut Reader<'_>) -> Result<Self, WireError> {
        if r.raw(4)? != MARKER_MAGIC {
            return Err(WireError::BadTag {
                field: "magic",
                tag: 0,
            });
        }
        let version = r.u8()?;
        if version != MARKER_VERSION {
            return Err(WireError::Version(version));
        }
        let scheme = Scheme::from_tag(r.u8()?)?;
        let polarity = Polarity::from_tag(r.u8()?)?;
        let issuer_id = r.string()?;
        let key_id = r.string()?;
        let payload_digest = Digest {
            algorithm_id: r.string()?,
            bytes: r.bytes()?.to_vec(),
        };
        let signature = r.bytes()?.to_vec();
        let chain = CertChain::from_bytes(r.bytes()?)?;
        Ok(Self {
            scheme,
            polarity,
            issuer_id,
            key_id,
            payload_digest,
            signature,
            chain,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractError {
    #[error("no marker found")]
    NoMarkerFound,
    #[error("malformed marker block: {0}")]
    MalformedMarkerBlock(WireError),
}

#[derive(Debug, Error)]
pub enum MarkerError {
    #[error("a marker from issuer `{0}` is already embedded")]
    DuplicateMarker(String),
    #[error(transparent)]
    MalformedPayload(#[from] ContentError),
    #[error("existing marker block is malformed: {0}")]
    MalformedMarkerBlock(WireError),
    #[error("issuer key does not match the chain leaf")]
    KeyChainMismatch,
}

/// Parses every block in a marker block. Returns `NoMarkerFound` when the
/// bytes do not start with the magic at all.
pub fn parse_marker_block(block: &[u8]) -> Result<Vec<Marker>, ExtractError> {
    if !block.starts_with(MARKER_MAGIC) {
        return Err(ExtractError::NoMarkerFound);
    }
    let mut r = Reader::new(block);
    let mut markers = Vec::new();
    while r.remaining() > 0 {
        markers.push(Marker::read_block(&mut r).map_err(ExtractError::MalformedMarkerBlock)?);
    }
    Ok(markers)
}

/// All markers attached to the item.
pub fn extract_markers(item: &ContentItem) -> Result<Vec<Marker>, ExtractError> {
    match &item.marker_block {
        None => Err(ExtractError::NoMarkerFound),
        Some(block) => parse_marker_block(block),
    }
}

/// The first marker attached to the item.
pub fn extract_metadata_marker(item: &ContentItem) -> Result<Marker, ExtractError> {
    extract_markers(item).map(|mut v| v.swap_remove(0))
}

/// Attaches `marker` to the item's marker block; the payload is untouched.
pub fn embed_metadata_marker(
    item: &ContentItem,
    marker: &Marker,
) -> Result<ContentItem, MarkerError> {
    item.check_payload()?;
    let mut block = match &item.marker_block {
        None => Vec::new(),
        Some(existing) => match parse_marker_block(existing) {
            Ok(markers) => {
                if markers.iter().any(|m| m.issuer_id == marker.issuer_id) {
                    return Err(MarkerError::DuplicateMarker(marker.issuer_id.clone()));
                }
                existing.clone()
            }
            // Foreign metadata without our magic is replaced.
            Err(ExtractError::NoMarkerFound) => Vec::new(),
            Err(ExtractError::MalformedMarkerBlock(e)) => {
                return Err(MarkerError::MalformedMarkerBlock(e))
            }
        },
    };
    block.extend_from_slice(&marker.to_block());
    Ok(item.clone().with_marker_block(Some(block)))
}

/// Produces a signed marker over the item's content hash. The issuer id is
/// the chain leaf's subject.
pub fn sign_marker(
    item: &ContentItem,
    issuer_key: &KeyPair,
    scheme: Scheme,
    polarity: Polarity,
    chain: &CertChain,
) -> Result<Marker, MarkerError> {
    let leaf = chain.leaf().ok_or(MarkerError::KeyChainMismatch)?;
    if leaf.public_key != issuer_key.public_key() {
        return Err(MarkerError::KeyChainMismatch);
    }
    let mut marker = Marker {
        scheme,
        polarity,
        issuer_id: leaf.subject_id.clone(),
        key_id: String::new(),
        payload_digest: content_hash(item)?,
        signature: Vec::new(),
        chain: chain.clone(),
    };
    marker.signature = issuer_key.sign(&marker.signing_message());
    Ok(marker)
}

/// Cryptographic watermark: a detached signature carried in the marker
/// block. Unlike pixel-domain marks this also covers text.
pub fn sign_content(
    item: &ContentItem,
    issuer_key: &KeyPair,
    polarity: Polarity,
    chain: &CertChain,
) -> Result<Marker, MarkerError> {
    sign_marker(item, issuer_key, Scheme::Cryptographic, polarity, chain)
}
