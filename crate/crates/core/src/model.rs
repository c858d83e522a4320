//! Content items, origin context, digests and the corpus manifest record.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::marker::MARKER_MAGIC;
use crate::media::{MediaError, Pcm, Raster};

pub const SHA256_ID: &str = "sha-256";
pub const UNCATEGORIZED: &str = "uncategorized";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Raster,
    Audio,
    Text,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Raster => "raster",
            Modality::Audio => "audio",
            Modality::Text => "text",
        }
    }

    /// Guess from a file extension (`ppm`/`pgm`/`pnm`, `pcm`, `txt`).
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "ppm" | "pgm" | "pnm" => Some(Modality::Raster),
            "pcm" => Some(Modality::Audio),
            "txt" => Some(Modality::Text),
            _ => None,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raster" => Ok(Modality::Raster),
            "audio" => Ok(Modality::Audio),
            "text" => Ok(Modality::Text),
            other => Err(format!("unknown modality `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OriginContext {
    pub source_id: String,
    pub category_tags: BTreeSet<String>,
    pub expected_reach: u64,
    pub verified_source: bool,
}

impl OriginContext {
    pub fn new<I, S>(source_id: impl Into<String>, tags: I, expected_reach: u64) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut origin = Self {
            source_id: source_id.into(),
            category_tags: tags.into_iter().map(Into::into).collect(),
            expected_reach,
            verified_source: false,
        };
        origin.normalize();
        origin
    }

    /// Enforces the "at least one tag" invariant.
    pub fn normalize(&mut self) {
        if self.category_tags.is_empty() {
            self.category_tags.insert(UNCATEGORIZED.to_owned());
        }
    }

    /// First tag in sorted order; used as the stratum key for audits.
    pub fn primary_category(&self) -> &str {
        self.category_tags
            .iter()
            .next()
            .map(String::as_str)
            .unwrap_or(UNCATEGORIZED)
    }
}

impl Default for OriginContext {
    fn default() -> Self {
        Self::new("unknown", [UNCATEGORIZED], 0)
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Digest {
    pub algorithm_id: String,
    #[serde(with = "crate::serde_util::hex_bytes")]
    pub bytes: Vec<u8>,
}

impl Digest {
    pub fn sha256(data: &[u8]) -> Self {
        Self {
            algorithm_id: SHA256_ID.to_owned(),
            bytes: Sha256::digest(data).to_vec(),
        }
    }

    /// Declared output length for a known algorithm id.
    pub fn declared_len(algorithm_id: &str) -> Option<usize> {
        match algorithm_id {
            SHA256_ID => Some(32),
            _ => None,
        }
    }

    pub fn is_well_formed(&self) -> bool {
        Self::declared_len(&self.algorithm_id) == Some(self.bytes.len())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.bytes)
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.algorithm_id, self.to_hex())
    }
}

#[derive(Debug, Error)]
pub enum ContentError {
    #[error("payload does not decode as {modality}: {source}")]
    MalformedPayload {
        modality: Modality,
        #[source]
        source: MediaError,
    },
    #[error("marker block does not start with the marker magic")]
    BadMarkerBlock,
}

/// A unit of platform content. Immutable once built; attacks and embedding
/// return new items.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContentItem {
    pub id: String,
    pub modality: Modality,
    pub payload: Vec<u8>,
    pub marker_block: Option<Vec<u8>>,
    pub origin: OriginContext,
}

impl ContentItem {
    pub fn new(id: impl Into<String>, modality: Modality, payload: Vec<u8>) -> Self {
        Self {
            id: id.into(),
            modality,
            payload,
            marker_block: None,
            origin: OriginContext::default(),
        }
    }

    pub fn with_origin(mut self, origin: OriginContext) -> Self {
        self.origin = origin;
        self
    }

    pub fn with_marker_block(mut self, block: Option<Vec<u8>>) -> Self {
        self.marker_block = block;
        self
    }

    pub fn raster(id: impl Into<String>, raster: &Raster) -> Self {
        Self::new(id, Modality::Raster, raster.encode())
    }

    pub fn text(id: impl Into<String>, text: &str) -> Self {
        Self::new(id, Modality::Text, text.as_bytes().to_vec())
    }

    /// Checks that the payload decodes under the declared modality and the
    /// marker block, if any, carries the magic.
    pub fn validate(&self) -> Result<(), ContentError> {
        self.check_payload()?;
        match &self.marker_block {
            Some(block) if !block.starts_with(MARKER_MAGIC) => Err(ContentError::BadMarkerBlock),
            _ => Ok(()),
        }
    }

    pub fn check_payload(&self) -> Result<(), ContentError> {
        let res = match self.modality {
            Modality::Raster => Raster::decode(&self.payload).map(drop),
            Modality::Audio => Pcm::decode(&self.payload).map(drop),
            Modality::Text => std::str::from_utf8(&self.payload)
                .map(drop)
                .map_err(|_| MediaError::Text),
        };
        res.map_err(|source| ContentError::MalformedPayload {
            modality: self.modality,
            source,
        })
    }

    pub fn decode_raster(&self) -> Result<Raster, ContentError> {
        Raster::decode(&self.payload).map_err(|source| ContentError::MalformedPayload {
            modality: self.modality,
            source,
        })
    }
}

/// Digest over the payload bytes only. The marker block is excluded so that
/// attaching a metadata marker leaves the hash it signs unchanged.
pub fn content_hash(item: &ContentItem) -> Result<Digest, ContentError> {
    item.check_payload()?;
    Ok(Digest::sha256(&item.payload))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub is_deepfake: bool,
}

/// One line of a corpus manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub modality: Modality,
    pub payload_path: PathBuf,
    pub origin: OriginContext,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruth>,
    /// Sidecar file holding the marker block, when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marker_path: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("duplicate content id `{0}`")]
    DuplicateId(String),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("item `{id}`: {source}")]
    Content {
        id: String,
        #[source]
        source: ContentError,
    },
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRecord>, ManifestError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut rec: ManifestRecord =
            serde_json::from_str(line).map_err(|source| ManifestError::Parse {
                line: i + 1,
                source,
            })?;
        rec.origin.normalize();
        if !seen.insert(rec.id.clone()) {
            return Err(ManifestError::DuplicateId(rec.id));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_manifest(records: &[ManifestRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("manifest record serializes"));
        out.push('\n');
    }
    out
}

impl ManifestRecord {
    /// Loads the payload (and marker sidecar) relative to `base`.
    pub fn load(&self, base: &Path) -> Result<ContentItem, ManifestError> {
        let read = |p: &Path| {
            let path = base.join(p);
            std::fs::read(&path).map_err(|source| ManifestError::Io { path, source })
        };
        let payload = read(&self.payload_path)?;
        let marker_block = match &self.marker_path {
            Some(p) => Some(read(p)?),
            None => None,
        };
        let item = ContentItem {
            id: self.id.clone(),
            modality: self.modality,
            payload,
            marker_block,
            origin: self.origin.clone(),
        };
        item.check_payload()
            .map_err(|source| ManifestError::Content {
                id: self.id.clone(),
                source,
            })?;
        Ok(item)
    }
}
