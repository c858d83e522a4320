#![allow(dead_code)]

use std::sync::Arc;

use modpipe_core::corpus::{SimulatedVerifierPool, VerifierPoolSpec};
use modpipe_core::detection::{ResidueDetector, SimulatedDetector};
use modpipe_core::marker::{embed_metadata_marker, sign_marker, Polarity, Scheme};
use modpipe_core::media::Raster;
use modpipe_core::model::{ContentItem, GroundTruth, OriginContext};
use modpipe_core::pipeline::{Engine, ModerationConfig};
use modpipe_core::prng::SplitMix64;
use modpipe_core::trust::{IssuerPki, TrustStore};

pub const NOW: i64 = 1_700_000_000;

pub fn pki(name: &str) -> IssuerPki {
    IssuerPki::generate(77, name, NOW - 1000, NOW + 1000)
}

pub fn store(p: &[&IssuerPki]) -> TrustStore {
    TrustStore::new(p.iter().map(|x| x.root.clone()))
}

pub fn scene(id: &str, seed: u64) -> ContentItem {
    let mut r = Raster::new(64, 64, 3);
    let mut g = SplitMix64::new(seed);
    for v in r.data.iter_mut() {
        *v = 40 + g.below(160) as u8;
    }
    ContentItem::raster(id, &r)
}

pub fn with_tags(item: ContentItem, tags: &[&str], reach: u64) -> ContentItem {
    item.with_origin(OriginContext::new("src", tags.iter().copied(), reach))
}

pub fn marked(item: &ContentItem, p: &IssuerPki, scheme: Scheme, pol: Polarity) -> ContentItem {
    let m = sign_marker(item, &p.issuer_key, scheme, pol, &p.chain).unwrap();
    embed_metadata_marker(item, &m).unwrap()
}

pub fn fake() -> Option<GroundTruth> {
    Some(GroundTruth { is_deepfake: true })
}

pub fn real() -> Option<GroundTruth> {
    Some(GroundTruth { is_deepfake: false })
}

pub fn pool(accuracy: f64, response_rate: f64) -> SimulatedVerifierPool {
    SimulatedVerifierPool::new(
        VerifierPoolSpec {
            accuracy,
            response_rate,
            ..VerifierPoolSpec::default()
        },
        5,
    )
}

/// Perfect simulated channel plus a residue detector with no keys.
pub fn engine(
    config: ModerationConfig,
    store: TrustStore,
    pool: Option<SimulatedVerifierPool>,
) -> Engine {
    let mut e = Engine::new(config, store)
        .unwrap()
        .with_detector(Arc::new(SimulatedDetector::new(1.0, 0.0, 3).unwrap()))
        .with_detector(Arc::new(ResidueDetector::new([])));
    if let Some(p) = pool {
        e = e.with_pool(Arc::new(p));
    }
    e
}
