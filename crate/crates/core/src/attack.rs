//! Manipulations applied to marked content.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::media::{Pcm, Raster};
use crate::model::{ContentError, ContentItem, Modality};
use crate::prng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackSpec {
    StripMetadata,
    /// Quantize every sample to a multiple of `q`, rounding half up.
    Recompress {
        q: u32,
    },
    Crop {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },
    /// Adds uniform integer noise in `[-sigma, sigma]` to each sample with
    /// probability `density`, clamping to the sample range.
    Noise {
        sigma: u32,
        seed: u64,
        #[serde(default = "one")]
        density: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl fmt::Display for AttackSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttackSpec::StripMetadata => write!(f, "strip_metadata"),
            AttackSpec::Recompress { q } => write!(f, "recompress(q={q})"),
            AttackSpec::Crop {
                x,
                y,
                width,
                height,
            } => write!(f, "crop({x},{y},{width}x{height})"),
            AttackSpec::Noise {
                sigma,
                seed,
                density,
            } => {
                write!(f, "noise(sigma={sigma},seed={seed},density={density})")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid attack parameters: {0}")]
    InvalidAttackParams(String),
    #[error(transparent)]
    Content(#[from] ContentError),
}

fn invalid(msg: impl Into<String>) -> AttackError {
    AttackError::InvalidAttackParams(msg.into())
}

impl AttackSpec {
    /// Builds a spec from a kind name and `key=value` pairs, e.g.
    /// `noise` + `sigma=2,seed=7`.
    pub fn parse(kind: &str, params: &str) -> Result<Self, AttackError> {
        let mut kv = BTreeMap::new();
        for pair in params.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| invalid(format!("expected key=value, got `{pair}`")))?;
            kv.insert(k.trim(), v.trim());
        }
        fn get<T: std::str::FromStr>(kv: &BTreeMap<&str, &str>, k: &str) -> Result<T, AttackError> {
            kv.get(k)
                .ok_or_else(|| invalid(format!("missing `{k}`")))?
                .parse()
                .map_err(|_| invalid(format!("bad value for `{k}`")))
        }
        let spec = match kind {
            "strip_metadata" => AttackSpec::StripMetadata,
            "recompress" => AttackSpec::Recompress { q: get(&kv, "q")? },
            "crop" => AttackSpec::Crop {
                x: get(&kv, "x")?,
                y: get(&kv, "y")?,
                width: get(&kv, "width")?,
                height: get(&kv, "height")?,
            },
            "noise" => AttackSpec::Noise {
                sigma: get(&kv, "sigma")?,
                seed: kv.get("seed").map_or(Ok(0), |_| get(&kv, "seed"))?,
                density: kv.get("density").map_or(Ok(1.0), |_| get(&kv, "density"))?,
            },
            other => return Err(invalid(format!("unknown attack `{other}`"))),
        };
        Ok(spec)
    }
}

/// Pure function of `(item, attack)`. Pixel/sample attacks keep the marker
/// block; only `StripMetadata` removes it.
pub fn apply_attack(item: &ContentItem, attack: &AttackSpec) -> Result<ContentItem, AttackError> {
    if let AttackSpec::StripMetadata = attack {
        return Ok(item.clone().with_marker_block(None));
    }
    let payload = match item.modality {
        Modality::Raster => {
            let mut r = item.decode_raster()?;
            attack_raster(&mut r, attack)?;
            r.encode()
        }
        Modality::Audio => {
            let mut p =
                Pcm::decode(&item.payload).map_err(|source| ContentError::MalformedPayload {
                    modality: Modality::Audio,
                    source,
                })?;
            attack_audio(&mut p, attack)?;
            p.encode()
        }
        Modality::Text => return Err(invalid(format!("{attack} does not apply to text"))),
    };
    Ok(ContentItem {
        payload,
        ..item.clone()
    })
}

fn check_noise(sigma: u32, density: f64) -> Result<(), AttackError> {
    if !(0.0..=1.0).contains(&density) {
        return Err(invalid("density must be in [0, 1]"));
    }
    if sigma > u16::MAX as u32 {
        return Err(invalid("sigma too large"));
    }
    Ok(())
}

/// Round-half-up quantization to multiples of `q`, kept within `[lo, hi]`.
fn quantize(v: i64, q: i64, lo: i64, hi: i64) -> i64 {
    let r = (2 * v + q).div_euclid(2 * q) * q;
    if r > hi {
        r - q
    } else if r < lo {
        r + q
    } else {
        r
    }
}

fn attack_raster(r: &mut Raster, attack: &AttackSpec) -> Result<(), AttackError> {
    match *attack {
        AttackSpec::StripMetadata => {}
        AttackSpec::Recompress { q } => {
            if q == 0 {
                return Err(invalid("q must be at least 1"));
            }
            for v in r.data.iter_mut() {
                *v = quantize(*v as i64, q as i64, 0, 255) as u8;
            }
        }
        AttackSpec::Crop {
            x,
            y,
            width,
            height,
        } => {
            if width == 0 || height == 0 || x + width > r.width || y + height > r.height {
                return Err(invalid(format!(
                    "crop {x},{y} {width}x{height} outside {}x{}",
                    r.width, r.height
                )));
            }
            let mut out = Raster::new(width, height, r.channels);
            let c = r.channels;
            for row in 0..height {
                let src = ((y + row) * r.width + x) * c;
                let dst = row * width * c;
                out.data[dst..dst + width * c].copy_from_slice(&r.data[src..src + width * c]);
            }
            *r = out;
        }
        AttackSpec::Noise {
            sigma,
            seed,
            density,
        } => {
            check_noise(sigma, density)?;
            let mut g = SplitMix64::new(seed);
            for v in r.data.iter_mut() {
                if let Some(n) = noise_sample(&mut g, sigma, density) {
                    *v = (*v as i64 + n).clamp(0, 255) as u8;
                }
            }
        }
    }
    Ok(())
}

fn attack_audio(p: &mut Pcm, attack: &AttackSpec) -> Result<(), AttackError> {
    let (lo, hi) = (i16::MIN as i64, i16::MAX as i64);
    match *attack {
        AttackSpec::StripMetadata => {}
        AttackSpec::Recompress { q } => {
            if q == 0 {
                return Err(invalid("q must be at least 1"));
            }
            for s in p.samples.iter_mut() {
                *s = quantize(*s as i64, q as i64, lo, hi) as i16;
            }
        }
        AttackSpec::Crop { .. } => return Err(invalid("crop applies to rasters only")),
        AttackSpec::Noise {
            sigma,
            seed,
            density,
        } => {
            check_noise(sigma, density)?;
            let mut g = SplitMix64::new(seed);
            for s in p.samples.iter_mut() {
                if let Some(n) = noise_sample(&mut g, sigma, density) {
                    *s = (*s as i64 + n).clamp(lo, hi) as i16;
                }
            }
        }
    }
    Ok(())
}

/// Two draws per sample (gate, then value) so the stream layout does not
/// depend on the outcome.
fn noise_sample(g: &mut SplitMix64, sigma: u32, density: f64) -> Option<i64> {
    let gate = (g.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    let value = g.below(2 * sigma as u64 + 1) as i64 - sigma as i64;
    (gate < density).then_some(value)
}
