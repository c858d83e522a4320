//! Keyed pixel-domain watermarks.
//!
//! Statistical: SplitMix64 seeded with the key draws a partial Fisher-Yates
//! permutation of the pixel indices (first `min(4096, pixels)` entries) and
//! then one pattern bit per selected pixel. Embedding writes
//! `pattern ^ polarity` into the LSB of the first channel.
//!
//! Frequency: the first channel is split into 8x8 blocks (edge-replicated to a
//! multiple of 8). Each block gets an orthonormal type-II DCT and the
//! coefficients at (3,4) and (4,3) are forced to the keyed sign with a
//! magnitude of at least `delta`. The generator is seeded with
//! `key ^ FREQUENCY_DOMAIN` and emits two sign bits per block in raster order.
//!
//! Both detectors return a correlation in [-1, 1]; positive markers correlate
//! towards +1 and negative markers towards -1.

use std::sync::OnceLock;

use thiserror::Error;

use crate::marker::Polarity;
use crate::media::Raster;
use crate::model::{ContentError, ContentItem, Modality};
use crate::prng::SplitMix64;

pub const DEFAULT_TAU: f64 = 0.5;
pub const DEFAULT_DELTA: f64 = 4.0;
pub const MAX_SELECTED: usize = 4096;
pub const MIN_PIXELS: usize = 64;
pub const BLOCK: usize = 8;
pub const FREQUENCY_PASSES: usize = 32;
/// Mid-band coefficient positions as (row, column).
pub const MID_BAND: [(usize, usize); 2] = [(3, 4), (4, 3)];
/// ASCII "frequenc"; separates the frequency stream from the LSB stream.
pub const FREQUENCY_DOMAIN: u64 = 0x6672_6571_7565_6e63;

#[derive(Debug, Error)]
pub enum WatermarkError {
    #[error("watermarking needs a raster, got {0}")]
    UnsupportedModality(Modality),
    #[error("image has {0} pixels, need at least {MIN_PIXELS}")]
    ImageTooSmall(usize),
    #[error("image {0}x{1} is smaller than one 8x8 block")]
    BadDimensions(usize, usize),
    #[error(transparent)]
    Content(#[from] ContentError),
}

fn raster_of(item: &ContentItem) -> Result<Raster, WatermarkError> {
    if item.modality != Modality::Raster {
        return Err(WatermarkError::UnsupportedModality(item.modality));
    }
    Ok(item.decode_raster()?)
}

/// The pixel subset and pattern bits a key selects in an image of
/// `pixel_count` pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyedSelection {
    pub indices: Vec<u32>,
    pub bits: Vec<bool>,
}

impl KeyedSelection {
    pub fn new(key: u64, pixel_count: usize) -> Self {
        let count = pixel_count.min(MAX_SELECTED);
        let mut perm: Vec<u32> = (0..pixel_count as u32).collect();
        let mut g = SplitMix64::new(key);
        for i in 0..count {
            let j = i + g.below((pixel_count - i) as u64) as usize;
            perm.swap(i, j);
        }
        perm.truncate(count);
        let bits = (0..count).map(|_| g.bit()).collect();
        Self {
            indices: perm,
            bits,
        }
    }
}

pub fn embed_statistical(
    item: &ContentItem,
    key: u64,
    polarity: Polarity,
) -> Result<ContentItem, WatermarkError> {
    let mut raster = raster_of(item)?;
    let n = raster.pixel_count();
    if n < MIN_PIXELS {
        return Err(WatermarkError::ImageTooSmall(n));
    }
    let sel = KeyedSelection::new(key, n);
    let flip = polarity.bit();
    for (&idx, &bit) in sel.indices.iter().zip(&sel.bits) {
        let v = raster.first_mut(idx as usize);
        *v = (*v & !1) | u8::from(bit ^ flip);
    }
    Ok(ContentItem {
        payload: raster.encode(),
        ..item.clone()
    })
}

pub fn detect_statistical(item: &ContentItem, key: u64) -> Result<f64, WatermarkError> {
    let raster = raster_of(item)?;
    let n = raster.pixel_count();
    if n < MIN_PIXELS {
        return Err(WatermarkError::ImageTooSmall(n));
    }
    Ok(statistical_correlation(
        &raster,
        key,
        &Geometry::identity(&raster),
    ))
}

/// Where the examined raster sits inside the originally marked image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub original_width: usize,
    pub original_height: usize,
    pub offset_x: usize,
    pub offset_y: usize,
}

impl Geometry {
    pub fn identity(r: &Raster) -> Self {
        Self {
            original_width: r.width,
            original_height: r.height,
            offset_x: 0,
            offset_y: 0,
        }
    }
}

/// Correlation over the selected pixels that survive in `raster` when it is
/// a sub-rectangle of the original image. Zero when none survive.
pub fn detect_statistical_in(
    item: &ContentItem,
    key: u64,
    geometry: &Geometry,
) -> Result<f64, WatermarkError> {
    let raster = raster_of(item)?;
    let n = geometry.original_width * geometry.original_height;
    if n < MIN_PIXELS {
        return Err(WatermarkError::ImageTooSmall(n));
    }
    Ok(statistical_correlation(&raster, key, geometry))
}

fn statistical_correlation(raster: &Raster, key: u64, g: &Geometry) -> f64 {
    let sel = KeyedSelection::new(key, g.original_width * g.original_height);
    let identity = g.offset_x == 0
        && g.offset_y == 0
        && g.original_width == raster.width
        && g.original_height == raster.height;
    let (mut matches, mut total) = (0usize, 0usize);
    for (&idx, &bit) in sel.indices.iter().zip(&sel.bits) {
        let local = if identity {
            Some(idx as usize)
        } else {
            let (x, y) = (
                idx as usize % g.original_width,
                idx as usize / g.original_width,
            );
            let inside = x >= g.offset_x
                && y >= g.offset_y
                && x - g.offset_x < raster.width
                && y - g.offset_y < raster.height;
            inside.then(|| (y - g.offset_y) * raster.width + (x - g.offset_x))
        };
        if let Some(p) = local {
            total += 1;
            if (raster.first(p) & 1 == 1) == bit {
                matches += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        2.0 * matches as f64 / total as f64 - 1.0
    }
}

/// Decision rule shared by both keyed detectors.
pub fn classify_correlation(correlation: f64, tau: f64) -> Option<Polarity> {
    if correlation >= tau {
        Some(Polarity::Positive)
    } else if correlation <= -tau {
        Some(Polarity::Negative)
    } else {
        None
    }
}

fn dct_basis() -> &'static [[f64; BLOCK]; BLOCK] {
    static BASIS: OnceLock<[[f64; BLOCK]; BLOCK]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut b = [[0.0; BLOCK]; BLOCK];
        let n = BLOCK as f64;
        for (u, row) in b.iter_mut().enumerate() {
            let alpha = if u == 0 {
                (1.0 / n).sqrt()
            } else {
                (2.0 / n).sqrt()
            };
            for (x, v) in row.iter_mut().enumerate() {
                *v = alpha
                    * (((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI) / (2.0 * n)).cos();
            }
        }
        b
    })
}

pub type Block = [[f64; BLOCK]; BLOCK];

/// Orthonormal 2-D type-II DCT; `block[row][col]`.
pub fn dct2(block: &Block) -> Block {
    let b = dct_basis();
    let mut tmp = [[0.0; BLOCK]; BLOCK];
    for y in 0..BLOCK {
        for v in 0..BLOCK {
            tmp[y][v] = (0..BLOCK).map(|x| b[v][x] * block[y][x]).sum();
        }
    }
    let mut out = [[0.0; BLOCK]; BLOCK];
    for u in 0..BLOCK {
        for v in 0..BLOCK {
            out[u][v] = (0..BLOCK).map(|y| b[u][y] * tmp[y][v]).sum();
        }
    }
    out
}

/// Inverse of [`dct2`] (type-III).
pub fn idct2(coef: &Block) -> Block {
    let b = dct_basis();
    let mut tmp = [[0.0; BLOCK]; BLOCK];
    for u in 0..BLOCK {
        for x in 0..BLOCK {
            tmp[u][x] = (0..BLOCK).map(|v| b[v][x] * coef[u][v]).sum();
        }
    }
    let mut out = [[0.0; BLOCK]; BLOCK];
    for y in 0..BLOCK {
        for x in 0..BLOCK {
            out[y][x] = (0..BLOCK).map(|u| b[u][y] * tmp[u][x]).sum();
        }
    }
    out
}

/// First channel edge-replicated up to a multiple of 8 in both directions.
struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    fn padded(r: &Raster) -> Self {
        let width = r.width.div_ceil(BLOCK) * BLOCK;
        let height = r.height.div_ceil(BLOCK) * BLOCK;
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            let sy = y.min(r.height - 1);
            for x in 0..width {
                let sx = x.min(r.width - 1);
                data.push(r.first(sy * r.width + sx) as f64);
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    fn blocks(&self) -> impl Iterator<Item = (usize, usize)> {
        let bw = self.width / BLOCK;
        (0..self.height / BLOCK).flat_map(move |by| (0..bw).map(move |bx| (bx * BLOCK, by * BLOCK)))
    }

    fn read(&self, x0: usize, y0: usize) -> Block {
        let mut b = [[0.0; BLOCK]; BLOCK];
        for (y, row) in b.iter_mut().enumerate() {
            let start = (y0 + y) * self.width + x0;
            row.copy_from_slice(&self.data[start..start + BLOCK]);
        }
        b
    }

    fn write(&mut self, x0: usize, y0: usize, b: &Block) {
        for (y, row) in b.iter().enumerate() {
            let start = (y0 + y) * self.width + x0;
            self.data[start..start + BLOCK].copy_from_slice(row);
        }
    }
}

fn frequency_raster(item: &ContentItem) -> Result<Raster, WatermarkError> {
    let raster = raster_of(item)?;
    if raster.width < BLOCK || raster.height < BLOCK {
        return Err(WatermarkError::BadDimensions(raster.width, raster.height));
    }
    Ok(raster)
}

fn key_sign(g: &mut SplitMix64) -> f64 {
    if g.bit() {
        1.0
    } else {
        -1.0
    }
}

/// Forces the keyed sign onto every mid-band coefficient. Rounding, clipping
/// and edge padding can undo some of them, so the pass repeats on its own
/// output until every sign holds or `FREQUENCY_PASSES` is reached.
pub fn embed_frequency(
    item: &ContentItem,
    key: u64,
    polarity: Polarity,
    delta: f64,
) -> Result<ContentItem, WatermarkError> {
    let mut raster = frequency_raster(item)?;
    let target = if polarity.bit() { -1.0 } else { 1.0 };
    for _ in 0..FREQUENCY_PASSES {
        force_signs(&mut raster, key, polarity, delta);
        if frequency_correlation(&raster, key) == target {
            break;
        }
    }
    Ok(ContentItem {
        payload: raster.encode(),
        ..item.clone()
    })
}

fn force_signs(raster: &mut Raster, key: u64, polarity: Polarity, delta: f64) {
    let mut plane = Plane::padded(raster);
    let mut g = SplitMix64::new(key ^ FREQUENCY_DOMAIN);
    let flip = if polarity.bit() { -1.0 } else { 1.0 };
    let origins: Vec<_> = plane.blocks().collect();
    for (x0, y0) in origins {
        let mut c = dct2(&plane.read(x0, y0));
        for &(u, v) in &MID_BAND {
            let s = key_sign(&mut g) * flip;
            c[u][v] = s * (s * c[u][v]).max(delta);
        }
        plane.write(x0, y0, &idct2(&c));
    }
    for y in 0..raster.height {
        for x in 0..raster.width {
            let v = plane.data[y * plane.width + x].round().clamp(0.0, 255.0);
            *raster.first_mut(y * raster.width + x) = v as u8;
        }
    }
}

pub fn detect_frequency(item: &ContentItem, key: u64) -> Result<f64, WatermarkError> {
    Ok(frequency_correlation(&frequency_raster(item)?, key))
}

fn frequency_correlation(raster: &Raster, key: u64) -> f64 {
    let plane = Plane::padded(raster);
    let mut g = SplitMix64::new(key ^ FREQUENCY_DOMAIN);
    let (mut acc, mut total) = (0.0, 0usize);
    for (x0, y0) in plane.blocks() {
        let c = dct2(&plane.read(x0, y0));
        for &(u, v) in &MID_BAND {
            let k = key_sign(&mut g);
            acc += k * c[u][v].signum() * f64::from(u8::from(c[u][v] != 0.0));
            total += 1;
        }
    }
    acc / total as f64
}
