//! Seeded two-order degradation: blur, resize, noise and block-DCT
//! quantization, applied twice, then a final resize to the output scale.
//!
//! Blur, resize and quality are shared by all frames of a clip; noise is
//! redrawn per frame from a stream split off the order's noise seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resample::{gaussian_blur, resize, scaled_extent, Filter};
use crate::video::VideoClip;

/// Closed interval sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn fixed(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        // Draw even for degenerate ranges so the stream layout never depends on them.
        let u: f64 = rng.gen();
        self.lo + (self.hi - self.lo) * u
    }

    fn check(&self, what: &str, min: f64, max: f64, open_min: bool) -> Result<()> {
        let lo_ok = if open_min { self.lo > min } else { self.lo >= min };
        if !(self.lo.is_finite() && self.hi.is_finite() && lo_ok && self.lo <= self.hi && self.hi <= max) {
            let left = if open_min { '(' } else { '[' };
            return Err(Error::invalid(format!(
                "{what} range [{}, {}] must be nonempty and inside {left}{min}, {max}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

pub const MAX_BLUR_SIGMA: f64 = 10.0;
pub const MAX_NOISE_SIGMA: f64 = 0.5;
/// Quality at or above this skips quantization entirely.
pub const LOSSLESS_QUALITY: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderConfig {
    /// Gaussian sigma in pixels.
    pub blur_sigma: Range,
    /// Resize factor relative to the current frame size.
    pub scale: Range,
    /// Noise standard deviation on the `[0, 1]` intensity scale.
    pub noise_sigma: Range,
    /// JPEG-style quality in `[1, 100]`.
    pub quality: Range,
}

impl Default for OrderConfig {
    fn default() -> Self {
        Self {
            blur_sigma: Range::new(0.2, 3.0),
            scale: Range::new(0.25, 1.0),
            noise_sigma: Range::new(0.0, 0.1),
            quality: Range::new(30.0, 95.0),
        }
    }
}

impl OrderConfig {
    /// Every stage at its no-op limit.
    pub const IDENTITY: OrderConfig = OrderConfig {
        blur_sigma: Range::fixed(0.0),
        scale: Range::fixed(1.0),
        noise_sigma: Range::fixed(0.0),
        quality: Range::fixed(LOSSLESS_QUALITY),
    };

    pub fn validate(&self) -> Result<()> {
        self.blur_sigma.check("blur sigma", 0.0, MAX_BLUR_SIGMA, false)?;
        self.scale.check("scale", 0.0, 1.0, true)?;
        self.noise_sigma.check("noise sigma", 0.0, MAX_NOISE_SIGMA, false)?;
        self.quality.check("quality", 1.0, LOSSLESS_QUALITY, false)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> OrderParams {
        OrderParams {
            blur_sigma: self.blur_sigma.sample(rng),
            scale: self.scale.sample(rng),
            noise_sigma: self.noise_sigma.sample(rng),
            quality: self.quality.sample(rng),
            noise_seed: rng.gen(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationConfig {
    pub first: OrderConfig,
    pub second: OrderConfig,
    /// Output size as a fraction of the input size.
    pub output_scale: f64,
    pub seed: u64,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        Self {
            first: OrderConfig::default(),
            second: OrderConfig::default(),
            output_scale: 0.25,
            seed: 0,
        }
    }
}

impl DegradationConfig {
    pub fn identity(seed: u64) -> Self {
        Self {
            first: OrderConfig::IDENTITY,
            second: OrderConfig::IDENTITY,
            output_scale: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.first.validate()?;
        self.second.validate()?;
        if !(self.output_scale > 0.0 && self.output_scale <= 1.0) {
            return Err(Error::invalid(format!(
                "output scale {} must lie in (0, 1]",
                self.output_scale
            )));
        }
        Ok(())
    }
}

/// Concrete values for one order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderParams {
    pub blur_sigma: f64,
    pub scale: f64,
    pub noise_sigma: f64,
    pub quality: f64,
    pub noise_seed: u64,
}

impl OrderParams {
    pub fn validate(&self) -> Result<()> {
        let single = OrderConfig {
            blur_sigma: Range::fixed(self.blur_sigma),
            scale: Range::fixed(self.scale),
            noise_sigma: Range::fixed(self.noise_sigma),
            quality: Range::fixed(self.quality),
        };
        single.validate()
    }
}

/// Everything needed to replay a degradation without the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationRecord {
    pub orders: Vec<OrderParams>,
    pub output_scale: f64,
    pub input_size: [usize; 2],
    pub output_size: [usize; 2],
}

fn clip01(mut c: VideoClip) -> VideoClip {
    c.clamp01();
    c
}

/// Adds `N(0, sigma²)` per pixel; frame `t` uses stream `t` of the seed.
pub fn add_noise(clip: &VideoClip, sigma: f64, seed: u64) -> VideoClip {
    let mut out = clip.clone();
    if sigma == 0.0 {
        return out;
    }
    for t in 0..out.frames {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(t as u64);
        for v in out.frame_mut(t) {
            let n: f64 = rng.sample(StandardNormal);
            *v = (f64::from(*v) + sigma * n) as f32;
        }
    }
    out
}

const JPEG_LUMA: [f64; 64] = [
    16.0, 11.0, 10.0, 16.0, 24.0, 40.0, 51.0, 61.0, //
    12.0, 12.0, 14.0, 19.0, 26.0, 58.0, 60.0, 55.0, //
    14.0, 13.0, 16.0, 24.0, 40.0, 57.0, 69.0, 56.0, //
    14.0, 17.0, 22.0, 29.0, 51.0, 87.0, 80.0, 62.0, //
    18.0, 22.0, 37.0, 56.0, 68.0, 109.0, 103.0, 77.0, //
    24.0, 35.0, 55.0, 64.0, 81.0, 104.0, 113.0, 92.0, //
    49.0, 64.0, 78.0, 87.0, 103.0, 121.0, 120.0, 101.0, //
    72.0, 92.0, 95.0, 98.0, 112.0, 100.0, 103.0, 99.0,
];

/// Standard luminance table scaled the way libjpeg maps quality to a factor.
pub fn quant_table(quality: f64) -> [f64; 64] {
    let q = quality.clamp(1.0, 100.0);
    let s = if q < 50.0 { 5000.0 / q } else { 200.0 - 2.0 * q };
    JPEG_LUMA.map(|b| ((b * s + 50.0) / 100.0).floor().clamp(1.0, 255.0))
}

fn dct_basis() -> [[f64; 8]; 8] {
    let mut m = [[0.0; 8]; 8];
    for (k, row) in m.iter_mut().enumerate() {
        let a = if k == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
        for (n, v) in row.iter_mut().enumerate() {
            *v = a * ((2 * n + 1) as f64 * k as f64 * std::f64::consts::PI / 16.0).cos();
        }
    }
    m
}

/// Quantizes orthonormal 8×8 DCT coefficients of each frame channel on the
/// 0..255 scale. Partial edge blocks are padded by edge replication.
pub fn dct_quantize(clip: &VideoClip, quality: f64) -> VideoClip {
    if quality >= LOSSLESS_QUALITY {
        return clip.clone();
    }
    let table = quant_table(quality);
    let b = dct_basis();
    let (h, w, c) = (clip.height, clip.width, clip.channels);
    let mut out = clip.clone();
    let mut block = [[0.0f64; 8]; 8];
    let mut tmp = [[0.0f64; 8]; 8];
    for t in 0..clip.frames {
        let src = clip.frame(t);
        let dst = out.frame_mut(t);
        for ch in 0..c {
            for by in (0..h).step_by(8) {
                for bx in (0..w).step_by(8) {
                    for (i, row) in block.iter_mut().enumerate() {
                        for (j, v) in row.iter_mut().enumerate() {
                            let (y, x) = ((by + i).min(h - 1), (bx + j).min(w - 1));
                            *v = f64::from(src[(y * w + x) * c + ch]) * 255.0 - 128.0;
                        }
                    }
                    // coef = B X Bᵀ
                    for i in 0..8 {
                        for j in 0..8 {
                            tmp[i][j] = (0..8).map(|n| b[i][n] * block[n][j]).sum();
                        }
                    }
                    for i in 0..8 {
                        for j in 0..8 {
                            let coef: f64 = (0..8).map(|n| tmp[i][n] * b[j][n]).sum();
                            let q = table[i * 8 + j];
                            block[i][j] = (coef / q).round() * q;
                        }
                    }
                    // X = Bᵀ coef B
                    for i in 0..8 {
                        for j in 0..8 {
                            tmp[i][j] = (0..8).map(|n| b[n][i] * block[n][j]).sum();
                        }
                    }
                    for i in 0..8.min(h - by) {
                        for j in 0..8.min(w - bx) {
                            let v: f64 = (0..8).map(|n| tmp[i][n] * b[n][j]).sum();
                            dst[((by + i) * w + bx + j) * c + ch] = ((v + 128.0) / 255.0) as f32;
                        }
                    }
                }
            }
        }
    }
    out
}

/// One order: blur, resize, noise, quantize, clipping to `[0, 1]` after each.
pub fn degrade_order(clip: &VideoClip, p: &OrderParams) -> Result<VideoClip> {
    p.validate()?;
    let c = clip01(gaussian_blur(clip, p.blur_sigma)?);
    let (h, w) = (scaled_extent(c.height, p.scale), scaled_extent(c.width, p.scale));
    let c = clip01(resize(&c, h, w, Filter::Bilinear)?);
    let c = clip01(add_noise(&c, p.noise_sigma, p.noise_seed));
    Ok(clip01(dct_quantize(&c, p.quality)))
}

/// Replays a recorded degradation.
pub fn replay(clip: &VideoClip, record: &DegradationRecord) -> Result<VideoClip> {
    if record.input_size != [clip.height, clip.width] {
        return Err(Error::Shape(format!(
            "record expects {:?} input, clip is {}x{}",
            record.input_size, clip.height, clip.width
        )));
    }
    let mut c = clip.clone();
    for p in &record.orders {
        c = degrade_order(&c, p)?;
    }
    let [h, w] = record.output_size;
    Ok(clip01(resize(&c, h, w, Filter::Bilinear)?))
}

/// Samples both orders from the config seed and degrades the clip.
pub fn degrade_two_order(
    clip: &VideoClip,
    cfg: &DegradationConfig,
) -> Result<(VideoClip, DegradationRecord)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let orders = vec![cfg.first.sample(&mut rng), cfg.second.sample(&mut rng)];
    let record = DegradationRecord {
        orders,
        output_scale: cfg.output_scale,
        input_size: [clip.height, clip.width],
        output_size: [
            scaled_extent(clip.height, cfg.output_scale),
            scaled_extent(clip.width, cfg.output_scale),
        ],
    };
    let lr = replay(clip, &record)?;
    Ok((lr, record))
}
