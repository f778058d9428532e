//! Procedural clips with exactly known motion. Every kind samples a
//! continuous texture that is periodic over the frame, so frame `t` is frame
//! 0 translated by `t · velocity` with wraparound and the flow is exact.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::video::VideoClip;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureKind {
    TranslatingSinusoid,
    TranslatingChecker,
    TranslatingNoiseTexture,
    Static,
}

impl TextureKind {
    pub const ALL: [TextureKind; 4] = [
        TextureKind::TranslatingSinusoid,
        TextureKind::TranslatingChecker,
        TextureKind::TranslatingNoiseTexture,
        TextureKind::Static,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TextureKind::TranslatingSinusoid => "translating_sinusoid",
            TextureKind::TranslatingChecker => "translating_checker",
            TextureKind::TranslatingNoiseTexture => "translating_noise_texture",
            TextureKind::Static => "static",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Highest spatial frequency in cycles per frame width/height.
    pub frequency: u32,
    /// Displacement per frame in pixels, `[u (x), v (y)]`.
    pub velocity: [f64; 2],
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            frames: 16,
            height: 64,
            width: 64,
            channels: 3,
            frequency: 4,
            velocity: [1.0, 0.0],
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::invalid("clip dimensions must be positive"));
        }
        if self.frequency == 0 {
            return Err(Error::invalid("spatial frequency must be at least 1"));
        }
        let [u, v] = self.velocity;
        if !u.is_finite() || !v.is_finite() {
            return Err(Error::invalid("velocity must be finite"));
        }
        if u.abs() > self.width as f64 / 4.0 || v.abs() > self.height as f64 / 4.0 {
            return Err(Error::invalid(format!(
                "per-frame displacement ({u}, {v}) exceeds a quarter of the {}x{} frame",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Displacement of each pixel from one frame to the next, stored `H × W × 2`
/// as `(u, v)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FlowField {
    pub fn constant(height: usize, width: usize, u: f64, v: f64) -> Self {
        let data = (0..height * width).flat_map(|_| [u as f32, v as f32]).collect();
        Self {
            height,
            width,
            data,
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::constant(height, width, 0.0, 0.0)
    }

    pub fn at(&self, y: usize, x: usize) -> (f64, f64) {
        let i = (y * self.width + x) * 2;
        (f64::from(self.data[i]), f64::from(self.data[i + 1]))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_constant(&self) -> bool {
        self.data.chunks_exact(2).all(|p| p == &self.data[..2])
    }

    pub fn to_tensor(&self) -> crate::Tensor<f32> {
        crate::Tensor::new(vec![self.height, self.width, 2], self.data.clone())
            .expect("flow length matches its shape")
    }
}

/// One plane wave `a · sin(2π(fx·x/W + fy·y/H) + phase)`.
#[derive(Debug, Clone, Copy)]
struct Wave {
    fx: f64,
    fy: f64,
    amp: f64,
    phase: f64,
}

enum Texture {
    Waves(Vec<Vec<Wave>>),
    Checker { period_x: f64, period_y: f64 },
}

const CHECKER_SUPERSAMPLE: usize = 4;

impl Texture {
    fn build(kind: TextureKind, p: &SynthParams, seed: u64) -> Self {
        let f = f64::from(p.frequency);
        match kind {
            TextureKind::TranslatingChecker => Texture::Checker {
                period_x: p.width as f64 / f,
                period_y: p.height as f64 / f,
            },
            TextureKind::TranslatingNoiseTexture => {
                // Random integer-frequency plane waves: smooth, periodic noise.
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let n = 12;
                Texture::Waves(
                    (0..p.channels)
                        .map(|_| {
                            (0..n)
                                .map(|_| Wave {
                                    fx: f64::from(rng.gen_range(-(p.frequency as i32)..=p.frequency as i32)),
                                    fy: f64::from(rng.gen_range(0..=p.frequency as i32)),
                                    amp: rng.gen_range(0.2..1.0) / n as f64,
                                    phase: rng.gen_range(0.0..TAU),
                                })
                                .collect()
                        })
                        .collect(),
                )
            }
            TextureKind::TranslatingSinusoid | TextureKind::Static => Texture::Waves(
                (0..p.channels)
                    .map(|c| {
                        let ph = c as f64 * TAU / 3.0;
                        vec![
                            Wave { fx: f, fy: 0.0, amp: 0.5, phase: ph },
                            Wave { fx: 0.0, fy: f, amp: 0.3, phase: 2.0 * ph + 0.5 },
                            Wave { fx: 1.0, fy: 1.0, amp: 0.2, phase: ph + 1.0 },
                        ]
                    })
                    .collect(),
            ),
        }
    }

    /// Value in `[0, 1]` at continuous pixel coordinates.
    fn eval(&self, c: usize, y: f64, x: f64, p: &SynthParams) -> f64 {
        match self {
            Texture::Waves(per_channel) => {
                let s: f64 = per_channel[c]
                    .iter()
                    .map(|w| {
                        w.amp
                            * (TAU * (w.fx * x / p.width as f64 + w.fy * y / p.height as f64) + w.phase).sin()
                    })
                    .sum();
                0.5 + 0.4 * s
            }
            Texture::Checker { period_x, period_y } => {
                let n = CHECKER_SUPERSAMPLE;
                let mut acc = 0.0;
                for sy in 0..n {
                    for sx in 0..n {
                        let yy = y + (sy as f64 + 0.5) / n as f64 - 0.5;
                        let xx = x + (sx as f64 + 0.5) / n as f64 - 0.5;
                        let cx = (2.0 * xx / period_x).floor() as i64;
                        let cy = (2.0 * yy / period_y).floor() as i64;
                        acc += if (cx + cy).rem_euclid(2) == 0 { 1.0 } else { 0.0 };
                    }
                }
                let v = acc / (n * n) as f64;
                0.15 + 0.7 * if c % 2 == 0 { v } else { 1.0 - v }
            }
        }
    }
}

/// Renders a clip and the `frames - 1` flow fields between consecutive frames.
pub fn generate_clip(
    kind: TextureKind,
    params: &SynthParams,
    seed: u64,
) -> Result<(VideoClip, Vec<FlowField>)> {
    params.validate()?;
    let p = *params;
    let [u, v] = if kind == TextureKind::Static { [0.0, 0.0] } else { p.velocity };
    let tex = Texture::build(kind, &p, seed);
    let clip = VideoClip::from_fn(p.frames, p.height, p.width, p.channels, |t, y, x, c| {
        let (sy, sx) = (y as f64 - v * t as f64, x as f64 - u * t as f64);
        tex.eval(c, sy, sx, &p) as f32
    })?;
    let flows = (1..p.frames)
        .map(|_| FlowField::constant(p.height, p.width, u, v))
        .collect();
    Ok((clip, flows))
}
