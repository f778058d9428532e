//! Full-reference quality (PSNR, SSIM), flow-based warping error and the
//! row-over-time temporal profile.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resample::sample_bilinear;
use crate::synth::FlowField;
use crate::video::VideoClip;

/// Per-frame PSNR ceiling used for identical frames.
pub const PSNR_CAP_DB: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Psnr {
    /// Mean of the per-frame values, each capped at [`PSNR_CAP_DB`].
    pub db: f64,
    /// Every frame matched exactly.
    pub infinite: bool,
    pub per_frame: Vec<f64>,
}

fn frame_mse(a: &VideoClip, b: &VideoClip, t: usize) -> f64 {
    let (fa, fb) = (a.frame(t), b.frame(t));
    fa.iter()
        .zip(fb)
        .map(|(x, y)| (f64::from(*x) - f64::from(*y)).powi(2))
        .sum::<f64>()
        / fa.len() as f64
}

pub fn psnr(a: &VideoClip, b: &VideoClip) -> Result<Psnr> {
    a.same_shape(b)?;
    let per_frame: Vec<f64> = (0..a.frames)
        .map(|t| {
            let mse = frame_mse(a, b, t);
            if mse == 0.0 {
                PSNR_CAP_DB
            } else {
                (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
            }
        })
        .collect();
    let infinite = (0..a.frames).all(|t| frame_mse(a, b, t) == 0.0);
    Ok(Psnr {
        db: per_frame.iter().sum::<f64>() / a.frames as f64,
        infinite,
        per_frame,
    })
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn ssim_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    let g: Vec<f64> = g.into_iter().map(|v| v / s).collect();
    g.iter().flat_map(|a| g.iter().map(move |b| a * b)).collect()
}

/// Mean SSIM over valid window positions of one pair of luma planes.
pub fn ssim_plane(x: &[f64], y: &[f64], h: usize, w: usize) -> Result<f64> {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "SSIM needs frames of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let win = ssim_window();
    let n = SSIM_WINDOW;
    let mut total = 0.0;
    let mut count = 0usize;
    for oy in 0..=h - n {
        for ox in 0..=w - n {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let k = win[i * n + j];
                    let (a, b) = (x[(oy + i) * w + ox + j], y[(oy + i) * w + ox + j]);
                    mx += k * a;
                    my += k * b;
                    sxx += k * a * a;
                    syy += k * b * b;
                    sxy += k * a * b;
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cxy = sxy - mx * my;
            let num = (2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2);
            let den = (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Mean SSIM of BT.601 luma, averaged over frames.
pub fn ssim(a: &VideoClip, b: &VideoClip) -> Result<f64> {
    a.same_shape(b)?;
    let mut total = 0.0;
    for t in 0..a.frames {
        total += ssim_plane(&a.luma(t)?, &b.luma(t)?, a.height, a.width)?;
    }
    Ok(total / a.frames as f64)
}

/// How samples that come from outside the frame are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarpBoundary {
    /// Content wraps around; no pixel is excluded.
    Periodic,
    /// Pixels whose source lies outside the frame are excluded.
    #[default]
    Masked,
}

/// Scale applied to the mean squared warp residual in reports.
pub const WARP_ERROR_SCALE: f64 = 1e3;

/// Mean over consecutive pairs of the masked MSE between frame `t + 1` and
/// frame `t` warped forward by `flows[t]`, times 10³.
pub fn warping_error(clip: &VideoClip, flows: &[FlowField], boundary: WarpBoundary) -> Result<f64> {
    if flows.len() + 1 != clip.frames {
        return Err(Error::invalid(format!(
            "{} flow fields for a {}-frame clip, expected {}",
            flows.len(),
            clip.frames,
            clip.frames.saturating_sub(1)
        )));
    }
    if clip.frames < 2 {
        return Ok(0.0);
    }
    let periodic = boundary == WarpBoundary::Periodic;
    let mut total = 0.0;
    for (t, flow) in flows.iter().enumerate() {
        if (flow.height, flow.width) != (clip.height, clip.width) {
            return Err(Error::Shape(format!(
                "flow {t} is {}x{}, frames are {}x{}",
                flow.height, flow.width, clip.height, clip.width
            )));
        }
        let (mut sse, mut n) = (0.0, 0usize);
        for y in 0..clip.height {
            for x in 0..clip.width {
                let (u, v) = flow.at(y, x);
                for c in 0..clip.channels {
                    let Some(w) = sample_bilinear(clip, t, c, y as f64 - v, x as f64 - u, periodic) else {
                        continue;
                    };
                    sse += (w - f64::from(clip.at(t + 1, y, x, c))).powi(2);
                    n += 1;
                }
            }
        }
        if n > 0 {
            total += sse / n as f64;
        }
    }
    Ok(WARP_ERROR_SCALE * total / flows.len() as f64)
}

/// Stacks row `row` of every frame into a single `T × W × C` image.
pub fn temporal_profile(clip: &VideoClip, row: usize) -> Result<VideoClip> {
    if row >= clip.height {
        return Err(Error::invalid(format!("row {row} outside {} rows", clip.height)));
    }
    let mut data = Vec::with_capacity(clip.frames * clip.width * clip.channels);
    let n = clip.width * clip.channels;
    for t in 0..clip.frames {
        data.extend_from_slice(&clip.frame(t)[row * n..(row + 1) * n]);
    }
    Ok(VideoClip::new(1, clip.frames, clip.width, clip.channels, data)?.with_fps(clip.fps))
}

/// Approximate integer global translation from `a` to `b` by exhaustive
/// periodic block matching over `[-max_disp, max_disp]²`.
pub fn estimate_translation(a: &VideoClip, ta: usize, b: &VideoClip, tb: usize, max_disp: usize) -> Result<(i64, i64)> {
    if (a.height, a.width, a.channels) != (b.height, b.width, b.channels) {
        return Err(Error::Shape("frames differ in size".into()));
    }
    let (h, w, c) = (a.height as i64, a.width as i64, a.channels);
    let m = max_disp as i64;
    let mut best = (f64::INFINITY, 0, 0);
    for v in -m..=m {
        for u in -m..=m {
            let mut sse = 0.0;
            for y in 0..h {
                for x in 0..w {
                    let (ys, xs) = ((y - v).rem_euclid(h) as usize, (x - u).rem_euclid(w) as usize);
                    for ch in 0..c {
                        let d = f64::from(b.at(tb, y as usize, x as usize, ch)) - f64::from(a.at(ta, ys, xs, ch));
                        sse += d * d;
                    }
                }
            }
            if sse < best.0 {
                best = (sse, u, v);
            }
        }
    }
    Ok((best.1, best.2))
}

/// Constant flow fields from [`estimate_translation`], for clips without known motion.
pub fn estimate_flows(clip: &VideoClip, max_disp: usize) -> Result<Vec<FlowField>> {
    (0..clip.frames.saturating_sub(1))
        .map(|t| {
            let (u, v) = estimate_translation(clip, t, clip, t + 1, max_disp)?;
            Ok(FlowField::constant(clip.height, clip.width, u as f64, v as f64))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub clip_id: String,
    pub method: String,
    pub psnr: Psnr,
    pub ssim: f64,
    pub e_warp: f64,
}

impl MetricRecord {
    pub const CSV_HEADER: &'static str = "clip_id,method,psnr,ssim,e_warp";

    pub fn evaluate(
        clip_id: impl Into<String>,
        method: impl Into<String>,
        output: &VideoClip,
        reference: &VideoClip,
        flows: &[FlowField],
        boundary: WarpBoundary,
    ) -> Result<Self> {
        Ok(Self {
            clip_id: clip_id.into(),
            method: method.into(),
            psnr: psnr(output, reference)?,
            ssim: ssim(output, reference)?,
            e_warp: warping_error(output, flows, boundary)?,
        })
    }

    pub fn psnr_field(&self) -> String {
        if self.psnr.infinite {
            "inf".into()
        } else {
            format!("{:.6}", self.psnr.db)
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6}",
            self.clip_id,
            self.method,
            self.psnr_field(),
            self.ssim,
            self.e_warp
        )
    }
}

/// Header plus one row per record.
pub fn records_csv(records: &[MetricRecord]) -> String {
    let mut s = String::from(MetricRecord::CSV_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(s, "{}", r.csv_row());
    }
    s
}
