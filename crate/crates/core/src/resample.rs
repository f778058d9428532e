//! Spatial filtering and resampling of clips: Gaussian blur, half-pixel
//! bilinear and bicubic resize, and point sampling for warps.

use crate::error::{Error, Result};
use crate::video::VideoClip;

/// Normalized 1D Gaussian taps with radius `⌈3σ⌉`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let taps: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|v| v / total).collect()
}

fn reflect(i: isize, n: usize) -> usize {
    // Whole-sample symmetric reflection: -1 -> 1, n -> n - 2.
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Separable isotropic Gaussian blur per frame and channel. `sigma <= 0` is the identity.
pub fn gaussian_blur(clip: &VideoClip, sigma: f64) -> Result<VideoClip> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::invalid(format!("blur sigma {sigma} must be finite and >= 0")));
    }
    if sigma == 0.0 {
        return Ok(clip.clone());
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (h, w, c) = (clip.height, clip.width, clip.channels);
    let mut out = clip.clone();
    let mut tmp = vec![0f64; h * w * c];
    for t in 0..clip.frames {
        let src = clip.frame(t);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let mut acc = 0.0;
                    for (j, kv) in k.iter().enumerate() {
                        let xs = reflect(x as isize + j as isize - r, w);
                        acc += kv * f64::from(src[(y * w + xs) * c + ch]);
                    }
                    tmp[(y * w + x) * c + ch] = acc;
                }
            }
        }
        let dst = out.frame_mut(t);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let mut acc = 0.0;
                    for (j, kv) in k.iter().enumerate() {
                        let ys = reflect(y as isize + j as isize - r, h);
                        acc += kv * tmp[(ys * w + x) * c + ch];
                    }
                    dst[(y * w + x) * c + ch] = acc as f32;
                }
            }
        }
    }
    Ok(out)
}

/// Output extent for a scale factor, at least one pixel.
pub fn scaled_extent(n: usize, scale: f64) -> usize {
    ((n as f64 * scale).round() as usize).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Filter {
    Bilinear,
    /// Keys cubic convolution with `a = -0.5`.
    Bicubic,
}

fn cubic(x: f64) -> f64 {
    let a = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Source taps `(index, weight)` for each output position under half-pixel alignment.
fn taps(n_in: usize, n_out: usize, filter: Filter) -> Vec<Vec<(usize, f64)>> {
    let ratio = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let s = (o as f64 + 0.5) * ratio - 0.5;
            let base = s.floor();
            let f = s - base;
            let clampi = |i: isize| i.clamp(0, n_in as isize - 1) as usize;
            match filter {
                Filter::Bilinear => vec![
                    (clampi(base as isize), 1.0 - f),
                    (clampi(base as isize + 1), f),
                ],
                Filter::Bicubic => (-1..=2)
                    .map(|d| (clampi(base as isize + d), cubic(f - d as f64)))
                    .collect(),
            }
        })
        .collect()
}

/// Resizes every frame to `height × width`. Same-size resizes are exact copies.
pub fn resize(clip: &VideoClip, height: usize, width: usize, filter: Filter) -> Result<VideoClip> {
    if height == 0 || width == 0 {
        return Err(Error::invalid("resize target must be nonempty"));
    }
    if height == clip.height && width == clip.width {
        return Ok(clip.clone());
    }
    let ty = taps(clip.height, height, filter);
    let tx = taps(clip.width, width, filter);
    let c = clip.channels;
    let mut out = VideoClip::new(clip.frames, height, width, c, vec![0.0; clip.frames * height * width * c])?
        .with_fps(clip.fps);
    for t in 0..clip.frames {
        let src = clip.frame(t);
        let dst = out.frame_mut(t);
        for (y, wy) in ty.iter().enumerate() {
            for (x, wx) in tx.iter().enumerate() {
                for ch in 0..c {
                    let mut acc = 0.0;
                    for &(sy, ay) in wy {
                        for &(sx, ax) in wx {
                            acc += ay * ax * f64::from(src[(sy * clip.width + sx) * c + ch]);
                        }
                    }
                    dst[(y * width + x) * c + ch] = acc as f32;
                }
            }
        }
    }
    Ok(out)
}

/// Bilinear sample of one frame channel at real pixel coordinates. With
/// `periodic`, coordinates wrap; otherwise `None` outside `[0, n - 1]`.
pub fn sample_bilinear(
    clip: &VideoClip,
    t: usize,
    ch: usize,
    y: f64,
    x: f64,
    periodic: bool,
) -> Option<f64> {
    let (h, w) = (clip.height as f64, clip.width as f64);
    let (y, x) = if periodic {
        (y.rem_euclid(h), x.rem_euclid(w))
    } else {
        const SLACK: f64 = 1e-9;
        if y < -SLACK || x < -SLACK || y > h - 1.0 + SLACK || x > w - 1.0 + SLACK {
            return None;
        }
        (y.clamp(0.0, h - 1.0), x.clamp(0.0, w - 1.0))
    };
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let wrap = |i: f64, n: usize| {
        let i = i as usize;
        if i >= n {
            if periodic { i % n } else { n - 1 }
        } else {
            i
        }
    };
    let (ya, yb) = (wrap(y0, clip.height), wrap(y0 + 1.0, clip.height));
    let (xa, xb) = (wrap(x0, clip.width), wrap(x0 + 1.0, clip.width));
    let v = |yy: usize, xx: usize| f64::from(clip.at(t, yy, xx, ch));
    let top = v(ya, xa) * (1.0 - fx) + if fx > 0.0 { v(ya, xb) * fx } else { 0.0 };
    let bot = if fy > 0.0 {
        v(yb, xa) * (1.0 - fx) + if fx > 0.0 { v(yb, xb) * fx } else { 0.0 }
    } else {
        0.0
    };
    Some(top * (1.0 - fy) + bot * fy)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texture(h: usize, w: usize) -> VideoClip {
        VideoClip::from_fn(2, h, w, 2, |t, y, x, c| {
            (0.5 + 0.3 * ((x as f32 * 0.7 + y as f32 * 0.3 + t as f32 + c as f32).sin())) as f32
        })
        .unwrap()
    }

    #[test]
    fn kernel_radius_and_normalization() {
        let k = gaussian_kernel(1.0);
        assert_eq!(k.len(), 7);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(gaussian_kernel(0.4).len(), 5);
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(-7, 5), 1);
        assert_eq!(reflect(3, 1), 0);
    }

    #[test]
    fn blur_identity_and_constant() {
        let c = texture(8, 8);
        assert_eq!(gaussian_blur(&c, 0.0).unwrap(), c);
        let flat = VideoClip::new(1, 6, 6, 1, vec![0.25; 36]).unwrap();
        for v in gaussian_blur(&flat, 2.0).unwrap().data {
            assert!((v - 0.25).abs() < 1e-6);
        }
        assert!(gaussian_blur(&c, -1.0).is_err());
    }

    #[test]
    fn blur_matches_direct_2d_oracle() {
        let c = texture(9, 7);
        let sigma = 0.8;
        let out = gaussian_blur(&c, sigma).unwrap();
        let k = gaussian_kernel(sigma);
        let r = (k.len() / 2) as isize;
        for (y, x, ch) in [(0usize, 0usize, 0usize), (4, 3, 1), (8, 6, 0)] {
            let mut acc = 0.0;
            for (i, ky) in k.iter().enumerate() {
                for (j, kx) in k.iter().enumerate() {
                    let yy = reflect(y as isize + i as isize - r, 9);
                    let xx = reflect(x as isize + j as isize - r, 7);
                    acc += ky * kx * f64::from(c.at(1, yy, xx, ch));
                }
            }
            assert!((f64::from(out.at(1, y, x, ch)) - acc).abs() < 1e-6);
        }
    }

    #[test]
    fn resize_examples() {
        let c = texture(8, 8);
        assert_eq!(resize(&c, 8, 8, Filter::Bilinear).unwrap(), c);
        let half = resize(&c, 4, 4, Filter::Bilinear).unwrap();
        // Halving with half-pixel centers averages each 2x2 block.
        let want = (c.at(0, 2, 4, 1) + c.at(0, 2, 5, 1) + c.at(0, 3, 4, 1) + c.at(0, 3, 5, 1)) / 4.0;
        assert!((half.at(0, 1, 2, 1) - want).abs() < 1e-6);
        let flat = VideoClip::new(1, 4, 4, 1, vec![0.6; 16]).unwrap();
        for f in [Filter::Bilinear, Filter::Bicubic] {
            for v in resize(&flat, 7, 9, f).unwrap().data {
                assert!((v - 0.6).abs() < 1e-6);
            }
        }
        assert_eq!(scaled_extent(64, 0.25), 16);
        assert_eq!(scaled_extent(3, 0.1), 1);
    }

    #[test]
    fn bicubic_reproduces_linear_ramps_in_the_interior() {
        let c = VideoClip::from_fn(1, 8, 8, 1, |_, _, x, _| x as f32 / 8.0).unwrap();
        let up = resize(&c, 16, 16, Filter::Bicubic).unwrap();
        for x in 4..12 {
            let src = (x as f64 + 0.5) / 2.0 - 0.5;
            assert!((f64::from(up.at(0, 5, x, 0)) - src / 8.0).abs() < 1e-6);
        }
    }

    #[test]
    fn sampling_modes() {
        let c = texture(4, 5);
        assert_eq!(sample_bilinear(&c, 1, 0, 2.0, 3.0, false), Some(f64::from(c.at(1, 2, 3, 0))));
        assert_eq!(sample_bilinear(&c, 0, 0, 0.0, -0.5, false), None);
        let wrapped = sample_bilinear(&c, 0, 1, 0.0, -1.0, true).unwrap();
        assert_eq!(wrapped, f64::from(c.at(0, 0, 4, 1)));
        let mid = sample_bilinear(&c, 0, 0, 1.5, 2.0, false).unwrap();
        let want = 0.5 * (f64::from(c.at(0, 1, 2, 0)) + f64::from(c.at(0, 2, 2, 0)));
        assert!((mid - want).abs() < 1e-12);
        // Between the last and first column under wraparound.
        let seam = sample_bilinear(&c, 0, 0, 0.0, 4.5, true).unwrap();
        let want = 0.5 * (f64::from(c.at(0, 0, 4, 0)) + f64::from(c.at(0, 0, 0, 0)));
        assert!((seam - want).abs() < 1e-12);
    }
}
