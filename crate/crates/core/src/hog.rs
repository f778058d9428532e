//! Differentiable histogram-of-oriented-gradients descriptor over latent
//! channels and the descriptor-matching loss.
//!
//! Pipeline per `(batch, channel, time)` slice:
//! central-difference gradients, unsigned orientation in `[0°, 180°)`,
//! magnitude `sqrt(gx² + gy² + δ) - sqrt(δ)`, linear vote split between the two nearest
//! bin centers `(k + 0.5) · bin_width` (bin 8 wraps to bin 0), sum over
//! `cell_size²` cells, then L2-Hys over overlapping `block_size²` blocks.
//!
//! Everything is recorded on an autodiff [`Graph`] so the loss is trainable.
//! Rows and columns beyond the last whole cell are ignored.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Unary};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Added under the magnitude square root; `sqrt(δ)` is subtracted afterwards so
/// a zero gradient still has exactly zero magnitude.
pub const MAGNITUDE_DELTA: f64 = 1e-12;
/// Squared epsilon in both L2-Hys normalizations; all-zero blocks stay zero.
pub const L2HYS_EPS_SQ: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HogConfig {
    pub bins: usize,
    pub cell_size: usize,
    pub block_size: usize,
    pub hys_clip: f64,
}

impl Default for HogConfig {
    fn default() -> Self {
        Self {
            bins: 9,
            cell_size: 4,
            block_size: 2,
            hys_clip: 0.2,
        }
    }
}

impl HogConfig {
    pub fn bin_width_deg(&self) -> f64 {
        180.0 / self.bins as f64
    }

    pub fn bin_center_deg(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.bin_width_deg()
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins == 0 {
            return Err(Error::invalid("HOG needs at least one bin"));
        }
        if self.cell_size < 2 || self.block_size < 1 {
            return Err(Error::invalid(format!(
                "HOG cell_size must be >= 2 and block_size >= 1, got {} and {}",
                self.cell_size, self.block_size
            )));
        }
        if !(self.hys_clip > 0.0 && self.hys_clip <= 1.0) {
            return Err(Error::invalid(format!(
                "HOG hys_clip must lie in (0, 1], got {}",
                self.hys_clip
            )));
        }
        Ok(())
    }

    /// Smallest admissible spatial extent.
    pub fn min_extent(&self) -> usize {
        (self.cell_size * self.block_size).max(3)
    }
}

/// Block-normalized descriptor, laid out `[bins * block², slices, blocks_h, blocks_w]`.
///
/// Along the first axis, entry `(dy * block_size + dx) * bins + k` holds bin `k`
/// of the cell at offset `(dy, dx)` inside the block.
#[derive(Debug, Clone, PartialEq)]
pub struct HogDescriptor<T: Element = f32> {
    pub features: Tensor<T>,
    pub config: HogConfig,
}

impl<T: Element> HogDescriptor<T> {
    pub fn num_slices(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn blocks(&self) -> (usize, usize) {
        (self.features.shape()[2], self.features.shape()[3])
    }

    pub fn block_vector(&self, slice: usize, by: usize, bx: usize) -> Vec<T> {
        let s = self.features.shape();
        let (n, bh, bw) = (s[1], s[2], s[3]);
        (0..s[0])
            .map(|f| self.features.data()[((f * n + slice) * bh + by) * bw + bx])
            .collect()
    }
}

fn slice_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    let r = shape.len();
    if r < 2 {
        return Err(Error::Shape(format!(
            "HOG input needs two spatial axes, got {shape:?}"
        )));
    }
    Ok((shape[..r - 2].iter().product(), shape[r - 2], shape[r - 1]))
}

/// Central differences in the interior, one-sided at the borders.
/// `gx` differentiates along width, `gy` along height.
pub fn spatial_gradients<T: Element>(x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, h, w) = slice_dims(x.shape())?;
    if h < 3 || w < 3 {
        return Err(Error::Shape(format!(
            "spatial gradients need at least 3x3, got {h}x{w}"
        )));
    }
    let half = T::lit(0.5);
    let d = x.data();
    let mut gx = Vec::with_capacity(d.len());
    let mut gy = Vec::with_capacity(d.len());
    for s in 0..n {
        let p = &d[s * h * w..(s + 1) * h * w];
        for i in 0..h {
            for j in 0..w {
                gx.push(match j {
                    0 => p[i * w + 1] - p[i * w],
                    _ if j == w - 1 => p[i * w + j] - p[i * w + j - 1],
                    _ => (p[i * w + j + 1] - p[i * w + j - 1]) * half,
                });
                gy.push(match i {
                    0 => p[w + j] - p[j],
                    _ if i == h - 1 => p[i * w + j] - p[(i - 1) * w + j],
                    _ => (p[(i + 1) * w + j] - p[(i - 1) * w + j]) * half,
                });
            }
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), gx)?,
        Tensor::new(x.shape().to_vec(), gy)?,
    ))
}

fn diff_along<T: Element>(g: &mut Graph<T>, x: NodeId, axis: usize) -> Result<NodeId> {
    let len = g.shape(x)[axis];
    let a = g.slice(x, axis, 2, len - 2)?;
    let b = g.slice(x, axis, 0, len - 2)?;
    let d = g.sub(a, b)?;
    let interior = g.scale(d, T::lit(0.5));
    let s1 = g.slice(x, axis, 1, 1)?;
    let s0 = g.slice(x, axis, 0, 1)?;
    let first = g.sub(s1, s0)?;
    let sl = g.slice(x, axis, len - 1, 1)?;
    let sp = g.slice(x, axis, len - 2, 1)?;
    let last = g.sub(sl, sp)?;
    g.concat(&[first, interior, last], axis)
}

/// Records `(gx, gy)` of a `[slices, H, W]` node.
pub fn gradient_nodes<T: Element>(g: &mut Graph<T>, x: NodeId) -> Result<(NodeId, NodeId)> {
    let gx = diff_along(g, x, 2)?;
    let gy = diff_along(g, x, 1)?;
    Ok((gx, gy))
}

fn check_extent(shape: &[usize], cfg: &HogConfig) -> Result<(usize, usize, usize)> {
    cfg.validate()?;
    let (n, h, w) = slice_dims(shape)?;
    let min = cfg.min_extent();
    if h < min || w < min {
        return Err(Error::Shape(format!(
            "HOG needs spatial size >= {min}x{min} for this config, got {h}x{w}"
        )));
    }
    Ok((n, h, w))
}

/// Records per-cell orientation histograms, shape `[bins, slices, cells_h, cells_w]`.
pub fn cell_histogram_nodes<T: Element>(
    g: &mut Graph<T>,
    x: NodeId,
    cfg: &HogConfig,
) -> Result<NodeId> {
    let (n, h, w) = check_extent(g.shape(x), cfg)?;
    let x = g.reshape(x, [n, h, w])?;
    let (gx, gy) = gradient_nodes(g, x)?;
    let gx2 = g.square(gx);
    let gy2 = g.square(gy);
    let r2 = g.add(gx2, gy2)?;
    let r2 = g.unary(r2, Unary::Offset(MAGNITUDE_DELTA));
    let mag = g.unary(r2, Unary::Sqrt);
    let mag = g.unary(mag, Unary::Offset(-MAGNITUDE_DELTA.sqrt()));
    let theta = g.atan2_unsigned(gy, gx)?;

    let width = PI / cfg.bins as f64;
    let mut votes = Vec::with_capacity(cfg.bins);
    for k in 0..cfg.bins {
        let share = g.unary(
            theta,
            Unary::Tent {
                center: (k as f64 + 0.5) * width,
                half_width: width,
                period: PI,
            },
        );
        let vote = g.mul(share, mag)?;
        votes.push(g.reshape(vote, [1, n, h, w])?);
    }
    let votes = g.concat(&votes, 0)?;
    let c = cfg.cell_size;
    g.conv2d(votes, Tensor::full(vec![c, c], T::one()), [c, c])
}

fn block_inverse_norm<T: Element>(
    g: &mut Graph<T>,
    energy: NodeId,
) -> NodeId {
    let e = g.unary(energy, Unary::Offset(L2HYS_EPS_SQ));
    let norm = g.unary(e, Unary::Sqrt);
    g.unary(norm, Unary::Recip)
}

/// Records the L2-Hys normalized block descriptor (see [`HogDescriptor`] for layout).
pub fn hog_descriptor_node<T: Element>(
    g: &mut Graph<T>,
    x: NodeId,
    cfg: &HogConfig,
) -> Result<NodeId> {
    let cells = cell_histogram_nodes(g, x, cfg)?;
    let cs = g.shape(cells).to_vec();
    let b = cfg.block_size;
    let (bh, bw) = (cs[2] + 1 - b, cs[3] + 1 - b);

    let sq = g.square(cells);
    let cell_energy = g.sum_axis(sq, 0)?;
    let block_energy = g.conv2d(cell_energy, Tensor::full(vec![b, b], T::one()), [1, 1])?;
    let inv = block_inverse_norm(g, block_energy);

    let mut clipped = Vec::with_capacity(b * b);
    for dy in 0..b {
        for dx in 0..b {
            let rows = g.slice(cells, 2, dy, bh)?;
            let part = g.slice(rows, 3, dx, bw)?;
            let normed = g.mul(part, inv)?;
            clipped.push(g.unary(normed, Unary::ClampMax(cfg.hys_clip)));
        }
    }
    let mut energy2: Option<NodeId> = None;
    for &p in &clipped {
        let sq = g.square(p);
        let e = g.sum_axis(sq, 0)?;
        energy2 = Some(match energy2 {
            Some(acc) => g.add(acc, e)?,
            None => e,
        });
    }
    let inv2 = block_inverse_norm(g, energy2.expect("block has cells"));
    let mut parts = Vec::with_capacity(clipped.len());
    for p in clipped {
        parts.push(g.mul(p, inv2)?);
    }
    g.concat(&parts, 0)
}

/// Records `mean((D(v) - D(target))²)`.
pub fn hog_loss_node<T: Element>(
    g: &mut Graph<T>,
    v_pred: NodeId,
    target: NodeId,
    cfg: &HogConfig,
) -> Result<NodeId> {
    if g.shape(v_pred) != g.shape(target) {
        return Err(Error::Shape(format!(
            "HOG loss operands {:?} vs {:?}",
            g.shape(v_pred),
            g.shape(target)
        )));
    }
    let dv = hog_descriptor_node(g, v_pred, cfg)?;
    let dt = hog_descriptor_node(g, target, cfg)?;
    let diff = g.sub(dv, dt)?;
    let sq = g.square(diff);
    Ok(g.mean(sq))
}

fn eval_single<T: Element>(
    x: &Tensor<T>,
    build: impl FnOnce(&mut Graph<T>, NodeId) -> Result<NodeId>,
) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let xn = g.constant("x", x.shape().to_vec())?;
    let out = build(&mut g, xn)?;
    let vals = g.forward_with(|name| (name == "x").then_some(x))?;
    Ok(vals.get(out).clone())
}

/// Cell histograms before block normalization, `[bins, slices, cells_h, cells_w]`.
pub fn cell_histograms<T: Element>(x: &Tensor<T>, cfg: &HogConfig) -> Result<Tensor<T>> {
    eval_single(x, |g, xn| cell_histogram_nodes(g, xn, cfg))
}

pub fn hog_descriptor<T: Element>(x: &Tensor<T>, cfg: &HogConfig) -> Result<HogDescriptor<T>> {
    let features = eval_single(x, |g, xn| hog_descriptor_node(g, xn, cfg))?;
    Ok(HogDescriptor {
        features,
        config: *cfg,
    })
}

pub fn hog_loss<T: Element>(
    v_pred: &Tensor<T>,
    x0: &Tensor<T>,
    eps: &Tensor<T>,
    cfg: &HogConfig,
) -> Result<T> {
    v_pred.ensure_same_shape(x0)?;
    v_pred.ensure_same_shape(eps)?;
    let target = eps.sub(x0)?;
    let shape = v_pred.shape().to_vec();
    let mut g = Graph::new();
    let v = g.constant("v", shape.clone())?;
    let t = g.constant("target", shape)?;
    let l = hog_loss_node(&mut g, v, t, cfg)?;
    let inputs = BTreeMap::from([("v".to_string(), v_pred.clone()), ("target".to_string(), target)]);
    g.forward(&inputs)?.get(l).item()
}

/// Distances of an input from the non-smooth points of the descriptor.
#[derive(Debug, Clone, Copy)]
pub struct HogSmoothness {
    /// Smallest angular distance (degrees) of any pixel orientation to a bin center.
    pub min_center_distance_deg: f64,
    /// Smallest gradient magnitude.
    pub min_magnitude: f64,
    /// Smallest `|entry - hys_clip|` over the first-pass normalized block entries.
    pub min_clip_distance: f64,
}

impl HogSmoothness {
    pub fn is_clear(&self, angle_deg: f64, magnitude: f64, clip: f64) -> bool {
        self.min_center_distance_deg >= angle_deg
            && self.min_magnitude >= magnitude
            && self.min_clip_distance >= clip
    }
}

/// Measures how far `x` sits from the descriptor's kinks (orientation at a bin
/// center, zero magnitude, block entry at the clip level).
pub fn smoothness(x: &Tensor<f64>, cfg: &HogConfig) -> Result<HogSmoothness> {
    check_extent(x.shape(), cfg)?;
    let (gx, gy) = spatial_gradients(x)?;
    let width = cfg.bin_width_deg();
    let mut min_center = f64::INFINITY;
    let mut min_mag = f64::INFINITY;
    for (&a, &b) in gx.data().iter().zip(gy.data()) {
        let mut th = b.atan2(a).to_degrees();
        if th < 0.0 {
            th += 180.0;
        }
        let off = (th - width / 2.0).rem_euclid(width);
        min_center = min_center.min(off.min(width - off));
        min_mag = min_mag.min((a * a + b * b).sqrt());
    }

    let cells = cell_histograms(x, cfg)?;
    let s = cells.shape().to_vec();
    let (bins, n, ch, cw) = (s[0], s[1], s[2], s[3]);
    let bsz = cfg.block_size;
    let at = |k: usize, i: usize, y: usize, xx: usize| cells.data()[((k * n + i) * ch + y) * cw + xx];
    let mut min_clip = f64::INFINITY;
    for i in 0..n {
        for by in 0..=ch - bsz {
            for bx in 0..=cw - bsz {
                let mut e = 0.0;
                for dy in 0..bsz {
                    for dx in 0..bsz {
                        for k in 0..bins {
                            e += at(k, i, by + dy, bx + dx).powi(2);
                        }
                    }
                }
                let inv = 1.0 / (e + L2HYS_EPS_SQ).sqrt();
                for dy in 0..bsz {
                    for dx in 0..bsz {
                        for k in 0..bins {
                            let v = at(k, i, by + dy, bx + dx) * inv;
                            min_clip = min_clip.min((v - cfg.hys_clip).abs());
                        }
                    }
                }
            }
        }
    }
    Ok(HogSmoothness {
        min_center_distance_deg: min_center,
        min_magnitude: min_mag,
        min_clip_distance: min_clip,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, GradCheckOptions};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ramp(h: usize, w: usize, f: impl Fn(f64, f64) -> f64) -> Tensor<f64> {
        Tensor::from_fn(vec![1, 1, 1, h, w], |i| f((i / w) as f64, (i % w) as f64))
    }

    /// Brute-force voting: for every pixel, split its magnitude between the
    /// two nearest bin centers by explicit angular distance.
    fn oracle_cells(x: &Tensor<f64>, cfg: &HogConfig) -> Vec<Vec<Vec<[f64; 9]>>> {
        let (n, h, w) = slice_dims(x.shape()).unwrap();
        let (gx, gy) = spatial_gradients(x).unwrap();
        let c = cfg.cell_size;
        let mut out = vec![vec![vec![[0.0; 9]; w / c]; h / c]; n];
        for s in 0..n {
            for i in 0..(h / c) * c {
                for j in 0..(w / c) * c {
                    let idx = (s * h + i) * w + j;
                    let (a, b) = (gx.data()[idx], gy.data()[idx]);
                    let m = (a * a + b * b + MAGNITUDE_DELTA).sqrt() - MAGNITUDE_DELTA.sqrt();
                    let mut th = b.atan2(a).to_degrees();
                    if th < 0.0 {
                        th += 180.0;
                    }
                    if th >= 180.0 {
                        th -= 180.0;
                    }
                    for k in 0..9 {
                        let center = 10.0 + 20.0 * k as f64;
                        let mut d = (th - center).abs();
                        d = d.min(180.0 - d);
                        if d < 20.0 {
                            out[s][i / c][j / c][k] += m * (1.0 - d / 20.0);
                        }
                    }
                }
            }
        }
        out
    }

    fn l2hys_oracle(v: &[f64], clip: f64) -> Vec<f64> {
        let n1 = (v.iter().map(|x| x * x).sum::<f64>() + L2HYS_EPS_SQ).sqrt();
        let c: Vec<f64> = v.iter().map(|x| (x / n1).min(clip)).collect();
        let n2 = (c.iter().map(|x| x * x).sum::<f64>() + L2HYS_EPS_SQ).sqrt();
        c.iter().map(|x| x / n2).collect()
    }

    /// Ramp at a mid-bin orientation per channel plus small noise; orientations
    /// stay several degrees from any bin center.
    fn smooth_input(shape: &[usize], seed: u64, cfg: &HogConfig) -> Tensor<f64> {
        for attempt in 0..200u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 1000 + attempt);
            let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
            let plane = h * w;
            let x = Tensor::from_fn(shape.to_vec(), |i| {
                let s = i / plane;
                let angle = [40.0f64, 120.0, 80.0, 160.0][s % 4].to_radians();
                let (y, xx) = ((i % plane / w) as f64, (i % w) as f64);
                angle.sin() * y + angle.cos() * xx
            });
            let noise = Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-0.03..0.03));
            let x = x.add(&noise).unwrap();
            let sm = smoothness(&x, cfg).unwrap();
            if sm.is_clear(1.0, 0.1, 0.01) {
                return x;
            }
        }
        panic!("no smooth input found");
    }

    #[test]
    fn config_validation() {
        assert!(HogConfig::default().validate().is_ok());
        assert_eq!(HogConfig::default().bin_width_deg() * 9.0, 180.0);
        for bad in [
            HogConfig { cell_size: 1, ..Default::default() },
            HogConfig { block_size: 0, ..Default::default() },
            HogConfig { hys_clip: 0.0, ..Default::default() },
            HogConfig { hys_clip: 1.5, ..Default::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn gradients_of_constant_and_ramp() {
        let c = Tensor::<f64>::full(vec![4, 5], 2.5);
        let (gx, gy) = spatial_gradients(&c).unwrap();
        assert!(gx.data().iter().chain(gy.data()).all(|&v| v == 0.0));

        let r = Tensor::<f64>::from_fn(vec![4, 5], |i| (i % 5) as f64);
        let (gx, gy) = spatial_gradients(&r).unwrap();
        assert!(gx.data().iter().all(|&v| v == 1.0));
        assert!(gy.data().iter().all(|&v| v == 0.0));

        assert!(spatial_gradients(&Tensor::<f64>::zeros(vec![2, 5])).is_err());
    }

    #[test]
    fn gradients_match_scalar_oracle_and_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::<f64>::from_fn(vec![1, 5, 5], |_| rng.gen_range(-1.0..1.0));
        let (gx, gy) = spatial_gradients(&x).unwrap();
        let p = |i: usize, j: usize| x.data()[i * 5 + j];
        for i in 0..5 {
            for j in 0..5 {
                let ex = if j == 0 {
                    p(i, 1) - p(i, 0)
                } else if j == 4 {
                    p(i, 4) - p(i, 3)
                } else {
                    (p(i, j + 1) - p(i, j - 1)) * 0.5
                };
                let ey = if i == 0 {
                    p(1, j) - p(0, j)
                } else if i == 4 {
                    p(4, j) - p(3, j)
                } else {
                    (p(i + 1, j) - p(i - 1, j)) * 0.5
                };
                assert_eq!(gx.data()[i * 5 + j], ex);
                assert_eq!(gy.data()[i * 5 + j], ey);
            }
        }
        let mut g = Graph::<f64>::new();
        let xn = g.constant("x", [1, 5, 5]).unwrap();
        let (nx, ny) = gradient_nodes(&mut g, xn).unwrap();
        let vals = g.forward_with(|_| Some(&x)).unwrap();
        assert_eq!(vals.get(nx), &gx);
        assert_eq!(vals.get(ny), &gy);
    }

    #[test]
    fn constant_slice_gives_zero_descriptor() {
        let x = Tensor::<f64>::full(vec![1, 2, 1, 8, 8], 0.7);
        let d = hog_descriptor(&x, &HogConfig::default()).unwrap();
        assert!(d.features.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vertical_ramp_lands_in_bin_four() {
        let cfg = HogConfig::default();
        let x = ramp(8, 8, |h, _| h);
        let cells = cell_histograms(&x, &cfg).unwrap();
        let oracle = oracle_cells(&x, &cfg);
        let s = cells.shape().to_vec();
        for k in 0..9 {
            for cy in 0..s[2] {
                for cx in 0..s[3] {
                    let v = cells.data()[(k * s[2] + cy) * s[3] + cx];
                    assert!((v - oracle[0][cy][cx][k]).abs() < 1e-12);
                    if k != 4 {
                        assert_eq!(v, 0.0);
                    } else {
                        assert!(v > 15.9);
                    }
                }
            }
        }
        let d = hog_descriptor(&x, &cfg).unwrap();
        let block = d.block_vector(0, 0, 0);
        let norm = block.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        for (f, v) in block.iter().enumerate() {
            if f % 9 == 4 {
                assert!((v - 0.5).abs() < 1e-6);
            } else {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn diagonal_ramp_splits_between_bins_one_and_two() {
        let cfg = HogConfig::default();
        let x = ramp(8, 8, |h, w| h + w);
        let cells = cell_histograms(&x, &cfg).unwrap();
        let s = cells.shape().to_vec();
        let plane = s[2] * s[3];
        let bin = |k: usize| cells.data()[k * plane];
        let total: f64 = (0..9).map(bin).sum();
        assert!((bin(1) / total - 0.25).abs() < 1e-9);
        assert!((bin(2) / total - 0.75).abs() < 1e-9);
        let oracle = oracle_cells(&x, &cfg);
        assert!((bin(1) - oracle[0][0][0][1]).abs() < 1e-12);
        assert!((bin(2) - oracle[0][0][0][2]).abs() < 1e-12);
    }

    #[test]
    fn rotation_shifts_orientation_by_ninety_degrees() {
        let cfg = HogConfig::default();
        // theta = 45 deg -> bins 1/2 at 0.25/0.75; rotated content has theta = 135 deg.
        let x = ramp(8, 8, |h, w| h + w);
        let rotated = ramp(8, 8, |h, w| -h + w);
        let (a, b) = (cell_histograms(&x, &cfg).unwrap(), cell_histograms(&rotated, &cfg).unwrap());
        let plane = 4;
        let mass = |t: &Tensor<f64>, k: usize| t.data()[k * plane];
        let total: f64 = (0..9).map(|k| mass(&b, k)).sum();
        assert!((mass(&b, 6) / total - 0.75).abs() < 1e-9);
        assert!((mass(&b, 7) / total - 0.25).abs() < 1e-9);
        assert!((mass(&a, 2) - mass(&b, 6)).abs() < 1e-9);
        assert!((mass(&a, 1) - mass(&b, 7)).abs() < 1e-9);
    }

    #[test]
    fn descriptor_matches_brute_force_pipeline() {
        let cfg = HogConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::<f64>::from_fn(vec![1, 1, 1, 12, 8], |_| rng.gen_range(-1.0..1.0));
        let d = hog_descriptor(&x, &cfg).unwrap();
        let cells = oracle_cells(&x, &cfg);
        assert_eq!(d.blocks(), (2, 1));
        for by in 0..2 {
            let mut v = Vec::new();
            for dy in 0..2 {
                for dx in 0..2 {
                    v.extend_from_slice(&cells[0][by + dy][dx]);
                }
            }
            let expected = l2hys_oracle(&v, 0.2);
            let got = d.block_vector(0, by, 0);
            for (g, e) in got.iter().zip(&expected) {
                assert!((g - e).abs() < 1e-9, "{g} vs {e}");
            }
        }
    }

    #[test]
    fn loss_examples() {
        let cfg = HogConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let shape = vec![1, 1, 1, 8, 8];
        let x0 = Tensor::<f64>::from_fn(shape.clone(), |_| rng.gen_range(-1.0..1.0));
        let eps = Tensor::<f64>::from_fn(shape.clone(), |_| rng.gen_range(-1.0..1.0));
        let target = eps.sub(&x0).unwrap();
        assert_eq!(hog_loss(&target, &x0, &eps, &cfg).unwrap(), 0.0);
        let shifted = target.map(|v| v + 3.25);
        assert!(hog_loss(&shifted, &x0, &eps, &cfg).unwrap() < 1e-24);

        let v = Tensor::<f64>::from_fn(shape, |_| rng.gen_range(-1.0..1.0));
        let dv = hog_descriptor(&v, &cfg).unwrap().block_vector(0, 0, 0);
        let dt = hog_descriptor(&target, &cfg).unwrap().block_vector(0, 0, 0);
        // Brute-force descriptors through the scalar pipeline.
        let flat = |t: &Tensor<f64>| {
            let c = oracle_cells(t, &cfg);
            let mut v = Vec::new();
            for dy in 0..2 {
                for dx in 0..2 {
                    v.extend_from_slice(&c[0][dy][dx]);
                }
            }
            l2hys_oracle(&v, 0.2)
        };
        let (ov, ot) = (flat(&v), flat(&target));
        let oracle = ov.iter().zip(&ot).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 36.0;
        let got = hog_loss(&v, &x0, &eps, &cfg).unwrap();
        assert!((got - oracle).abs() < 1e-5 * oracle.max(1e-12));
        assert!(dv.iter().zip(&ov).all(|(a, b)| (a - b).abs() < 1e-9));
        assert!(dt.iter().zip(&ot).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn undersized_and_mismatched_inputs_are_rejected() {
        let cfg = HogConfig::default();
        assert!(hog_descriptor(&Tensor::<f32>::zeros(vec![1, 7, 8]), &cfg).is_err());
        let a = Tensor::<f32>::zeros(vec![1, 8, 8]);
        let b = Tensor::<f32>::zeros(vec![1, 8, 9]);
        assert!(hog_loss(&a, &b, &b, &cfg).is_err());
    }

    #[test]
    fn hog_loss_gradient_matches_finite_differences() {
        let cfg = HogConfig::default();
        let shape = [1usize, 2, 1, 8, 8];
        let v = smooth_input(&shape, 1, &cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let target = Tensor::<f64>::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0));
        let mut g = Graph::<f64>::new();
        let vn = g.input("v", shape).unwrap();
        let tn = g.constant("target", shape).unwrap();
        let l = hog_loss_node(&mut g, vn, tn, &cfg).unwrap();
        let inputs = BTreeMap::from([("v".to_string(), v), ("target".to_string(), target)]);
        let opts = GradCheckOptions {
            tolerance: 1e-4,
            ..Default::default()
        };
        let report = grad_check(&g, &inputs, l, opts).unwrap();
        assert!(report.passed(), "{}", report.worst());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn shift_invariant_and_block_norm_bounded(seed in any::<u64>(), k in -256i32..256) {
            let cfg = HogConfig::default();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // Dyadic values keep every difference exact, so invariance is bitwise.
            let x = Tensor::<f64>::from_fn(vec![1, 2, 1, 12, 12], |_| rng.gen_range(-64..64) as f64 / 64.0);
            let c = k as f64 / 64.0;
            let shifted = x.map(|v| v + c);
            let a = hog_descriptor(&x, &cfg).unwrap();
            let b = hog_descriptor(&shifted, &cfg).unwrap();
            prop_assert_eq!(&a.features, &b.features);
            prop_assert!(a.features.data().iter().all(|&v| v >= 0.0));
            let (bh, bw) = a.blocks();
            for s in 0..a.num_slices() {
                for by in 0..bh {
                    for bx in 0..bw {
                        let n = a.block_vector(s, by, bx).iter().map(|v| v * v).sum::<f64>().sqrt();
                        prop_assert!(n <= 1.0 + 1e-5);
                    }
                }
            }
        }
    }
}
