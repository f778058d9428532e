//! Single-level orthonormal 2D Haar transform over the two trailing (spatial)
//! axes and the sub-band weighted velocity loss.
//!
//! Filters are `L = [1, 1] / √2` and `H = [-1, 1] / √2`. The first letter of a
//! band names the filter applied along height, the second along width, so `LH`
//! responds to horizontal changes and `HL` to vertical ones.
//!
//! Odd spatial sizes are reflect-padded by one sample on the trailing edge.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// 2x2 analysis kernels in `[LL, LH, HL, HH]` order, row-major (height, width).
pub const HAAR_KERNELS: [[f64; 4]; 4] = [
    [0.5, 0.5, 0.5, 0.5],
    [-0.5, 0.5, -0.5, 0.5],
    [-0.5, -0.5, 0.5, 0.5],
    [0.5, -0.5, -0.5, 0.5],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Band {
    LL,
    LH,
    HL,
    HH,
}

impl Band {
    pub const ALL: [Band; 4] = [Band::LL, Band::LH, Band::HL, Band::HH];
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubbandSet<T: Element = f32> {
    pub ll: Tensor<T>,
    pub lh: Tensor<T>,
    pub hl: Tensor<T>,
    pub hh: Tensor<T>,
}

impl<T: Element> SubbandSet<T> {
    pub fn band(&self, band: Band) -> &Tensor<T> {
        match band {
            Band::LL => &self.ll,
            Band::LH => &self.lh,
            Band::HL => &self.hl,
            Band::HH => &self.hh,
        }
    }

    pub fn energy(&self) -> T {
        Band::ALL
            .iter()
            .fold(T::zero(), |acc, &b| acc + self.band(b).sum_squares())
    }

    /// Energy in the three detail bands.
    pub fn high_frequency_energy(&self) -> T {
        self.lh.sum_squares() + self.hl.sum_squares() + self.hh.sum_squares()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubbandWeights {
    pub ll: f64,
    pub lh: f64,
    pub hl: f64,
    pub hh: f64,
}

impl Default for SubbandWeights {
    /// `{1.0, 2.0, 2.0, 2.0}`: detail bands weighted twice the approximation.
    fn default() -> Self {
        Self {
            ll: 1.0,
            lh: 2.0,
            hl: 2.0,
            hh: 2.0,
        }
    }
}

impl SubbandWeights {
    pub const UNIT: SubbandWeights = SubbandWeights {
        ll: 1.0,
        lh: 1.0,
        hl: 1.0,
        hh: 1.0,
    };

    /// `LL` fixed at 1 and all detail bands at `w`.
    pub fn high_frequency(w: f64) -> Self {
        Self {
            ll: 1.0,
            lh: w,
            hl: w,
            hh: w,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.ll, self.lh, self.hl, self.hh]
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid(format!(
                "sub-band weights must be finite and non-negative, got {self:?}"
            )));
        }
        Ok(())
    }
}

fn spatial_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    let r = shape.len();
    if r < 2 || shape[r - 1] == 0 || shape[r - 2] == 0 {
        return Err(Error::Shape(format!(
            "wavelet transform needs two non-empty trailing axes, got {shape:?}"
        )));
    }
    Ok((shape[..r - 2].iter().product(), shape[r - 2], shape[r - 1]))
}

/// Index of the trailing-edge reflected sample for a padded axis.
fn reflect(i: usize, len: usize) -> usize {
    if i < len {
        i
    } else if len >= 2 {
        len - 2
    } else {
        0
    }
}

pub fn haar_decompose<T: Element>(x: &Tensor<T>) -> Result<SubbandSet<T>> {
    let (batch, h, w) = spatial_dims(x.shape())?;
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out_shape = x.shape().to_vec();
    let r = out_shape.len();
    out_shape[r - 2] = oh;
    out_shape[r - 1] = ow;

    let xd = x.data();
    let k: [[T; 4]; 4] = HAAR_KERNELS.map(|row| row.map(T::lit));
    let mut bands: [Vec<T>; 4] = std::array::from_fn(|_| Vec::with_capacity(batch * oh * ow));
    for b in 0..batch {
        let plane = &xd[b * h * w..(b + 1) * h * w];
        let at = |y: usize, x: usize| plane[reflect(y, h) * w + reflect(x, w)];
        for i in 0..oh {
            for j in 0..ow {
                let px = [
                    at(2 * i, 2 * j),
                    at(2 * i, 2 * j + 1),
                    at(2 * i + 1, 2 * j),
                    at(2 * i + 1, 2 * j + 1),
                ];
                for (band, kernel) in bands.iter_mut().zip(&k) {
                    let v = kernel
                        .iter()
                        .zip(&px)
                        .fold(T::zero(), |acc, (kv, pv)| acc + *kv * *pv);
                    band.push(v);
                }
            }
        }
    }
    let [ll, lh, hl, hh] = bands.map(|d| Tensor::new(out_shape.clone(), d).expect("band shape"));
    Ok(SubbandSet { ll, lh, hl, hh })
}

/// Inverse transform. The output has even spatial size (twice the band size).
pub fn haar_reconstruct<T: Element>(s: &SubbandSet<T>) -> Result<Tensor<T>> {
    let shape = s.ll.shape();
    for band in [&s.lh, &s.hl, &s.hh] {
        if band.shape() != shape {
            return Err(Error::Shape(format!(
                "inconsistent sub-band shapes {:?} vs {:?}",
                shape,
                band.shape()
            )));
        }
    }
    let (batch, oh, ow) = spatial_dims(shape)?;
    let (h, w) = (2 * oh, 2 * ow);
    let mut out_shape = shape.to_vec();
    let r = out_shape.len();
    out_shape[r - 2] = h;
    out_shape[r - 1] = w;

    let k: [[T; 4]; 4] = HAAR_KERNELS.map(|row| row.map(T::lit));
    let bands = [s.ll.data(), s.lh.data(), s.hl.data(), s.hh.data()];
    let mut out = vec![T::zero(); batch * h * w];
    for b in 0..batch {
        for i in 0..oh {
            for j in 0..ow {
                let idx = (b * oh + i) * ow + j;
                for (tap, (dy, dx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                    let v = (0..4).fold(T::zero(), |acc, band| acc + k[band][tap] * bands[band][idx]);
                    out[(b * h + 2 * i + dy) * w + 2 * j + dx] = v;
                }
            }
        }
    }
    Tensor::new(out_shape, out)
}

/// Spatial element count after trailing-edge padding to even size.
pub fn padded_numel(shape: &[usize]) -> usize {
    let r = shape.len();
    shape[..r - 2].iter().product::<usize>() * shape[r - 2].div_ceil(2) * 2 * shape[r - 1].div_ceil(2) * 2
}

/// Weighted sub-band loss between a predicted velocity and the target `eps - x0`.
///
/// Each band's summed squared residual is divided by the element count of the
/// (padded) full-resolution tensor. With unit weights the orthonormal transform
/// makes this identical to the mean squared residual.
pub fn wlf_loss<T: Element>(
    v_pred: &Tensor<T>,
    x0: &Tensor<T>,
    eps: &Tensor<T>,
    w: &SubbandWeights,
) -> Result<T> {
    w.validate()?;
    v_pred.ensure_same_shape(x0)?;
    v_pred.ensure_same_shape(eps)?;
    let target = eps.sub(x0)?;
    let residual = v_pred.sub(&target)?;
    let bands = haar_decompose(&residual)?;
    let n = T::lit(padded_numel(residual.shape()) as f64);
    let total = Band::ALL
        .iter()
        .zip(w.as_array())
        .fold(T::zero(), |acc, (&b, wb)| {
            acc + T::lit(wb) * bands.band(b).sum_squares()
        });
    Ok(total / n)
}

fn pad_trailing_even<T: Element>(g: &mut Graph<T>, x: NodeId) -> Result<NodeId> {
    let mut x = x;
    for axis in [g.shape(x).len() - 2, g.shape(x).len() - 1] {
        let len = g.shape(x)[axis];
        if len % 2 == 1 {
            let src = if len >= 2 { len - 2 } else { 0 };
            let edge = g.slice(x, axis, src, 1)?;
            x = g.concat(&[x, edge], axis)?;
        }
    }
    Ok(x)
}

/// Records the four sub-bands of `x` as stride-2 cross-correlations.
pub fn subband_nodes<T: Element>(g: &mut Graph<T>, x: NodeId) -> Result<[NodeId; 4]> {
    if g.shape(x).len() < 2 {
        return Err(Error::Shape(format!(
            "wavelet transform needs two trailing axes, got {:?}",
            g.shape(x)
        )));
    }
    let x = pad_trailing_even(g, x)?;
    let mut out = [x; 4];
    for (slot, kernel) in out.iter_mut().zip(HAAR_KERNELS) {
        let k = Tensor::new(vec![2, 2], kernel.map(T::lit).to_vec())?;
        *slot = g.conv2d(x, k, [2, 2])?;
    }
    Ok(out)
}

/// Records the weighted sub-band loss of a residual node (`v_pred - target`).
pub fn wlf_loss_node<T: Element>(
    g: &mut Graph<T>,
    residual: NodeId,
    w: &SubbandWeights,
) -> Result<NodeId> {
    w.validate()?;
    let n = padded_numel(g.shape(residual)) as f64;
    let bands = subband_nodes(g, residual)?;
    let mut total: Option<NodeId> = None;
    for (band, wb) in bands.into_iter().zip(w.as_array()) {
        let sq = g.square(band);
        let s = g.sum(sq);
        let term = g.scale(s, T::lit(wb / n));
        total = Some(match total {
            Some(acc) => g.add(acc, term)?,
            None => term,
        });
    }
    Ok(total.expect("four bands"))
}
