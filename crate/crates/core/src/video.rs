//! Pixel-space clips and their on-disk forms (binary PPM frames, HFRT tensors).

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Frames stored as `T × H × W × C`, row-major, values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
    pub fps: f64,
}

pub const DEFAULT_FPS: f64 = 24.0;

impl VideoClip {
    pub fn new(
        frames: usize,
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if frames * height * width * channels == 0 {
            return Err(Error::invalid(format!(
                "clip dimensions must be positive, got {frames}x{height}x{width}x{channels}"
            )));
        }
        if data.len() != frames * height * width * channels {
            return Err(Error::Shape(format!(
                "clip {frames}x{height}x{width}x{channels} needs {} values, got {}",
                frames * height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            frames,
            height,
            width,
            channels,
            data,
            fps: DEFAULT_FPS,
        })
    }

    pub fn from_fn(
        frames: usize,
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(frames * height * width * channels);
        for t in 0..frames {
            for y in 0..height {
                for x in 0..width {
                    for c in 0..channels {
                        data.push(f(t, y, x, c));
                    }
                }
            }
        }
        Self::new(frames, height, width, channels, data)
    }

    pub fn with_fps(mut self, fps: f64) -> Self {
        self.fps = fps;
        self
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn index(&self, t: usize, y: usize, x: usize, c: usize) -> usize {
        ((t * self.height + y) * self.width + x) * self.channels + c
    }

    pub fn at(&self, t: usize, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.index(t, y, x, c)]
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f32] {
        let n = self.frame_len();
        &mut self.data[t * n..(t + 1) * n]
    }

    /// Clip containing frames `start..start + len`.
    pub fn sub_clip(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.frames {
            return Err(Error::invalid(format!(
                "frames {start}..{} outside a {}-frame clip",
                start + len,
                self.frames
            )));
        }
        let n = self.frame_len();
        Ok(Self {
            frames: len,
            data: self.data[start * n..(start + len) * n].to_vec(),
            ..self.clone()
        })
    }

    pub fn same_shape(&self, other: &Self) -> Result<()> {
        let a = [self.frames, self.height, self.width, self.channels];
        let b = [other.frames, other.height, other.width, other.channels];
        if a != b {
            return Err(Error::Shape(format!("clip shapes {a:?} and {b:?} differ")));
        }
        Ok(())
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// BT.601 luma per pixel for one frame, in f64. Single-channel clips pass through.
    pub fn luma(&self, t: usize) -> Result<Vec<f64>> {
        let f = self.frame(t);
        match self.channels {
            1 => Ok(f.iter().map(|&v| f64::from(v)).collect()),
            3 => Ok(f
                .chunks_exact(3)
                .map(|p| 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]))
                .collect()),
            c => Err(Error::invalid(format!("luma needs 1 or 3 channels, got {c}"))),
        }
    }

    /// `[T, H, W, C]` tensor.
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(
            vec![self.frames, self.height, self.width, self.channels],
            self.data.clone(),
        )
        .expect("clip length matches its shape")
    }

    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        match *t.shape() {
            [f, h, w, c] => Self::new(f, h, w, c, t.data().to_vec()),
            _ => Err(Error::Shape(format!("clip tensor must be [T, H, W, C], got {:?}", t.shape()))),
        }
    }

    /// Latent layout `[1, C, T, H, W]`.
    pub fn to_latent(&self) -> Tensor<f32> {
        let (t, h, w, c) = (self.frames, self.height, self.width, self.channels);
        let hw = h * w;
        Tensor::from_fn(vec![1, c, t, h, w], |i| {
            let ch = i / (t * hw);
            let rest = i % (t * hw);
            self.data[rest * c + ch]
        })
    }

    pub fn from_latent(latent: &Tensor<f32>) -> Result<Self> {
        let &[1, c, t, h, w] = latent.shape() else {
            return Err(Error::Shape(format!(
                "latent must be [1, C, T, H, W], got {:?}",
                latent.shape()
            )));
        };
        let thw = t * h * w;
        Self::from_fn(t, h, w, c, |ft, y, x, ch| {
            latent.data()[ch * thw + (ft * h + y) * w + x]
        })
    }

    pub fn save_hfrt(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_tensor().save(path)
    }

    pub fn load_hfrt(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tensor(&Tensor::load(path)?)
    }

    /// Writes frame `t` as binary PPM. One-channel clips are written as gray RGB.
    pub fn write_ppm<W: Write>(&self, t: usize, mut w: W) -> Result<()> {
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::invalid(format!("PPM needs 1 or 3 channels, got {}", self.channels)));
        }
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        let quant = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let mut bytes = Vec::with_capacity(self.height * self.width * 3);
        for px in self.frame(t).chunks_exact(self.channels) {
            if self.channels == 1 {
                bytes.extend([quant(px[0]); 3]);
            } else {
                bytes.extend(px.iter().map(|&v| quant(v)));
            }
        }
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn save_ppm(&self, t: usize, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_ppm(t, &mut f)?;
        f.flush()?;
        Ok(())
    }

    /// Writes every frame as `{prefix}_{t:04}.ppm` inside `dir`.
    pub fn save_frames(&self, dir: impl AsRef<Path>, prefix: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for t in 0..self.frames {
            self.save_ppm(t, dir.join(format!("{prefix}_{t:04}.ppm")))?;
        }
        Ok(())
    }
}

fn ppm_token<R: BufRead>(r: &mut R) -> Result<String> {
    let mut tok = Vec::new();
    loop {
        let mut b = [0u8; 1];
        if r.read(&mut b)? == 0 {
            break;
        }
        match b[0] {
            b'#' if tok.is_empty() => {
                let mut skip = Vec::new();
                r.read_until(b'\n', &mut skip)?;
            }
            c if c.is_ascii_whitespace() => {
                if !tok.is_empty() {
                    break;
                }
            }
            c => tok.push(c),
        }
    }
    if tok.is_empty() {
        return Err(Error::Format("truncated PPM header".into()));
    }
    String::from_utf8(tok).map_err(|_| Error::Format("PPM header is not ASCII".into()))
}

/// Reads one binary PPM into a single-frame, three-channel clip.
pub fn read_ppm<R: Read>(r: R) -> Result<VideoClip> {
    let mut r = BufReader::new(r);
    if ppm_token(&mut r)? != "P6" {
        return Err(Error::Format("only binary P6 PPM is supported".into()));
    }
    let mut num = |what: &str| -> Result<usize> {
        ppm_token(&mut r)?
            .parse()
            .map_err(|_| Error::Format(format!("bad PPM {what}")))
    };
    let (w, h, max) = (num("width")?, num("height")?, num("maxval")?);
    if max != 255 {
        return Err(Error::Format(format!("PPM maxval {max} unsupported, expected 255")));
    }
    let mut bytes = vec![0u8; w * h * 3];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Format("truncated PPM pixel data".into()))?;
    VideoClip::new(1, h, w, 3, bytes.iter().map(|&b| f32::from(b) / 255.0).collect())
}
