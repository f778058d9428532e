//! On-disk dataset layout:
//!
//! ```text
//! manifest.json          kind, seed and split of every clip
//! clips/<id>.hfrt        HR frames [T, H, W, C]
//! flows/<id>.hfrt        ground-truth flow [T - 1, H, W, 2]
//! lr/<id>.hfrt           degraded frames
//! lr/<id>.json           degradation parameters used
//! ```

use std::path::{Path, PathBuf};

use hfrec_core::degradation::DegradationRecord;
use hfrec_core::synth::{FlowField, SynthParams, TextureKind};
use hfrec_core::video::VideoClip;
use hfrec_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub kind: TextureKind,
    pub seed: u64,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub params: SynthParams,
    pub clips: Vec<ManifestEntry>,
}

/// SplitMix64 finalizer, used to derive independent seeds from one root.
pub fn derive_seed(root: u64, salt: u64) -> u64 {
    let mut z = root ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable salt for a clip id.
pub fn id_salt(id: &str) -> u64 {
    id.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}

pub fn clip_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("clips").join(format!("{id}.hfrt"))
}

pub fn flow_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("flows").join(format!("{id}.hfrt"))
}

pub fn lr_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("lr").join(format!("{id}.hfrt"))
}

pub fn lr_record_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("lr").join(format!("{id}.json"))
}

impl Manifest {
    pub fn load(dir: &Path) -> CliResult<Self> {
        let path = manifest_path(dir);
        let text = std::fs::read_to_string(&path).map_err(|_| {
            CliError::Validation(format!(
                "no dataset at {} (run `hfrec synth` first)",
                dir.display()
            ))
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, dir: &Path) -> CliResult<()> {
        std::fs::write(manifest_path(dir), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

pub fn flows_to_tensor(flows: &[FlowField], h: usize, w: usize) -> Tensor<f32> {
    let data = flows.iter().flat_map(|f| f.data.iter().copied()).collect();
    Tensor::new(vec![flows.len(), h, w, 2], data).expect("flow fields share one size")
}

pub fn flows_from_tensor(t: &Tensor<f32>) -> CliResult<Vec<FlowField>> {
    let &[n, h, w, 2] = t.shape() else {
        return Err(CliError::Validation(format!("flow tensor has shape {:?}", t.shape())));
    };
    Ok((0..n)
        .map(|i| FlowField {
            height: h,
            width: w,
            data: t.data()[i * h * w * 2..(i + 1) * h * w * 2].to_vec(),
        })
        .collect())
}

/// A clip with its degraded version and ground-truth motion.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub hr: VideoClip,
    pub lr: VideoClip,
    pub flows: Vec<FlowField>,
    pub record: DegradationRecord,
}

/// Loads all clips of a split. LR data must already exist.
pub fn load_split(dir: &Path, split: Split) -> CliResult<Vec<Sample>> {
    let manifest = Manifest::load(dir)?;
    manifest
        .clips
        .iter()
        .filter(|e| e.split == split)
        .map(|e| {
            let lr = lr_path(dir, &e.id);
            if !lr.exists() {
                return Err(CliError::Validation(format!(
                    "clip `{}` has no degraded version (run `hfrec degrade` first)",
                    e.id
                )));
            }
            let record_text = std::fs::read_to_string(lr_record_path(dir, &e.id))?;
            Ok(Sample {
                id: e.id.clone(),
                hr: VideoClip::load_hfrt(clip_path(dir, &e.id))?,
                lr: VideoClip::load_hfrt(lr)?,
                flows: flows_from_tensor(&Tensor::load(flow_path(dir, &e.id))?)?,
                record: serde_json::from_str(&record_text)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ() {
        let a: Vec<u64> = (0..100).map(|i| derive_seed(7, i)).collect();
        let mut b = a.clone();
        b.sort_unstable();
        b.dedup();
        assert_eq!(b.len(), 100);
        assert_ne!(derive_seed(7, 1), derive_seed(8, 1));
    }

    #[test]
    fn flow_tensor_round_trip() {
        let flows = vec![FlowField::constant(3, 4, 1.0, -0.5), FlowField::constant(3, 4, 0.25, 2.0)];
        let t = flows_to_tensor(&flows, 3, 4);
        assert_eq!(t.shape(), &[2, 3, 4, 2]);
        assert_eq!(flows_from_tensor(&t).unwrap(), flows);
    }
}
