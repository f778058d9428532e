//! Toy conditional denoiser: a residual MLP stack over latent patches with an
//! optional control branch whose features are injected at depth-adaptive
//! positions, `X_i += γ · F[⌊i / r⌋]` with `r = ⌈l_main / l_cpc⌉`.
//!
//! In `Cpc` mode the branch consumes only the condition latent. In
//! `VanillaControlnet` mode it also embeds the noisy latent through its own
//! patch projection. `NoControl` skips the branch entirely.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Graph, NodeId, Unary, Values};
use crate::diffusion::{forward_diffuse, velocity_target, DiffusionSchedule, VelocityModel};
use crate::error::{Error, Result};
use crate::hr_loss::{loss_nodes, LossConfig, LossNodes, LossReport};
use crate::tensor::{Element, Tensor};

/// Which features reach the main stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    Cpc,
    VanillaControlnet,
    NoControl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    #[default]
    Silu,
    Identity,
}

/// Shape of the learnable fusion scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaMode {
    #[default]
    Scalar,
    PerBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionSchedule {
    pub l_main: usize,
    pub l_cpc: usize,
    pub gamma: f64,
}

impl FusionSchedule {
    pub fn new(l_main: usize, l_cpc: usize) -> Result<Self> {
        let s = Self {
            l_main,
            l_cpc,
            gamma: 1.0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.l_cpc == 0 || self.l_cpc > self.l_main {
            return Err(Error::invalid(format!(
                "fusion needs 1 <= l_cpc <= l_main, got l_cpc={} l_main={}",
                self.l_cpc, self.l_main
            )));
        }
        Ok(())
    }

    /// Depth ratio `⌈l_main / l_cpc⌉`.
    pub fn ratio(&self) -> usize {
        self.l_main.div_ceil(self.l_cpc)
    }
}

/// `(main block, branch feature)` pairs in injection order.
pub fn fusion_indices(sched: &FusionSchedule) -> Result<Vec<(usize, usize)>> {
    sched.validate()?;
    let r = sched.ratio();
    Ok((0..sched.l_main).map(|i| (i, i / r)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    /// Latent channels.
    pub channels: usize,
    /// Patch extent over (time, height, width).
    pub patch: [usize; 3],
    pub hidden: usize,
    pub l_main: usize,
    pub l_cpc: usize,
    pub mode: FusionMode,
    pub time_embed: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub gamma: GammaMode,
    #[serde(default = "default_gamma_init")]
    pub gamma_init: f64,
}

fn default_gamma_init() -> f64 {
    1.0
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            channels: 3,
            patch: [2, 4, 4],
            // Token width is 3 * 2 * 4 * 4 = 96; a narrower stack cannot carry the noise through.
            hidden: 96,
            l_main: 8,
            l_cpc: 4,
            mode: FusionMode::Cpc,
            time_embed: 16,
            activation: Activation::Silu,
            gamma: GammaMode::Scalar,
            gamma_init: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Zeros,
    Const(f64),
    Normal(f64),
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.hidden == 0 || self.patch.contains(&0) {
            return Err(Error::invalid("channels, hidden width and patch sizes must be positive"));
        }
        if self.time_embed == 0 || self.time_embed % 2 != 0 {
            return Err(Error::invalid(format!(
                "time embedding width must be positive and even, got {}",
                self.time_embed
            )));
        }
        if !self.gamma_init.is_finite() {
            return Err(Error::invalid("gamma_init must be finite"));
        }
        self.schedule().validate()
    }

    pub fn schedule(&self) -> FusionSchedule {
        FusionSchedule {
            l_main: self.l_main,
            l_cpc: self.l_cpc,
            gamma: self.gamma_init,
        }
    }

    /// Flattened patch length `C · pt · ph · pw`.
    pub fn token_dim(&self) -> usize {
        self.channels * self.patch.iter().product::<usize>()
    }

    /// Checks a `[B, C, T, H, W]` latent shape against the patch grid.
    pub fn validate_latent(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 5 {
            return Err(Error::Shape(format!("latent must be [B, C, T, H, W], got {shape:?}")));
        }
        if shape[0] == 0 || shape[1] != self.channels {
            return Err(Error::Shape(format!(
                "latent {shape:?} needs a nonempty batch and {} channels",
                self.channels
            )));
        }
        for (k, p) in self.patch.iter().enumerate() {
            if shape[2 + k] == 0 || shape[2 + k] % p != 0 {
                return Err(Error::Shape(format!(
                    "patch {:?} does not divide latent {shape:?}",
                    self.patch
                )));
            }
        }
        Ok(())
    }

    fn specs(&self) -> Vec<(String, Vec<usize>, Init)> {
        let (d, dt, e) = (self.hidden, self.token_dim(), self.time_embed);
        let w = |fan_in: usize| Init::Normal((1.0 / fan_in as f64).sqrt());
        let mut out = Vec::new();
        let linear = |out: &mut Vec<_>, p: &str, i: usize, o: usize, init: Init| {
            out.push((format!("{p}.w"), vec![i, o], init));
            out.push((format!("{p}.b"), vec![o], Init::Zeros));
        };
        linear(&mut out, "time", e, d, w(e));
        linear(&mut out, "main.patch", dt, d, w(dt));
        for i in 0..self.l_main {
            linear(&mut out, &format!("main.{i}.fc1"), d, d, w(d));
            linear(&mut out, &format!("main.{i}.fc2"), d, d, w(d));
        }
        linear(&mut out, "out", d, dt, Init::Normal(0.1 / (d as f64).sqrt()));
        if self.mode != FusionMode::NoControl {
            linear(&mut out, "branch.cond", dt, d, w(dt));
            if self.mode == FusionMode::VanillaControlnet {
                linear(&mut out, "branch.patch", dt, d, w(dt));
            }
            for j in 0..self.l_cpc {
                linear(&mut out, &format!("branch.{j}.fc1"), d, d, w(d));
                linear(&mut out, &format!("branch.{j}.fc2"), d, d, w(d));
            }
            let n = match self.gamma {
                GammaMode::Scalar => 1,
                GammaMode::PerBlock => self.l_main,
            };
            out.push(("gamma".into(), vec![n], Init::Const(self.gamma_init)));
        }
        out
    }

    /// Expected parameter names and shapes.
    pub fn param_shapes(&self) -> BTreeMap<String, Vec<usize>> {
        self.specs().into_iter().map(|(n, s, _)| (n, s)).collect()
    }
}

/// Sinusoidal features of the diffusion time, shape `[1, width]`.
pub fn time_features<T: Element>(t: f64, width: usize) -> Tensor<T> {
    let half = width / 2;
    Tensor::from_fn(vec![1, width], |k| {
        let freq = (-(10_000f64.ln()) * (k % half) as f64 / half as f64).exp();
        let arg = 1000.0 * t * freq;
        T::lit(if k < half { arg.cos() } else { arg.sin() })
    })
}

fn name_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a keeps each tensor's draw independent of which others exist, so
    // shared parameters match exactly across fusion modes.
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed.rotate_left(17)
}

/// Node ids of one recorded network.
#[derive(Debug, Clone)]
pub struct NetNodes {
    pub output: NodeId,
    /// Token matrix entering the branch, `None` without control.
    pub branch_input: Option<NodeId>,
    pub features: Vec<NodeId>,
}

/// Intermediate activations captured during a forward pass.
#[derive(Debug, Clone)]
pub struct NetTrace<T: Element> {
    pub output: Tensor<T>,
    pub branch_input: Option<Tensor<T>>,
    pub features: Vec<Tensor<T>>,
}

fn patchify<T: Element>(g: &mut Graph<T>, x: NodeId, s: &[usize], p: [usize; 3]) -> Result<NodeId> {
    let (nt, nh, nw) = (s[2] / p[0], s[3] / p[1], s[4] / p[2]);
    let x = g.reshape(x, [s[0], s[1], nt, p[0], nh, p[1], nw, p[2]])?;
    let x = g.permute(x, &[0, 2, 4, 6, 1, 3, 5, 7])?;
    g.reshape(x, [s[0] * nt * nh * nw, s[1] * p[0] * p[1] * p[2]])
}

fn unpatchify<T: Element>(g: &mut Graph<T>, x: NodeId, s: &[usize], p: [usize; 3]) -> Result<NodeId> {
    let (nt, nh, nw) = (s[2] / p[0], s[3] / p[1], s[4] / p[2]);
    let x = g.reshape(x, [s[0], nt, nh, nw, s[1], p[0], p[1], p[2]])?;
    let x = g.permute(x, &[0, 4, 1, 5, 2, 6, 3, 7])?;
    g.reshape(x, s.to_vec())
}

struct Builder<'a, T: Element> {
    g: &'a mut Graph<T>,
    shapes: BTreeMap<String, Vec<usize>>,
    bound: BTreeMap<String, NodeId>,
    act: Activation,
}

impl<T: Element> Builder<'_, T> {
    fn param(&mut self, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.bound.get(name) {
            return Ok(id);
        }
        let shape = self.shapes.get(name).cloned().ok_or_else(|| {
            Error::invalid(format!("configuration has no parameter `{name}`"))
        })?;
        let id = self.g.input(name, shape)?;
        self.bound.insert(name.to_owned(), id);
        Ok(id)
    }

    fn linear(&mut self, x: NodeId, prefix: &str) -> Result<NodeId> {
        let w = self.param(&format!("{prefix}.w"))?;
        let b = self.param(&format!("{prefix}.b"))?;
        let y = self.g.matmul(x, w)?;
        self.g.add(y, b)
    }

    fn act(&mut self, x: NodeId) -> NodeId {
        match self.act {
            Activation::Tanh => self.g.unary(x, Unary::Tanh),
            Activation::Silu => self.g.unary(x, Unary::Silu),
            Activation::Identity => x,
        }
    }

    fn block(&mut self, x: NodeId, temb: NodeId, prefix: &str) -> Result<NodeId> {
        let h = self.g.add(x, temb)?;
        let h = self.linear(h, &format!("{prefix}.fc1"))?;
        let h = self.act(h);
        let h = self.linear(h, &format!("{prefix}.fc2"))?;
        self.g.add(x, h)
    }
}

/// Records the network on `g`. Data enters through the constants `z_t`,
/// `cond` (both `latent_shape`) and `temb` (`[1, time_embed]`); every
/// parameter is a gradient input named as in [`DenoiserConfig::param_shapes`].
pub fn record_network<T: Element>(
    g: &mut Graph<T>,
    cfg: &DenoiserConfig,
    latent_shape: &[usize],
) -> Result<NetNodes> {
    cfg.validate()?;
    cfg.validate_latent(latent_shape)?;
    let z = g.constant("z_t", latent_shape.to_vec())?;
    let cond = g.constant("cond", latent_shape.to_vec())?;
    let tfeat = g.constant("temb", vec![1, cfg.time_embed])?;
    let mut b = Builder {
        g,
        shapes: cfg.param_shapes(),
        bound: BTreeMap::new(),
        act: cfg.activation,
    };

    let temb = b.linear(tfeat, "time")?;
    let temb = b.act(temb);
    let temb = b.g.reshape(temb, [cfg.hidden])?;

    let zp = patchify(b.g, z, latent_shape, cfg.patch)?;

    let mut features = Vec::new();
    let mut branch_input = None;
    if cfg.mode != FusionMode::NoControl {
        let cp = patchify(b.g, cond, latent_shape, cfg.patch)?;
        let mut h = b.linear(cp, "branch.cond")?;
        if cfg.mode == FusionMode::VanillaControlnet {
            let hz = b.linear(zp, "branch.patch")?;
            h = b.g.add(hz, h)?;
        }
        branch_input = Some(h);
        for j in 0..cfg.l_cpc {
            h = b.block(h, temb, &format!("branch.{j}"))?;
            features.push(h);
        }
    }

    let mut x = b.linear(zp, "main.patch")?;
    let fusion = fusion_indices(&cfg.schedule())?;
    for (i, j) in fusion {
        x = b.block(x, temb, &format!("main.{i}"))?;
        if let Some(&f) = features.get(j) {
            let gamma = b.param("gamma")?;
            let gamma = match cfg.gamma {
                GammaMode::Scalar => gamma,
                GammaMode::PerBlock => b.g.slice(gamma, 0, i, 1)?,
            };
            let inj = b.g.mul(f, gamma)?;
            x = b.g.add(x, inj)?;
        }
    }
    let y = b.linear(x, "out")?;
    let output = unpatchify(b.g, y, latent_shape, cfg.patch)?;
    Ok(NetNodes {
        output,
        branch_input,
        features,
    })
}

/// Parameters plus configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct CpcNet<T: Element = f32> {
    pub config: DenoiserConfig,
    pub params: BTreeMap<String, Tensor<T>>,
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"HFCK";
const CHECKPOINT_VERSION: u8 = 1;

impl<T: Element> CpcNet<T> {
    /// Seeded initialization. Each tensor draws from its own stream keyed by
    /// name, so the same seed gives identical shared weights in every mode.
    pub fn init(config: DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = config
            .specs()
            .into_iter()
            .map(|(name, shape, init)| {
                let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, &name));
                let t = Tensor::from_fn(shape, |_| match init {
                    Init::Zeros => T::zero(),
                    Init::Const(v) => T::lit(v),
                    Init::Normal(std) => T::lit(std * rng.sample::<f64, _>(StandardNormal)),
                });
                (name, t)
            })
            .collect();
        Ok(Self { config, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Parameters of the projections that feed the branch.
    pub fn branch_input_param_count(&self) -> usize {
        self.params
            .iter()
            .filter(|(k, _)| k.starts_with("branch.cond.") || k.starts_with("branch.patch."))
            .map(|(_, v)| v.len())
            .sum()
    }

    pub fn cast<U: Element>(&self) -> CpcNet<U> {
        CpcNet {
            config: self.config,
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    fn check_params(&self) -> Result<()> {
        let want = self.config.param_shapes();
        if want.len() != self.params.len() {
            return Err(Error::invalid(format!(
                "parameter set has {} tensors, configuration expects {}",
                self.params.len(),
                want.len()
            )));
        }
        for (name, shape) in want {
            match self.params.get(&name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::Shape(format!(
                        "parameter `{name}` has shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                None => return Err(Error::invalid(format!("missing parameter `{name}`"))),
            }
        }
        Ok(())
    }

    fn run(
        &self,
        z_t: &Tensor<T>,
        cond: &Tensor<T>,
        t: f64,
    ) -> Result<(Graph<T>, NetNodes, Values<T>)> {
        z_t.ensure_same_shape(cond)?;
        let mut g = Graph::new();
        let nodes = record_network(&mut g, &self.config, z_t.shape())?;
        let temb = time_features::<T>(t, self.config.time_embed);
        let values = g.forward_with(|name| match name {
            "z_t" => Some(z_t),
            "cond" => Some(cond),
            "temb" => Some(&temb),
            p => self.params.get(p),
        })?;
        Ok((g, nodes, values))
    }

    /// Predicted velocity for `z_t` under condition `cond` at time `t`.
    pub fn forward(&self, z_t: &Tensor<T>, cond: &Tensor<T>, t: f64) -> Result<Tensor<T>> {
        let (_, nodes, values) = self.run(z_t, cond, t)?;
        Ok(values.get(nodes.output).clone())
    }

    /// Forward pass that also returns the branch input and branch features.
    pub fn trace(&self, z_t: &Tensor<T>, cond: &Tensor<T>, t: f64) -> Result<NetTrace<T>> {
        let (_, nodes, values) = self.run(z_t, cond, t)?;
        Ok(NetTrace {
            output: values.get(nodes.output).clone(),
            branch_input: nodes.branch_input.map(|id| values.get(id).clone()),
            features: nodes.features.iter().map(|&id| values.get(id).clone()).collect(),
        })
    }

    /// Writes `params.hfck` and `config.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(File::create(dir.join("params.hfck"))?);
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&[CHECKPOINT_VERSION])?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for (name, t) in &self.params {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            t.write_hfrt(&mut w)?;
        }
        w.flush()?;
        let json = serde_json::to_string_pretty(&self.config)?;
        std::fs::write(dir.join("config.json"), json + "\n")?;
        Ok(())
    }

    /// Reads a checkpoint and checks it against its configuration.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let config: DenoiserConfig =
            serde_json::from_str(&std::fs::read_to_string(dir.join("config.json"))?)?;
        config.validate()?;
        let mut r = BufReader::new(File::open(dir.join("params.hfck"))?);
        let mut head = [0u8; 9];
        r.read_exact(&mut head)
            .map_err(|_| Error::Format("truncated checkpoint header".into()))?;
        if &head[..4] != CHECKPOINT_MAGIC || head[4] != CHECKPOINT_VERSION {
            return Err(Error::Format("not an HFCK v1 checkpoint".into()));
        }
        let count = u32::from_le_bytes(head[5..9].try_into().expect("4 bytes")) as usize;
        let mut params = BTreeMap::new();
        for _ in 0..count {
            let mut len = [0u8; 4];
            r.read_exact(&mut len)
                .map_err(|_| Error::Format("truncated checkpoint entry".into()))?;
            let len = u32::from_le_bytes(len) as usize;
            if len > 4096 {
                return Err(Error::Format(format!("parameter name of {len} bytes")));
            }
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)
                .map_err(|_| Error::Format("truncated parameter name".into()))?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
            params.insert(name, Tensor::read_hfrt(&mut r)?);
        }
        let net = Self { config, params };
        net.check_params()?;
        Ok(net)
    }
}

impl<T: Element> VelocityModel<T> for CpcNet<T> {
    fn velocity(&self, zt: &Tensor<T>, cond: &Tensor<T>, t: f64) -> Result<Tensor<T>> {
        self.forward(zt, cond, t)
    }
}

/// Decoupled-weight-decay Adam.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if !ok {
            return Err(Error::invalid(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AdamW<T: Element = f32> {
    pub config: AdamWConfig,
    step: u64,
    m: BTreeMap<String, Tensor<T>>,
    v: BTreeMap<String, Tensor<T>>,
}

impl<T: Element> AdamW<T> {
    pub fn new(config: AdamWConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. Weight decay applies to weight matrices only, not to
    /// biases or the fusion scale.
    pub fn update(&mut self, params: &mut BTreeMap<String, Tensor<T>>, grads: &Gradients<T>) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));
        let (bc1, bc2) = (T::lit(bc1), T::lit(bc2));
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let decay = if name.ends_with(".w") { T::lit(c.weight_decay) } else { T::zero() };
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
            let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                let gi = g.data()[i];
                md[i] = b1 * md[i] + (T::one() - b1) * gi;
                vd[i] = b2 * vd[i] + (T::one() - b2) * gi * gi;
                let step = (md[i] / bc1) / ((vd[i] / bc2).sqrt() + eps) + decay * pd[i];
                pd[i] = pd[i] - lr * step;
            }
        }
    }
}

/// One training example batch: the condition and the clean target latent,
/// both `[B, C, T, H, W]`.
#[derive(Debug, Clone)]
pub struct Batch<T: Element = f32> {
    pub cond: Tensor<T>,
    pub x0: Tensor<T>,
}

struct CachedGraph<T: Element> {
    shape: Vec<usize>,
    graph: Graph<T>,
    loss: LossNodes,
}

/// Owns a network, its optimizer and the RNG that draws `t` and noise.
pub struct Trainer<T: Element = f32> {
    pub net: CpcNet<T>,
    pub optimizer: AdamW<T>,
    pub loss: LossConfig,
    rng: ChaCha8Rng,
    cache: Option<CachedGraph<T>>,
}

impl<T: Element> Trainer<T> {
    pub fn new(net: CpcNet<T>, optimizer: AdamWConfig, loss: LossConfig, seed: u64) -> Result<Self> {
        loss.validate()?;
        net.check_params()?;
        Ok(Self {
            net,
            optimizer: AdamW::new(optimizer)?,
            loss,
            rng: ChaCha8Rng::seed_from_u64(seed),
            cache: None,
        })
    }

    /// Draws `t ~ U[0, 1)` and standard normal noise, then steps.
    pub fn train_step(&mut self, batch: &Batch<T>) -> Result<LossReport> {
        let t: f64 = self.rng.gen();
        let eps = Tensor::from_fn(batch.x0.shape().to_vec(), |_| {
            T::lit(self.rng.sample::<f64, _>(StandardNormal))
        });
        self.train_step_with(batch, t, &eps)
    }

    /// One optimizer step on the selected loss at a given time and noise.
    pub fn train_step_with(&mut self, batch: &Batch<T>, t: f64, eps: &Tensor<T>) -> Result<LossReport> {
        let (report, grads) = self.loss_and_grads(batch, t, eps)?;
        if let Some((name, _)) = grads.iter().find(|(_, g)| !g.all_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of `{name}` at optimizer step {}: {report:?}",
                self.optimizer.steps_taken()
            )));
        }
        self.optimizer.update(&mut self.net.params, &grads);
        Ok(report)
    }

    /// Loss report and parameter gradients without updating anything.
    pub fn loss_and_grads(
        &mut self,
        batch: &Batch<T>,
        t: f64,
        eps: &Tensor<T>,
    ) -> Result<(LossReport, Gradients<T>)> {
        batch.x0.ensure_same_shape(&batch.cond)?;
        let sample = forward_diffuse(&batch.x0, eps, t, &DiffusionSchedule)?;
        let target = velocity_target(&batch.x0, eps)?;
        let shape = batch.x0.shape().to_vec();
        if self.cache.as_ref().map(|c| &c.shape) != Some(&shape) {
            let mut graph = Graph::new();
            let nodes = record_network(&mut graph, &self.net.config, &shape)?;
            let target = graph.constant("target", shape.clone())?;
            let loss = loss_nodes(&mut graph, nodes.output, target, &self.loss)?;
            self.cache = Some(CachedGraph { shape, graph, loss });
        }
        let cache = self.cache.as_ref().expect("graph cached above");
        let temb = time_features::<T>(t, self.net.config.time_embed);
        let params = &self.net.params;
        let values = cache.graph.forward_with(|name| match name {
            "z_t" => Some(&sample.zt),
            "cond" => Some(&batch.cond),
            "temb" => Some(&temb),
            "target" => Some(&target),
            p => params.get(p),
        })?;
        let report = cache.loss.report(&values, t, self.loss.weights)?;
        if !report.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss at optimizer step {}: {report:?}",
                self.optimizer.steps_taken()
            )));
        }
        let grads = cache.graph.backward(&values, cache.loss.total)?;
        Ok((report, grads))
    }
}
