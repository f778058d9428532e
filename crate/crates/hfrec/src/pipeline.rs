//! Training and evaluation shared by the `train`, `eval`, `ablate` and
//! `sweep-weights` commands.

use hfrec_core::cpc_net::{Batch, CpcNet, DenoiserConfig, Trainer};
use hfrec_core::diffusion::euler_sample;
use hfrec_core::hr_loss::{LossConfig, LossReport};
use hfrec_core::metrics::{MetricRecord, Psnr};
use hfrec_core::resample::{resize, Filter};
use hfrec_core::synth::FlowField;
use hfrec_core::video::VideoClip;
use hfrec_core::wavelet::haar_decompose;
use hfrec_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::ExperimentConfig;
use crate::data::{derive_seed, id_salt, Sample};
use crate::error::{CliError, CliResult};

const INIT_SALT: u64 = 1;
const NOISE_SALT: u64 = 2;
const ORDER_SALT: u64 = 3;
const SAMPLE_SALT: u64 = 4;
const PROBE_SALT: u64 = 5;

/// A sample in latent layout, with the condition already on the HR grid.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub id: String,
    pub cond: Tensor<f32>,
    pub x0: Tensor<f32>,
    pub hr: VideoClip,
    pub lr: VideoClip,
    pub flows: Vec<FlowField>,
}

/// The LR clip bilinearly resized onto the HR grid.
pub fn upsample_condition(lr: &VideoClip, hr: &VideoClip) -> CliResult<VideoClip> {
    Ok(resize(lr, hr.height, hr.width, Filter::Bilinear)?)
}

pub fn prepare(samples: &[Sample]) -> CliResult<Vec<Prepared>> {
    samples
        .iter()
        .map(|s| {
            let cond = upsample_condition(&s.lr, &s.hr)?;
            Ok(Prepared {
                id: s.id.clone(),
                cond: cond.to_latent(),
                x0: s.hr.to_latent(),
                hr: s.hr.clone(),
                lr: s.lr.clone(),
                flows: s.flows.clone(),
            })
        })
        .collect()
}

/// Frames `start..start + len` of a `[1, C, T, H, W]` latent.
pub fn time_window(x: &Tensor<f32>, start: usize, len: usize) -> Tensor<f32> {
    let &[b, c, t, h, w] = x.shape() else {
        panic!("latent must have rank 5");
    };
    let hw = h * w;
    Tensor::from_fn(vec![b, c, len, h, w], |i| {
        let bc = i / (len * hw);
        let rest = i % (len * hw);
        x.data()[bc * t * hw + start * hw + rest]
    })
}

pub struct TrainOutcome {
    pub net: CpcNet<f32>,
    /// `(step, report)` rows at the logging cadence and at the last step.
    pub log: Vec<(usize, LossReport)>,
    /// Diagnostic when training stopped on a non-finite loss or gradient.
    pub abort: Option<String>,
}

/// Initial parameters for a configuration; every variant of one experiment
/// shares the seed, so same-named tensors match exactly.
pub fn init_net(cfg: &ExperimentConfig, model: DenoiserConfig) -> CliResult<CpcNet<f32>> {
    Ok(CpcNet::init(model, derive_seed(cfg.seed, INIT_SALT))?)
}

pub fn train(
    cfg: &ExperimentConfig,
    model: DenoiserConfig,
    loss: LossConfig,
    data: &[Prepared],
) -> CliResult<TrainOutcome> {
    if data.is_empty() {
        return Err(CliError::Validation("training split is empty".into()));
    }
    let net = init_net(cfg, model)?;
    let mut trainer = Trainer::new(net, cfg.optimizer, loss, derive_seed(cfg.seed, NOISE_SALT))?;
    let mut order = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, ORDER_SALT));
    let mut log = Vec::new();
    let mut abort = None;
    for step in 0..cfg.training.steps {
        let p = &data[order.gen_range(0..data.len())];
        let frames = p.x0.shape()[2];
        let len = cfg.training.window.unwrap_or(frames).min(frames);
        let start = order.gen_range(0..=frames - len);
        let batch = Batch {
            cond: time_window(&p.cond, start, len),
            x0: time_window(&p.x0, start, len),
        };
        match trainer.train_step(&batch) {
            Ok(r) => {
                if step % cfg.training.log_every == 0 || step + 1 == cfg.training.steps {
                    log.push((step, r));
                }
            }
            Err(e) if e.is_numerical() => {
                abort = Some(format!("step {step}: {e}"));
                break;
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(TrainOutcome {
        net: trainer.net,
        log,
        abort,
    })
}

pub fn train_log_csv(log: &[(usize, LossReport)]) -> String {
    let mut s = format!("{}\n", LossReport::CSV_HEADER);
    for (step, r) in log {
        s.push_str(&r.csv_row(*step));
        s.push('\n');
    }
    s
}

/// Loss terms of an untrained network on a fixed probe batch: the first
/// sample at `t = 0.5` with seeded noise.
pub fn probe_losses(
    cfg: &ExperimentConfig,
    net: &CpcNet<f32>,
    loss: LossConfig,
    data: &[Prepared],
) -> CliResult<LossReport> {
    let p = data
        .first()
        .ok_or_else(|| CliError::Validation("no data for the loss probe".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, PROBE_SALT));
    let eps = Tensor::from_fn(p.x0.shape().to_vec(), |_| rng.sample::<f32, _>(StandardNormal));
    let mut trainer = Trainer::new(net.clone(), cfg.optimizer, loss, 0)?;
    let batch = Batch {
        cond: p.cond.clone(),
        x0: p.x0.clone(),
    };
    let (report, _) = trainer.loss_and_grads(&batch, 0.5, &eps)?;
    Ok(report)
}

/// Euler sample from seeded noise; the noise depends only on the experiment
/// seed and clip id, so every variant starts from the same draw.
pub fn predict(cfg: &ExperimentConfig, net: &CpcNet<f32>, p: &Prepared) -> CliResult<VideoClip> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(cfg.seed, SAMPLE_SALT), id_salt(&p.id)));
    let z1 = Tensor::from_fn(p.x0.shape().to_vec(), |_| rng.sample::<f32, _>(StandardNormal));
    let z0 = euler_sample(net, &z1, &p.cond, cfg.eval.sample_steps)?;
    let mut clip = VideoClip::from_latent(&z0)?.with_fps(p.hr.fps);
    clip.clamp01();
    Ok(clip)
}

/// Mean LH + HL + HH energy per element of the residual `pred - gt`.
pub fn hf_residual_energy(pred: &VideoClip, gt: &VideoClip) -> CliResult<f64> {
    pred.same_shape(gt)?;
    let r = pred.to_latent().sub(&gt.to_latent())?.cast::<f64>();
    let n = r.len() as f64;
    Ok(haar_decompose(&r)?.high_frequency_energy() / n)
}

#[derive(Debug, Clone)]
pub struct MethodEval {
    pub method: String,
    pub records: Vec<MetricRecord>,
    pub hf_energy: f64,
}

impl MethodEval {
    /// Averages over clips. PSNR is flagged infinite only if every clip is.
    pub fn mean_record(&self) -> MetricRecord {
        let n = self.records.len().max(1) as f64;
        let mean = |f: &dyn Fn(&MetricRecord) -> f64| self.records.iter().map(f).sum::<f64>() / n;
        MetricRecord {
            clip_id: "mean".into(),
            method: self.method.clone(),
            psnr: Psnr {
                db: mean(&|r| r.psnr.db),
                infinite: !self.records.is_empty() && self.records.iter().all(|r| r.psnr.infinite),
                per_frame: Vec::new(),
            },
            ssim: mean(&|r| r.ssim),
            e_warp: mean(&|r| r.e_warp),
        }
    }
}

/// Scores the outputs of one method against HR on every clip.
pub fn evaluate_outputs(
    cfg: &ExperimentConfig,
    method: &str,
    data: &[Prepared],
    mut output: impl FnMut(&Prepared) -> CliResult<VideoClip>,
) -> CliResult<MethodEval> {
    let mut records = Vec::with_capacity(data.len());
    let mut hf = 0.0;
    for p in data {
        let out = output(p)?;
        hf += hf_residual_energy(&out, &p.hr)?;
        records.push(MetricRecord::evaluate(
            p.id.clone(),
            method,
            &out,
            &p.hr,
            &p.flows,
            cfg.eval.boundary,
        )?);
    }
    Ok(MethodEval {
        method: method.into(),
        records,
        hf_energy: hf / data.len().max(1) as f64,
    })
}

pub fn evaluate_model(cfg: &ExperimentConfig, net: &CpcNet<f32>, data: &[Prepared]) -> CliResult<MethodEval> {
    evaluate_outputs(cfg, "model", data, |p| predict(cfg, net, p))
}

/// Bicubic upscaling of the LR clip, the model-free baseline.
pub fn bicubic_baseline(cfg: &ExperimentConfig, data: &[Prepared]) -> CliResult<MethodEval> {
    evaluate_outputs(cfg, "bicubic", data, |p| {
        let mut c = resize(&p.lr, p.hr.height, p.hr.width, Filter::Bicubic)?;
        c.clamp01();
        Ok(c)
    })
}

/// Returns the conditioning clip unchanged (bilinear upscale of LR).
pub fn identity_baseline(cfg: &ExperimentConfig, data: &[Prepared]) -> CliResult<MethodEval> {
    evaluate_outputs(cfg, "identity", data, |p| VideoClip::from_latent(&p.cond).map_err(Into::into))
}
