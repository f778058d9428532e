use std::fmt::Write as _;
use std::path::Path;

use hfrec_core::cpc_net::{CpcNet, FusionMode};
use hfrec_core::degradation::{degrade_two_order, DegradationConfig};
use hfrec_core::hr_loss::{LossConfig, LossSelection};
use hfrec_core::metrics::{records_csv, temporal_profile};
use hfrec_core::synth::generate_clip;
use hfrec_core::wavelet::SubbandWeights;

use crate::config::ExperimentConfig;
use crate::data::{
    clip_path, derive_seed, flow_path, flows_to_tensor, id_salt, load_split, lr_path, lr_record_path,
    Manifest, ManifestEntry, Split,
};
use crate::error::{CliError, CliResult};
use crate::pipeline::{
    bicubic_baseline, evaluate_model, identity_baseline, init_net, prepare, probe_losses, train,
    train_log_csv, MethodEval, Prepared,
};

fn write(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

/// Writes HR clips, flows and the manifest.
pub fn cmd_synth(cfg: &ExperimentConfig, out: &Path) -> CliResult<Manifest> {
    ensure_dir(&out.join("clips"))?;
    ensure_dir(&out.join("flows"))?;
    let p = cfg.dataset.params;
    let mut clips = Vec::new();
    let mut report = String::from("clip_id,kind,split,seed,frames,height,width\n");
    let mut index = 0usize;
    for kc in &cfg.dataset.kinds {
        for _ in 0..kc.count {
            let id = format!("{}_{index:03}", kc.kind.name());
            let seed = derive_seed(cfg.seed, index as u64);
            let split = if (index + 1) % cfg.dataset.holdout_every == 0 { Split::Eval } else { Split::Train };
            let (clip, flows) = generate_clip(kc.kind, &p, seed)?;
            clip.save_hfrt(clip_path(out, &id))?;
            flows_to_tensor(&flows, p.height, p.width).save(flow_path(out, &id))?;
            let _ = writeln!(
                report,
                "{id},{},{},{seed},{},{},{}",
                kc.kind.name(),
                split.name(),
                p.frames,
                p.height,
                p.width
            );
            clips.push(ManifestEntry {
                id,
                kind: kc.kind,
                seed,
                split,
            });
            index += 1;
        }
    }
    let manifest = Manifest {
        seed: cfg.seed,
        params: p,
        clips,
    };
    manifest.save(out)?;
    write(&out.join("synth_report.csv"), &report)?;
    Ok(manifest)
}

/// Degrades every clip of the dataset with a per-clip seed.
pub fn cmd_degrade(cfg: &ExperimentConfig, out: &Path) -> CliResult<()> {
    let data = cfg.data_dir(out);
    let manifest = Manifest::load(data)?;
    ensure_dir(&data.join("lr"))?;
    let mut report = String::from(
        "clip_id,lr_height,lr_width,blur_1,scale_1,noise_1,quality_1,blur_2,scale_2,noise_2,quality_2\n",
    );
    for e in &manifest.clips {
        let hr = hfrec_core::video::VideoClip::load_hfrt(clip_path(data, &e.id))?;
        let dcfg = DegradationConfig {
            seed: derive_seed(cfg.degradation.seed, id_salt(&e.id)),
            ..cfg.degradation
        };
        let (lr, record) = degrade_two_order(&hr, &dcfg)?;
        lr.save_hfrt(lr_path(data, &e.id))?;
        write(&lr_record_path(data, &e.id), &(serde_json::to_string_pretty(&record)? + "\n"))?;
        let _ = write!(report, "{},{},{}", e.id, lr.height, lr.width);
        for o in &record.orders {
            let _ = write!(
                report,
                ",{:.6},{:.6},{:.6},{:.3}",
                o.blur_sigma, o.scale, o.noise_sigma, o.quality
            );
        }
        report.push('\n');
    }
    write(&out.join("degrade_report.csv"), &report)
}

fn load_prepared(cfg: &ExperimentConfig, out: &Path, split: Split) -> CliResult<Vec<Prepared>> {
    prepare(&load_split(cfg.data_dir(out), split)?)
}

/// Trains the configured model; the checkpoint goes to `out/checkpoint`.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> CliResult<()> {
    let data = load_prepared(cfg, out, Split::Train)?;
    ensure_dir(out)?;
    let outcome = train(cfg, cfg.model, cfg.loss_config(), &data)?;
    write(&out.join("train_log.csv"), &train_log_csv(&outcome.log))?;
    if let Some(msg) = outcome.abort {
        return Err(CliError::Numerical(msg));
    }
    outcome.net.save(out.join("checkpoint"))?;
    Ok(())
}

/// Scores the trained checkpoint and the bicubic and identity baselines on
/// held-out clips, and writes temporal profiles of the middle row.
pub fn cmd_eval(cfg: &ExperimentConfig, out: &Path) -> CliResult<()> {
    let ckpt = out.join("checkpoint");
    if !ckpt.join("config.json").exists() {
        return Err(CliError::Validation(format!(
            "no checkpoint at {} (run `hfrec train` first)",
            ckpt.display()
        )));
    }
    let net = CpcNet::<f32>::load(&ckpt)?;
    if net.config != cfg.model {
        return Err(CliError::Validation(
            "checkpoint was trained with a different model configuration".into(),
        ));
    }
    let data = load_prepared(cfg, out, Split::Eval)?;
    let methods = [
        evaluate_model(cfg, &net, &data)?,
        bicubic_baseline(cfg, &data)?,
        identity_baseline(cfg, &data)?,
    ];
    let mut records = Vec::new();
    for m in &methods {
        records.extend(m.records.iter().cloned());
    }
    for m in &methods {
        records.push(m.mean_record());
    }
    write(&out.join("eval.csv"), &records_csv(&records))?;

    let profiles = out.join("profiles");
    ensure_dir(&profiles)?;
    for p in &data {
        let row = p.hr.height / 2;
        temporal_profile(&p.hr, row)?.save_ppm(0, profiles.join(format!("{}_gt.ppm", p.id)))?;
        let pred = crate::pipeline::predict(cfg, &net, p)?;
        temporal_profile(&pred, row)?.save_ppm(0, profiles.join(format!("{}_model.ppm", p.id)))?;
    }
    Ok(())
}

/// One configuration of the ablation table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Variant {
    pub name: &'static str,
    pub mode: FusionMode,
    pub loss: LossSelection,
}

pub const ABLATION_VARIANTS: [Variant; 5] = [
    Variant {
        name: "vanilla_rec",
        mode: FusionMode::VanillaControlnet,
        loss: LossSelection::Rec,
    },
    Variant {
        name: "cpc_rec",
        mode: FusionMode::Cpc,
        loss: LossSelection::Rec,
    },
    Variant {
        name: "cpc_rec_wlf",
        mode: FusionMode::Cpc,
        loss: LossSelection::RecWlf,
    },
    Variant {
        name: "cpc_rec_hog",
        mode: FusionMode::Cpc,
        loss: LossSelection::RecHog,
    },
    Variant {
        name: "cpc_hr",
        mode: FusionMode::Cpc,
        loss: LossSelection::Hr,
    },
];

#[derive(Debug, Clone)]
pub struct VariantResult {
    pub name: String,
    pub eval: Option<MethodEval>,
    pub final_loss: Option<f64>,
    pub status: String,
}

impl VariantResult {
    pub fn hf_energy(&self) -> Option<f64> {
        self.eval.as_ref().map(|e| e.hf_energy)
    }
}

fn run_variant(
    cfg: &ExperimentConfig,
    name: &str,
    model: hfrec_core::cpc_net::DenoiserConfig,
    loss: LossConfig,
    train_data: &[Prepared],
    eval_data: &[Prepared],
) -> CliResult<VariantResult> {
    let outcome = train(cfg, model, loss, train_data)?;
    let final_loss = outcome.log.last().map(|(_, r)| r.l_total);
    if let Some(msg) = outcome.abort {
        return Ok(VariantResult {
            name: name.into(),
            eval: None,
            final_loss,
            status: format!("non_finite: {}", msg.replace([',', '\n'], ";")),
        });
    }
    match evaluate_model(cfg, &outcome.net, eval_data) {
        Ok(eval) => Ok(VariantResult {
            name: name.into(),
            eval: Some(eval),
            final_loss,
            status: "ok".into(),
        }),
        Err(CliError::Numerical(msg)) => Ok(VariantResult {
            name: name.into(),
            eval: None,
            final_loss,
            status: format!("non_finite: {}", msg.replace([',', '\n'], ";")),
        }),
        Err(e) => Err(e),
    }
}

/// Runs jobs in order, or on scoped threads when `parallel` is set. Results
/// come back in job order either way.
fn run_all<J: Sync, R: Send>(
    parallel: bool,
    jobs: &[J],
    f: impl Fn(&J) -> CliResult<R> + Sync,
) -> CliResult<Vec<R>> {
    if !parallel {
        return jobs.iter().map(&f).collect();
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = jobs.iter().map(|j| s.spawn(|| f(j))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("variant thread panicked"))
            .collect()
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".into(), |x| format!("{x:.6e}"))
}

pub const ABLATION_HEADER: &str = "variant,mode,loss,psnr,ssim,e_warp,hf_energy,final_l_total,status";

/// Trains and evaluates every variant under one seed and budget.
pub fn run_ablation(
    cfg: &ExperimentConfig,
    out: &Path,
    variants: &[Variant],
) -> CliResult<Vec<VariantResult>> {
    let train_data = load_prepared(cfg, out, Split::Train)?;
    let eval_data = load_prepared(cfg, out, Split::Eval)?;
    if eval_data.is_empty() {
        return Err(CliError::Validation("evaluation split is empty".into()));
    }
    run_all(cfg.parallel, variants, |v| {
        let model = hfrec_core::cpc_net::DenoiserConfig {
            mode: v.mode,
            ..cfg.model
        };
        let loss = LossConfig {
            selection: v.loss,
            ..cfg.loss_config()
        };
        run_variant(cfg, v.name, model, loss, &train_data, &eval_data)
    })
}

pub fn cmd_ablate(cfg: &ExperimentConfig, out: &Path) -> CliResult<Vec<VariantResult>> {
    let results = run_ablation(cfg, out, &ABLATION_VARIANTS)?;
    let mut csv = String::new();
    csv.push_str("# published full-scale reference, context only (not reproducible at this scale, never asserted):\n");
    csv.push_str("# CPC + wavelet + HOG losses on SPMCS: PSNR 27.36 / SSIM 0.8169\n");
    let _ = writeln!(
        csv,
        "# seed {}, {} training steps, {} Euler steps",
        cfg.seed, cfg.training.steps, cfg.eval.sample_steps
    );
    csv.push_str(ABLATION_HEADER);
    csv.push('\n');
    for (v, r) in ABLATION_VARIANTS.iter().zip(&results) {
        let mean = r.eval.as_ref().map(|e| e.mean_record());
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            v.name,
            serde_json::to_value(v.mode)?.as_str().unwrap_or_default(),
            v.loss,
            mean.as_ref().map_or_else(|| "nan".into(), |m| m.psnr_field()),
            fmt_opt(mean.as_ref().map(|m| m.ssim)),
            fmt_opt(mean.as_ref().map(|m| m.e_warp)),
            fmt_opt(r.hf_energy()),
            fmt_opt(r.final_loss),
            r.status
        );
    }
    write(&out.join("ablation.csv"), &csv)?;
    Ok(results)
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub weight: f64,
    pub weights: SubbandWeights,
    pub init_l_rec: f64,
    pub init_l_wlf: f64,
    pub result: VariantResult,
}

pub const SWEEP_HEADER: &str =
    "weight,w_ll,w_lh,w_hl,w_hh,init_l_rec,init_l_wlf,psnr,ssim,e_warp,hf_energy,final_l_total,status";

/// One training and evaluation run per high-frequency weight, plus the loss
/// terms of the shared untrained snapshot on a fixed probe batch.
pub fn cmd_sweep_weights(cfg: &ExperimentConfig, out: &Path) -> CliResult<Vec<SweepRow>> {
    let train_data = load_prepared(cfg, out, Split::Train)?;
    let eval_data = load_prepared(cfg, out, Split::Eval)?;
    if eval_data.is_empty() {
        return Err(CliError::Validation("evaluation split is empty".into()));
    }
    let snapshot = init_net(cfg, cfg.model)?;
    let rows = run_all(cfg.parallel, &cfg.sweep_weights, |&w| {
        let loss = LossConfig {
            selection: LossSelection::Hr,
            weights: SubbandWeights::high_frequency(w),
            hog: cfg.hog,
        };
        let probe = probe_losses(cfg, &snapshot, loss, &train_data)?;
        let result = run_variant(cfg, &format!("w{w}"), cfg.model, loss, &train_data, &eval_data)?;
        Ok(SweepRow {
            weight: w,
            weights: loss.weights,
            init_l_rec: probe.l_rec,
            init_l_wlf: probe.l_wlf,
            result,
        })
    })?;
    let mut csv = String::new();
    csv.push_str("# published full-scale reference, context only (not reproducible at this scale, never asserted):\n");
    csv.push_str("# weight 2.0 gave the best PSNR (27.24) among {1.0, 1.5, 2.0, 3.0}\n");
    let _ = writeln!(
        csv,
        "# seed {}, {} training steps, {} Euler steps",
        cfg.seed, cfg.training.steps, cfg.eval.sample_steps
    );
    csv.push_str(SWEEP_HEADER);
    csv.push('\n');
    for r in &rows {
        let mean = r.result.eval.as_ref().map(|e| e.mean_record());
        let [ll, lh, hl, hh] = r.weights.as_array();
        let _ = writeln!(
            csv,
            "{},{ll},{lh},{hl},{hh},{:.8e},{:.8e},{},{},{},{},{},{}",
            r.weight,
            r.init_l_rec,
            r.init_l_wlf,
            mean.as_ref().map_or_else(|| "nan".into(), |m| m.psnr_field()),
            fmt_opt(mean.as_ref().map(|m| m.ssim)),
            fmt_opt(mean.as_ref().map(|m| m.e_warp)),
            fmt_opt(r.result.hf_energy()),
            fmt_opt(r.result.final_loss),
            r.result.status
        );
    }
    write(&out.join("sweep.csv"), &csv)?;
    Ok(rows)
}
