//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints exactly one PASS or FAIL line, even when all pass.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use hfrec::commands::{cmd_ablate, cmd_degrade, cmd_sweep_weights, cmd_synth, run_ablation, ABLATION_VARIANTS};
use hfrec::config::{ExperimentConfig, KindCount};
use hfrec_core::autodiff::{grad_check, GradCheckOptions, Graph};
use hfrec_core::cpc_net::{
    fusion_indices, record_network, time_features, Activation, CpcNet, DenoiserConfig, FusionMode, FusionSchedule,
    GammaMode,
};
use hfrec_core::degradation::{degrade_two_order, DegradationConfig};
use hfrec_core::diffusion::{forward_diffuse, rec_loss, velocity_target, DiffusionSchedule};
use hfrec_core::hog::{hog_descriptor, smoothness, HogConfig};
use hfrec_core::hr_loss::{loss_nodes, LossConfig};
use hfrec_core::metrics::{psnr, ssim, warping_error, WarpBoundary};
use hfrec_core::synth::{generate_clip, FlowField, SynthParams, TextureKind};
use hfrec_core::video::VideoClip;
use hfrec_core::wavelet::{haar_decompose, haar_reconstruct, wlf_loss, SubbandWeights};
use hfrec_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn uniform<T: hfrec_core::Element>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    Tensor::from_fn(shape.to_vec(), |_| T::lit(rng.gen_range(-1.0..1.0)))
}

fn random_latent_shape(rng: &mut ChaCha8Rng) -> Vec<usize> {
    vec![
        rng.gen_range(1..3),
        rng.gen_range(1..4),
        rng.gen_range(1..4),
        2 * rng.gen_range(1..9),
        2 * rng.gen_range(1..9),
    ]
}

fn wavelet_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_rec, mut worst_energy) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let shape = random_latent_shape(&mut rng);
        let x: Tensor<f32> = uniform(&mut rng, &shape);
        let s = haar_decompose(&x).map_err(|e| e.to_string())?;
        let back = haar_reconstruct(&s).map_err(|e| e.to_string())?;
        worst_rec = worst_rec.max(f64::from(back.max_abs_diff(&x).map_err(|e| e.to_string())?));
        // Parseval against direct sums in double precision.
        let sq = |t: &Tensor<f32>| t.data().iter().map(|&v| f64::from(v).powi(2)).sum::<f64>();
        let input = sq(&x);
        let bands = sq(&s.ll) + sq(&s.lh) + sq(&s.hl) + sq(&s.hh);
        worst_energy = worst_energy.max((bands - input).abs() / input);
    }
    let elapsed = start.elapsed();
    check(
        worst_rec < 1e-5 && worst_energy < 1e-4 && elapsed <= Duration::from_secs(1),
        format!("max reconstruction error {worst_rec:.2e}, max energy deviation {worst_energy:.2e}, {elapsed:.2?}"),
    )
}

fn loss_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let shape = random_latent_shape(&mut rng);
        let v: Tensor<f32> = uniform(&mut rng, &shape);
        let x0: Tensor<f32> = uniform(&mut rng, &shape);
        let eps: Tensor<f32> = uniform(&mut rng, &shape);
        let rec = f64::from(rec_loss(&v, &x0, &eps).map_err(|e| e.to_string())?);
        let wlf = f64::from(wlf_loss(&v, &x0, &eps, &SubbandWeights::high_frequency(1.0)).map_err(|e| e.to_string())?);
        worst = worst.max((wlf - rec).abs() / rec);
    }
    check(worst <= 1e-4, format!("max relative gap {worst:.2e} over 100 cases"))
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let cfg = DenoiserConfig {
        channels: 2,
        patch: [1, 8, 8],
        hidden: 6,
        l_main: 2,
        l_cpc: 1,
        mode: FusionMode::Cpc,
        time_embed: 4,
        activation: Activation::Tanh,
        gamma: GammaMode::Scalar,
        gamma_init: 1.0,
    };
    let shape = [1usize, 2, 2, 8, 8];
    let hog = HogConfig::default();
    let t = 0.35;
    // Search for a draw whose predicted velocity keeps clear of the HOG
    // orientation-bin and clipping kinks, where finite differences straddle
    // a corner. A small output projection plus a gentle ramp bias makes the
    // orientations well defined.
    let mut found = None;
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = CpcNet::<f64>::init(cfg, seed).map_err(|e| e.to_string())?;
        let w = net.params["out.w"].scale(0.05);
        net.params.insert("out.w".into(), w);
        let bias = Tensor::from_fn(vec![128], |i| {
            let ang = if i < 64 { 40.0f64 } else { 120.0 }.to_radians();
            let (y, x) = ((i % 64 / 8) as f64, (i % 8) as f64);
            ang.sin() * y + ang.cos() * x
        });
        net.params.insert("out.b".into(), bias);
        let x0 = uniform::<f64>(&mut rng, &shape).scale(0.5);
        let eps = uniform::<f64>(&mut rng, &shape).scale(0.5);
        let cond = uniform::<f64>(&mut rng, &shape);
        let zt = forward_diffuse(&x0, &eps, t, &DiffusionSchedule).map_err(|e| e.to_string())?.zt;
        let v = net.forward(&zt, &cond, t).map_err(|e| e.to_string())?;
        if smoothness(&v, &hog).map_err(|e| e.to_string())?.is_clear(1.0, 0.1, 0.01) {
            found = Some((net, x0, eps, cond, zt));
            break;
        }
    }
    let Some((net, x0, eps, cond, zt)) = found else {
        return Err("no draw clear of HOG kinks".into());
    };
    let mut g = Graph::<f64>::new();
    let nodes = record_network(&mut g, &net.config, &shape).map_err(|e| e.to_string())?;
    let target = g.constant("target", shape.to_vec()).map_err(|e| e.to_string())?;
    let loss = loss_nodes(&mut g, nodes.output, target, &LossConfig::default()).map_err(|e| e.to_string())?;
    let mut inputs: BTreeMap<String, Tensor<f64>> = net.params.clone();
    inputs.insert("z_t".into(), zt);
    inputs.insert("cond".into(), cond);
    inputs.insert("temb".into(), time_features(t, cfg.time_embed));
    inputs.insert("target".into(), velocity_target(&x0, &eps).map_err(|e| e.to_string())?);
    let opts = GradCheckOptions {
        tolerance: 1e-4,
        ..GradCheckOptions::default()
    };
    let report = grad_check(&g, &inputs, loss.total, opts).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    check(
        report.passed() && report.inputs.len() == net.params.len() && elapsed <= Duration::from_secs(30),
        format!(
            "{} parameter tensors, worst relative error {:.2e}, {elapsed:.2?}",
            report.inputs.len(),
            report.worst()
        ),
    )
}

/// Brute-force HOG: per-pixel gradients and votes by explicit loops, then
/// two-pass L2-Hys per block. Returns `[slice][by][bx] -> block vector`.
fn hog_oracle(x: &Tensor<f64>, cfg: &HogConfig) -> Vec<Vec<Vec<Vec<f64>>>> {
    let s = x.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let n = x.len() / (h * w);
    let px = |sl: usize, i: usize, j: usize| x.data()[(sl * h + i) * w + j];
    let c = cfg.cell_size;
    let (ch, cw) = (h / c, w / c);
    let width = 180.0 / cfg.bins as f64;
    let b = cfg.block_size;
    let mut out = Vec::new();
    for sl in 0..n {
        let mut cells = vec![vec![vec![0.0; cfg.bins]; cw]; ch];
        for i in 0..ch * c {
            for j in 0..cw * c {
                let gx = match j {
                    0 => px(sl, i, 1) - px(sl, i, 0),
                    _ if j == w - 1 => px(sl, i, j) - px(sl, i, j - 1),
                    _ => 0.5 * (px(sl, i, j + 1) - px(sl, i, j - 1)),
                };
                let gy = match i {
                    0 => px(sl, 1, j) - px(sl, 0, j),
                    _ if i == h - 1 => px(sl, i, j) - px(sl, i - 1, j),
                    _ => 0.5 * (px(sl, i + 1, j) - px(sl, i - 1, j)),
                };
                let m = (gx * gx + gy * gy + 1e-12).sqrt() - 1e-6;
                let th = gy.atan2(gx).to_degrees().rem_euclid(180.0);
                for k in 0..cfg.bins {
                    let mut d = (th - (k as f64 + 0.5) * width).abs();
                    d = d.min(180.0 - d);
                    if d < width {
                        cells[i / c][j / c][k] += m * (1.0 - d / width);
                    }
                }
            }
        }
        let mut blocks = vec![vec![Vec::new(); cw + 1 - b]; ch + 1 - b];
        for (by, row) in blocks.iter_mut().enumerate() {
            for (bx, block) in row.iter_mut().enumerate() {
                let mut v = Vec::new();
                for dy in 0..b {
                    for dx in 0..b {
                        v.extend_from_slice(&cells[by + dy][bx + dx]);
                    }
                }
                let norm = |v: &[f64]| (v.iter().map(|a| a * a).sum::<f64>() + 1e-10).sqrt();
                let n1 = norm(&v);
                let clipped: Vec<f64> = v.iter().map(|a| (a / n1).min(cfg.hys_clip)).collect();
                let n2 = norm(&clipped);
                *block = clipped.iter().map(|a| a / n2).collect();
            }
        }
        out.push(blocks);
    }
    out
}

fn hog_semantics() -> Outcome {
    let start = Instant::now();
    let cfg = HogConfig::default();
    let err = |e: hfrec_core::Error| e.to_string();

    // Intensity increasing down the rows: gradient straight along +y, 90°.
    let ramp = Tensor::from_fn(vec![1, 1, 1, 16, 16], |i| (i / 16) as f64 * 0.1);
    let d = hog_descriptor(&ramp, &cfg).map_err(err)?;
    let ninety = (90.0 / cfg.bin_width_deg()) as usize;
    let (bh, bw) = d.blocks();
    let mut off_bin = 0.0f64;
    let mut on_bin = 0.0f64;
    for by in 0..bh {
        for bx in 0..bw {
            for (f, v) in d.block_vector(0, by, bx).iter().enumerate() {
                if f % cfg.bins == ninety {
                    on_bin += v.abs();
                } else {
                    off_bin += v.abs();
                }
            }
        }
    }

    // Random inputs: oracle agreement, shift invariance, block norms.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut oracle_gap = 0.0f64;
    let mut shift_exact = true;
    let mut max_norm = 0.0f64;
    for _ in 0..20 {
        let x: Tensor<f64> = uniform(&mut rng, &[1, 2, 1, 12, 16]);
        let d = hog_descriptor(&x, &cfg).map_err(err)?;
        let oracle = hog_oracle(&x, &cfg);
        let (bh, bw) = d.blocks();
        for sl in 0..d.num_slices() {
            for by in 0..bh {
                for bx in 0..bw {
                    let v = d.block_vector(sl, by, bx);
                    for (a, b) in v.iter().zip(&oracle[sl][by][bx]) {
                        oracle_gap = oracle_gap.max((a - b).abs());
                    }
                    max_norm = max_norm.max(v.iter().map(|a| a * a).sum::<f64>().sqrt());
                }
            }
        }
        // Dyadic inputs and offsets keep every shifted value, and every
        // difference of shifted values, exactly representable.
        let q = x.map(|v| (v * 1024.0).round() / 1024.0);
        let k = f64::from(rng.gen_range(-64i32..64)) / 8.0;
        let dq = hog_descriptor(&q, &cfg).map_err(err)?;
        let shifted = hog_descriptor(&q.map(|v| v + k), &cfg).map_err(err)?;
        shift_exact &= shifted.features == dq.features;
    }
    let elapsed = start.elapsed();
    check(
        off_bin == 0.0
            && on_bin > 0.0
            && shift_exact
            && max_norm <= 1.0 + 1e-5
            && oracle_gap < 1e-9
            && elapsed <= Duration::from_secs(1),
        format!(
            "ramp mass off the 90° bin {off_bin:.1e}, shift invariance exact: {shift_exact}, \
             max block norm {max_norm:.8}, oracle gap {oracle_gap:.1e}, {elapsed:.2?}"
        ),
    )
}

fn cpc_structure() -> Outcome {
    let err = |e: hfrec_core::Error| e.to_string();
    let mut bad = 0;
    let mut schedules = 0;
    for l_main in 1..=64 {
        for l_cpc in 1..=l_main {
            schedules += 1;
            let s = FusionSchedule::new(l_main, l_cpc).map_err(err)?;
            let r = l_main.div_ceil(l_cpc);
            let idx = fusion_indices(&s).map_err(err)?;
            let ok = idx.len() == l_main
                && idx.iter().enumerate().all(|(k, &(i, j))| i == k && j == k / r && j < l_cpc);
            if !ok {
                bad += 1;
            }
        }
    }

    let base = DenoiserConfig {
        channels: 2,
        patch: [1, 4, 4],
        hidden: 8,
        l_main: 4,
        l_cpc: 2,
        mode: FusionMode::Cpc,
        time_embed: 4,
        activation: Activation::Silu,
        gamma: GammaMode::Scalar,
        gamma_init: 0.0,
    };
    let shape = [1, 2, 2, 8, 8];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let z: Tensor<f32> = uniform(&mut rng, &shape);
    let cond: Tensor<f32> = uniform(&mut rng, &shape);
    let cpc = CpcNet::<f32>::init(base, 9).map_err(err)?;
    let plain = CpcNet::<f32>::init(
        DenoiserConfig {
            mode: FusionMode::NoControl,
            ..base
        },
        9,
    )
    .map_err(err)?;
    let bit_exact = cpc.forward(&z, &cond, 0.4).map_err(err)? == plain.forward(&z, &cond, 0.4).map_err(err)?;

    let vanilla = CpcNet::<f32>::init(
        DenoiserConfig {
            mode: FusionMode::VanillaControlnet,
            ..base
        },
        9,
    )
    .map_err(err)?;
    let branch = |n: &CpcNet<f32>| {
        n.params
            .iter()
            .filter(|(k, _)| k.starts_with("branch."))
            .map(|(_, t)| t.len())
            .sum::<usize>()
    };
    let (pc, pv) = (cpc.branch_input_param_count(), vanilla.branch_input_param_count());
    let (bc, bv) = (branch(&cpc), branch(&vanilla));
    check(
        bad == 0 && bit_exact && pc < pv && bc < bv,
        format!(
            "{schedules} schedules, {bad} invalid; gamma=0 matches no_control bit-exactly: {bit_exact}; \
             branch input params {pc} < {pv}, branch params {bc} < {bv}"
        ),
    )
}

fn degradation_determinism() -> Outcome {
    let err = |e: hfrec_core::Error| e.to_string();
    let p = SynthParams {
        frames: 4,
        ..SynthParams::default()
    };
    let (clip, _) = generate_clip(TextureKind::TranslatingNoiseTexture, &p, 3).map_err(err)?;
    let cfg = DegradationConfig {
        seed: 77,
        ..DegradationConfig::default()
    };
    let (a, ra) = degrade_two_order(&clip, &cfg).map_err(err)?;
    let (b, rb) = degrade_two_order(&clip, &cfg).map_err(err)?;
    let identical = a.data.iter().map(|v| v.to_bits()).eq(b.data.iter().map(|v| v.to_bits())) && ra == rb;
    let (c, _) = degrade_two_order(&clip, &DegradationConfig { seed: 78, ..cfg }).map_err(err)?;
    let seed_matters = c.data != a.data;
    let (id, _) = degrade_two_order(&clip, &DegradationConfig::identity(5)).map_err(err)?;
    let id_err = id
        .data
        .iter()
        .zip(&clip.data)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f32, f32::max);
    check(
        identical && seed_matters && id_err <= 1e-6,
        format!("repeat bit-identical: {identical}, other seed differs: {seed_matters}, identity max error {id_err:.1e}"),
    )
}

fn metrics_oracles() -> Outcome {
    let err = |e: hfrec_core::Error| e.to_string();
    let a = VideoClip::from_fn(3, 16, 16, 3, |t, y, x, c| ((t + y * 3 + x * 5 + c) % 11) as f32 / 16.0).map_err(err)?;
    let mut b = a.clone();
    for v in &mut b.data {
        *v += 0.1;
    }
    // MSE of the stored f32 values, in double precision.
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (f64::from(*x) - f64::from(*y)).powi(2))
        .sum::<f64>()
        / a.data.len() as f64;
    let p = psnr(&a, &b).map_err(err)?;
    let psnr_ok = (p.db - 20.0).abs() < 1e-4 && (p.db - 10.0 * (1.0 / mse).log10()).abs() < 1e-6;

    let s = ssim(&a, &a).map_err(err)?;

    let mut warp_static = f64::NAN;
    let mut worst_translation = 0.0f64;
    let base = SynthParams::default();
    let (clip, flows) = generate_clip(TextureKind::Static, &base, 1).map_err(err)?;
    let zero = vec![FlowField::zeros(base.height, base.width); clip.frames - 1];
    if flows.iter().all(|f| f.data.iter().all(|&v| v == 0.0)) {
        warp_static = warping_error(&clip, &zero, WarpBoundary::Masked).map_err(err)?;
    }
    let cases = [
        (TextureKind::TranslatingSinusoid, base),
        (TextureKind::TranslatingChecker, base),
        (TextureKind::TranslatingNoiseTexture, base),
        (TextureKind::TranslatingSinusoid, SynthParams { velocity: [0.0, -2.0], ..base }),
        (TextureKind::TranslatingSinusoid, SynthParams { frequency: 1, velocity: [0.37, -0.61], ..base }),
        (TextureKind::TranslatingNoiseTexture, SynthParams { frequency: 1, velocity: [0.37, -0.61], ..base }),
    ];
    for (kind, p) in cases {
        let (clip, flows) = generate_clip(kind, &p, 2).map_err(err)?;
        for boundary in [WarpBoundary::Masked, WarpBoundary::Periodic] {
            worst_translation = worst_translation.max(warping_error(&clip, &flows, boundary).map_err(err)?);
        }
    }
    check(
        psnr_ok && s == 1.0 && warp_static == 0.0 && worst_translation < 1e-3,
        format!(
            "PSNR {:.6} dB at MSE {mse:.6}, SSIM(a, a) {s}, E_warp static {warp_static}, \
             worst translation E_warp {worst_translation:.2e}",
            p.db
        ),
    )
}

/// Desk-scale setting for the ablation trend: 64×64 two-frame clips and a
/// 2×2×2 patch, so the token width (24) fits under the hidden width.
fn ablation_config(seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::minimal(seed);
    c.dataset.kinds = vec![
        KindCount {
            kind: TextureKind::TranslatingSinusoid,
            count: 4,
        },
        KindCount {
            kind: TextureKind::TranslatingNoiseTexture,
            count: 4,
        },
    ];
    c.dataset.params = SynthParams {
        frames: 2,
        height: 64,
        width: 64,
        ..SynthParams::default()
    };
    c.model.patch = [2, 2, 2];
    c.model.hidden = 32;
    c.training.steps = 2000;
    c.training.log_every = 100;
    c.eval.sample_steps = 16;
    c
}

fn desk_scale_ablation() -> Outcome {
    let mut wins = 0;
    let mut lines = Vec::new();
    let mut full_run = Duration::ZERO;
    for seed in 0..4u64 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let cfg = ablation_config(seed);
        cfg.validate().map_err(|e| e.to_string())?;
        cmd_synth(&cfg, dir.path()).map_err(|e| e.to_string())?;
        cmd_degrade(&cfg, dir.path()).map_err(|e| e.to_string())?;
        let results = if seed == 0 {
            let start = Instant::now();
            let r = cmd_ablate(&cfg, dir.path()).map_err(|e| e.to_string())?;
            full_run = start.elapsed();
            r
        } else {
            let pair: Vec<_> = ABLATION_VARIANTS
                .iter()
                .copied()
                .filter(|v| v.name == "cpc_rec" || v.name == "cpc_hr")
                .collect();
            run_ablation(&cfg, dir.path(), &pair).map_err(|e| e.to_string())?
        };
        let energy = |name: &str| results.iter().find(|r| r.name == name).and_then(|r| r.hf_energy());
        let (Some(rec), Some(hr)) = (energy("cpc_rec"), energy("cpc_hr")) else {
            return Err(format!("seed {seed}: a variant did not finish"));
        };
        if hr <= rec {
            wins += 1;
        }
        lines.push(format!("seed {seed}: hr {hr:.4e} vs rec {rec:.4e}"));
    }
    check(
        wins >= 3 && full_run < Duration::from_secs(3600),
        format!(
            "HR-loss wins {wins}/4 on HF residual energy ({}); full 5-variant ablation {:.0?}",
            lines.join("; "),
            full_run
        ),
    )
}

fn small_config(seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::minimal(seed);
    c.dataset.kinds = vec![
        KindCount {
            kind: TextureKind::TranslatingSinusoid,
            count: 2,
        },
        KindCount {
            kind: TextureKind::TranslatingChecker,
            count: 2,
        },
    ];
    c.dataset.params = SynthParams {
        frames: 4,
        height: 32,
        width: 32,
        ..SynthParams::default()
    };
    c.model.hidden = 16;
    c.model.l_main = 2;
    c.model.l_cpc = 1;
    c.model.time_embed = 8;
    c.training.steps = 20;
    c.training.log_every = 5;
    c.eval.sample_steps = 4;
    c
}

fn weight_sweep() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = small_config(21);
    cmd_synth(&cfg, dir.path()).map_err(|e| e.to_string())?;
    cmd_degrade(&cfg, dir.path()).map_err(|e| e.to_string())?;
    let rows = cmd_sweep_weights(&cfg, dir.path()).map_err(|e| e.to_string())?;
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).map_err(|e| e.to_string())?;
    let data_rows = csv.lines().filter(|l| !l.starts_with('#')).count() - 1;
    let weights: Vec<f64> = rows.iter().map(|r| r.weight).collect();
    let wlf: Vec<f64> = rows.iter().map(|r| r.init_l_wlf).collect();
    let increasing = wlf.windows(2).all(|w| w[1] > w[0]);
    let unit_gap = (rows[0].init_l_wlf - rows[0].init_l_rec).abs() / rows[0].init_l_rec;
    check(
        weights == [1.0, 1.5, 2.0, 3.0] && data_rows == 4 && increasing && unit_gap < 1e-4,
        format!(
            "{data_rows} rows for weights {weights:?}; snapshot l_wlf {} (strictly increasing: {increasing}); \
             weight 1.0 l_wlf vs l_rec gap {unit_gap:.1e}",
            wlf.iter().map(|v| format!("{v:.5}")).collect::<Vec<_>>().join(" < ")
        ),
    )
}

fn csv_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap().flatten() {
        let path = entry.path();
        if path.extension().is_some_and(|e| e == "csv") {
            out.insert(entry.file_name().to_string_lossy().into_owned(), std::fs::read(&path).unwrap());
        }
    }
    out
}

fn reproducibility() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = small_config(33);
    let cfg_path = root.path().join("config.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&cfg).unwrap()).map_err(|e| e.to_string())?;
    let commands = ["synth", "degrade", "train", "eval", "ablate", "sweep-weights"];
    let mut runs = Vec::new();
    for run in ["a", "b"] {
        let out = root.path().join(run);
        for cmd in commands {
            let status = Command::new(env!("CARGO_BIN_EXE_hfrec"))
                .args([cmd, "--config"])
                .arg(&cfg_path)
                .arg("--out")
                .arg(&out)
                .status()
                .map_err(|e| e.to_string())?;
            if !status.success() {
                return Err(format!("`hfrec {cmd}` failed with {status}"));
            }
        }
        runs.push(csv_files(&out));
    }
    let names: Vec<&String> = runs[0].keys().collect();
    let differing: Vec<&String> = names.iter().copied().filter(|n| runs[0].get(*n) != runs[1].get(*n)).collect();
    check(
        names.len() == 6 && runs[0].len() == runs[1].len() && differing.is_empty(),
        format!(
            "{} reports compared ({}), differing: {differing:?}",
            names.len(),
            names.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("wavelet correctness", wavelet_correctness),
        ("loss identity", loss_identity),
        ("gradient suite", gradient_suite),
        ("HOG semantics", hog_semantics),
        ("CPC structure", cpc_structure),
        ("degradation determinism", degradation_determinism),
        ("metrics oracles", metrics_oracles),
        ("desk-scale ablation", desk_scale_ablation),
        ("weight-sweep harness", weight_sweep),
        ("reproducibility", reproducibility),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let label = format!("criterion {:>2} {name}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| label.contains(f.as_str())) {
            continue;
        }
        match run() {
            Ok(detail) => println!("PASS {label}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {label}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
