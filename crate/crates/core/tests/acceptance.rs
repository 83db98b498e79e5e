//! Acceptance suite: runs every criterion in sequence and prints one
//! PASS/FAIL line per criterion. Exits nonzero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use univnet::discriminators::{SubDiscriminatorId, SubScore};
use univnet::dsp::{
    log_mel, stft_magnitude, write_wav, AudioBuffer, StftParams, HOP, SAMPLE_RATE,
};
use univnet::generator::{location_variable_conv, sample_noise, Generator, GeneratorConfig};
use univnet::gradcheck;
use univnet::losses::{aux_loss, discriminator_loss, log_stft_magnitude, spectral_convergence};
use univnet::metrics::{benchmark, spectral_rmse};
use univnet::nn::Module;
use univnet::tensor::{conv1d, Padding, Tensor};
use univnet::training::{checkpoint_path, load_generator, train, Checkpoint, Dataset, TrainConfig, Trainer};

use common::voiced_clip;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn gradient_suite() -> Outcome {
    let report = gradcheck::run_suite(0).map_err(err)?;
    let worst = |tol: f64| {
        report
            .results
            .iter()
            .filter(|r| r.tolerance == tol)
            .map(|r| r.max_rel_err)
            .fold(0.0, f64::max)
    };
    let failed: Vec<String> = report
        .results
        .iter()
        .filter(|r| !r.passed())
        .map(|r| format!("{} ({:.2e}, {} skipped)", r.name, r.max_rel_err, r.nonsmooth))
        .collect();
    check(failed.is_empty(), || format!("failed: {}", failed.join(", ")))?;
    check(report.seconds < 120.0, || format!("took {:.1} s", report.seconds))?;
    Ok(format!(
        "{} checks, worst op {:.2e} (< {:.0e}), worst composed {:.2e} (< {:.0e}), {:.1} s",
        report.results.len(),
        worst(gradcheck::OP_TOLERANCE),
        gradcheck::OP_TOLERANCE,
        worst(gradcheck::COMPOSED_TOLERANCE),
        gradcheck::COMPOSED_TOLERANCE,
        report.seconds
    ))
}

fn lvc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f32;
    let configs = 24;
    for _ in 0..configs {
        let c_in = rng.random_range(1..6);
        let c_out = rng.random_range(1..6);
        let k = [1, 3, 5][rng.random_range(0..3)];
        let dilation = [1, 2, 3, 9][rng.random_range(0..4)];
        let hop = [1, 4, 8, 16][rng.random_range(0..4)];
        let frames = rng.random_range(1..6);
        let len = hop * frames;
        let mut uniform = |n: usize| -> Vec<f32> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let x = Tensor::new(uniform(c_in * len), &[c_in, len]).unwrap();
        let w = uniform(c_out * c_in * k);
        let b = uniform(c_out);
        // the same kernel and bias for every frame
        let kernels: Vec<f32> = w.iter().flat_map(|&v| std::iter::repeat_n(v, frames)).collect();
        let biases: Vec<f32> = b.iter().flat_map(|&v| std::iter::repeat_n(v, frames)).collect();
        let kernels = Tensor::new(kernels, &[c_out * c_in * k, frames]).unwrap();
        let biases = Tensor::new(biases, &[c_out, frames]).unwrap();
        let lvc = location_variable_conv(&x, &kernels, &biases, k, dilation, hop).map_err(err)?;
        let wt = Tensor::new(w, &[c_out, c_in, k]).unwrap();
        let bt = Tensor::new(b, &[c_out]).unwrap();
        let conv = conv1d(&x, &wt, Some(&bt), 1, dilation, Padding::Same).map_err(err)?;
        check(lvc.shape() == conv.shape(), || format!("shape {:?} vs {:?}", lvc.shape(), conv.shape()))?;
        for (a, c) in lvc.to_vec().iter().zip(conv.to_vec()) {
            worst = worst.max((a - c).abs());
        }
    }
    check(worst < 1e-5, || format!("max abs diff {worst:.3e}"))?;
    Ok(format!("{configs} configs, max abs diff {worst:.2e} (< 1e-5)"))
}

/// Direct O(N²) DFT of the centered, reflect-padded, Hann-windowed frames.
fn naive_stft(x: &[f32], p: StftParams) -> Vec<f64> {
    let pad = p.n_fft / 2;
    let n = x.len() as isize;
    let sample = |i: isize| {
        let j = i - pad as isize;
        let r = if j < 0 { -j } else if j >= n { 2 * (n - 1) - j } else { j };
        x[r as usize] as f64
    };
    let offset = (p.n_fft - p.win_length) / 2;
    let tau = 2.0 * std::f64::consts::PI;
    let frames = x.len() / p.hop + 1;
    let mut out = Vec::with_capacity(frames * (p.n_fft / 2 + 1));
    for f in 0..frames {
        let frame: Vec<f64> = (0..p.n_fft)
            .map(|m| {
                let w = if m >= offset && m < offset + p.win_length {
                    0.5 * (1.0 - (tau * (m - offset) as f64 / p.win_length as f64).cos())
                } else {
                    0.0
                };
                w * sample((f * p.hop + m) as isize)
            })
            .collect();
        for k in 0..=p.n_fft / 2 {
            let (mut re, mut im) = (0.0, 0.0);
            for (m, v) in frame.iter().enumerate() {
                let a = tau * (k * m % p.n_fft) as f64 / p.n_fft as f64;
                re += v * a.cos();
                im -= v * a.sin();
            }
            out.push((re * re + im * im).sqrt());
        }
    }
    out
}

fn stft_oracle() -> Outcome {
    let x = voiced_clip(0.25, 3);
    let mut sets = StftParams::MULTI_RESOLUTION.to_vec();
    sets.push(StftParams::FEATURE);
    let mut parts = Vec::new();
    for p in sets {
        let fast = stft_magnitude(&x, p).map_err(err)?;
        let slow = naive_stft(&x.samples, p);
        check(fast.mag.len() == slow.len(), || "size mismatch".into())?;
        let diff = fast.mag.iter().zip(&slow).map(|(&a, b)| (a as f64 - b).powi(2)).sum::<f64>().sqrt();
        let norm = slow.iter().map(|b| b * b).sum::<f64>().sqrt();
        let rel = diff / norm;
        // per-bin error relative to the frame's peak
        let bins = p.n_fft / 2 + 1;
        let mut worst_bin = 0.0f64;
        for (fr, sr) in fast.mag.chunks(bins).zip(slow.chunks(bins)) {
            let peak = sr.iter().cloned().fold(0.0, f64::max).max(1e-12);
            for (&a, b) in fr.iter().zip(sr) {
                worst_bin = worst_bin.max((a as f64 - b).abs() / peak);
            }
        }
        check(rel < 1e-4 && worst_bin < 1e-4, || {
            format!("({}, {}, {}): rel {rel:.2e}, bin {worst_bin:.2e}", p.n_fft, p.hop, p.win_length)
        })?;
        parts.push(format!("({},{},{}) {rel:.1e}", p.n_fft, p.hop, p.win_length));
    }
    Ok(format!("rel err {} (< 1e-4)", parts.join(", ")))
}

fn score(v: Vec<f64>, id: SubDiscriminatorId) -> SubScore<f64> {
    SubScore {
        map: Tensor::new(v.clone(), &[v.len()]).unwrap(),
        source: id,
    }
}

fn loss_identities() -> Outcome {
    let x = voiced_clip(0.3, 4);
    let xt = Tensor::<f64>::new(x.samples.iter().map(|&v| v as f64).collect(), &[x.len()]).unwrap();
    let mut worst = 0.0f64;
    for p in StftParams::MULTI_RESOLUTION {
        let s = univnet::dsp::stft_magnitude_tensor(&xt, p).map_err(err)?;
        worst = worst.max(spectral_convergence(&s, &s).map_err(err)?.value.item().abs());
        worst = worst.max(log_stft_magnitude(&s, &s).map_err(err)?.item().abs());
    }
    let aux = aux_loss(&xt, &xt, &StftParams::MULTI_RESOLUTION).map_err(err)?;
    worst = worst.max(aux.total.item().abs());

    let ids = [SubDiscriminatorId::Period(2), SubDiscriminatorId::Period(3)];
    let ones = |n| score(vec![1.0; n], ids[0]);
    let zeros = |n| score(vec![0.0; n], ids[0]);
    let perfect = discriminator_loss(&[ones(6), ones(3)], &[zeros(6), zeros(3)]).map_err(err)?;
    worst = worst.max(perfect.item().abs());

    let a = score(vec![0.3, -0.2, 0.9], ids[0]);
    let b = score(vec![0.1, 0.5], ids[1]);
    let fa = score(vec![-0.4, 0.2, 0.0], ids[0]);
    let fb = score(vec![0.7, 0.6], ids[1]);
    let one = discriminator_loss(&[a.clone(), b.clone()], &[fa.clone(), fb.clone()]).map_err(err)?.item();
    let dup = discriminator_loss(
        &[a.clone(), b.clone(), a.clone(), b.clone()],
        &[fa.clone(), fb.clone(), fa, fb],
    )
    .map_err(err)?
    .item();
    let dup_diff = (one - dup).abs();
    worst = worst.max(dup_diff);
    check(worst < 1e-6, || format!("largest deviation {worst:.2e}"))?;
    Ok(format!("largest deviation {worst:.1e} (< 1e-6)"))
}

fn length_contract() -> Outcome {
    let g = Generator::<f32>::new(GeneratorConfig::c16(), 0).map_err(err)?;
    let mut lens = Vec::new();
    for frames in [1, 7, 20, 94] {
        let y = g
            .forward(&sample_noise(frames, 1), &Tensor::zeros(&[100, frames]))
            .map_err(err)?;
        check(y.numel() == frames * HOP, || format!("{frames} frames gave {}", y.numel()))?;
        lens.push(format!("{frames}→{}", y.numel()));
    }
    Ok(lens.join(", "))
}

fn parameter_counts() -> Outcome {
    let mut parts = Vec::new();
    for (config, published) in [(GeneratorConfig::c16(), 4.00e6), (GeneratorConfig::c32(), 14.86e6)] {
        let c = config.channels;
        let n = Generator::<f32>::new(config, 0).map_err(err)?.num_params() as f64;
        let dev = (n - published) / published;
        check(dev.abs() < 0.2, || format!("c{c}: {n} vs {published} ({:+.1}%)", dev * 100.0))?;
        parts.push(format!("c{c} {:.3}M vs {:.2}M ({:+.2}%)", n / 1e6, published / 1e6, dev * 100.0));
    }
    Ok(parts.join(", "))
}

/// Overfit protocol; thresholds below were fixed by a pilot run of this
/// exact protocol.
mod overfit {
    pub const CHANNELS: usize = 8;
    pub const LR: f64 = 1e-3;
    pub const WARMUP: u64 = 100;
    pub const TOTAL: u64 = 1000;
    pub const EVAL_STEPS: [u64; 4] = [50, 200, 600, 1000];
    pub const MAX_AUX_RATIO: f64 = 0.5;
    pub const MAX_MINUTES: f64 = 30.0;
    /// Copy-synthesis RMSE the final checkpoint must beat. The pilot reached
    /// 0.114; the margin absorbs floating-point differences across platforms.
    pub const MAX_FINAL_RMSE: f64 = 0.2;
}

fn overfit_config() -> TrainConfig {
    TrainConfig {
        channels: overfit::CHANNELS,
        batch_size: 1,
        // the whole one-second clip: 93 complete frames
        segment_frames: 93,
        // a thousand steps stand in for a million; see the README
        lr: overfit::LR,
        warmup_steps: overfit::WARMUP,
        total_steps: overfit::TOTAL,
        mrsd_channels: 8,
        mpwd_channels: vec![8, 16, 32, 64, 64],
        checkpoint_interval: 200,
        log_interval: 10,
        seed: 7,
        ..TrainConfig::default()
    }
}

/// Full-clip auxiliary loss and copy-synthesis RMSE with fixed noise.
fn evaluate_clip(g: &Generator<f32>, x: &AudioBuffer, stats: &univnet::dsp::NormStats) -> Result<(f64, f64), String> {
    let mel = log_mel(x, Some(stats)).map_err(err)?;
    let y = g.synthesize(&mel, 11).map_err(err)?;
    let rmse = spectral_rmse(x, &y).map_err(err)?;
    let n = x.len();
    let xt = Tensor::<f32>::new(x.samples.clone(), &[n]).unwrap();
    let yt = Tensor::<f32>::new(y.samples[..n].to_vec(), &[n]).unwrap();
    let aux = aux_loss(&xt, &yt, &StftParams::MULTI_RESOLUTION).map_err(err)?;
    Ok((aux.total.item() as f64, rmse))
}

fn overfit_one_clip(out_dir: &Path) -> Outcome {
    let x = voiced_clip(1.0, 7);
    let data = Dataset::from_audio(vec![("clip".into(), x.clone())], None).map_err(err)?;
    let mut trainer = Trainer::new(overfit_config(), data.stats.clone()).map_err(err)?;
    let mut evals: Vec<(u64, f64, f64)> = Vec::new();
    let mut eval_secs = 0.0;
    let start = Instant::now();
    train(&mut trainer, &data, out_dir, |t, _| {
        if overfit::EVAL_STEPS.contains(&t.step()) {
            let e = Instant::now();
            let (aux, rmse) = evaluate_clip(t.generator(), &x, t.stats())
                .map_err(univnet::Error::Input)?;
            eval_secs += e.elapsed().as_secs_f64();
            println!("    step {:>4}: aux {aux:.4}, copy-synthesis rmse {rmse:.4}", t.step());
            evals.push((t.step(), aux, rmse));
        }
        Ok(())
    })
    .map_err(err)?;
    let minutes = (start.elapsed().as_secs_f64() - eval_secs) / 60.0;
    let at = |s: u64| evals.iter().find(|e| e.0 == s).copied().unwrap();
    let (a50, a1000) = (at(50).1, at(1000).1);
    let (r200, r600, r1000) = (at(200).2, at(600).2, at(1000).2);

    // the checkpoint written at the end reproduces the in-memory generator
    let ckpt = Checkpoint::load(checkpoint_path(out_dir, overfit::TOTAL)).map_err(err)?;
    let (_, ckpt_rmse) = evaluate_clip(&load_generator(&ckpt).map_err(err)?, &x, &ckpt.metadata.norm_stats)?;

    let ratio = a1000 / a50;
    let summary = format!(
        "aux {a50:.4} → {a1000:.4} (ratio {ratio:.3}, need < {}), rmse {r200:.4} → {r600:.4} → {r1000:.4}, {minutes:.1} min",
        overfit::MAX_AUX_RATIO
    );
    check(ratio < overfit::MAX_AUX_RATIO, || summary.clone())?;
    check(r200 > r600 && r600 > r1000, || format!("rmse not monotone: {summary}"))?;
    check(ckpt_rmse == r1000, || format!("checkpoint rmse {ckpt_rmse} vs {r1000}"))?;
    check(ckpt_rmse < overfit::MAX_FINAL_RMSE, || {
        format!("final rmse {ckpt_rmse:.4} above {}: {summary}", overfit::MAX_FINAL_RMSE)
    })?;
    check(minutes < overfit::MAX_MINUTES, || format!("too slow: {summary}"))?;
    Ok(summary)
}

fn ablation_smoke() -> Outcome {
    let x = voiced_clip(0.5, 8);
    let data = Dataset::from_audio(vec![("clip".into(), x.clone())], None).map_err(err)?;
    let mel = log_mel(&x, Some(&data.stats)).map_err(err)?.slice_frames(0, 20).map_err(err)?;
    let mut parts = Vec::new();
    for name in ["no_lvc", "no_gau", "no_mrsd", "no_mpwd"] {
        let start = Instant::now();
        let mut config = TrainConfig {
            channels: 8,
            batch_size: 1,
            segment_frames: 16,
            warmup_steps: 10,
            total_steps: 50,
            mrsd_channels: 4,
            mpwd_channels: vec![4, 8, 16],
            seed: 3,
            ..TrainConfig::default()
        };
        match name {
            "no_lvc" => config.no_lvc = true,
            "no_gau" => config.no_gau = true,
            "no_mrsd" => config.no_mrsd = true,
            _ => config.no_mpwd = true,
        }
        let mut t = Trainer::new(config, data.stats.clone()).map_err(err)?;
        for _ in 0..50 {
            let l = t.train_step(&data).map_err(|e| format!("{name}: {e}"))?;
            check(l.is_finite(), || format!("{name}: non-finite loss at step {}", t.step()))?;
        }
        let nan = t
            .generator()
            .parameters()
            .iter()
            .chain(&t.discriminators().parameters())
            .any(|p| p.tensor.to_vec().iter().any(|v| !v.is_finite()));
        check(!nan, || format!("{name}: non-finite parameters"))?;
        let y = t.generator().synthesize(&mel, 0).map_err(err)?;
        check(y.len() == 20 * HOP, || format!("{name}: {} samples", y.len()))?;
        check(y.samples.iter().all(|v| v.is_finite()), || format!("{name}: non-finite audio"))?;
        parts.push(format!("{name} {:.0}s", start.elapsed().as_secs_f64()));
    }
    Ok(format!("50 steps each, finite, 20 frames → {} samples: {}", 20 * HOP, parts.join(", ")))
}

fn benchmark_harness() -> Outcome {
    let g = Generator::<f32>::new(GeneratorConfig::c16(), 0).map_err(err)?;
    let r = benchmark(&g, 1.0, 10, 0).map_err(err)?;
    let want = r.samples as f64 / r.median_secs / SAMPLE_RATE as f64;
    check(r.realtime_factor > 0.0 && (r.realtime_factor - want).abs() <= 1e-9 * want, || {
        format!("realtime_factor {} vs {want}", r.realtime_factor)
    })?;
    check(r.params == g.num_params() && r.runs >= 10, || "report fields".into())?;
    let json = serde_json::to_value(&r).map_err(err)?;
    check(json.get("realtime_factor").is_some() && json.get("params").is_some(), || "json".into())?;
    Ok(format!(
        "c16: {} params, {:.0} samples/s, realtime ×{:.3}, median {:.3} s over {} runs{}",
        r.params,
        r.samples_per_sec,
        r.realtime_factor,
        r.median_secs,
        r.runs,
        if r.unstable { " (unstable timing)" } else { "" }
    ))
}

fn determinism(dir: &Path) -> Outcome {
    let x = voiced_clip(0.5, 9);
    let data = Dataset::from_audio(vec![("clip".into(), x.clone())], None).map_err(err)?;
    let config = TrainConfig {
        channels: 4,
        batch_size: 2,
        segment_frames: 8,
        warmup_steps: 2,
        total_steps: 6,
        mrsd_channels: 2,
        mpwd_channels: vec![2, 4],
        seed: 21,
        ..TrainConfig::default()
    };
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.join(run);
        let mut t = Trainer::new(config.clone(), data.stats.clone()).map_err(err)?;
        let s = train(&mut t, &data, &out, |_, _| Ok(())).map_err(err)?;
        let log = std::fs::read(&s.loss_log).map_err(err)?;
        let ckpt = Checkpoint::load(checkpoint_path(&out, config.total_steps)).map_err(err)?;
        let g = load_generator(&ckpt).map_err(err)?;
        let mel = log_mel(&x, Some(&ckpt.metadata.norm_stats)).map_err(err)?;
        let wav = out.join("out.wav");
        write_wav(&wav, &g.synthesize(&mel, 5).map_err(err)?).map_err(err)?;
        outputs.push((log, std::fs::read(&wav).map_err(err)?));
    }
    check(outputs[0].0 == outputs[1].0, || "loss logs differ".into())?;
    check(outputs[0].1 == outputs[1].1, || "inference WAVs differ".into())?;
    Ok(format!(
        "loss logs identical ({} bytes), WAVs byte-identical ({} bytes)",
        outputs[0].0.len(),
        outputs[0].1.len()
    ))
}

fn main() {
    // optional name filters; a criterion runs if any of them matches
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let dir = tempfile::tempdir().expect("temporary directory");
    let overfit_dir = dir.path().join("overfit");
    let determinism_dir = dir.path().join("determinism");
    let criteria: Vec<(u32, &str, Box<dyn Fn() -> Outcome>)> = vec![
        (1, "gradient suite", Box::new(gradient_suite)),
        (2, "LVC oracle", Box::new(lvc_oracle)),
        (3, "STFT oracle", Box::new(stft_oracle)),
        (4, "loss identities", Box::new(loss_identities)),
        (5, "length contract", Box::new(length_contract)),
        (6, "parameter counts", Box::new(parameter_counts)),
        (7, "overfit one clip", Box::new(move || overfit_one_clip(&overfit_dir))),
        (8, "ablation smoke", Box::new(ablation_smoke)),
        (9, "benchmark harness", Box::new(benchmark_harness)),
        (10, "determinism", Box::new(move || determinism(&determinism_dir))),
    ];
    let mut failures = 0;
    println!("acceptance criteria");
    for (n, name, run) in &criteria {
        let label = format!("criterion {n:>2} {name}");
        if !filters.is_empty() && !filters.iter().any(|f| label.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("{label}: PASS [{secs:.1} s] {detail}"),
            Err(detail) => {
                failures += 1;
                println!("{label}: FAIL [{secs:.1} s] {detail}");
            }
        }
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
