//! Finite-difference verification of every differentiable op and of the
//! composed generator and discriminator objectives, in f64.
//!
//! Each check reduces an op's output to `Σ r ⊙ op(x)` with fixed random
//! weights `r`, backpropagates once, and compares sampled gradient entries
//! against a Richardson-extrapolated central difference. The error of an
//! entry is `|analytic − numeric| / max(|numeric|, 1e-8)`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::discriminators::{reshape2d, DiscriminatorConfig, Discriminators, SubDiscriminatorId, SubScore};
use crate::dsp::{stft_magnitude_tensor, StftParams};
use crate::error::Result;
use crate::generator::{gau, location_variable_conv, sample_noise, Generator, GeneratorConfig};
use crate::losses::{
    aux_loss_from_spectrograms, discriminator_loss, generator_adversarial_loss, generator_loss,
    log_stft_magnitude, spectral_convergence, LAMBDA_AUX,
};
use crate::nn::Module;
use crate::tensor::{conv1d, conv2d, conv_transpose1d, weight_norm, Padding, Tensor};

/// Tolerance for single ops.
pub const OP_TOLERANCE: f64 = 1e-6;
/// Tolerance for the composed objectives.
pub const COMPOSED_TOLERANCE: f64 = 1e-4;

const STEPS: [f64; 3] = [1e-4, 1e-5, 1e-6];
const DENOM_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    /// Gradient entries compared.
    pub entries: usize,
    /// Entries skipped because the loss has a kink within every probe step.
    pub nonsmooth: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.entries > 0 && self.nonsmooth <= self.entries / 10 && self.max_rel_err < self.tolerance
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub results: Vec<CheckResult>,
    pub seconds: f64,
}

impl GradCheckReport {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(CheckResult::passed)
    }
}

type T = Tensor<f64>;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> T {
    let n = shape.iter().product();
    Tensor::param((0..n).map(|_| rng.random_range(lo..hi)).collect(), shape).unwrap()
}

/// Uniform in `±[0.1, 1]`, away from the kinks of abs/leaky ReLU.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> T {
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::param(v, shape).unwrap()
}

/// Richardson-extrapolated central difference. Two extrapolations from
/// nested steps must agree to a tenth of `tolerance`; otherwise a kink
/// (leaky ReLU, abs, clamp) lies inside the probe and the step shrinks.
/// `None` when no step is smooth.
fn smooth_derivative(d: impl Fn(f64) -> Result<f64>, tolerance: f64) -> Result<Option<f64>> {
    for h in STEPS {
        let (d1, d2, d4) = (d(h)?, d(h / 2.0)?, d(h / 4.0)?);
        let r1 = (4.0 * d2 - d1) / 3.0;
        let r2 = (4.0 * d4 - d2) / 3.0;
        if (r1 - r2).abs() <= 0.1 * tolerance * r2.abs().max(DENOM_FLOOR) {
            return Ok(Some(r2));
        }
    }
    Ok(None)
}

/// Compares analytic and numeric gradients of the scalar `loss()` with
/// respect to `params`, sampling at most `max_entries` entries per tensor.
pub fn check_scalar(
    name: &str,
    params: &[T],
    loss: impl Fn() -> Result<T>,
    tolerance: f64,
    max_entries: usize,
    seed: u64,
) -> Result<CheckResult> {
    params.iter().for_each(Tensor::zero_grad);
    loss()?.backward()?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eval = |p: &T, i: usize, delta: f64| -> Result<f64> {
        let old = p.data()[i];
        p.data_mut()[i] = old + delta;
        let v = loss().map(|l| l.item());
        p.data_mut()[i] = old;
        v
    };
    let mut max_err: f64 = 0.0;
    let (mut entries, mut nonsmooth) = (0, 0);
    for (p, a) in params.iter().zip(&analytic) {
        let n = p.numel();
        let idx: Vec<usize> = if n <= max_entries {
            (0..n).collect()
        } else {
            rand::seq::index::sample(&mut rng, n, max_entries).into_vec()
        };
        for i in idx {
            let d = |h: f64| -> Result<f64> { Ok((eval(p, i, h)? - eval(p, i, -h)?) / (2.0 * h)) };
            match smooth_derivative(d, tolerance)? {
                Some(numeric) => {
                    let err = (a[i] - numeric).abs() / numeric.abs().max(DENOM_FLOOR);
                    max_err = max_err.max(err);
                    entries += 1;
                }
                None => nonsmooth += 1,
            }
        }
    }
    Ok(CheckResult {
        name: name.to_string(),
        max_rel_err: max_err,
        tolerance,
        entries,
        nonsmooth,
    })
}

/// Checks `op(inputs)` through the scalar `Σ r ⊙ op(inputs)`.
pub fn check_op(
    name: &str,
    inputs: &[T],
    op: impl Fn(&[T]) -> Result<T>,
    seed: u64,
) -> Result<CheckResult> {
    let shape = op(inputs)?.shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let r = random(&mut rng, &shape, -1.0, 1.0).detach();
    check_scalar(
        name,
        inputs,
        || Ok(op(inputs)?.mul(&r)?.sum()),
        OP_TOLERANCE,
        64,
        seed,
    )
}

fn score(map: T) -> SubScore<f64> {
    SubScore {
        map,
        source: SubDiscriminatorId::Period(2),
    }
}

/// Checks of every differentiable op on random tensors of at most 64
/// elements.
pub fn op_checks(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let mut out = Vec::new();
    let mut s = seed;
    let mut next = || {
        s += 1;
        s
    };

    let x = random(rng, &[3, 12], -1.0, 1.0);
    let w = random(rng, &[2, 3, 3], -1.0, 1.0);
    let b = random(rng, &[2], -1.0, 1.0);
    out.push(check_op("conv1d", &[x.clone(), w.clone(), b.clone()], |p| {
        Ok(conv1d(&p[0], &p[1], Some(&p[2]), 2, 2, Padding::Explicit(2, 1))?)
    }, next())?);
    out.push(check_op("conv1d (same)", &[x, w, b], |p| {
        Ok(conv1d(&p[0], &p[1], Some(&p[2]), 1, 3, Padding::Same)?)
    }, next())?);

    let x = random(rng, &[2, 5], -1.0, 1.0);
    let w = random(rng, &[2, 3, 6], -1.0, 1.0);
    let b = random(rng, &[3], -1.0, 1.0);
    out.push(check_op("conv_transpose1d", &[x.clone(), w.clone(), b.clone()], |p| {
        Ok(conv_transpose1d(&p[0], &p[1], Some(&p[2]), 3, 2, 1)?)
    }, next())?);
    let w4 = random(rng, &[2, 3, 4], -1.0, 1.0);
    out.push(check_op("conv_transpose1d (even)", &[x, w4, b], |p| {
        Ok(conv_transpose1d(&p[0], &p[1], Some(&p[2]), 2, 1, 0)?)
    }, next())?);

    let x = random(rng, &[2, 4, 7], -1.0, 1.0);
    let w = random(rng, &[2, 2, 3, 3], -1.0, 1.0);
    let b = random(rng, &[2], -1.0, 1.0);
    out.push(check_op("conv2d", &[x, w, b], |p| {
        Ok(conv2d(&p[0], &p[1], Some(&p[2]), (1, 2), (1, 1))?)
    }, next())?);

    let x = away_from_zero(rng, &[4, 6]);
    out.push(check_op("leaky_relu", &[x.clone()], |p| Ok(p[0].leaky_relu(0.2)), next())?);
    out.push(check_op("tanh", &[x.clone()], |p| Ok(p[0].tanh()), next())?);
    out.push(check_op("sigmoid", &[x.clone()], |p| Ok(p[0].sigmoid()), next())?);
    out.push(check_op("exp", &[x.clone()], |p| Ok(p[0].exp()), next())?);
    out.push(check_op("square", &[x.clone()], |p| Ok(p[0].square()), next())?);
    out.push(check_op("abs", &[x.clone()], |p| Ok(p[0].abs()), next())?);
    out.push(check_op("clamp_min", &[x.clone()], |p| Ok(p[0].clamp_min(0.05)), next())?);
    out.push(check_op("scale/add_scalar/neg", &[x.clone()], |p| {
        Ok(p[0].scale(1.7).add_scalar(0.3).neg())
    }, next())?);
    let pos = random(rng, &[4, 6], 0.5, 2.0);
    out.push(check_op("log", &[pos.clone()], |p| Ok(p[0].log()), next())?);
    let y = random(rng, &[4, 6], -1.0, 1.0);
    out.push(check_op("add", &[x.clone(), y.clone()], |p| Ok(p[0].add(&p[1])?), next())?);
    out.push(check_op("sub", &[x.clone(), y.clone()], |p| Ok(p[0].sub(&p[1])?), next())?);
    out.push(check_op("mul", &[x.clone(), y.clone()], |p| Ok(p[0].mul(&p[1])?), next())?);
    out.push(check_op("div", &[y.clone(), pos.clone()], |p| Ok(p[0].div(&p[1])?), next())?);
    out.push(check_op("sum", &[y.clone()], |p| Ok(p[0].sum()), next())?);
    out.push(check_op("mean", &[y.clone()], |p| Ok(p[0].mean()), next())?);
    out.push(check_op("l1_norm", &[x.clone()], |p| Ok(p[0].l1_norm()), next())?);
    out.push(check_op("frobenius_norm", &[y.clone()], |p| Ok(p[0].frobenius_norm()), next())?);
    out.push(check_op("reshape", &[y.clone()], |p| Ok(p[0].reshape(&[3, 8])?.tanh()), next())?);
    out.push(check_op("narrow", &[y.clone()], |p| Ok(p[0].narrow(1, 2)?), next())?);
    out.push(check_op("pad_reflect", &[y.clone()], |p| Ok(p[0].pad_reflect(3, 2)?), next())?);
    out.push(check_op("repeat_interleave", &[y.clone()], |p| Ok(p[0].repeat_interleave(3)?), next())?);

    let v = random(rng, &[3, 2, 3], -1.0, 1.0);
    let g = random(rng, &[3], 0.5, 1.5);
    out.push(check_op("weight_norm", &[v, g], |p| Ok(weight_norm(&p[0], &p[1])?), next())?);

    let sig = random(rng, &[40], -1.0, 1.0);
    out.push(check_op("stft_magnitude", &[sig.clone()], |p| {
        stft_magnitude_tensor(&p[0], StftParams::new(16, 4, 12))
    }, next())?);
    out.push(check_op("stft_magnitude (full window)", &[sig], |p| {
        stft_magnitude_tensor(&p[0], StftParams::new(8, 3, 8))
    }, next())?);

    let x = random(rng, &[2, 12], -1.0, 1.0);
    let k = random(rng, &[2 * 2 * 3, 3], -1.0, 1.0);
    let kb = random(rng, &[2, 3], -1.0, 1.0);
    out.push(check_op("location_variable_conv", &[x, k, kb], |p| {
        location_variable_conv(&p[0], &p[1], &p[2], 3, 2, 4)
    }, next())?);

    let h = random(rng, &[4, 8], -2.0, 2.0);
    out.push(check_op("gau", &[h], |p| gau(&p[0]), next())?);
    let sig = random(rng, &[23], -1.0, 1.0);
    out.push(check_op("reshape2d", &[sig], |p| reshape2d(&p[0], 5), next())?);

    let s = random(rng, &[5, 6], 0.2, 2.0);
    let s_hat = random(rng, &[5, 6], 0.2, 2.0);
    out.push(check_op("spectral_convergence", &[s.clone(), s_hat.clone()], |p| {
        Ok(spectral_convergence(&p[0], &p[1])?.value)
    }, next())?);
    out.push(check_op("log_stft_magnitude", &[s, s_hat], |p| log_stft_magnitude(&p[0], &p[1]), next())?);

    let (a, b2) = (random(rng, &[3, 4], -1.0, 2.0), random(rng, &[7], -1.0, 2.0));
    let (c, d) = (random(rng, &[3, 4], -1.0, 2.0), random(rng, &[7], -1.0, 2.0));
    out.push(check_op("lsgan generator", &[a.clone(), b2.clone()], |p| {
        generator_adversarial_loss(&[score(p[0].clone()), score(p[1].clone())])
    }, next())?);
    out.push(check_op("lsgan discriminator", &[a, b2, c, d], |p| {
        discriminator_loss(
            &[score(p[0].clone()), score(p[1].clone())],
            &[score(p[2].clone()), score(p[3].clone())],
        )
    }, next())?);
    Ok(out)
}

/// Resolutions scaled down for a 512-sample signal.
pub const TINY_STFT_SETS: [StftParams; 3] = [
    StftParams::new(128, 30, 75),
    StftParams::new(256, 60, 150),
    StftParams::new(64, 12, 30),
];

fn tiny_models(seed: u64) -> Result<(Generator<f64>, Discriminators<f64>)> {
    let g = Generator::new(
        GeneratorConfig {
            channels: 2,
            kp_hidden: 4,
            ..GeneratorConfig::default()
        },
        seed,
    )?;
    let d = Discriminators::new(
        DiscriminatorConfig {
            stft_sets: TINY_STFT_SETS.to_vec(),
            mrsd_channels: 2,
            mpwd_channels: vec![2, 4],
            ..DiscriminatorConfig::default()
        },
        seed + 1,
    )?;
    Ok((g, d))
}

/// `L_G` and `L_D` of a tiny generator/discriminator pair on a 2-frame
/// input, checked against every parameter tensor (sampled entries).
pub fn composed_checks(seed: u64, max_entries: usize) -> Result<Vec<CheckResult>> {
    let (g, d) = tiny_models(seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
    let frames = 2;
    let cond = random(&mut rng, &[100, frames], -1.0, 1.0).detach();
    let z = sample_noise::<f64>(frames, seed + 3);
    let x = random(&mut rng, &[frames * 256], -0.5, 0.5).detach();
    let specs = |w: &T| -> Result<Vec<T>> {
        TINY_STFT_SETS.iter().map(|&p| stft_magnitude_tensor(w, p)).collect()
    };
    let s_real = specs(&x)?;

    let g_params: Vec<T> = g.parameters().into_iter().map(|p| p.tensor).collect();
    let l_g = || -> Result<T> {
        let fake = g.forward(&z, &cond)?;
        let s_fake = specs(&fake)?;
        let aux = aux_loss_from_spectrograms(&s_real, &s_fake)?;
        let scores = d.forward_with_spectrograms(&fake, &s_fake)?;
        generator_loss(&scores, &aux.total, LAMBDA_AUX)
    };
    let gen = check_scalar("generator loss", &g_params, l_g, COMPOSED_TOLERANCE, max_entries, seed)?;

    let fake = g.forward(&z, &cond)?.detach();
    let s_fake = specs(&fake)?;
    let d_params: Vec<T> = d.parameters().into_iter().map(|p| p.tensor).collect();
    let l_d = || -> Result<T> {
        let real = d.forward_with_spectrograms(&x, &s_real)?;
        let fk = d.forward_with_spectrograms(&fake, &s_fake)?;
        discriminator_loss(&real, &fk)
    };
    let disc = check_scalar("discriminator loss", &d_params, l_d, COMPOSED_TOLERANCE, max_entries, seed)?;
    Ok(vec![gen, disc])
}

/// The full suite: every op plus both composed objectives.
pub fn run_suite(seed: u64) -> Result<GradCheckReport> {
    let start = Instant::now();
    let mut results = op_checks(seed)?;
    results.extend(composed_checks(seed, 12)?);
    Ok(GradCheckReport {
        results,
        seconds: start.elapsed().as_secs_f64(),
    })
}
