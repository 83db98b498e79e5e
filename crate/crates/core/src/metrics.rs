//! Spectral RMSE between recordings and resyntheses, and the generation
//! speed benchmark.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dsp::{stft_magnitude, AudioBuffer, StftParams, HOP, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::generator::{sample_noise_with, Generator, NOISE_DIM};
use crate::nn::Module;
use crate::tensor::Tensor;

/// Sum of squared magnitude differences and the cell count, over the
/// common prefix of `x` and `x_hat`.
fn squared_error(x: &AudioBuffer, x_hat: &AudioBuffer) -> Result<(f64, usize)> {
    x.require_pipeline_rate()?;
    x_hat.require_pipeline_rate()?;
    let n = x.len().min(x_hat.len());
    if n == 0 {
        return Err(Error::Input("RMSE needs overlapping nonempty signals".into()));
    }
    let cut = |a: &AudioBuffer| AudioBuffer::new(a.samples[..n].to_vec(), a.sample_rate);
    let a = stft_magnitude(&cut(x)?, StftParams::FEATURE)?;
    let b = stft_magnitude(&cut(x_hat)?, StftParams::FEATURE)?;
    let sum = a
        .mag
        .iter()
        .zip(&b.mag)
        .map(|(&p, &q)| {
            let d = p as f64 - q as f64;
            d * d
        })
        .sum();
    Ok((sum, a.mag.len()))
}

/// Root-mean-square error between linear magnitude spectrograms
/// (1024/256/1024), after truncating to the shorter signal.
pub fn spectral_rmse(x: &AudioBuffer, x_hat: &AudioBuffer) -> Result<f64> {
    let (sum, cells) = squared_error(x, x_hat)?;
    Ok((sum / cells as f64).sqrt())
}

#[derive(Debug, Clone, Serialize)]
pub struct PairScore {
    pub name: String,
    pub rmse: f64,
    pub cells: usize,
}

/// RMSE over a set of pairs, averaged per utterance (`rmse`) and pooled
/// over all cells (`pooled_rmse`).
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub rmse: f64,
    pub pooled_rmse: f64,
    pub n_pairs: usize,
    pub per_pair: Vec<PairScore>,
}

pub fn evaluate(pairs: &[(String, AudioBuffer, AudioBuffer)]) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::Input("no pairs to evaluate".into()));
    }
    let mut per_pair = Vec::with_capacity(pairs.len());
    let (mut total, mut cells) = (0.0, 0usize);
    for (name, x, x_hat) in pairs {
        let (sum, n) = squared_error(x, x_hat)?;
        total += sum;
        cells += n;
        per_pair.push(PairScore {
            name: name.clone(),
            rmse: (sum / n as f64).sqrt(),
            cells: n,
        });
    }
    Ok(EvalReport {
        rmse: per_pair.iter().map(|p| p.rmse).sum::<f64>() / per_pair.len() as f64,
        pooled_rmse: (total / cells as f64).sqrt(),
        n_pairs: per_pair.len(),
        per_pair,
    })
}

/// Generation speed of one generator.
#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub samples_per_sec: f64,
    pub realtime_factor: f64,
    pub params: usize,
    pub samples: usize,
    pub median_secs: f64,
    /// Median absolute deviation of the run times.
    pub mad_secs: f64,
    /// MAD above 20% of the median.
    pub unstable: bool,
    pub runs: usize,
    pub warmup_runs: usize,
    pub threads: usize,
}

pub const MIN_BENCH_RUNS: usize = 10;
pub const BENCH_WARMUP_RUNS: usize = 2;

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times `generator.forward` on `seconds` of audio over at least ten runs
/// after two warm-up runs. The engine is single-threaded.
pub fn benchmark(
    generator: &Generator<f32>,
    seconds: f64,
    runs: usize,
    seed: u64,
) -> Result<BenchReport> {
    if !(seconds > 0.0) {
        return Err(Error::Parameter("benchmark duration must be positive".into()));
    }
    let runs = runs.max(MIN_BENCH_RUNS);
    let frames = ((seconds * SAMPLE_RATE as f64 / HOP as f64).round() as usize).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_mels = generator.config().n_mels;
    let cond: Tensor<f32> = sample_noise_with(&mut rng, n_mels, frames);
    let z: Tensor<f32> = sample_noise_with(&mut rng, NOISE_DIM, frames);
    let mut times = Vec::with_capacity(runs);
    let mut samples = 0;
    for i in 0..BENCH_WARMUP_RUNS + runs {
        let start = Instant::now();
        let y = generator.forward(&z, &cond)?;
        let dt = start.elapsed().as_secs_f64();
        samples = y.numel();
        if i >= BENCH_WARMUP_RUNS {
            times.push(dt);
        }
    }
    let med = median(&mut times.clone());
    let mut dev: Vec<f64> = times.iter().map(|t| (t - med).abs()).collect();
    let mad = median(&mut dev);
    let samples_per_sec = samples as f64 / med;
    Ok(BenchReport {
        samples_per_sec,
        realtime_factor: samples_per_sec / SAMPLE_RATE as f64,
        params: generator.num_params(),
        samples,
        median_secs: med,
        mad_secs: mad,
        unstable: mad > 0.2 * med,
        runs,
        warmup_runs: BENCH_WARMUP_RUNS,
        threads: 1,
    })
}
