#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use univnet::dsp::{AudioBuffer, SAMPLE_RATE};
use univnet::training::TrainConfig;

/// One second of a voiced, speech-like signal: twelve harmonics of a
/// vibrato fundamental under a slow envelope, over a faint aspiration noise.
pub fn voiced_clip(seconds: f32, seed: u64) -> AudioBuffer {
    let sr = SAMPLE_RATE as f32;
    let tau = std::f32::consts::TAU;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0f32, 0.003).unwrap();
    let n = (seconds * sr) as usize;
    let mut phase = 0.0f32;
    let samples = (0..n)
        .map(|i| {
            let t = i as f32 / sr;
            let f0 = 140.0 + 20.0 * (tau * 3.0 * t).sin();
            phase = (phase + tau * f0 / sr) % tau;
            let env = 0.5 * (1.0 - (tau * 2.0 * t).cos());
            let v: f32 = (1..=12).map(|h| (h as f32 * phase).sin() / h as f32).sum();
            0.15 * env * v + noise.sample(&mut rng)
        })
        .collect();
    AudioBuffer::new(samples, SAMPLE_RATE).unwrap()
}

/// A small, fast configuration for control-flow tests.
pub fn tiny_config(warmup: u64, total: u64) -> TrainConfig {
    TrainConfig {
        channels: 4,
        batch_size: 2,
        segment_frames: 8,
        warmup_steps: warmup,
        total_steps: total,
        mrsd_channels: 2,
        mpwd_channels: vec![2, 4],
        seed: 17,
        ..TrainConfig::default()
    }
}
