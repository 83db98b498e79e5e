//! Slaney mel filterbank, log-mel features and global normalization.

use serde::{Deserialize, Serialize};

use super::audio::{AudioBuffer, SAMPLE_RATE};
use super::stft::{stft_magnitude, StftParams};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

pub const N_MELS: usize = 100;
pub const MEL_F_MIN: f64 = 0.0;
pub const MEL_F_MAX: f64 = 12_000.0;
/// Floor applied before the natural log.
pub const LOG_FLOOR: f32 = 1e-5;
const STD_FLOOR: f64 = 1e-8;

const F_SP: f64 = 200.0 / 3.0;
const MIN_LOG_HZ: f64 = 1000.0;
const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;

fn log_step() -> f64 {
    6.4f64.ln() / 27.0
}

/// Slaney mel: linear below 1 kHz, logarithmic above.
pub fn hz_to_mel(hz: f64) -> f64 {
    if hz < MIN_LOG_HZ {
        hz / F_SP
    } else {
        MIN_LOG_MEL + (hz / MIN_LOG_HZ).ln() / log_step()
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    if mel < MIN_LOG_MEL {
        mel * F_SP
    } else {
        MIN_LOG_HZ * (log_step() * (mel - MIN_LOG_MEL)).exp()
    }
}

/// Area-normalized triangular filters, `[n_mels × n_bins]` row-major.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    pub weights: Vec<f32>,
    pub n_mels: usize,
    pub n_bins: usize,
    /// Peak frequency of each band in Hz.
    pub centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn row(&self, m: usize) -> &[f32] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }

    /// Projects a `[n_frames × n_bins]` magnitude matrix to `[n_frames × n_mels]`.
    pub fn project(&self, mag: &[f32], n_frames: usize) -> Vec<f32> {
        let mut out = vec![0.0f32; n_frames * self.n_mels];
        for t in 0..n_frames {
            let frame = &mag[t * self.n_bins..(t + 1) * self.n_bins];
            for m in 0..self.n_mels {
                out[t * self.n_mels + m] = self
                    .row(m)
                    .iter()
                    .zip(frame)
                    .map(|(&w, &v)| w as f64 * v as f64)
                    .sum::<f64>() as f32;
            }
        }
        out
    }
}

pub fn mel_filterbank(
    n_fft: usize,
    sample_rate: u32,
    n_mels: usize,
    f_min: f64,
    f_max: f64,
) -> Result<MelFilterbank> {
    let nyquist = sample_rate as f64 / 2.0;
    if f_max > nyquist {
        return Err(Error::Parameter(format!(
            "f_max {f_max} Hz exceeds the Nyquist frequency {nyquist} Hz"
        )));
    }
    if !(f_min >= 0.0 && f_min < f_max) || n_mels == 0 || n_fft < 2 {
        return Err(Error::Parameter(format!(
            "mel filterbank needs 0 ≤ f_min < f_max and n_mels ≥ 1 (got {f_min}, {f_max}, {n_mels})"
        )));
    }
    let n_bins = n_fft / 2 + 1;
    let (lo, hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz: Vec<f64> = (0..n_bins)
        .map(|k| k as f64 * sample_rate as f64 / n_fft as f64)
        .collect();
    let mut weights = vec![0.0f32; n_mels * n_bins];
    for m in 0..n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let norm = 2.0 / (right - left);
        for (k, &f) in bin_hz.iter().enumerate() {
            let rising = (f - left) / (center - left);
            let falling = (right - f) / (right - center);
            weights[m * n_bins + k] = (rising.min(falling).max(0.0) * norm) as f32;
        }
    }
    Ok(MelFilterbank {
        weights,
        n_mels,
        n_bins,
        centers_hz: edges[1..=n_mels].to_vec(),
    })
}

/// Feature filterbank: 100 bands over 0–12 kHz for the 1024-point transform.
pub fn feature_filterbank() -> MelFilterbank {
    mel_filterbank(
        StftParams::FEATURE.n_fft,
        SAMPLE_RATE,
        N_MELS,
        MEL_F_MIN,
        MEL_F_MAX,
    )
    .expect("feature filterbank parameters are valid")
}

/// Per-band normalization statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

/// Log-mel matrix, `[n_frames × n_mels]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub data: Vec<f32>,
    pub n_frames: usize,
    pub n_mels: usize,
    pub normalized: bool,
}

impl MelSpectrogram {
    pub fn new(data: Vec<f32>, n_frames: usize, n_mels: usize, normalized: bool) -> Result<Self> {
        if data.len() != n_frames * n_mels {
            return Err(Error::Input(format!(
                "{} values for {n_frames} frames × {n_mels} bands",
                data.len()
            )));
        }
        Ok(Self {
            data,
            n_frames,
            n_mels,
            normalized,
        })
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * self.n_mels..(t + 1) * self.n_mels]
    }

    fn check_stats(&self, stats: &NormStats) -> Result<()> {
        if stats.mean.len() != self.n_mels || stats.std.len() != self.n_mels {
            return Err(Error::Input(format!(
                "stats cover {} bands, features have {}",
                stats.mean.len(),
                self.n_mels
            )));
        }
        Ok(())
    }

    pub fn normalize(&self, stats: &NormStats) -> Result<Self> {
        self.check_stats(stats)?;
        let mut out = self.clone();
        for row in out.data.chunks_mut(self.n_mels) {
            for ((v, &m), &s) in row.iter_mut().zip(&stats.mean).zip(&stats.std) {
                *v = (*v - m) / s;
            }
        }
        out.normalized = true;
        Ok(out)
    }

    pub fn denormalize(&self, stats: &NormStats) -> Result<Self> {
        self.check_stats(stats)?;
        let mut out = self.clone();
        for row in out.data.chunks_mut(self.n_mels) {
            for ((v, &m), &s) in row.iter_mut().zip(&stats.mean).zip(&stats.std) {
                *v = *v * s + m;
            }
        }
        out.normalized = false;
        Ok(out)
    }

    /// Frames `start..start+len`.
    pub fn slice_frames(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.n_frames {
            return Err(Error::Input(format!(
                "frames {start}..{} out of {}",
                start + len,
                self.n_frames
            )));
        }
        Self::new(
            self.data[start * self.n_mels..(start + len) * self.n_mels].to_vec(),
            len,
            self.n_mels,
            self.normalized,
        )
    }

    /// Channels-first condition tensor `[n_mels, n_frames]`.
    pub fn to_condition<T: Float>(&self) -> Tensor<T> {
        let mut data = vec![T::zero(); self.data.len()];
        for t in 0..self.n_frames {
            for m in 0..self.n_mels {
                data[m * self.n_frames + t] = T::lit(self.data[t * self.n_mels + m] as f64);
            }
        }
        Tensor::new(data, &[self.n_mels, self.n_frames]).expect("dims are consistent")
    }
}

/// Log-mel features of 24 kHz audio, optionally normalized.
pub fn log_mel(x: &AudioBuffer, stats: Option<&NormStats>) -> Result<MelSpectrogram> {
    x.require_pipeline_rate()?;
    let spec = stft_magnitude(x, StftParams::FEATURE)?;
    let fb = feature_filterbank();
    let data = fb
        .project(&spec.mag, spec.n_frames)
        .into_iter()
        .map(|v| v.max(LOG_FLOOR).ln())
        .collect();
    let mel = MelSpectrogram::new(data, spec.n_frames, N_MELS, false)?;
    match stats {
        Some(s) => mel.normalize(s),
        None => Ok(mel),
    }
}

/// Per-band mean and standard deviation pooled over every frame of every
/// utterance.
pub fn compute_norm_stats(mels: &[MelSpectrogram]) -> Result<NormStats> {
    let first = mels
        .first()
        .ok_or_else(|| Error::Input("cannot compute statistics of an empty collection".into()))?;
    let n_mels = first.n_mels;
    if mels.iter().any(|m| m.n_mels != n_mels) {
        return Err(Error::Input("utterances disagree on the band count".into()));
    }
    let count: usize = mels.iter().map(|m| m.n_frames).sum();
    if count == 0 {
        return Err(Error::Input("collection holds no frames".into()));
    }
    let mut sum = vec![0.0f64; n_mels];
    for row in mels.iter().flat_map(|m| m.data.chunks(n_mels)) {
        for (s, &v) in sum.iter_mut().zip(row) {
            *s += v as f64;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let mut sq = vec![0.0f64; n_mels];
    for row in mels.iter().flat_map(|m| m.data.chunks(n_mels)) {
        for ((s, &v), &mu) in sq.iter_mut().zip(row).zip(&mean) {
            let d = v as f64 - mu;
            *s += d * d;
        }
    }
    Ok(NormStats {
        mean: mean.iter().map(|&m| m as f32).collect(),
        std: sq
            .iter()
            .map(|&s| (s / count as f64).sqrt().max(STD_FLOOR) as f32)
            .collect(),
    })
}
