//! Hann-window STFT magnitudes, plain and differentiable.
//!
//! Frames are centered: the signal is reflect-padded by `n_fft/2` on both
//! sides, so frame `t` is centered on sample `t·hop` and a signal of `L`
//! samples yields `L/hop + 1` frames. Windows shorter than `n_fft` sit in
//! the middle of the transform and are zero-padded.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// `(n_fft, hop, win_length)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftParams {
    pub n_fft: usize,
    pub hop: usize,
    pub win_length: usize,
}

impl StftParams {
    pub const fn new(n_fft: usize, hop: usize, win_length: usize) -> Self {
        Self {
            n_fft,
            hop,
            win_length,
        }
    }

    /// Transform used for the log-mel features and the RMSE metric.
    pub const FEATURE: StftParams = StftParams::new(1024, 256, 1024);

    /// Resolutions shared by the spectrogram discriminator and auxiliary loss.
    pub const MULTI_RESOLUTION: [StftParams; 3] = [
        StftParams::new(1024, 120, 600),
        StftParams::new(2048, 240, 1200),
        StftParams::new(512, 50, 240),
    ];

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn n_frames(&self, len: usize) -> usize {
        len / self.hop + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.win_length < 2 || self.win_length > self.n_fft {
            return Err(Error::Parameter(format!(
                "STFT ({}, {}, {}) needs hop ≥ 1 and 2 ≤ win_length ≤ n_fft",
                self.n_fft, self.hop, self.win_length
            )));
        }
        Ok(())
    }

    /// Shortest signal the centered transform accepts.
    pub fn min_len(&self) -> usize {
        self.win_length.max(self.n_fft / 2 + 1)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        self.validate()?;
        if len < self.min_len() {
            return Err(Error::Input(format!(
                "signal of {len} samples is too short for STFT ({}, {}, {}); need at least {}",
                self.n_fft,
                self.hop,
                self.win_length,
                self.min_len()
            )));
        }
        Ok(())
    }
}

/// Periodic Hann window, `w[n] = 0.5·(1 − cos(2πn/N))`.
pub fn hann(win_length: usize) -> Vec<f64> {
    let n = win_length as f64;
    (0..win_length)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n).cos()))
        .collect()
}

/// Linear magnitude spectrogram, `[n_frames × n_bins]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub mag: Vec<f32>,
    pub n_frames: usize,
    pub n_bins: usize,
    pub params: StftParams,
}

impl Spectrogram {
    pub fn frame(&self, t: usize) -> &[f32] {
        &self.mag[t * self.n_bins..(t + 1) * self.n_bins]
    }

    /// Same values as a constant `[n_frames, n_bins]` tensor.
    pub fn to_tensor<T: Float>(&self) -> Tensor<T> {
        Tensor::new(
            self.mag.iter().map(|&v| T::lit(v as f64)).collect(),
            &[self.n_frames, self.n_bins],
        )
        .expect("spectrogram dims are consistent")
    }
}

/// Planned transform for one parameter set.
pub(crate) struct StftPlan<T: Float> {
    params: StftParams,
    window: Vec<T>,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
}

impl<T: Float> StftPlan<T> {
    pub(crate) fn new(params: StftParams) -> Result<Self> {
        params.validate()?;
        let mut window = vec![T::zero(); params.n_fft];
        let offset = (params.n_fft - params.win_length) / 2;
        for (i, w) in hann(params.win_length).into_iter().enumerate() {
            window[offset + i] = T::lit(w);
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            params,
            window,
            forward: planner.plan_fft_forward(params.n_fft),
            inverse: planner.plan_fft_inverse(params.n_fft),
        })
    }

    fn padded_index(&self, i: usize, len: usize) -> usize {
        crate::tensor::reflect_index(i, self.params.n_fft / 2, len)
    }

    /// One-sided complex spectrum, `[n_frames × n_bins]`.
    pub(crate) fn spectrum(&self, x: &[T]) -> Result<Vec<Complex<T>>> {
        let p = self.params;
        p.check_len(x.len())?;
        let (n_frames, n_bins) = (p.n_frames(x.len()), p.n_bins());
        let mut out = Vec::with_capacity(n_frames * n_bins);
        let mut buf = vec![Complex::new(T::zero(), T::zero()); p.n_fft];
        let mut scratch =
            vec![Complex::new(T::zero(), T::zero()); self.forward.get_inplace_scratch_len()];
        for f in 0..n_frames {
            let start = f * p.hop;
            for (n, slot) in buf.iter_mut().enumerate() {
                let v = x[self.padded_index(start + n, x.len())] * self.window[n];
                *slot = Complex::new(v, T::zero());
            }
            self.forward.process_with_scratch(&mut buf, &mut scratch);
            out.extend_from_slice(&buf[..n_bins]);
        }
        Ok(out)
    }

    /// Gradient with respect to the signal given `d loss / d |X|`.
    fn magnitude_grad(&self, spec: &[Complex<T>], grad: &[T], len: usize) -> Vec<T> {
        let p = self.params;
        let n_bins = p.n_bins();
        let mut gx = vec![T::zero(); len];
        let mut buf = vec![Complex::new(T::zero(), T::zero()); p.n_fft];
        let mut scratch =
            vec![Complex::new(T::zero(), T::zero()); self.inverse.get_inplace_scratch_len()];
        for (f, (xs, gs)) in spec.chunks(n_bins).zip(grad.chunks(n_bins)).enumerate() {
            buf.iter_mut().for_each(|b| *b = Complex::new(T::zero(), T::zero()));
            for k in 0..n_bins {
                let mag = xs[k].norm();
                if mag > T::zero() {
                    buf[k] = xs[k] * (gs[k] / mag);
                }
            }
            // d/dx_n Σ_k G_k·conj-phase = Re Σ_k G_k e^{+2πikn/N}
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            let start = f * p.hop;
            for n in 0..p.n_fft {
                if self.window[n] != T::zero() {
                    gx[self.padded_index(start + n, len)] += buf[n].re * self.window[n];
                }
            }
        }
        gx
    }
}

/// Magnitude spectrogram of an audio buffer.
pub fn stft_magnitude(x: &AudioBuffer, params: StftParams) -> Result<Spectrogram> {
    let signal: Vec<f64> = x.samples.iter().map(|&v| v as f64).collect();
    let spec = StftPlan::<f64>::new(params)?.spectrum(&signal)?;
    Ok(Spectrogram {
        mag: spec.iter().map(|c| c.norm() as f32).collect(),
        n_frames: params.n_frames(signal.len()),
        n_bins: params.n_bins(),
        params,
    })
}

/// Differentiable magnitude spectrogram of a 1-D signal tensor (`[T]` or
/// `[1, T]`), returned as `[n_frames, n_bins]`.
pub fn stft_magnitude_tensor<T: Float>(x: &Tensor<T>, params: StftParams) -> Result<Tensor<T>> {
    if x.ndim() > 2 || (x.ndim() == 2 && x.shape()[0] != 1) {
        return Err(Error::Input(format!(
            "STFT expects a mono signal, got shape {:?}",
            x.shape()
        )));
    }
    let plan = StftPlan::<T>::new(params)?;
    let len = x.numel();
    let spec = plan.spectrum(&x.data())?;
    let mag: Vec<T> = spec.iter().map(|c| c.norm()).collect();
    let shape = [params.n_frames(len), params.n_bins()];
    Ok(Tensor::from_op(
        mag,
        &shape,
        vec![x.clone()],
        move |g: &[T], _: &[T], _: &[Tensor<T>], _: &[bool]| {
            vec![Some(plan.magnitude_grad(&spec, g, len))]
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::SAMPLE_RATE;

    #[test]
    fn hann_values() {
        let w = hann(4);
        let want = [0.0, 0.5, 1.0, 0.5];
        for (a, b) in w.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(hann(1024)[0], 0.0);
        assert!((hann(1024).iter().sum::<f64>() - 512.0).abs() < 1e-3);
    }

    #[test]
    fn silence_has_zero_magnitude() {
        let x = AudioBuffer::new(vec![0.0; 4000], SAMPLE_RATE).unwrap();
        let s = stft_magnitude(&x, StftParams::FEATURE).unwrap();
        assert!(s.mag.iter().all(|&v| v == 0.0));
        assert_eq!(s.n_frames, 4000 / 256 + 1);
        assert_eq!(s.n_bins, 513);
    }

    #[test]
    fn bin_centered_sine_peaks_at_its_bin() {
        let k = 37;
        let freq = k as f64 * SAMPLE_RATE as f64 / 1024.0;
        let samples: Vec<f32> = (0..8000)
            .map(|n| (2.0 * std::f64::consts::PI * freq * n as f64 / SAMPLE_RATE as f64).sin() as f32 * 0.5)
            .collect();
        let x = AudioBuffer::new(samples, SAMPLE_RATE).unwrap();
        let s = stft_magnitude(&x, StftParams::FEATURE).unwrap();
        let mid = s.frame(s.n_frames / 2);
        let argmax = mid
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(argmax, k);
    }

    #[test]
    fn short_signal_is_rejected() {
        let x = AudioBuffer::new(vec![0.1; 500], SAMPLE_RATE).unwrap();
        assert!(matches!(stft_magnitude(&x, StftParams::FEATURE), Err(Error::Input(_))));
        // long enough for the window but not for the centering pad
        let y = AudioBuffer::new(vec![0.1; 250], SAMPLE_RATE).unwrap();
        assert!(stft_magnitude(&y, StftParams::new(512, 50, 240)).is_err());
    }

    #[test]
    fn invalid_params() {
        assert!(StftParams::new(256, 64, 512).validate().is_err());
        assert!(StftParams::new(256, 0, 256).validate().is_err());
    }
}
