//! Multi-resolution spectrogram discriminator (MRSD) and multi-period
//! waveform discriminator (MPWD).
//!
//! Every sub-discriminator is a stack of weight-normalized 2-D convolutions
//! with leaky ReLUs that returns a map of per-patch scores. MRSD reads
//! linear magnitude spectrograms `[1, frames, bins]`; MPWD reads the
//! waveform folded into `[1, T/p, p]`.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{stft_magnitude_tensor, StftParams};
use crate::error::{Error, Result};
use crate::nn::{join, Conv2d, Module, NamedParam};
use crate::tensor::{Float, Tensor};

/// Discriminator hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    /// One MRSD sub-discriminator per parameter set.
    pub stft_sets: Vec<StftParams>,
    /// One MPWD sub-discriminator per period; pairwise distinct primes.
    pub periods: Vec<usize>,
    /// Width of every MRSD hidden layer.
    pub mrsd_channels: usize,
    /// Output widths of the strided MPWD layers.
    pub mpwd_channels: Vec<usize>,
    pub leaky_slope: f64,
    pub use_mrsd: bool,
    pub use_mpwd: bool,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            stft_sets: StftParams::MULTI_RESOLUTION.to_vec(),
            periods: vec![2, 3, 5, 7, 11],
            mrsd_channels: 32,
            mpwd_channels: vec![32, 128, 512, 1024, 1024],
            leaky_slope: 0.2,
            use_mrsd: true,
            use_mpwd: true,
        }
    }
}

fn is_prime(n: usize) -> bool {
    n >= 2 && (2..).take_while(|d| d * d <= n).all(|d| n % d != 0)
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !self.use_mrsd && !self.use_mpwd {
            return bad("at least one of MRSD and MPWD must be enabled".into());
        }
        if self.use_mrsd {
            if self.stft_sets.is_empty() || self.mrsd_channels == 0 {
                return bad("MRSD needs at least one STFT set and nonzero width".into());
            }
            for p in &self.stft_sets {
                p.validate()?;
            }
        }
        if self.use_mpwd {
            if self.periods.is_empty() || self.mpwd_channels.is_empty() {
                return bad("MPWD needs at least one period and one layer".into());
            }
            if self.mpwd_channels.contains(&0) {
                return bad("MPWD channel widths must be nonzero".into());
            }
            for (i, &p) in self.periods.iter().enumerate() {
                if !is_prime(p) {
                    return bad(format!("period {p} is not prime"));
                }
                if self.periods[..i].contains(&p) {
                    return bad(format!("period {p} is repeated"));
                }
            }
        }
        Ok(())
    }

    /// Number of active sub-discriminators `K`.
    pub fn num_sub_discriminators(&self) -> usize {
        let m = if self.use_mrsd { self.stft_sets.len() } else { 0 };
        let p = if self.use_mpwd { self.periods.len() } else { 0 };
        m + p
    }

    /// Spectrogram resolutions MRSD consumes (empty when MRSD is off).
    pub fn active_stft_sets(&self) -> &[StftParams] {
        if self.use_mrsd {
            &self.stft_sets
        } else {
            &[]
        }
    }

    /// Shortest waveform every active sub-discriminator accepts.
    pub fn min_len(&self) -> usize {
        let spec = self.active_stft_sets().iter().map(StftParams::min_len).max();
        let per = self.use_mpwd.then(|| self.periods.iter().copied().max()).flatten();
        spec.into_iter().chain(per).max().unwrap_or(1)
    }
}

/// Which sub-discriminator produced a score map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubDiscriminatorId {
    Spectrogram(StftParams),
    Period(usize),
}

impl fmt::Display for SubDiscriminatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Spectrogram(p) => write!(f, "mrsd({},{},{})", p.n_fft, p.hop, p.win_length),
            Self::Period(p) => write!(f, "mpwd({p})"),
        }
    }
}

/// Per-patch scores of one sub-discriminator.
#[derive(Debug, Clone)]
pub struct SubScore<T: Float> {
    pub map: Tensor<T>,
    pub source: SubDiscriminatorId,
}

/// Folds `x: [T]` into `[1, ⌈T/p⌉, p]`, row-major, reflect-padding the end
/// when `p ∤ T`.
pub fn reshape2d<T: Float>(x: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
    let len = x.numel();
    if len == 0 || p == 0 {
        return Err(Error::Input("reshape2d needs a nonempty signal and period ≥ 1".into()));
    }
    if len < p {
        return Err(Error::Input(format!(
            "signal of {len} samples is shorter than period {p}"
        )));
    }
    let flat = x.reshape(&[len])?;
    let rem = len % p;
    let padded = if rem == 0 {
        flat
    } else {
        flat.pad_reflect(0, p - rem)?
    };
    let rows = padded.numel() / p;
    Ok(padded.reshape(&[1, rows, p])?)
}

#[derive(Debug, Clone)]
struct ConvStack<T: Float> {
    layers: Vec<Conv2d<T>>,
    post: Conv2d<T>,
}

impl<T: Float> ConvStack<T> {
    fn forward(&self, x: &Tensor<T>, slope: T) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward(&h)?.leaky_relu(slope);
        }
        Ok(self.post.forward(&h)?)
    }

    fn collect(&self, prefix: &str, out: &mut Vec<NamedParam<T>>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.collect_params(&join(prefix, &format!("convs.{i}")), out);
        }
        self.post.collect_params(&join(prefix, "post"), out);
    }
}

fn mrsd_stack<T: Float>(rng: &mut ChaCha8Rng, c: usize) -> ConvStack<T> {
    let mut layers = vec![Conv2d::new(rng, 1, c, (3, 9), (1, 1), (1, 4))];
    for _ in 0..3 {
        layers.push(Conv2d::new(rng, c, c, (3, 9), (1, 2), (1, 4)));
    }
    layers.push(Conv2d::new(rng, c, c, (3, 3), (1, 1), (1, 1)));
    let post = Conv2d::new(rng, c, 1, (3, 3), (1, 1), (1, 1));
    ConvStack { layers, post }
}

fn mpwd_stack<T: Float>(rng: &mut ChaCha8Rng, channels: &[usize]) -> ConvStack<T> {
    let mut layers = Vec::new();
    let mut c_in = 1;
    for (i, &c) in channels.iter().enumerate() {
        let stride = if i + 1 == channels.len() { 1 } else { 3 };
        layers.push(Conv2d::new(rng, c_in, c, (5, 1), (stride, 1), (2, 0)));
        c_in = c;
    }
    let post = Conv2d::new(rng, c_in, 1, (3, 1), (1, 1), (1, 0));
    ConvStack { layers, post }
}

/// All sub-discriminators of MRSD and MPWD.
#[derive(Debug, Clone)]
pub struct Discriminators<T: Float = f32> {
    config: DiscriminatorConfig,
    mrsd: Vec<ConvStack<T>>,
    mpwd: Vec<ConvStack<T>>,
    slope: T,
}

impl<T: Float> Discriminators<T> {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mrsd = config
            .active_stft_sets()
            .iter()
            .map(|_| mrsd_stack(&mut rng, config.mrsd_channels))
            .collect();
        let mpwd = if config.use_mpwd {
            config
                .periods
                .iter()
                .map(|_| mpwd_stack(&mut rng, &config.mpwd_channels))
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            slope: T::lit(config.leaky_slope),
            config,
            mrsd,
            mpwd,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn num_sub_discriminators(&self) -> usize {
        self.mrsd.len() + self.mpwd.len()
    }

    /// Magnitude spectrograms `[frames, bins]` of `x` for every MRSD
    /// resolution, the same tensors the auxiliary loss uses.
    pub fn spectrograms(&self, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        self.config
            .active_stft_sets()
            .iter()
            .map(|&p| stft_magnitude_tensor(x, p))
            .collect()
    }

    /// MRSD scores from precomputed spectrograms, one per resolution.
    pub fn mrsd_forward(&self, spectrograms: &[Tensor<T>]) -> Result<Vec<SubScore<T>>> {
        if spectrograms.len() != self.mrsd.len() {
            return Err(Error::Input(format!(
                "MRSD has {} sub-discriminators but got {} spectrograms",
                self.mrsd.len(),
                spectrograms.len()
            )));
        }
        let sets = self.config.active_stft_sets();
        self.mrsd
            .iter()
            .zip(spectrograms)
            .zip(sets)
            .map(|((d, s), &params)| {
                let &[frames, bins] = s.shape() else {
                    return Err(Error::Input(format!(
                        "spectrogram must be [frames, bins], got {:?}",
                        s.shape()
                    )));
                };
                if bins != params.n_bins() {
                    return Err(Error::Input(format!(
                        "spectrogram has {bins} bins, expected {} for n_fft {}",
                        params.n_bins(),
                        params.n_fft
                    )));
                }
                let map = d.forward(&s.reshape(&[1, frames, bins])?, self.slope)?;
                Ok(SubScore {
                    map,
                    source: SubDiscriminatorId::Spectrogram(params),
                })
            })
            .collect()
    }

    /// MPWD scores of the waveform `x: [T]`, one per period.
    pub fn mpwd_forward(&self, x: &Tensor<T>) -> Result<Vec<SubScore<T>>> {
        self.mpwd
            .iter()
            .zip(&self.config.periods)
            .map(|(d, &p)| {
                let map = d.forward(&reshape2d(x, p)?, self.slope)?;
                Ok(SubScore {
                    map,
                    source: SubDiscriminatorId::Period(p),
                })
            })
            .collect()
    }

    /// All `K` score maps, MRSD first. `spectrograms` must come from
    /// [`Self::spectrograms`] on the same `x`.
    pub fn forward_with_spectrograms(
        &self,
        x: &Tensor<T>,
        spectrograms: &[Tensor<T>],
    ) -> Result<Vec<SubScore<T>>> {
        let mut scores = self.mrsd_forward(spectrograms)?;
        scores.extend(self.mpwd_forward(x)?);
        Ok(scores)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Vec<SubScore<T>>> {
        let min = self.config.min_len();
        if x.numel() < min {
            return Err(Error::Input(format!(
                "discriminators need at least {min} samples, got {}",
                x.numel()
            )));
        }
        self.forward_with_spectrograms(x, &self.spectrograms(x)?)
    }
}

impl<T: Float> Module<T> for Discriminators<T> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<NamedParam<T>>) {
        for (i, d) in self.mrsd.iter().enumerate() {
            d.collect(&join(prefix, &format!("mrsd.{i}")), out);
        }
        for (i, d) in self.mpwd.iter().enumerate() {
            d.collect(&join(prefix, &format!("mpwd.{i}")), out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::conv_output_len;
    use rand::Rng;

    fn small() -> DiscriminatorConfig {
        DiscriminatorConfig {
            mrsd_channels: 4,
            mpwd_channels: vec![4, 8, 8],
            ..DiscriminatorConfig::default()
        }
    }

    fn signal(len: usize, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new((0..len).map(|_| rng.random_range(-0.5..0.5)).collect(), &[len]).unwrap()
    }

    #[test]
    fn reshape2d_layout() {
        let x = Tensor::<f64>::new((0..6).map(f64::from).collect(), &[6]).unwrap();
        let y = reshape2d(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 3, 2]);
        assert_eq!(y.to_vec(), x.to_vec());
        let col = reshape2d(&x, 1).unwrap();
        assert_eq!(col.shape(), &[1, 6, 1]);
        assert_eq!(col.to_vec(), x.to_vec());
        let x7 = Tensor::<f64>::new((0..7).map(f64::from).collect(), &[7]).unwrap();
        let y = reshape2d(&x7, 3).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3]);
        assert_eq!(&y.to_vec()[6..], &[6.0, 5.0, 4.0]);
        assert!(reshape2d(&Tensor::<f64>::zeros(&[0]), 2).is_err());
    }

    #[test]
    fn config_checks_periods() {
        let mut c = DiscriminatorConfig::default();
        assert!(c.validate().is_ok());
        assert_eq!(c.num_sub_discriminators(), 8);
        c.periods = vec![2, 4];
        assert!(c.validate().is_err());
        c.periods = vec![3, 3];
        assert!(c.validate().is_err());
        c.use_mpwd = false;
        c.use_mrsd = false;
        assert!(c.validate().is_err());
    }

    #[test]
    fn score_map_shapes() {
        let d = Discriminators::<f32>::new(small(), 0).unwrap();
        let len = 2400;
        let scores = d.forward(&signal(len, 1)).unwrap();
        assert_eq!(scores.len(), 8);
        let narrowed = |mut w: usize| {
            for _ in 0..3 {
                w = conv_output_len(w, 9, 2, 1, 8).unwrap();
            }
            w
        };
        for (s, p) in scores.iter().zip(StftParams::MULTI_RESOLUTION) {
            assert_eq!(s.source, SubDiscriminatorId::Spectrogram(p));
            assert_eq!(s.map.shape(), &[1, p.n_frames(len), narrowed(p.n_bins())]);
        }
        for (s, p) in scores[3..].iter().zip([2, 3, 5, 7, 11]) {
            assert_eq!(s.source, SubDiscriminatorId::Period(p));
            let mut h = len.div_ceil(p);
            for _ in 0..2 {
                h = conv_output_len(h, 5, 3, 1, 4).unwrap();
            }
            assert_eq!(s.map.shape(), &[1, h, p]);
            assert!(s.map.data().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn default_schedule_shapes() {
        let d = Discriminators::<f32>::new(DiscriminatorConfig::default(), 0).unwrap();
        let x = signal(2048, 4);
        let scores = d.mpwd_forward(&x).unwrap();
        // 1024 rows → 342 → 114 → 38 → 13 → 13
        assert_eq!(scores[0].map.shape(), &[1, 13, 2]);
        assert_eq!(d.config().num_sub_discriminators(), 8);
    }

    #[test]
    fn deterministic_and_sign_sensitive() {
        let d = Discriminators::<f32>::new(small(), 3).unwrap();
        let x = signal(2400, 2);
        let a = d.forward(&x).unwrap();
        let b = d.forward(&x).unwrap();
        let c = d.forward(&x.neg()).unwrap();
        for ((a, b), c) in a.iter().zip(&b).zip(&c) {
            assert_eq!(a.map.to_vec(), b.map.to_vec());
            if let SubDiscriminatorId::Period(_) = a.source {
                assert_ne!(a.map.to_vec(), c.map.to_vec());
            }
        }
    }

    #[test]
    fn ablation_toggles_drop_sub_discriminators() {
        let c = DiscriminatorConfig {
            use_mrsd: false,
            ..small()
        };
        let d = Discriminators::<f32>::new(c, 0).unwrap();
        assert_eq!(d.forward(&signal(64, 0)).unwrap().len(), 5);
        let c = DiscriminatorConfig {
            use_mpwd: false,
            ..small()
        };
        let d = Discriminators::<f32>::new(c, 0).unwrap();
        assert_eq!(d.forward(&signal(2400, 0)).unwrap().len(), 3);
        assert!(d.forward(&signal(100, 0)).is_err());
    }
}
