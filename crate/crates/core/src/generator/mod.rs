//! Noise-driven generator conditioned on log-mel features.
//!
//! ```text
//! z [64, F] ─ input conv ─┬─ upsample ×8 ─ residual stack (hop 8)   ─┐
//!                         │     ...      ×8 ─ residual stack (hop 64)  │
//!                         │     ...      ×4 ─ residual stack (hop 256) ┴─ output conv ─ tanh ─ x̂ [256·F]
//! c [100, F] ─ one kernel predictor per stack ─ LVC kernels
//! ```
//!
//! Each residual layer is `x += gate(LVC(lrelu(conv_d(lrelu(x)))))` where the
//! dilated convolution keeps `c_G` channels, the LVC widens to `2·c_G` and
//! the gated activation unit folds back to `c_G`.

mod kernel_predictor;
mod lvc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use kernel_predictor::{KernelPredictor, KernelPredictorOutput, KernelPredictorSpec};
pub use lvc::location_variable_conv;

use crate::dsp::{AudioBuffer, MelSpectrogram, HOP, N_MELS, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::nn::{join, Conv1d, ConvTranspose1d, Module, NamedParam};
use crate::tensor::{Float, Tensor};

pub const NOISE_DIM: usize = 64;

/// Generator hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    /// Channel size `c_G` of the main stream.
    pub channels: usize,
    pub noise_dim: usize,
    pub n_mels: usize,
    /// One residual stack per factor; the product must equal the hop.
    pub upsample_factors: Vec<usize>,
    pub lvc_kernel_size: usize,
    /// One LVC layer per entry.
    pub dilations: Vec<usize>,
    pub kp_hidden: usize,
    pub kp_conv_size: usize,
    pub kp_input_kernel: usize,
    pub kp_residual_blocks: usize,
    pub io_kernel_size: usize,
    pub leaky_slope: f64,
    /// Replace LVC by additive local conditioning.
    pub no_lvc: bool,
    /// Replace the gated activation unit by a leaky ReLU.
    pub no_gau: bool,
    /// Channel sizes of the input layer and each stack without LVC.
    pub no_lvc_channels: Vec<usize>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            channels: 16,
            noise_dim: NOISE_DIM,
            n_mels: N_MELS,
            upsample_factors: vec![8, 8, 4],
            lvc_kernel_size: 3,
            dilations: vec![1, 3, 9, 27],
            kp_hidden: 64,
            kp_conv_size: 3,
            kp_input_kernel: 5,
            kp_residual_blocks: 3,
            io_kernel_size: 7,
            leaky_slope: 0.2,
            no_lvc: false,
            no_gau: false,
            no_lvc_channels: vec![512, 256, 128, 64],
        }
    }
}

impl GeneratorConfig {
    pub fn c16() -> Self {
        Self::default()
    }

    pub fn c32() -> Self {
        Self {
            channels: 32,
            ..Self::default()
        }
    }

    pub fn hop(&self) -> usize {
        self.upsample_factors.iter().product()
    }

    pub fn layers_per_stack(&self) -> usize {
        self.dilations.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.hop() != HOP {
            return bad(format!(
                "upsample factors {:?} multiply to {}, expected {HOP}",
                self.upsample_factors,
                self.hop()
            ));
        }
        if self.noise_dim != NOISE_DIM {
            return bad(format!("noise dimension must be {NOISE_DIM}, got {}", self.noise_dim));
        }
        if self.channels == 0 || self.kp_hidden == 0 || self.dilations.is_empty() {
            return bad("channels, kp_hidden and dilations must be non-empty".into());
        }
        if self.lvc_kernel_size % 2 == 0 || self.io_kernel_size == 0 {
            return bad("LVC kernel size must be odd".into());
        }
        if self.upsample_factors.contains(&0) || self.dilations.contains(&0) {
            return bad("upsample factors and dilations must be ≥ 1".into());
        }
        if self.no_lvc && self.no_lvc_channels.len() != self.upsample_factors.len() + 1 {
            return bad(format!(
                "no_lvc_channels needs {} entries (input layer + stacks)",
                self.upsample_factors.len() + 1
            ));
        }
        Ok(())
    }

    /// `L_w` and `L_b` of one kernel predictor.
    pub fn kernel_predictor_lengths(&self) -> (usize, usize) {
        let c_out = self.lvc_out_channels();
        let l = self.layers_per_stack();
        (
            l * c_out * self.channels * self.lvc_kernel_size,
            l * c_out,
        )
    }

    fn lvc_out_channels(&self) -> usize {
        if self.no_gau {
            self.channels
        } else {
            2 * self.channels
        }
    }
}

/// `tanh(a) ⊙ σ(b)` over the two channel halves `[a; b]` of `h`.
pub fn gau<T: Float>(h: &Tensor<T>) -> Result<Tensor<T>> {
    let c2 = h.shape().first().copied().unwrap_or(0);
    if h.ndim() != 2 || c2 % 2 != 0 {
        return Err(Error::Input(format!(
            "gated activation needs an even channel count, got shape {:?}",
            h.shape()
        )));
    }
    let c = c2 / 2;
    Ok(h.narrow(0, c)?.tanh().mul(&h.narrow(c, c)?.sigmoid())?)
}

/// I.i.d. standard-normal noise `[64, n_frames]`.
pub fn sample_noise<T: Float>(n_frames: usize, seed: u64) -> Tensor<T> {
    sample_noise_with(&mut ChaCha8Rng::seed_from_u64(seed), NOISE_DIM, n_frames)
}

pub fn sample_noise_with<T: Float>(
    rng: &mut impl rand::Rng,
    channels: usize,
    n_frames: usize,
) -> Tensor<T> {
    let data = (0..channels * n_frames)
        .map(|_| T::lit(StandardNormal.sample(rng)))
        .collect();
    Tensor::new(data, &[channels, n_frames]).expect("shape matches")
}

#[derive(Debug, Clone)]
struct LvcStack<T: Float> {
    upsample: ConvTranspose1d<T>,
    predictor: KernelPredictor<T>,
    convs: Vec<Conv1d<T>>,
    hop: usize,
}

#[derive(Debug, Clone)]
struct LocalStack<T: Float> {
    upsample: ConvTranspose1d<T>,
    convs: Vec<Conv1d<T>>,
    cond_proj: Vec<Conv1d<T>>,
    hop: usize,
}

#[derive(Debug, Clone)]
enum Stack<T: Float> {
    Lvc(LvcStack<T>),
    Local(LocalStack<T>),
}

/// The waveform generator.
#[derive(Debug, Clone)]
pub struct Generator<T: Float = f32> {
    config: GeneratorConfig,
    input_conv: Conv1d<T>,
    stacks: Vec<Stack<T>>,
    output_conv: Conv1d<T>,
    slope: T,
}

impl<T: Float> Generator<T> {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let k_io = config.io_kernel_size;
        let widths: Vec<usize> = if config.no_lvc {
            config.no_lvc_channels.clone()
        } else {
            vec![config.channels; config.upsample_factors.len() + 1]
        };
        let input_conv = Conv1d::same(rng, config.noise_dim, widths[0], k_io, 1);
        let mut hop = 1;
        let mut stacks = Vec::new();
        for (s, &factor) in config.upsample_factors.iter().enumerate() {
            hop *= factor;
            let (c_prev, c) = (widths[s], widths[s + 1]);
            let upsample = ConvTranspose1d::upsampler(rng, c_prev, c, factor);
            if config.no_lvc {
                let gate_in = if config.no_gau { c } else { 2 * c };
                let convs = config
                    .dilations
                    .iter()
                    .map(|&d| Conv1d::same(rng, c, gate_in, config.lvc_kernel_size, d))
                    .collect();
                let cond_proj = config
                    .dilations
                    .iter()
                    .map(|_| Conv1d::same(rng, config.n_mels, gate_in, 1, 1))
                    .collect();
                stacks.push(Stack::Local(LocalStack {
                    upsample,
                    convs,
                    cond_proj,
                    hop,
                }));
            } else {
                let predictor = KernelPredictor::new(
                    rng,
                    KernelPredictorSpec {
                        n_mels: config.n_mels,
                        hidden: config.kp_hidden,
                        conv_size: config.kp_conv_size,
                        input_kernel: config.kp_input_kernel,
                        residual_blocks: config.kp_residual_blocks,
                        n_layers: config.layers_per_stack(),
                        c_in: c,
                        c_out: config.lvc_out_channels(),
                        kernel_size: config.lvc_kernel_size,
                        slope: config.leaky_slope,
                    },
                );
                let convs = config
                    .dilations
                    .iter()
                    .map(|&d| Conv1d::same(rng, c, c, config.lvc_kernel_size, d))
                    .collect();
                stacks.push(Stack::Lvc(LvcStack {
                    upsample,
                    predictor,
                    convs,
                    hop,
                }));
            }
        }
        let output_conv = Conv1d::same(rng, *widths.last().unwrap(), 1, k_io, 1);
        Ok(Self {
            slope: T::lit(config.leaky_slope),
            config,
            input_conv,
            stacks,
            output_conv,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    fn gate(&self, h: &Tensor<T>) -> Result<Tensor<T>> {
        if self.config.no_gau {
            Ok(h.leaky_relu(self.slope))
        } else {
            gau(h)
        }
    }

    /// Kernel predictor output of stack `stack` (LVC generators only).
    pub fn predict_kernels(&self, stack: usize, cond: &Tensor<T>) -> Result<KernelPredictorOutput<T>> {
        match self.stacks.get(stack) {
            Some(Stack::Lvc(s)) => s.predictor.forward(cond),
            Some(Stack::Local(_)) => Err(Error::Config("generator built without LVC".into())),
            None => Err(Error::Parameter(format!("no residual stack {stack}"))),
        }
    }

    /// Differentiable forward pass: `z: [64, F]`, `cond: [n_mels, F]` →
    /// waveform `[256·F]` in (−1, 1).
    pub fn forward(&self, z: &Tensor<T>, cond: &Tensor<T>) -> Result<Tensor<T>> {
        let (&[zc, zf], &[cm, cf]) = (z.shape(), cond.shape()) else {
            return Err(Error::Input(format!(
                "noise and condition must be 2-D, got {:?} and {:?}",
                z.shape(),
                cond.shape()
            )));
        };
        if zc != self.config.noise_dim || cm != self.config.n_mels {
            return Err(Error::Input(format!(
                "expected noise [{}, F] and condition [{}, F], got {:?} and {:?}",
                self.config.noise_dim,
                self.config.n_mels,
                z.shape(),
                cond.shape()
            )));
        }
        if zf != cf || zf == 0 {
            return Err(Error::Input(format!(
                "noise covers {zf} frames but the condition has {cf}"
            )));
        }
        let slope = self.slope;
        let mut x = self.input_conv.forward(z)?;
        for stack in &self.stacks {
            match stack {
                Stack::Lvc(s) => {
                    x = s.upsample.forward(&x.leaky_relu(slope))?;
                    let kp = s.predictor.forward(cond)?;
                    for (l, conv) in s.convs.iter().enumerate() {
                        let h = conv.forward(&x.leaky_relu(slope))?.leaky_relu(slope);
                        let o = kp.lvc_forward(&h, l, 1, s.hop)?;
                        x = x.add(&self.gate(&o)?)?;
                    }
                }
                Stack::Local(s) => {
                    x = s.upsample.forward(&x.leaky_relu(slope))?;
                    let c_up = cond.repeat_interleave(s.hop)?;
                    for (conv, proj) in s.convs.iter().zip(&s.cond_proj) {
                        let h = conv.forward(&x.leaky_relu(slope))?.add(&proj.forward(&c_up)?)?;
                        x = x.add(&self.gate(&h)?)?;
                    }
                }
            }
        }
        let y = self.output_conv.forward(&x.leaky_relu(slope))?.tanh();
        let len = y.numel();
        Ok(y.reshape(&[len])?)
    }

    /// Vocodes a mel spectrogram with noise drawn from `seed`.
    pub fn synthesize(&self, mel: &MelSpectrogram, seed: u64) -> Result<AudioBuffer> {
        let z = sample_noise::<T>(mel.n_frames, seed);
        let y = self.forward(&z, &mel.to_condition())?;
        let samples = y.data().iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect();
        AudioBuffer::new(samples, SAMPLE_RATE)
    }
}

impl<T: Float> Module<T> for Generator<T> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<NamedParam<T>>) {
        self.input_conv.collect_params(&join(prefix, "input_conv"), out);
        for (i, stack) in self.stacks.iter().enumerate() {
            let p = join(prefix, &format!("stacks.{i}"));
            match stack {
                Stack::Lvc(s) => {
                    s.upsample.collect_params(&join(&p, "upsample"), out);
                    s.predictor.collect_params(&join(&p, "kernel_predictor"), out);
                    for (l, c) in s.convs.iter().enumerate() {
                        c.collect_params(&join(&p, &format!("convs.{l}")), out);
                    }
                }
                Stack::Local(s) => {
                    s.upsample.collect_params(&join(&p, "upsample"), out);
                    for (l, (c, q)) in s.convs.iter().zip(&s.cond_proj).enumerate() {
                        c.collect_params(&join(&p, &format!("convs.{l}")), out);
                        q.collect_params(&join(&p, &format!("cond_proj.{l}")), out);
                    }
                }
            }
        }
        self.output_conv.collect_params(&join(prefix, "output_conv"), out);
    }
}
