use rand::Rng;

use super::lvc::location_variable_conv;
use crate::error::{Error, Result};
use crate::nn::{join, Conv1d, Module, NamedParam};
use crate::tensor::{Float, Tensor};

/// Kernels and biases for every LVC layer of one residual stack, one set
/// per condition frame.
#[derive(Debug, Clone)]
pub struct KernelPredictorOutput<T: Float> {
    /// `[n_layers·c_out·c_in·k, frames]`.
    pub kernels: Tensor<T>,
    /// `[n_layers·c_out, frames]`.
    pub biases: Tensor<T>,
    pub n_layers: usize,
    pub c_out: usize,
    pub c_in: usize,
    pub kernel_size: usize,
}

impl<T: Float> KernelPredictorOutput<T> {
    pub fn frames(&self) -> usize {
        self.kernels.shape()[1]
    }

    /// Per-layer kernel length `L_w / n_layers`.
    pub fn layer_kernel_len(&self) -> usize {
        self.c_out * self.c_in * self.kernel_size
    }

    /// Logical kernel shape `[frames, n_layers, c_out, c_in, k]`.
    pub fn kernel_shape(&self) -> [usize; 5] {
        [self.frames(), self.n_layers, self.c_out, self.c_in, self.kernel_size]
    }

    /// Frame `t`'s kernel for `layer`, flattened `(out, in, tap)`.
    pub fn kernel_at(&self, frame: usize, layer: usize) -> Vec<T> {
        let frames = self.frames();
        let per = self.layer_kernel_len();
        let k = self.kernels.data();
        (0..per).map(|r| k[(layer * per + r) * frames + frame]).collect()
    }

    pub fn bias_at(&self, frame: usize, layer: usize) -> Vec<T> {
        let frames = self.frames();
        let b = self.biases.data();
        (0..self.c_out)
            .map(|o| b[(layer * self.c_out + o) * frames + frame])
            .collect()
    }

    pub fn layer_kernels(&self, layer: usize) -> Result<Tensor<T>> {
        let per = self.layer_kernel_len();
        Ok(self.kernels.narrow(layer * per, per)?)
    }

    pub fn layer_biases(&self, layer: usize) -> Result<Tensor<T>> {
        Ok(self.biases.narrow(layer * self.c_out, self.c_out)?)
    }

    /// Location-variable convolution of `x: [c_in, frames·hop]` with this
    /// output's kernels for `layer`.
    pub fn lvc_forward(
        &self,
        x: &Tensor<T>,
        layer: usize,
        dilation: usize,
        hop: usize,
    ) -> Result<Tensor<T>> {
        if layer >= self.n_layers {
            return Err(Error::Parameter(format!(
                "layer {layer} out of {} predicted layers",
                self.n_layers
            )));
        }
        location_variable_conv(
            x,
            &self.layer_kernels(layer)?,
            &self.layer_biases(layer)?,
            self.kernel_size,
            dilation,
            hop,
        )
    }
}

/// Maps the log-mel condition to LVC kernels for one residual stack.
#[derive(Debug, Clone)]
pub struct KernelPredictor<T: Float> {
    input_conv: Conv1d<T>,
    residual: Vec<(Conv1d<T>, Conv1d<T>)>,
    kernel_conv: Conv1d<T>,
    bias_conv: Conv1d<T>,
    n_mels: usize,
    n_layers: usize,
    c_in: usize,
    c_out: usize,
    kernel_size: usize,
    slope: T,
}

/// Shape of a kernel predictor.
#[derive(Debug, Clone, Copy)]
pub struct KernelPredictorSpec {
    pub n_mels: usize,
    pub hidden: usize,
    pub conv_size: usize,
    pub input_kernel: usize,
    pub residual_blocks: usize,
    pub n_layers: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel_size: usize,
    pub slope: f64,
}

impl<T: Float> KernelPredictor<T> {
    pub fn new(rng: &mut impl Rng, spec: KernelPredictorSpec) -> Self {
        let h = spec.hidden;
        let l_w = spec.n_layers * spec.c_out * spec.c_in * spec.kernel_size;
        let l_b = spec.n_layers * spec.c_out;
        let input_conv = Conv1d::same(rng, spec.n_mels, h, spec.input_kernel, 1);
        let residual = (0..spec.residual_blocks)
            .map(|_| {
                (
                    Conv1d::same(rng, h, h, spec.conv_size, 1),
                    Conv1d::same(rng, h, h, spec.conv_size, 1),
                )
            })
            .collect();
        let kernel_conv = Conv1d::same(rng, h, l_w, spec.conv_size, 1);
        let bias_conv = Conv1d::same(rng, h, l_b, spec.conv_size, 1);
        Self {
            input_conv,
            residual,
            kernel_conv,
            bias_conv,
            n_mels: spec.n_mels,
            n_layers: spec.n_layers,
            c_in: spec.c_in,
            c_out: spec.c_out,
            kernel_size: spec.kernel_size,
            slope: T::lit(spec.slope),
        }
    }

    /// `cond: [n_mels, frames]`.
    pub fn forward(&self, cond: &Tensor<T>) -> Result<KernelPredictorOutput<T>> {
        if cond.ndim() != 2 || cond.shape()[0] != self.n_mels {
            return Err(Error::Input(format!(
                "kernel predictor expects [{}, F] condition, got {:?}",
                self.n_mels,
                cond.shape()
            )));
        }
        let mut h = self.input_conv.forward(cond)?.leaky_relu(self.slope);
        for (a, b) in &self.residual {
            let r = b
                .forward(&a.forward(&h)?.leaky_relu(self.slope))?
                .leaky_relu(self.slope);
            h = h.add(&r)?;
        }
        Ok(KernelPredictorOutput {
            kernels: self.kernel_conv.forward(&h)?,
            biases: self.bias_conv.forward(&h)?,
            n_layers: self.n_layers,
            c_out: self.c_out,
            c_in: self.c_in,
            kernel_size: self.kernel_size,
        })
    }
}

impl<T: Float> Module<T> for KernelPredictor<T> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<NamedParam<T>>) {
        self.input_conv.collect_params(&join(prefix, "input_conv"), out);
        for (i, (a, b)) in self.residual.iter().enumerate() {
            a.collect_params(&join(prefix, &format!("residual.{i}.0")), out);
            b.collect_params(&join(prefix, &format!("residual.{i}.1")), out);
        }
        self.kernel_conv.collect_params(&join(prefix, "kernel_conv"), out);
        self.bias_conv.collect_params(&join(prefix, "bias_conv"), out);
    }
}
