//! Weight-normalized convolution layers and parameter bookkeeping.

use rand::Rng;

use crate::tensor::{
    conv1d, conv2d, conv_transpose1d, weight_norm, Float, Padding, Tensor, TensorResult,
};

/// A learnable tensor with its dotted path inside the model.
#[derive(Debug, Clone)]
pub struct NamedParam<T: Float> {
    pub name: String,
    pub tensor: Tensor<T>,
}

/// Anything that owns learnable tensors.
pub trait Module<T: Float> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<NamedParam<T>>);

    fn parameters(&self) -> Vec<NamedParam<T>> {
        let mut out = Vec::new();
        self.collect_params("", &mut out);
        out
    }

    fn num_params(&self) -> usize {
        self.parameters().iter().map(|p| p.tensor.numel()).sum()
    }

    fn zero_grad(&self) {
        self.parameters().iter().for_each(|p| p.tensor.zero_grad());
    }

    fn set_frozen(&self, frozen: bool) {
        self.parameters().iter().for_each(|p| p.tensor.set_frozen(frozen));
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

fn uniform<T: Float>(rng: &mut impl Rng, n: usize, bound: f64) -> Vec<T> {
    (0..n)
        .map(|_| T::lit(rng.random_range(-bound..bound)))
        .collect()
}

/// Direction `v`, per-slice magnitude `g` (initialised to `‖v‖`) and bias.
#[derive(Debug, Clone)]
struct WeightNormed<T: Float> {
    v: Tensor<T>,
    g: Tensor<T>,
    bias: Tensor<T>,
}

impl<T: Float> WeightNormed<T> {
    /// Uniform `±1/√fan_in` initialisation for direction and bias.
    fn init(rng: &mut impl Rng, shape: &[usize], fan_in: usize, bias_len: usize) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let v = uniform::<T>(rng, n, bound);
        let inner = n / shape[0];
        let g: Vec<T> = v
            .chunks(inner)
            .map(|r| r.iter().map(|&x| x * x).sum::<T>().sqrt())
            .collect();
        let bias = uniform::<T>(rng, bias_len, bound);
        Self {
            v: Tensor::param(v, shape).expect("shape matches"),
            g: Tensor::param(g, &[shape[0]]).expect("shape matches"),
            bias: Tensor::param(bias, &[bias_len]).expect("shape matches"),
        }
    }

    fn weight(&self) -> TensorResult<Tensor<T>> {
        weight_norm(&self.v, &self.g)
    }

    fn collect(&self, prefix: &str, out: &mut Vec<NamedParam<T>>) {
        for (name, t) in [("weight_v", &self.v), ("weight_g", &self.g), ("bias", &self.bias)] {
            out.push(NamedParam {
                name: join(prefix, name),
                tensor: t.clone(),
            });
        }
    }
}

/// Weight-normalized `Conv1d`, weight `[C_out, C_in, K]`.
#[derive(Debug, Clone)]
pub struct Conv1d<T: Float> {
    p: WeightNormed<T>,
    pub stride: usize,
    pub dilation: usize,
    pub padding: Padding,
}

impl<T: Float> Conv1d<T> {
    pub fn new(
        rng: &mut impl Rng,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        dilation: usize,
        padding: Padding,
    ) -> Self {
        Self {
            p: WeightNormed::init(rng, &[c_out, c_in, kernel], c_in * kernel, c_out),
            stride: 1,
            dilation,
            padding,
        }
    }

    /// Stride-1 convolution that preserves length.
    pub fn same(rng: &mut impl Rng, c_in: usize, c_out: usize, kernel: usize, dilation: usize) -> Self {
        Self::new(rng, c_in, c_out, kernel, dilation, Padding::Same)
    }

    pub fn weight(&self) -> TensorResult<Tensor<T>> {
        self.p.weight()
    }

    pub fn bias(&self) -> &Tensor<T> {
        &self.p.bias
    }

    pub fn forward(&self, x: &Tensor<T>) -> TensorResult<Tensor<T>> {
        conv1d(
            x,
            &self.weight()?,
            Some(&self.p.bias),
            self.stride,
            self.dilation,
            self.padding,
        )
    }
}

impl<T: Float> Module<T> for Conv1d<T> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<NamedParam<T>>) {
        self.p.collect(prefix, out);
    }
}

/// Weight-normalized `ConvTranspose1d`, weight `[C_in, C_out, K]`.
#[derive(Debug, Clone)]
pub struct ConvTranspose1d<T: Float> {
    p: WeightNormed<T>,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
}

impl<T: Float> ConvTranspose1d<T> {
    /// Upsampler with kernel `2·stride` whose output is exactly `T·stride`
    /// samples long.
    pub fn upsampler(rng: &mut impl Rng, c_in: usize, c_out: usize, stride: usize) -> Self {
        let k = 2 * stride;
        Self {
            p: WeightNormed::init(rng, &[c_in, c_out, k], c_out * k, c_out),
            stride,
            padding: stride / 2 + stride % 2,
            output_padding: stride % 2,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> TensorResult<Tensor<T>> {
        conv_transpose1d(
            x,
            &self.p.weight()?,
            Some(&self.p.bias),
            self.stride,
            self.padding,
            self.output_padding,
        )
    }
}

impl<T: Float> Module<T> for ConvTranspose1d<T> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<NamedParam<T>>) {
        self.p.collect(prefix, out);
    }
}

/// Weight-normalized `Conv2d`, weight `[C_out, C_in, KH, KW]`.
#[derive(Debug, Clone)]
pub struct Conv2d<T: Float> {
    p: WeightNormed<T>,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl<T: Float> Conv2d<T> {
    pub fn new(
        rng: &mut impl Rng,
        c_in: usize,
        c_out: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Self {
        Self {
            p: WeightNormed::init(
                rng,
                &[c_out, c_in, kernel.0, kernel.1],
                c_in * kernel.0 * kernel.1,
                c_out,
            ),
            stride,
            padding,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> TensorResult<Tensor<T>> {
        conv2d(x, &self.p.weight()?, Some(&self.p.bias), self.stride, self.padding)
    }
}

impl<T: Float> Module<T> for Conv2d<T> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<NamedParam<T>>) {
        self.p.collect(prefix, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn weight_norm_matches_effective_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = Conv1d::<f64>::same(&mut rng, 3, 4, 3, 2);
        let x = Tensor::new(uniform::<f64>(&mut rng, 3 * 17, 1.0), &[3, 17]).unwrap();
        let y = conv.forward(&x).unwrap().to_vec();
        // recompute w = g·v/‖v‖ by hand and run a plain convolution
        let v = conv.p.v.to_vec();
        let g = conv.p.g.to_vec();
        let mut w = v.clone();
        for (o, row) in w.chunks_mut(9).enumerate() {
            let n = v[o * 9..(o + 1) * 9].iter().map(|a| a * a).sum::<f64>().sqrt();
            row.iter_mut().for_each(|a| *a *= g[o] / n);
        }
        let wt = Tensor::new(w, &[4, 3, 3]).unwrap();
        let y2 = conv1d(&x, &wt, Some(&conv.p.bias), 1, 2, Padding::Same).unwrap().to_vec();
        for (a, b) in y.iter().zip(&y2) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn initial_magnitude_equals_direction_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = Conv1d::<f32>::same(&mut rng, 5, 2, 3, 1);
        let w = conv.weight().unwrap().to_vec();
        let v = conv.p.v.to_vec();
        for (a, b) in w.iter().zip(&v) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn upsampler_lengths() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for stride in [2, 3, 4, 8] {
            let up = ConvTranspose1d::<f32>::upsampler(&mut rng, 2, 3, stride);
            let y = up.forward(&Tensor::zeros(&[2, 20])).unwrap();
            assert_eq!(y.shape(), &[3, 20 * stride]);
        }
    }

    #[test]
    fn parameter_names() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = Conv2d::<f32>::new(&mut rng, 1, 2, (3, 9), (1, 2), (1, 4));
        let mut out = Vec::new();
        conv.collect_params("mrsd.0", &mut out);
        let names: Vec<_> = out.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, ["mrsd.0.weight_v", "mrsd.0.weight_g", "mrsd.0.bias"]);
        assert_eq!(conv.num_params(), 2 * 27 + 2 + 2);
    }
}
