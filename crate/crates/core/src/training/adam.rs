use crate::error::{Error, Result};
use crate::nn::NamedParam;
use crate::tensor::{Float, Tensor};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction over a fixed list of parameters.
#[derive(Debug, Clone)]
pub struct Adam<T: Float> {
    pub config: AdamConfig,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: u64,
}

impl<T: Float> Adam<T> {
    pub fn new(params: Vec<NamedParam<T>>, config: AdamConfig) -> Self {
        let m: Vec<Vec<T>> = params.iter().map(|p| vec![T::zero(); p.tensor.numel()]).collect();
        Self {
            config,
            v: m.clone(),
            m,
            names: params.iter().map(|p| p.name.clone()).collect(),
            params: params.into_iter().map(|p| p.tensor).collect(),
            t: 0,
        }
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn zero_grad(&self) {
        self.params.iter().for_each(Tensor::zero_grad);
    }

    /// Applies one update from the accumulated gradients. A non-finite
    /// gradient aborts the step before any parameter changes.
    pub fn step(&mut self) -> Result<()> {
        let grads: Vec<Option<Vec<T>>> = self.params.iter().map(Tensor::grad).collect();
        for (name, g) in self.names.iter().zip(&grads) {
            if let Some(g) = g {
                if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                    return Err(Error::Numeric(format!(
                        "non-finite gradient in {name} at index {i}"
                    )));
                }
            }
        }
        self.t += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let bc1 = T::lit(1.0 - c.beta1.powi(self.t as i32));
        let bc2 = T::lit(1.0 - c.beta2.powi(self.t as i32));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));
        for (i, p) in self.params.iter().enumerate() {
            let Some(g) = &grads[i] else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let mut data = p.data_mut();
            for j in 0..g.len() {
                m[j] = b1 * m[j] + (T::one() - b1) * g[j];
                v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                data[j] = data[j] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// `(name, first moment, second moment)` per parameter.
    pub fn moments(&self) -> impl Iterator<Item = (&str, &[T], &[T])> {
        self.names
            .iter()
            .zip(self.m.iter().zip(&self.v))
            .map(|(n, (m, v))| (n.as_str(), m.as_slice(), v.as_slice()))
    }

    pub fn restore(&mut self, t: u64, moments: impl Fn(&str) -> Option<(Vec<T>, Vec<T>)>) -> Result<()> {
        for (i, name) in self.names.iter().enumerate() {
            let (m, v) = moments(name).ok_or_else(|| {
                Error::format("checkpoint", format!("missing optimizer state for {name}"))
            })?;
            if m.len() != self.m[i].len() || v.len() != self.v[i].len() {
                return Err(Error::format(
                    "checkpoint",
                    format!("optimizer state for {name} has the wrong size"),
                ));
            }
            self.m[i] = m;
            self.v[i] = v;
        }
        self.t = t;
        Ok(())
    }
}
