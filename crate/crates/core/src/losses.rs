//! Multi-resolution STFT auxiliary loss and least-squares GAN objectives.

use crate::discriminators::SubScore;
use crate::dsp::{stft_magnitude_tensor, StftParams};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Balance between the auxiliary and adversarial generator terms.
pub const LAMBDA_AUX: f64 = 2.5;
/// Floor applied to magnitudes before the log in `L_mag`.
pub const MAG_LOG_FLOOR: f64 = 1e-7;
/// Floor on the reference norm in `L_sc`.
pub const SC_NORM_FLOOR: f64 = 1e-8;

fn same_shape<T: Float>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Input(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Spectral convergence value and whether the reference was all-zero.
#[derive(Debug, Clone)]
pub struct SpectralConvergence<T: Float> {
    pub value: Tensor<T>,
    /// `‖s‖_F` fell below the floor, so the value is not a relative error.
    pub degenerate: bool,
}

/// `‖s − ŝ‖_F / max(‖s‖_F, 1e-8)`.
pub fn spectral_convergence<T: Float>(
    s: &Tensor<T>,
    s_hat: &Tensor<T>,
) -> Result<SpectralConvergence<T>> {
    same_shape(s, s_hat, "spectral convergence")?;
    let den = s.frobenius_norm();
    let degenerate = den.item() < T::lit(SC_NORM_FLOOR);
    let value = s
        .sub(s_hat)?
        .frobenius_norm()
        .div(&den.clamp_min(T::lit(SC_NORM_FLOOR)))?;
    Ok(SpectralConvergence { value, degenerate })
}

/// `mean |log s − log ŝ|` with magnitudes floored at 1e-7.
pub fn log_stft_magnitude<T: Float>(s: &Tensor<T>, s_hat: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape(s, s_hat, "log STFT magnitude")?;
    let floor = T::lit(MAG_LOG_FLOOR);
    let d = s.clamp_min(floor).log().sub(&s_hat.clamp_min(floor).log())?;
    Ok(d.abs().mean())
}

/// Auxiliary loss with its per-resolution parts.
#[derive(Debug, Clone)]
pub struct AuxLoss<T: Float> {
    pub total: Tensor<T>,
    pub sc: Vec<f64>,
    pub mag: Vec<f64>,
}

/// `(1/M) Σ_m [L_sc(s_m, ŝ_m) + L_mag(s_m, ŝ_m)]` over precomputed
/// magnitude spectrograms.
pub fn aux_loss_from_spectrograms<T: Float>(
    real: &[Tensor<T>],
    fake: &[Tensor<T>],
) -> Result<AuxLoss<T>> {
    if real.is_empty() || real.len() != fake.len() {
        return Err(Error::Input(format!(
            "auxiliary loss needs matching nonempty spectrogram sets, got {} and {}",
            real.len(),
            fake.len()
        )));
    }
    let (mut sc, mut mag) = (Vec::new(), Vec::new());
    let mut total: Option<Tensor<T>> = None;
    for (s, s_hat) in real.iter().zip(fake) {
        let l_sc = spectral_convergence(s, s_hat)?.value;
        let l_mag = log_stft_magnitude(s, s_hat)?;
        sc.push(l_sc.item().to_f64().unwrap_or(f64::NAN));
        mag.push(l_mag.item().to_f64().unwrap_or(f64::NAN));
        let term = l_sc.add(&l_mag)?;
        total = Some(match total {
            Some(t) => t.add(&term)?,
            None => term,
        });
    }
    let total = total.expect("nonempty").scale(T::lit(1.0 / real.len() as f64));
    Ok(AuxLoss { total, sc, mag })
}

/// Auxiliary loss between waveforms `x` (reference) and `x_hat`.
pub fn aux_loss<T: Float>(
    x: &Tensor<T>,
    x_hat: &Tensor<T>,
    sets: &[StftParams],
) -> Result<AuxLoss<T>> {
    if x.numel() != x_hat.numel() {
        return Err(Error::Input(format!(
            "auxiliary loss needs equal lengths, got {} and {}",
            x.numel(),
            x_hat.numel()
        )));
    }
    let spec = |w: &Tensor<T>| -> Result<Vec<Tensor<T>>> {
        sets.iter().map(|&p| stft_magnitude_tensor(w, p)).collect()
    };
    aux_loss_from_spectrograms(&spec(x)?, &spec(x_hat)?)
}

/// `(1/K) Σ_k mean((D_k(x̂) − 1)²)`.
pub fn generator_adversarial_loss<T: Float>(fake: &[SubScore<T>]) -> Result<Tensor<T>> {
    if fake.is_empty() {
        return Err(Error::Input("adversarial loss needs at least one score map".into()));
    }
    let mut total = fake[0].map.add_scalar(-T::one()).square().mean();
    for s in &fake[1..] {
        total = total.add(&s.map.add_scalar(-T::one()).square().mean())?;
    }
    Ok(total.scale(T::lit(1.0 / fake.len() as f64)))
}

/// `λ·L_aux + (1/K) Σ_k mean((D_k(x̂) − 1)²)`.
pub fn generator_loss<T: Float>(
    fake: &[SubScore<T>],
    aux: &Tensor<T>,
    lambda: f64,
) -> Result<Tensor<T>> {
    Ok(aux.scale(T::lit(lambda)).add(&generator_adversarial_loss(fake)?)?)
}

/// `(1/K) Σ_k [mean((D_k(x) − 1)²) + mean(D_k(x̂)²)]`.
pub fn discriminator_loss<T: Float>(
    real: &[SubScore<T>],
    fake: &[SubScore<T>],
) -> Result<Tensor<T>> {
    if real.is_empty() || real.len() != fake.len() {
        return Err(Error::Input(format!(
            "discriminator loss needs matching nonempty score sets, got {} and {}",
            real.len(),
            fake.len()
        )));
    }
    let mut total: Option<Tensor<T>> = None;
    for (r, f) in real.iter().zip(fake) {
        let term = r
            .map
            .add_scalar(-T::one())
            .square()
            .mean()
            .add(&f.map.square().mean())?;
        total = Some(match total {
            Some(t) => t.add(&term)?,
            None => term,
        });
    }
    Ok(total.expect("nonempty").scale(T::lit(1.0 / real.len() as f64)))
}

/// Scalar loss values of one training step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossBreakdown {
    pub l_sc: Vec<f64>,
    pub l_mag: Vec<f64>,
    pub l_aux: f64,
    pub l_adv_g: f64,
    pub l_g: f64,
    pub l_d: f64,
    pub lambda: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.l_sc
            .iter()
            .chain(&self.l_mag)
            .chain([&self.l_aux, &self.l_adv_g, &self.l_g, &self.l_d])
            .all(|v| v.is_finite())
    }
}
