//! Data-side diffusion math for jointly noising an image latent and an
//! insertion-mask map: linear schedule, forward noising with independent
//! timesteps per stream, condition dropping, and an ancestral sampler with a
//! pluggable denoiser and classifier-free guidance.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense row-major f64 tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(shape, vec![data.len()]));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn randn<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: (0..n).map(|_| rng.sample(StandardNormal)).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn check_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(self.shape.clone(), other.shape.clone()));
        }
        Ok(())
    }

    /// `a·self + b·other`, elementwise.
    pub fn axpby(&self, a: f64, other: &Tensor, b: f64) -> Result<Tensor> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(x, y)| a * x + b * y).collect();
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulePreset {
    /// β linear in t over [1e-4, 2e-2].
    Linear,
    /// √β linear in t over [√8.5e-4, √1.2e-2].
    ScaledLinear,
}

/// Discrete variance schedule; timesteps are integers `0..steps`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// β linear in t from `beta_start` to `beta_end`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        Self::check_range(steps, beta_start, beta_end)?;
        let betas = (0..steps)
            .map(|t| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * t as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Ok(Self::from_betas(betas))
    }

    pub fn scaled_linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        Self::check_range(steps, beta_start, beta_end)?;
        let (a, b) = (beta_start.sqrt(), beta_end.sqrt());
        let betas = (0..steps)
            .map(|t| {
                let s = if steps == 1 { a } else { a + (b - a) * t as f64 / (steps - 1) as f64 };
                s * s
            })
            .collect();
        Ok(Self::from_betas(betas))
    }

    pub fn preset(preset: SchedulePreset, steps: usize) -> Result<Self> {
        match preset {
            SchedulePreset::Linear => Self::linear(steps, 1e-4, 2e-2),
            SchedulePreset::ScaledLinear => Self::scaled_linear(steps, 8.5e-4, 1.2e-2),
        }
    }

    fn check_range(steps: usize, beta_start: f64, beta_end: f64) -> Result<()> {
        if steps == 0 {
            return Err(Error::InvalidRange("schedule needs at least one step".into()));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidRange(format!("beta range [{beta_start}, {beta_end}]")));
        }
        Ok(())
    }

    fn from_betas(betas: Vec<f64>) -> Self {
        let mut acc = 1.0;
        let alpha_bars = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Self { betas, alpha_bars }
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// Signal coefficient √ᾱ_t.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha_bars[t].sqrt()
    }

    /// Noise coefficient √(1−ᾱ_t).
    pub fn sigma(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bars[t]).sqrt()
    }

    /// Posterior variance β̃_t = (1−ᾱ_{t−1})/(1−ᾱ_t)·β_t; zero at t = 0.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        if t == 0 {
            return 0.0;
        }
        (1.0 - self.alpha_bars[t - 1]) / (1.0 - self.alpha_bars[t]) * self.betas[t]
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t >= self.steps() {
            return Err(Error::InvalidRange(format!("timestep {t} >= {}", self.steps())));
        }
        Ok(())
    }
}

/// `x_t = α_t·x0 + σ_t·ε`.
pub fn forward_noise(x0: &Tensor, t: usize, eps: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check_step(t)?;
    x0.axpby(sched.alpha(t), eps, sched.sigma(t))
}

/// Inverse of [`forward_noise`] given the noise: `(x_t − σ_t·ε)/α_t`.
pub fn predict_x0(x_t: &Tensor, t: usize, eps: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check_step(t)?;
    let a = sched.alpha(t);
    x_t.axpby(1.0 / a, eps, -sched.sigma(t) / a)
}

/// Map 0/1 mask values into [−1, 1].
pub fn mask_to_signed(values: &[f64]) -> Vec<f64> {
    values.iter().map(|v| 2.0 * v - 1.0).collect()
}

/// One jointly noised training pair with independent timesteps.
#[derive(Clone, Debug, PartialEq)]
pub struct DualSample {
    pub z_t: Tensor,
    pub m_t: Tensor,
    pub t_z: usize,
    pub t_m: usize,
    /// Regression target for the latent stream.
    pub eps_z: Tensor,
    /// Regression target for the mask stream.
    pub eps_m: Tensor,
    /// All conditions dropped (unconditional sample for guidance training).
    pub dropped: bool,
}

impl DualSample {
    /// Sum of the two streams' mean squared errors against predicted noise.
    pub fn loss(&self, eps_hat_z: &Tensor, eps_hat_m: &Tensor) -> Result<f64> {
        self.eps_z.check_same_shape(eps_hat_z)?;
        self.eps_m.check_same_shape(eps_hat_m)?;
        let mse = |a: &Tensor, b: &Tensor| {
            a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len().max(1) as f64
        };
        Ok(mse(&self.eps_z, eps_hat_z) + mse(&self.eps_m, eps_hat_m))
    }
}

pub fn make_dual_sample<R: Rng + ?Sized>(
    z0: &Tensor,
    m0: &Tensor,
    rng: &mut R,
    sched: &NoiseSchedule,
    drop_prob: f64,
) -> Result<DualSample> {
    if !(0.0..=1.0).contains(&drop_prob) {
        return Err(Error::InvalidRange(format!("drop probability {drop_prob}")));
    }
    if m0.data().iter().any(|v| !(-1.0..=1.0).contains(v)) {
        return Err(Error::InvalidRange("mask stream must lie in [-1, 1]".into()));
    }
    let t_z = rng.random_range(0..sched.steps());
    let t_m = rng.random_range(0..sched.steps());
    let eps_z = Tensor::randn(z0.shape(), rng);
    let eps_m = Tensor::randn(m0.shape(), rng);
    let dropped = rng.random::<f64>() < drop_prob;
    Ok(DualSample {
        z_t: forward_noise(z0, t_z, &eps_z, sched)?,
        m_t: forward_noise(m0, t_m, &eps_m, sched)?,
        t_z,
        t_m,
        eps_z,
        eps_m,
        dropped,
    })
}

/// DDPM ancestral update from step `t` to `t−1`; no noise is added at `t = 0`.
pub fn reverse_step<R: Rng + ?Sized>(
    x_t: &Tensor,
    eps_hat: &Tensor,
    t: usize,
    rng: &mut R,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    sched.check_step(t)?;
    x_t.check_same_shape(eps_hat)?;
    let beta = sched.beta(t);
    let scale = 1.0 / (1.0 - beta).sqrt();
    let mut out = x_t.axpby(scale, eps_hat, -scale * beta / sched.sigma(t))?;
    if t > 0 {
        let sd = sched.posterior_variance(t).sqrt();
        for v in out.data_mut() {
            let xi: f64 = rng.sample(StandardNormal);
            *v += sd * xi;
        }
    }
    Ok(out)
}

/// Noise predictions for both streams.
#[derive(Clone, Debug, PartialEq)]
pub struct EpsPair {
    pub z: Tensor,
    pub m: Tensor,
}

/// A noise predictor over both streams. `conditions` is `None` for the
/// unconditional branch used by classifier-free guidance.
pub trait Denoiser {
    type Conditions;

    fn predict(&self, z_t: &Tensor, m_t: &Tensor, t: usize, conditions: Option<&Self::Conditions>) -> Result<EpsPair>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerConfig {
    /// `None` uses the conditional prediction alone.
    pub guidance_scale: Option<f64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { guidance_scale: Some(3.0) }
    }
}

/// `eps_u + s·(eps_c − eps_u)`.
pub fn guide(cond: &Tensor, uncond: &Tensor, scale: f64) -> Result<Tensor> {
    let diff = cond.axpby(1.0, uncond, -1.0)?;
    uncond.axpby(1.0, &diff, scale)
}

/// Run the full reverse chain jointly on both streams from pure noise.
///
/// Noise draw order: initial `z` then `m`, then per step the `z` noise
/// followed by the `m` noise.
pub fn sample_with_denoiser<D: Denoiser, R: Rng + ?Sized>(
    denoiser: &D,
    conditions: &D::Conditions,
    z_shape: &[usize],
    m_shape: &[usize],
    sched: &NoiseSchedule,
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<(Tensor, Tensor)> {
    let mut z = Tensor::randn(z_shape, rng);
    let mut m = Tensor::randn(m_shape, rng);
    for t in (0..sched.steps()).rev() {
        let cond = denoiser.predict(&z, &m, t, Some(conditions))?;
        let eps = match config.guidance_scale {
            None => cond,
            Some(s) => {
                let uncond = denoiser.predict(&z, &m, t, None)?;
                EpsPair { z: guide(&cond.z, &uncond.z, s)?, m: guide(&cond.m, &uncond.m, s)? }
            }
        };
        z = reverse_step(&z, &eps.z, t, rng, sched)?;
        m = reverse_step(&m, &eps.m, t, rng, sched)?;
        if !z.all_finite() || !m.all_finite() {
            return Err(Error::NonFiniteValue(t));
        }
    }
    Ok((z, m))
}
