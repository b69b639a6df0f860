//! CycleDiffusion over a pluggable mean predictor.
//!
//! A source-domain sample is encoded into a latent code: the noisy sample at
//! step `T_es` followed by the per-step residuals
//! `eps_t = (v_{t-1} - mu_V(v_t, t)) / sigma_t`, where `v_{t-1}` is drawn from
//! the forward-process posterior. Decoding replays the residuals through the
//! target model: `x_{t-1} = mu_T(x_t, t) + sigma_t eps_t`. With identical
//! models decoding reproduces the input.
//!
//! The final step has `sigma_1 = 0`. There the residual is stored unscaled
//! and added back unscaled, so the latent still determines `v_0` exactly.
//!
//! [`GaussianDdim`] is the exact mean predictor for Gaussian data and serves
//! as a closed-form oracle.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Linear beta schedule with the derived cumulative products and posterior variances.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    beta_start: f64,
    beta_end: f64,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
    sigmas: Vec<f64>,
}

pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;
pub const DEFAULT_STEPS: usize = 1000;

impl NoiseSchedule {
    /// `steps` betas linearly spaced from `beta_start` to `beta_end`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::arg("schedule needs at least one step"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::arg(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        let sigmas = (0..steps)
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bars[i - 1] };
                ((1.0 - prev) / (1.0 - alpha_bars[i]) * betas[i]).sqrt()
            })
            .collect();
        Ok(Self {
            beta_start,
            beta_end,
            betas,
            alpha_bars,
            sigmas,
        })
    }

    /// Linear schedule with the default endpoints rescaled by `1000 / steps`,
    /// so shorter chains still end near pure noise. Needs `steps > 20`, since
    /// below that the final beta would reach 1.
    pub fn linear_rescaled(steps: usize) -> Result<Self> {
        let scale = DEFAULT_STEPS as f64 / steps.max(1) as f64;
        Self::linear(steps, DEFAULT_BETA_START * scale, DEFAULT_BETA_END * scale)
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta_start(&self) -> f64 {
        self.beta_start
    }

    pub fn beta_end(&self) -> f64 {
        self.beta_end
    }

    /// `beta_t` for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.beta(t)
    }

    /// Cumulative product `alpha_bar_t` for `t` in `0..=T`, with `alpha_bar_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// Posterior standard deviation `sigma_t`; zero at `t = 1`.
    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[t - 1]
    }

    /// Scale applied to stored residuals: `sigma_t`, or 1 where `sigma_t` is zero.
    pub fn residual_scale(&self, t: usize) -> f64 {
        let s = self.sigma(t);
        if s > 0.0 {
            s
        } else {
            1.0
        }
    }

    /// Coefficients `(c0, ct)` of the posterior mean `c0 * x0 + ct * x_t`.
    pub fn posterior_coefficients(&self, t: usize) -> (f64, f64) {
        let (ab, ab_prev) = (self.alpha_bar(t), self.alpha_bar(t - 1));
        let c0 = ab_prev.sqrt() * self.beta(t) / (1.0 - ab);
        let ct = self.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        (c0, ct)
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Range {
                what: "diffusion step",
                value: t as i64,
            });
        }
        Ok(())
    }

    /// Posterior mean of `x_{t-1}` given `x_t` and `x0`.
    pub fn posterior_mean(&self, x_t: &[f64], x0: &[f64], t: usize) -> Vec<f64> {
        let (c0, ct) = self.posterior_coefficients(t);
        x0.iter().zip(x_t).map(|(a, b)| c0 * a + ct * b).collect()
    }
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Draws `x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eta`.
pub fn forward_sample(schedule: &NoiseSchedule, x0: &[f64], t: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    schedule.check_step(t)?;
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().map(|x| a * x + b * gaussian(rng)).collect())
}

/// Draws `x_{t-1}` from the forward-process posterior given `x_t` and `x0`.
/// At `t = 1` the variance is zero and the mean is returned without consuming randomness.
pub fn posterior_sample(schedule: &NoiseSchedule, x_t: &[f64], x0: &[f64], t: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    schedule.check_step(t)?;
    Error::check_dim(x0.len(), x_t.len())?;
    let mut out = schedule.posterior_mean(x_t, x0, t);
    let s = schedule.sigma(t);
    if s > 0.0 {
        out.iter_mut().for_each(|v| *v += s * gaussian(rng));
    }
    Ok(out)
}

/// A denoising model exposed through its mean predictor.
pub trait DiffusionModel: Sync {
    fn schedule(&self) -> &NoiseSchedule;

    fn dim(&self) -> usize;

    /// Predicted mean of `x_{t-1}` given `x_t`.
    fn mean(&self, x_t: &[f64], t: usize) -> Vec<f64>;
}

/// Exact diffusion model for data distributed as `N(mean, scale^2 I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianDdim {
    data_mean: Vec<f64>,
    data_scale: f64,
    schedule: NoiseSchedule,
}

impl GaussianDdim {
    pub fn new(data_mean: Vec<f64>, data_scale: f64, schedule: NoiseSchedule) -> Result<Self> {
        if data_mean.is_empty() {
            return Err(Error::arg("model dimension must be positive"));
        }
        if !(data_scale >= 0.0 && data_scale.is_finite()) {
            return Err(Error::arg("data scale must be finite and non-negative"));
        }
        Ok(Self {
            data_mean,
            data_scale,
            schedule,
        })
    }

    pub fn data_mean(&self) -> &[f64] {
        &self.data_mean
    }

    pub fn data_scale(&self) -> f64 {
        self.data_scale
    }

    /// `E[x0 | x_t]`: `m + g (x_t - sqrt(ab) m)` with `g = s^2 sqrt(ab) / (ab s^2 + 1 - ab)`.
    pub fn predict_x0(&self, x_t: &[f64], t: usize) -> Vec<f64> {
        let ab = self.schedule.alpha_bar(t);
        let var = self.data_scale * self.data_scale;
        let gain = var * ab.sqrt() / (ab * var + (1.0 - ab));
        self.data_mean
            .iter()
            .zip(x_t)
            .map(|(m, x)| m + gain * (x - ab.sqrt() * m))
            .collect()
    }

    /// Posterior variance of each coordinate of `x0` given `x_t`.
    pub fn x0_posterior_variance(&self, t: usize) -> f64 {
        let ab = self.schedule.alpha_bar(t);
        let var = self.data_scale * self.data_scale;
        var * (1.0 - ab) / (ab * var + (1.0 - ab))
    }
}

impl DiffusionModel for GaussianDdim {
    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn dim(&self) -> usize {
        self.data_mean.len()
    }

    fn mean(&self, x_t: &[f64], t: usize) -> Vec<f64> {
        let x0 = self.predict_x0(x_t, t);
        self.schedule.posterior_mean(x_t, &x0, t)
    }
}

/// Closed-form mean predictor of a [`GaussianDdim`].
pub fn gaussian_mean_predictor(model: &GaussianDdim, x_t: &[f64], t: usize) -> Result<Vec<f64>> {
    model.schedule.check_step(t)?;
    Error::check_dim(model.dim(), x_t.len())?;
    Ok(model.mean(x_t, t))
}

/// Noisy sample at step `T_es` plus one residual per step, `eps_{T_es}` first.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    pub terminal: Vec<f64>,
    pub residuals: Vec<Vec<f64>>,
}

impl LatentCode {
    pub fn new(terminal: Vec<f64>, residuals: Vec<Vec<f64>>) -> Result<Self> {
        let d = terminal.len();
        if d == 0 || residuals.is_empty() {
            return Err(Error::arg("latent code needs a terminal vector and at least one residual"));
        }
        for r in &residuals {
            Error::check_dim(d, r.len())?;
        }
        Ok(Self { terminal, residuals })
    }

    /// Encoding steps `T_es`.
    pub fn steps(&self) -> usize {
        self.residuals.len()
    }

    pub fn dim(&self) -> usize {
        self.terminal.len()
    }

    /// Residual `eps_t` for `t` in `1..=T_es`.
    pub fn residual(&self, t: usize) -> &[f64] {
        &self.residuals[self.steps() - t]
    }

    /// Total number of scalars, `(T_es + 1) * d`.
    pub fn scalar_count(&self) -> usize {
        (self.steps() + 1) * self.dim()
    }
}

/// Encodes `x0` with the source model over `t_es` steps.
pub fn encode<M: DiffusionModel + ?Sized>(model_v: &M, x0: &[f64], t_es: usize, rng: &mut impl Rng) -> Result<LatentCode> {
    let schedule = model_v.schedule();
    if t_es == 0 || t_es > schedule.steps() {
        return Err(Error::Range {
            what: "encoding steps",
            value: t_es as i64,
        });
    }
    Error::check_dim(model_v.dim(), x0.len())?;
    let terminal = forward_sample(schedule, x0, t_es, rng)?;
    let mut v = terminal.clone();
    let mut residuals = Vec::with_capacity(t_es);
    for t in (1..=t_es).rev() {
        let next = posterior_sample(schedule, &v, x0, t, rng)?;
        let predicted = model_v.mean(&v, t);
        let scale = schedule.residual_scale(t);
        residuals.push(next.iter().zip(&predicted).map(|(a, m)| (a - m) / scale).collect());
        v = next;
    }
    LatentCode::new(terminal, residuals)
}

/// Replays a latent code through the target model.
pub fn decode<M: DiffusionModel + ?Sized>(model_t: &M, z: &LatentCode) -> Result<Vec<f64>> {
    let schedule = model_t.schedule();
    if z.steps() > schedule.steps() {
        return Err(Error::arg(format!(
            "latent has {} steps, target model only {}",
            z.steps(),
            schedule.steps()
        )));
    }
    Error::check_dim(model_t.dim(), z.dim())?;
    let mut x = z.terminal.clone();
    for t in (1..=z.steps()).rev() {
        let scale = schedule.residual_scale(t);
        let mean = model_t.mean(&x, t);
        x = mean.iter().zip(z.residual(t)).map(|(m, e)| m + scale * e).collect();
    }
    Ok(x)
}

/// Translates `x0` from the source model's domain to the target model's.
pub fn translate<V, T>(model_v: &V, model_t: &T, x0: &[f64], t_es: usize, rng: &mut impl Rng) -> Result<Vec<f64>>
where
    V: DiffusionModel + ?Sized,
    T: DiffusionModel + ?Sized,
{
    decode(model_t, &encode(model_v, x0, t_es, rng)?)
}

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` for identical inputs.
pub fn psnr(a: &[f64], b: &[f64], peak: f64) -> Result<f64> {
    Error::check_dim(a.len(), b.len())?;
    if a.is_empty() {
        return Err(Error::arg("PSNR of empty inputs"));
    }
    if !(peak > 0.0) {
        return Err(Error::arg("peak must be positive"));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Row-major 2-D grid of values.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::arg(format!("{} values do not fill a {rows}x{cols} grid", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let data = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        Self { rows, cols, data }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }
}

pub const SSIM_WINDOW: usize = 8;

/// Mean SSIM over all 8x8 windows (stride 1, uniform weights).
pub fn ssim(a: &Grid, b: &Grid, dynamic_range: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::arg(format!("grid shapes differ: {:?} vs {:?}", a.shape(), b.shape())));
    }
    let (rows, cols) = a.shape();
    if rows < SSIM_WINDOW || cols < SSIM_WINDOW {
        return Err(Error::arg(format!("SSIM needs grids of at least {SSIM_WINDOW}x{SSIM_WINDOW}")));
    }
    if !(dynamic_range > 0.0) {
        return Err(Error::arg("dynamic range must be positive"));
    }
    let c1 = (0.01 * dynamic_range).powi(2);
    let c2 = (0.03 * dynamic_range).powi(2);
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut windows = 0usize;
    for r0 in 0..=rows - SSIM_WINDOW {
        for c0 in 0..=cols - SSIM_WINDOW {
            let (mut sa, mut sb) = (0.0, 0.0);
            for r in r0..r0 + SSIM_WINDOW {
                for c in c0..c0 + SSIM_WINDOW {
                    sa += a.get(r, c);
                    sb += b.get(r, c);
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for r in r0..r0 + SSIM_WINDOW {
                for c in c0..c0 + SSIM_WINDOW {
                    let (da, db) = (a.get(r, c) - ma, b.get(r, c) - mb);
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
            }
            let (va, vb, cov) = (va / n, vb / n, cov / n);
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            windows += 1;
        }
    }
    Ok(total / windows as f64)
}
