//! Noise-level schedules, step schedule, in-loop churn and training-time
//! distributions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::{real, real_of_usize, Real};
use crate::rng::RngStream;
use crate::vec3::Vec3;

/// Noise-level schedule parameters. The shape is a power-law
/// interpolation in `sigma^(1/rho)` between `sigma_max` at t=0 and
/// `sigma_min` at t=1; defaults scale with `sigma_data`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseLevelParams<T> {
    pub sigma_data: T,
    pub sigma_max: T,
    pub sigma_min: T,
    pub rho: T,
}

impl<T: Real> Default for NoiseLevelParams<T> {
    fn default() -> Self {
        Self::with_sigma_data(real(16.0))
    }
}

impl<T: Real> NoiseLevelParams<T> {
    /// Default shape scaled to a data std: `sigma_max = 10 * sigma_data`,
    /// `sigma_min = 2.5e-5 * sigma_data`, `rho = 7`.
    pub fn with_sigma_data(sigma_data: T) -> Self {
        NoiseLevelParams {
            sigma_data,
            sigma_max: real::<T>(10.0) * sigma_data,
            sigma_min: real::<T>(2.5e-5) * sigma_data,
            rho: real(7.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_data > T::zero()) {
            return Err(Error::validation("sigma_data must be positive"));
        }
        if !(self.sigma_min >= T::zero() && self.sigma_min < self.sigma_max) {
            return Err(Error::validation("need 0 <= sigma_min < sigma_max"));
        }
        if !(self.rho > T::zero()) {
            return Err(Error::validation("rho must be positive"));
        }
        Ok(())
    }
}

/// Noise level as a strictly decreasing, continuous function of
/// normalized time in [0, 1].
pub trait SigmaSchedule<T: Real> {
    /// sigma(t); errors outside [0, 1].
    fn sigma(&self, t: T) -> Result<T>;

    /// sigma(0), the level the initial sample is drawn at.
    fn sigma_start(&self) -> T;

    /// Inverts the schedule by monotone bisection. Input above sigma(0)
    /// clamps to t=0, below sigma(1) clamps to t=1.
    fn time_of_sigma(&self, sigma: T) -> T {
        let s0 = self.sigma(T::zero()).expect("0 is in range");
        let s1 = self.sigma(T::one()).expect("1 is in range");
        if sigma >= s0 {
            return T::zero();
        }
        if sigma <= s1 {
            return T::one();
        }
        let mut lo = T::zero();
        let mut hi = T::one();
        let tol = real::<T>(1e-12).max(T::epsilon());
        for _ in 0..200 {
            if hi - lo <= tol {
                break;
            }
            let mid = (lo + hi) * real(0.5);
            if self.sigma(mid).expect("mid is in range") > sigma {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (lo + hi) * real(0.5)
    }

    /// Churn target: time label and the noise level actually used at
    /// that label. Schedules bounded above (the flow path) clamp here.
    fn hat(&self, sigma_hat: T) -> (T, T) {
        (self.time_of_sigma(sigma_hat), sigma_hat)
    }
}

/// The power-law interpolation schedule.
#[derive(Clone, Copy, Debug)]
pub struct PowerSchedule<T> {
    params: NoiseLevelParams<T>,
}

impl<T: Real> PowerSchedule<T> {
    pub fn new(params: NoiseLevelParams<T>) -> Result<Self> {
        params.validate()?;
        Ok(PowerSchedule { params })
    }

    pub fn params(&self) -> &NoiseLevelParams<T> {
        &self.params
    }
}

impl<T: Real> SigmaSchedule<T> for PowerSchedule<T> {
    fn sigma(&self, t: T) -> Result<T> {
        sigma_at(t, &self.params)
    }

    fn sigma_start(&self) -> T {
        self.params.sigma_max
    }
}

/// Linear noise decay `sigma(t) = (1 - t) * sigma_init`, the level of the
/// straight interpolation path used by velocity-trained models.
#[derive(Clone, Copy, Debug)]
pub struct LinearSchedule<T> {
    pub sigma_init: T,
}

impl<T: Real> SigmaSchedule<T> for LinearSchedule<T> {
    fn sigma(&self, t: T) -> Result<T> {
        check_unit_range(t)?;
        Ok((T::one() - t) * self.sigma_init)
    }

    fn sigma_start(&self) -> T {
        self.sigma_init
    }

    fn time_of_sigma(&self, sigma: T) -> T {
        (T::one() - sigma / self.sigma_init).clamp(T::zero(), T::one())
    }

    fn hat(&self, sigma_hat: T) -> (T, T) {
        // Times before 0 do not exist on the interpolation path.
        let clamped = sigma_hat.min(self.sigma_init);
        (T::one() - clamped / self.sigma_init, clamped)
    }
}

fn check_unit_range<T: Real>(t: T) -> Result<()> {
    if t < T::zero() || t > T::one() {
        return Err(Error::validation(format!("time {t} outside [0, 1]")));
    }
    Ok(())
}

/// Evaluates the power-law schedule at normalized time `t`.
pub fn sigma_at<T: Real>(t: T, p: &NoiseLevelParams<T>) -> Result<T> {
    check_unit_range(t)?;
    // Endpoints are exact by construction.
    if t == T::zero() {
        return Ok(p.sigma_max);
    }
    if t == T::one() {
        return Ok(p.sigma_min);
    }
    let inv_rho = p.rho.recip();
    let hi = p.sigma_max.powf(inv_rho);
    let lo = p.sigma_min.powf(inv_rho);
    Ok((hi + t * (lo - hi)).powf(p.rho))
}

/// Uniform step times `t_i = i / n`, i = 0..=n. The endpoint is exactly 1
/// because each entry is computed as a ratio, not accumulated.
pub fn step_times<T: Real>(n_steps: usize) -> Result<Vec<T>> {
    if n_steps == 0 {
        return Err(Error::validation("step count must be at least 1"));
    }
    let n = real_of_usize::<T>(n_steps);
    Ok((0..=n_steps).map(|i| real_of_usize::<T>(i) / n).collect())
}

/// Churn parameters: gamma gate and the noise amplification factor
/// applied by the caller.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChurnParams<T> {
    pub gamma0: T,
    pub gamma_min: T,
    pub lambda: T,
}

impl<T: Real> Default for ChurnParams<T> {
    fn default() -> Self {
        // The stochastic sampler's published defaults.
        ChurnParams {
            gamma0: real(0.8),
            gamma_min: real(1.0),
            lambda: real(1.003),
        }
    }
}

impl<T: Real> ChurnParams<T> {
    /// No churn: the stochastic sampler degenerates to the deterministic
    /// one.
    pub fn disabled() -> Self {
        ChurnParams {
            gamma0: T::zero(),
            gamma_min: real(1.0),
            lambda: T::one(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma0 >= T::zero()) {
            return Err(Error::validation("gamma0 must be nonnegative"));
        }
        if !(self.lambda > T::zero()) {
            return Err(Error::validation("lambda must be positive"));
        }
        Ok(())
    }
}

/// Result of one churn evaluation.
#[derive(Clone, Debug)]
pub struct ChurnStep<T> {
    /// Time label whose noise level is `sigma_hat`.
    pub t_hat: T,
    /// Noise level after re-noising; equals sigma(t) when the gate is
    /// closed.
    pub sigma_hat: T,
    /// Per-atom noise, `None` when the gate is closed (exactly zero, and
    /// no draws are consumed).
    pub noise: Option<Vec<Vec3<T>>>,
}

/// Re-noising step: lifts the noise level from sigma(t) to
/// `sigma * (1 + gamma)` when sigma(t) > gamma_min, and reports the time
/// label of the lifted level. The returned noise has per-coordinate std
/// `sqrt(sigma_hat^2 - sigma^2)`; the caller applies the lambda scaling.
pub fn churn<T: Real, S: SigmaSchedule<T>>(
    t: T,
    params: &ChurnParams<T>,
    schedule: &S,
    n_atoms: usize,
    rng: &mut RngStream,
) -> Result<ChurnStep<T>> {
    params.validate()?;
    let sigma = schedule.sigma(t)?;
    let gamma = if sigma > params.gamma_min {
        params.gamma0
    } else {
        T::zero()
    };
    if gamma == T::zero() {
        return Ok(ChurnStep {
            t_hat: t,
            sigma_hat: sigma,
            noise: None,
        });
    }
    let (t_hat, sigma_hat) = schedule.hat(sigma * (T::one() + gamma));
    let std = (sigma_hat * sigma_hat - sigma * sigma).max(T::zero()).sqrt();
    let noise = (0..n_atoms).map(|_| rng.normal3::<T>().scale(std)).collect();
    Ok(ChurnStep {
        t_hat,
        sigma_hat,
        noise: Some(noise),
    })
}

/// Training-time distribution over (0, 1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TimeDist {
    Beta { alpha: f64, beta: f64 },
    Uniform,
}

impl Default for TimeDist {
    fn default() -> Self {
        TimeDist::Beta {
            alpha: 2.5,
            beta: 2.5,
        }
    }
}

impl TimeDist {
    pub fn validate(&self) -> Result<()> {
        if let TimeDist::Beta { alpha, beta } = self {
            if !(*alpha > 0.0 && *beta > 0.0) {
                return Err(Error::validation("beta shape parameters must be positive"));
            }
        }
        Ok(())
    }
}

/// One draw from the time distribution, clamped into the open interval.
pub fn sample_time<T: Real>(dist: &TimeDist, rng: &mut RngStream) -> T {
    let raw: T = match dist {
        TimeDist::Beta { alpha, beta } => rng.beta(*alpha, *beta),
        TimeDist::Uniform => rng.uniform01(),
    };
    let eps = real::<T>(1e-12).max(T::epsilon());
    raw.max(eps).min(T::one() - eps)
}
