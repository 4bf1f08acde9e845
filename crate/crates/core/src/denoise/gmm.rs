//! Exact posterior-mean denoiser for Gaussian-mixture data.
//!
//! For data drawn as "pick component k, then every atom i.i.d.
//! N(mean_k, std_k^2 I)" and an observation `x = x1 + sigma * eps`, the
//! posterior mean E[x1 | x] is available in closed form. This is the
//! oracle backend: no training error, so sampler behavior can be checked
//! against analytic solutions.

use crate::denoise::{Condition, Denoiser, Parameterization, StepTime};
use crate::error::{Error, Result};
use crate::geom::GmmSpec;
use crate::num::{real, real_of_usize, Real};
use crate::vec3::Vec3;

/// E[x1 | x1 + sigma*eps = x] for the mixture. For a single zero-mean
/// component of std `a` this reduces to `x * a^2 / (a^2 + sigma^2)` per
/// coordinate.
pub fn gmm_posterior_mean<T: Real>(
    coords: &[Vec3<T>],
    sigma: T,
    mix: &GmmSpec<T>,
) -> Result<Vec<Vec3<T>>> {
    mix.validate()?;
    if !(sigma >= T::zero()) {
        return Err(Error::validation(format!(
            "noise level must be nonnegative, got {sigma}"
        )));
    }
    if sigma == T::zero() {
        return Ok(coords.to_vec());
    }
    let n = coords.len();
    let dims = real_of_usize::<T>(3 * n);
    let half = real::<T>(0.5);

    // Log-responsibilities over the whole-structure density.
    let mut log_resp: Vec<T> = Vec::with_capacity(mix.components.len());
    for c in &mix.components {
        if c.weight == T::zero() {
            log_resp.push(T::neg_infinity());
            continue;
        }
        let var = c.std * c.std + sigma * sigma;
        let mut ssd = T::zero();
        for p in coords {
            ssd += (*p - c.mean).norm_sq();
        }
        log_resp.push(c.weight.ln() - half * dims * var.ln() - half * ssd / var);
    }
    let max = log_resp
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| a.max(b));
    let mut resp: Vec<T> = log_resp.iter().map(|&l| (l - max).exp()).collect();
    let total: T = resp.iter().copied().sum();
    for r in &mut resp {
        *r /= total;
    }

    let mut out = vec![Vec3::zero(); n];
    for (k, c) in mix.components.iter().enumerate() {
        if resp[k] == T::zero() {
            continue;
        }
        let var = c.std * c.std + sigma * sigma;
        let shrink = c.std * c.std / var;
        for (o, p) in out.iter_mut().zip(coords) {
            *o += (c.mean + (*p - c.mean).scale(shrink)).scale(resp[k]);
        }
    }
    Ok(out)
}

/// Denoiser wrapper around the posterior mean. Conditioning is ignored:
/// the mixture itself is the full data model.
#[derive(Clone, Debug)]
pub struct GmmDenoiser<T> {
    pub mix: GmmSpec<T>,
}

impl<T: Real> GmmDenoiser<T> {
    pub fn new(mix: GmmSpec<T>) -> Result<Self> {
        mix.validate()?;
        Ok(GmmDenoiser { mix })
    }
}

impl<T: Real> Denoiser<T> for GmmDenoiser<T> {
    fn parameterization(&self) -> Parameterization {
        Parameterization::XPred
    }

    fn denoise(
        &self,
        coords: &[Vec3<T>],
        time: StepTime<T>,
        _cond: &Condition<T>,
    ) -> Result<Vec<Vec3<T>>> {
        gmm_posterior_mean(coords, time.sigma, &self.mix)
    }
}
