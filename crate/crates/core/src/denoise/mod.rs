//! Denoiser abstraction: anything that maps noisy coordinates at a known
//! noise time to a predicted clean structure. Two backends live here: an
//! exact Gaussian-mixture posterior mean and a small trainable
//! stacked-residual network.

pub mod cond;
pub mod gmm;
pub mod net;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Real;
use crate::vec3::Vec3;

pub use cond::{condition_features, CondFeatures, Condition, Pathway, PATHWAY_A_DIM, PATHWAY_B_DIM};
pub use gmm::{gmm_posterior_mean, GmmDenoiser};
pub use net::{Mat, NetParams, NetSpec, ResidualNet};

/// What the backend natively predicts. `XPred` backends return the clean
/// structure directly; `VPred` backends return a velocity along the
/// straight interpolation path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Parameterization {
    XPred,
    VPred,
}

/// The sampler's clock at a denoiser call: normalized time plus the noise
/// level the input coordinates carry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepTime<T> {
    pub t: T,
    pub sigma: T,
}

/// A denoiser under some conditioning signal.
pub trait Denoiser<T: Real> {
    fn parameterization(&self) -> Parameterization;

    /// Predicted clean structure for noisy `coords` at `time`.
    fn denoise(
        &self,
        coords: &[Vec3<T>],
        time: StepTime<T>,
        cond: &Condition<T>,
    ) -> Result<Vec<Vec3<T>>>;
}

/// Velocity implied by a clean-structure prediction on the straight path:
/// `v = (x_hat - x_t) / (1 - t)`. Errors at t = 1 where the path has no
/// extent left.
pub fn x_to_v<T: Real>(x_hat: &[Vec3<T>], x_t: &[Vec3<T>], t: T) -> Result<Vec<Vec3<T>>> {
    if x_hat.len() != x_t.len() {
        return Err(Error::validation(format!(
            "coordinate counts differ: {} vs {}",
            x_hat.len(),
            x_t.len()
        )));
    }
    if t < T::zero() || t >= T::one() {
        return Err(Error::domain(format!(
            "velocity conversion undefined at t = {t}"
        )));
    }
    let inv = (T::one() - t).recip();
    Ok(x_hat
        .iter()
        .zip(x_t)
        .map(|(&xh, &xt)| (xh - xt).scale(inv))
        .collect())
}

/// Clean-structure estimate implied by a velocity:
/// `x_hat = x_t + (1 - t) * v`.
pub fn v_to_x<T: Real>(v: &[Vec3<T>], x_t: &[Vec3<T>], t: T) -> Result<Vec<Vec3<T>>> {
    if v.len() != x_t.len() {
        return Err(Error::validation(format!(
            "coordinate counts differ: {} vs {}",
            v.len(),
            x_t.len()
        )));
    }
    if t < T::zero() || t >= T::one() {
        return Err(Error::validation(format!(
            "reconstruction expects 0 <= t < 1, got {t}"
        )));
    }
    let scale = T::one() - t;
    Ok(v.iter()
        .zip(x_t)
        .map(|(&vi, &xi)| xi + vi.scale(scale))
        .collect())
}
