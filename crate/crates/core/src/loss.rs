//! Training objectives with analytic coordinate gradients: weighted MSE
//! (optionally after superposition), bond-length loss, the smooth LDDT
//! surrogate, and the straight-path velocity-matching loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{align_coords, Structure};
use crate::num::{real, real_of_usize, Real};
use crate::vec3::Vec3;

/// The smooth/hard LDDT distance-difference thresholds in Angstroms.
pub const LDDT_THRESHOLDS: [f64; 4] = [0.5, 1.0, 2.0, 4.0];

/// A loss value with its gradient with respect to the predicted
/// coordinates (or the predicted velocity, for the velocity loss).
#[derive(Clone, Debug)]
pub struct LossGrad<T> {
    pub value: T,
    pub grad: Vec<Vec3<T>>,
}

/// Pair weighting for the smooth LDDT loss: unit weight for distinct
/// pairs within the cutoff radius in the target, scaled by a per
/// entity-class-pair multiplier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, bound = "T: Real")]
pub struct PairWeightRule<T> {
    pub cutoff: T,
    pub class_multipliers: [[T; 4]; 4],
}

impl<T: Real> Default for PairWeightRule<T> {
    fn default() -> Self {
        PairWeightRule {
            cutoff: real(15.0),
            class_multipliers: [[T::one(); 4]; 4],
        }
    }
}

impl<T: Real> PairWeightRule<T> {
    pub fn weight(&self, target: &Structure<T>, l: usize, m: usize) -> T {
        let d = target.coords[l].dist(target.coords[m]);
        if d > self.cutoff {
            return T::zero();
        }
        self.class_multipliers[target.entities[l].index()][target.entities[m].index()]
    }
}

/// Loss mixing weights plus the knobs the objectives expose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, bound = "T: Real")]
pub struct LossWeights<T> {
    pub w_mse: T,
    pub w_bond: T,
    pub w_slddt: T,
    /// Per-entity multipliers applied on top of per-atom weights in the
    /// MSE loss, indexed by [`EntityClass::index`].
    pub entity_multipliers: [T; 4],
    pub pair_rule: PairWeightRule<T>,
    /// Superpose the target onto the prediction before the MSE.
    pub align_mse: bool,
}

impl<T: Real> Default for LossWeights<T> {
    fn default() -> Self {
        LossWeights {
            w_mse: T::one(),
            w_bond: T::zero(),
            w_slddt: T::zero(),
            entity_multipliers: [T::one(); 4],
            pair_rule: PairWeightRule::default(),
            align_mse: true,
        }
    }
}

impl<T: Real> LossWeights<T> {
    pub fn validate(&self) -> Result<()> {
        let all = [self.w_mse, self.w_bond, self.w_slddt];
        if all.iter().any(|w| !w.is_finite() || *w < T::zero()) {
            return Err(Error::validation("loss weights must be finite and nonnegative"));
        }
        Ok(())
    }

    /// Effective per-atom MSE weights for a structure.
    pub fn atom_weights(&self, s: &Structure<T>) -> Vec<T> {
        (0..s.n_atoms())
            .map(|i| s.weights[i] * self.entity_multipliers[s.entities[i].index()])
            .collect()
    }
}

/// Component values of one training step.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct LossReport<T> {
    pub mse: T,
    pub bond: T,
    pub smooth_lddt: T,
    pub fm: T,
    pub total: T,
}

fn check_counts<T: Real>(pred: &Structure<T>, target: &Structure<T>) -> Result<()> {
    if pred.n_atoms() != target.n_atoms() {
        return Err(Error::validation(format!(
            "atom counts differ: {} vs {}",
            pred.n_atoms(),
            target.n_atoms()
        )));
    }
    Ok(())
}

/// Weighted mean squared coordinate error. With `align` on, the target is
/// superposed onto the prediction first; the gradient treats the optimal
/// rotation as fixed, which is exact at the superposition optimum.
pub fn loss_mse<T: Real>(
    pred: &Structure<T>,
    target: &Structure<T>,
    weights: &[T],
    align: bool,
) -> Result<LossGrad<T>> {
    check_counts(pred, target)?;
    if weights.len() != pred.n_atoms() {
        return Err(Error::validation("weight count mismatch"));
    }
    let wsum: T = weights.iter().copied().sum();
    if !(wsum > T::zero()) {
        return Err(Error::validation("weights must not all be zero"));
    }
    let target_coords = if align {
        align_coords(&target.coords, &pred.coords, weights)?
    } else {
        target.coords.clone()
    };
    let mut value = T::zero();
    let mut grad = vec![Vec3::zero(); pred.n_atoms()];
    let two = real::<T>(2.0);
    for i in 0..pred.n_atoms() {
        let d = pred.coords[i] - target_coords[i];
        value += weights[i] * d.norm_sq();
        grad[i] = d.scale(two * weights[i] / wsum);
    }
    Ok(LossGrad {
        value: value / wsum,
        grad,
    })
}

/// Mean squared deviation of predicted bond lengths from target bond
/// lengths over the declared bond list.
pub fn loss_bond<T: Real>(pred: &Structure<T>, target: &Structure<T>) -> Result<LossGrad<T>> {
    check_counts(pred, target)?;
    if target.bonds.is_empty() {
        return Err(Error::validation("bond loss needs at least one bond"));
    }
    let n_bonds = real_of_usize::<T>(target.bonds.len());
    let mut value = T::zero();
    let mut grad = vec![Vec3::zero(); pred.n_atoms()];
    let two = real::<T>(2.0);
    for &(l, m) in &target.bonds {
        let delta = pred.coords[l] - pred.coords[m];
        let d_pred = delta.norm();
        if d_pred < real(1e-12) {
            return Err(Error::domain(format!(
                "predicted bond ({l}, {m}) has near-zero length; gradient is singular"
            )));
        }
        let d_gt = target.coords[l].dist(target.coords[m]);
        let diff = d_pred - d_gt;
        value += diff * diff;
        let g = delta.scale(two * diff / (d_pred * n_bonds));
        grad[l] += g;
        grad[m] -= g;
    }
    Ok(LossGrad {
        value: value / n_bonds,
        grad,
    })
}

#[inline]
fn sigmoid<T: Real>(z: T) -> T {
    (T::one() + (-z).exp()).recip()
}

/// Smooth LDDT loss: distance differences pushed through sigmoids at the
/// standard thresholds, weighted by the pair rule, subtracted from one.
pub fn loss_smooth_lddt<T: Real>(
    pred: &Structure<T>,
    target: &Structure<T>,
    rule: &PairWeightRule<T>,
) -> Result<LossGrad<T>> {
    check_counts(pred, target)?;
    let n = pred.n_atoms();
    if n < 2 {
        return Err(Error::validation("smooth LDDT needs at least two atoms"));
    }
    let quarter = real::<T>(0.25);
    let mut num = T::zero();
    let mut den = T::zero();
    // (l, m, weight, d_eps/d_pred_distance)
    let mut pair_terms: Vec<(usize, usize, T, T)> = Vec::new();
    for l in 0..n {
        for m in (l + 1)..n {
            let w = rule.weight(target, l, m);
            if w == T::zero() {
                continue;
            }
            let d_pred = pred.coords[l].dist(pred.coords[m]);
            let d_gt = target.coords[l].dist(target.coords[m]);
            let delta = (d_gt - d_pred).abs();
            let mut eps = T::zero();
            let mut d_eps_d_delta = T::zero();
            for thr in LDDT_THRESHOLDS {
                let s = sigmoid(real::<T>(thr) - delta);
                eps += s;
                d_eps_d_delta -= s * (T::one() - s);
            }
            eps *= quarter;
            d_eps_d_delta *= quarter;
            num += w * eps;
            den += w;
            // dDelta/dd_pred = sign(d_pred - d_gt); zero at the kink.
            let sign = if d_pred > d_gt {
                T::one()
            } else if d_pred < d_gt {
                -T::one()
            } else {
                T::zero()
            };
            pair_terms.push((l, m, w, d_eps_d_delta * sign));
        }
    }
    if !(den > T::zero()) {
        return Err(Error::validation("all smooth LDDT pair weights are zero"));
    }
    let value = T::one() - num / den;
    let mut grad = vec![Vec3::zero(); n];
    for (l, m, w, d_eps_d_dpred) in pair_terms {
        let delta = pred.coords[l] - pred.coords[m];
        let d_pred = delta.norm();
        if d_pred < real(1e-12) {
            continue; // distance direction undefined; measure-zero configuration
        }
        // dL/dd_pred = -(w/den) * d_eps/dd_pred
        let coef = -(w / den) * d_eps_d_dpred / d_pred;
        let g = delta.scale(coef);
        grad[l] += g;
        grad[m] -= g;
    }
    Ok(LossGrad { value, grad })
}

/// Straight-path velocity matching: mean squared error between the
/// predicted velocity and `x1 - x0`. The gradient is with respect to the
/// predicted velocity.
pub fn loss_fm<T: Real>(
    v_pred: &[Vec3<T>],
    x0: &[Vec3<T>],
    x1: &[Vec3<T>],
) -> Result<LossGrad<T>> {
    let n = v_pred.len();
    if x0.len() != n || x1.len() != n {
        return Err(Error::validation(format!(
            "shape mismatch: v {n}, x0 {}, x1 {}",
            x0.len(),
            x1.len()
        )));
    }
    if n == 0 {
        return Err(Error::validation("empty coordinate set"));
    }
    let n_t = real_of_usize::<T>(n);
    let two = real::<T>(2.0);
    let mut value = T::zero();
    let mut grad = vec![Vec3::zero(); n];
    for i in 0..n {
        let target = x1[i] - x0[i];
        let d = v_pred[i] - target;
        value += d.norm_sq();
        grad[i] = d.scale(two / n_t);
    }
    Ok(LossGrad {
        value: value / n_t,
        grad,
    })
}

/// The smooth LDDT value of a perfect prediction under uniform weights:
/// `1 - (sigm(0.5) + sigm(1) + sigm(2) + sigm(4)) / 4`.
pub fn smooth_lddt_perfect_value<T: Real>() -> T {
    let mut acc = T::zero();
    for thr in LDDT_THRESHOLDS {
        acc += sigmoid(real::<T>(thr));
    }
    T::one() - acc * real(0.25)
}
