//! Central finite differences over coordinates.
//!
//! This is the independent oracle the analytic loss gradients are checked
//! against; it only ever calls the supplied closure, never the gradient
//! code itself.

use crate::num::{real, Real};
use crate::vec3::Vec3;

/// Central-difference gradient of `f` at `coords` with step `h` per
/// coordinate.
pub fn central_diff_grad<T: Real>(
    coords: &[Vec3<T>],
    h: T,
    mut f: impl FnMut(&[Vec3<T>]) -> T,
) -> Vec<Vec3<T>> {
    let mut grad = vec![Vec3::zero(); coords.len()];
    let mut work = coords.to_vec();
    let two_h = h + h;
    for i in 0..coords.len() {
        for k in 0..3 {
            let orig = work[i][k];
            work[i][k] = orig + h;
            let plus = f(&work);
            work[i][k] = orig - h;
            let minus = f(&work);
            work[i][k] = orig;
            grad[i][k] = (plus - minus) / two_h;
        }
    }
    grad
}

/// Relative L2 deviation between an analytic gradient and its
/// finite-difference estimate.
pub fn grad_rel_err<T: Real>(analytic: &[Vec3<T>], fd: &[Vec3<T>]) -> T {
    let mut diff = T::zero();
    let mut norm = T::zero();
    for (a, b) in analytic.iter().zip(fd) {
        diff += (*a - *b).norm_sq();
        norm += b.norm_sq();
    }
    diff.sqrt() / norm.sqrt().max(real(1e-12))
}
