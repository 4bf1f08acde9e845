//! Weighted rigid superposition.
//!
//! Uses the quaternion (Horn) formulation: the optimal proper rotation is
//! the top eigenvector of a symmetric 4x4 matrix built from the weighted
//! cross-covariance. Degenerate point sets (collinear, coplanar) need no
//! special casing because the search space is proper rotations only.

use crate::error::{Error, Result};
use crate::geom::structure::Structure;
use crate::num::{real, Real};
use crate::vec3::{Mat3, Vec3};

/// Superposes `pred` onto `target` minimizing the weighted RMSD over all
/// proper rotations and translations. Returns the aligned copy of `pred`
/// and the achieved RMSD.
pub fn kabsch_align<T: Real>(
    pred: &Structure<T>,
    target: &Structure<T>,
    weights: &[T],
) -> Result<(Structure<T>, T)> {
    let coords = align_coords(&pred.coords, &target.coords, weights)?;
    let rmsd = weighted_rmsd(&coords, &target.coords, weights);
    Ok((pred.with_coords(coords)?, rmsd))
}

/// Coordinate-level alignment used by both the public op and the aligned
/// MSE loss.
pub fn align_coords<T: Real>(
    pred: &[Vec3<T>],
    target: &[Vec3<T>],
    weights: &[T],
) -> Result<Vec<Vec3<T>>> {
    let n = pred.len();
    if n != target.len() {
        return Err(Error::validation(format!(
            "atom counts differ: {n} vs {}",
            target.len()
        )));
    }
    if weights.len() != n {
        return Err(Error::validation(format!(
            "weight count {} does not match atom count {n}",
            weights.len()
        )));
    }
    if weights.iter().any(|w| *w < T::zero() || !w.is_finite()) {
        return Err(Error::validation("weights must be finite and nonnegative"));
    }
    let wsum: T = weights.iter().copied().sum();
    if !(wsum > T::zero()) {
        return Err(Error::validation("weights must not all be zero"));
    }

    let mut p_bar = Vec3::zero();
    let mut q_bar = Vec3::zero();
    for i in 0..n {
        p_bar += pred[i].scale(weights[i]);
        q_bar += target[i].scale(weights[i]);
    }
    p_bar = p_bar.scale(wsum.recip());
    q_bar = q_bar.scale(wsum.recip());

    // Weighted cross-covariance S[a][b] = sum_i w_i p'_i[a] q'_i[b].
    let mut s = [[T::zero(); 3]; 3];
    for i in 0..n {
        let p = pred[i] - p_bar;
        let q = target[i] - q_bar;
        for (a, row) in s.iter_mut().enumerate() {
            for (b, cell) in row.iter_mut().enumerate() {
                *cell += weights[i] * p[a] * q[b];
            }
        }
    }

    let rotation = optimal_rotation(&s);
    Ok(pred
        .iter()
        .map(|&p| rotation.mul_vec(p - p_bar) + q_bar)
        .collect())
}

pub fn weighted_rmsd<T: Real>(a: &[Vec3<T>], b: &[Vec3<T>], weights: &[T]) -> T {
    let wsum: T = weights.iter().copied().sum();
    let mut acc = T::zero();
    for i in 0..a.len() {
        acc += weights[i] * (a[i] - b[i]).norm_sq();
    }
    (acc / wsum).sqrt()
}

/// Proper rotation carrying the centered `p` cloud onto the centered `q`
/// cloud under uniform weights (no translation applied).
pub fn rotation_onto<T: Real>(p: &[Vec3<T>], q: &[Vec3<T>]) -> Result<Mat3<T>> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::validation("rotation_onto needs equal non-empty sets"));
    }
    let pc = crate::vec3::centroid(p);
    let qc = crate::vec3::centroid(q);
    let mut s = [[T::zero(); 3]; 3];
    for i in 0..p.len() {
        let a = p[i] - pc;
        let b = q[i] - qc;
        for (r, row) in s.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                *cell += a[r] * b[c];
            }
        }
    }
    Ok(optimal_rotation(&s))
}

/// Proper rotation maximizing tr(R S): top eigenvector of Horn's 4x4 key
/// matrix, read as a unit quaternion.
fn optimal_rotation<T: Real>(s: &[[T; 3]; 3]) -> Mat3<T> {
    let (sxx, sxy, sxz) = (s[0][0], s[0][1], s[0][2]);
    let (syx, syy, syz) = (s[1][0], s[1][1], s[1][2]);
    let (szx, szy, szz) = (s[2][0], s[2][1], s[2][2]);
    let key = [
        [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
        [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
        [szx - sxz, sxy + syx, syy - sxx - szz, syz + szy],
        [sxy - syx, szx + sxz, syz + szy, szz - sxx - syy],
    ];
    let (eigenvalues, eigenvectors) = jacobi_eigen_sym4(key);
    let mut best = 0;
    for k in 1..4 {
        if eigenvalues[k] > eigenvalues[best] {
            best = k;
        }
    }
    let q = [
        eigenvectors[0][best],
        eigenvectors[1][best],
        eigenvectors[2][best],
        eigenvectors[3][best],
    ];
    let norm_sq: T = q.iter().map(|v| *v * *v).sum();
    let inv = norm_sq.sqrt().recip();
    Mat3::from_unit_quat([q[0] * inv, q[1] * inv, q[2] * inv, q[3] * inv])
}

/// Cyclic Jacobi eigensolver for a symmetric 4x4 matrix. Returns
/// eigenvalues and eigenvectors (as columns).
fn jacobi_eigen_sym4<T: Real>(mut a: [[T; 4]; 4]) -> ([T; 4], [[T; 4]; 4]) {
    let mut v = [[T::zero(); 4]; 4];
    for (k, row) in v.iter_mut().enumerate() {
        row[k] = T::one();
    }
    let tol = T::epsilon() * real(16.0);
    for _sweep in 0..64 {
        let mut off = T::zero();
        for p in 0..4 {
            for q in (p + 1)..4 {
                off += a[p][q] * a[p][q];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..3 {
            for q in (p + 1)..4 {
                if a[p][q].abs() <= T::epsilon() {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (real::<T>(2.0) * a[p][q]);
                let t = {
                    let sign = if theta >= T::zero() { T::one() } else { -T::one() };
                    sign / (theta.abs() + (theta * theta + T::one()).sqrt())
                };
                let c = (t * t + T::one()).sqrt().recip();
                let s = t * c;

                let app = a[p][p];
                let aqq = a[q][q];
                let apq = a[p][q];
                a[p][p] = app - t * apq;
                a[q][q] = aqq + t * apq;
                a[p][q] = T::zero();
                a[q][p] = T::zero();
                for r in 0..4 {
                    if r != p && r != q {
                        let arp = a[r][p];
                        let arq = a[r][q];
                        a[r][p] = c * arp - s * arq;
                        a[p][r] = a[r][p];
                        a[r][q] = s * arp + c * arq;
                        a[q][r] = a[r][q];
                    }
                }
                for r in 0..4 {
                    let vrp = v[r][p];
                    let vrq = v[r][q];
                    v[r][p] = c * vrp - s * vrq;
                    v[r][q] = s * vrp + c * vrq;
                }
            }
        }
    }
    ([a[0][0], a[1][1], a[2][2], a[3][3]], v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::augment::random_rotation;
    use crate::geom::structure::EntityClass;
    use crate::rng::RngStream;

    fn structure(coords: Vec<Vec3<f64>>) -> Structure<f64> {
        Structure::from_coords(coords, EntityClass::Protein).unwrap()
    }

    fn cloud(n: usize, seed: u64) -> Vec<Vec3<f64>> {
        let mut rng = RngStream::new(seed, 0);
        (0..n).map(|_| rng.normal3::<f64>().scale(3.0)).collect()
    }

    #[test]
    fn identity_case() {
        let s = structure(cloud(6, 1));
        let (aligned, rmsd) = kabsch_align(&s, &s, &vec![1.0; 6]).unwrap();
        assert!(rmsd < 1e-12);
        for (a, b) in aligned.coords.iter().zip(&s.coords) {
            assert!(a.dist(*b) < 1e-9);
        }
    }

    #[test]
    fn recovers_rigid_motion() {
        // target = pred rotated 90 degrees about z and translated
        let pred = structure(cloud(8, 2));
        let target_coords: Vec<Vec3<f64>> = pred
            .coords
            .iter()
            .map(|&p| Vec3::new(-p[1], p[0], p[2]) + Vec3::new(4.0, -2.0, 1.0))
            .collect();
        let target = structure(target_coords);
        let (_, rmsd) = kabsch_align(&pred, &target, &vec![1.0; 8]).unwrap();
        assert!(rmsd < 1e-9, "rmsd {rmsd}");
    }

    #[test]
    fn rigid_motion_invariance_random_rotations() {
        let s = structure(cloud(10, 3));
        let mut rng = RngStream::new(4, 0);
        for _ in 0..20 {
            let r = random_rotation::<f64>(&mut rng);
            let shift = rng.normal3::<f64>().scale(5.0);
            let moved: Vec<Vec3<f64>> = s.coords.iter().map(|&p| r.mul_vec(p) + shift).collect();
            let moved = structure(moved);
            let (_, rmsd) = kabsch_align(&moved, &s, &vec![1.0; 10]).unwrap();
            assert!(rmsd < 1e-9, "rmsd {rmsd}");
        }
    }

    #[test]
    fn two_atom_closed_form() {
        // Two-point sets align to |L_pred - L_target| / 2 under uniform
        // weights: centroids coincide and the segments co-align.
        let pred = structure(vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(3.0, 0.0, 0.0)]);
        let target = structure(vec![Vec3::new(5.0, 1.0, 0.0), Vec3::new(5.0, 3.0, 0.0)]);
        let (_, rmsd) = kabsch_align(&pred, &target, &vec![1.0; 2]).unwrap();
        let expected = (3.0f64 - 2.0).abs() / 2.0;
        assert!((rmsd - expected).abs() < 1e-9, "rmsd {rmsd} vs {expected}");
    }

    #[test]
    fn brute_force_rotation_grid_confirms_minimum() {
        // Coarse search over rotations (axis grid x angle grid) cannot beat
        // the closed-form optimum.
        let pred = structure(cloud(5, 7));
        let mut rng = RngStream::new(8, 0);
        let r = random_rotation::<f64>(&mut rng);
        let target = structure(pred.coords.iter().map(|&p| r.mul_vec(p)).collect());
        let (_, rmsd) = kabsch_align(&pred, &target, &vec![1.0; 5]).unwrap();

        let w = vec![1.0; 5];
        let pc = crate::vec3::centroid(&pred.coords);
        let qc = crate::vec3::centroid(&target.coords);
        let mut grid_best = f64::INFINITY;
        let mut grid_rng = RngStream::new(9, 0);
        for _ in 0..500 {
            let rot = random_rotation::<f64>(&mut grid_rng);
            let rotated: Vec<Vec3<f64>> = pred.coords.iter().map(|&p| rot.mul_vec(p - pc) + qc).collect();
            grid_best = grid_best.min(weighted_rmsd(&rotated, &target.coords, &w));
        }
        assert!(rmsd <= grid_best + 1e-12, "kabsch {rmsd} vs grid {grid_best}");
        assert!(rmsd < 1e-9);
    }

    #[test]
    fn degenerate_collinear_points_align() {
        let pred = structure(vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(2.0, 0.0, 0.0),
        ]);
        let target = structure(vec![
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(0.0, 1.0, 1.0),
            Vec3::new(0.0, 2.0, 1.0),
        ]);
        let (_, rmsd) = kabsch_align(&pred, &target, &vec![1.0; 3]).unwrap();
        assert!(rmsd < 1e-9, "rmsd {rmsd}");
    }

    #[test]
    fn mismatched_counts_rejected() {
        let a = structure(cloud(4, 1));
        let b = structure(cloud(5, 2));
        assert!(kabsch_align(&a, &b, &vec![1.0; 4]).is_err());
        assert!(kabsch_align(&a, &a, &vec![0.0; 4]).is_err());
    }
}
