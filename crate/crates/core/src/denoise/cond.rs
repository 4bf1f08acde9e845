//! Toy conditioning pathways.
//!
//! Pathway A carries ground-truth-derived geometry (centered target
//! coordinates plus a pairwise-distance summary); pathway B carries
//! sequence/class information only. Both feed the same trunk through
//! pathway-specific input maps, so a model can be trained on a random mix
//! of the two.

use serde::{Deserialize, Serialize};

use crate::geom::Structure;
use crate::num::{real, real_of_usize, Real};

/// Feature width of the geometry pathway.
pub const PATHWAY_A_DIM: usize = 6;
/// Feature width of the class-only pathway.
pub const PATHWAY_B_DIM: usize = 6;
/// The pathway-A dimensions that hold canonical-frame coordinates. The
/// network superposes these onto its noisy input before the input map,
/// which keeps the conditioning pose-free.
pub const PATHWAY_A_COORD_DIMS: std::ops::Range<usize> = 0..3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pathway {
    A,
    B,
}

impl Pathway {
    pub fn feature_dim(self) -> usize {
        match self {
            Pathway::A => PATHWAY_A_DIM,
            Pathway::B => PATHWAY_B_DIM,
        }
    }
}

/// Per-atom conditioning features.
#[derive(Clone, Debug, PartialEq)]
pub struct CondFeatures<T> {
    pub pathway: Pathway,
    pub per_atom: Vec<Vec<T>>,
}

/// Conditioning signal handed to a denoiser.
#[derive(Clone, Debug, PartialEq)]
pub enum Condition<T> {
    None,
    Features(CondFeatures<T>),
}

impl<T> Condition<T> {
    pub fn pathway(&self) -> Option<Pathway> {
        match self {
            Condition::None => None,
            Condition::Features(f) => Some(f.pathway),
        }
    }
}

/// Builds the conditioning features of a target structure.
pub fn condition_features<T: Real>(target: &Structure<T>, pathway: Pathway) -> Condition<T> {
    let n = target.n_atoms();
    let center = target.centroid();
    let n_chains = target.chains.iter().copied().max().unwrap_or(0) + 1;
    let denom = if n > 1 { real_of_usize::<T>(n - 1) } else { T::one() };
    let per_atom = (0..n)
        .map(|i| match pathway {
            Pathway::A => {
                let p = target.coords[i] - center;
                let mut mean_dist = T::zero();
                if n > 1 {
                    for j in 0..n {
                        if j != i {
                            mean_dist += target.coords[i].dist(target.coords[j]);
                        }
                    }
                    mean_dist /= real_of_usize::<T>(n - 1);
                }
                vec![
                    p[0],
                    p[1],
                    p[2],
                    mean_dist * real(0.1),
                    real_of_usize::<T>(target.entities[i].index()) * real(0.25),
                    real_of_usize::<T>(i) / denom,
                ]
            }
            Pathway::B => {
                let mut f = vec![T::zero(); PATHWAY_B_DIM];
                f[target.entities[i].index()] = T::one();
                f[4] = real_of_usize::<T>(target.chains[i] as usize)
                    / real_of_usize::<T>(n_chains as usize);
                f[5] = real_of_usize::<T>(i) / denom;
                f
            }
        })
        .collect();
    Condition::Features(CondFeatures { pathway, per_atom })
}
