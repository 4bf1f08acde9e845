//! Synthetic structure generators. These stand in for real training data:
//! every call is a deterministic function of `(spec, rng)`, and bonded
//! kinds produce bond lengths exactly equal to the spec target.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::structure::{EntityClass, Structure};
use crate::num::{real, Real};
use crate::rng::RngStream;
use crate::vec3::Vec3;

/// One isotropic Gaussian mixture component over atom coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmComponent<T> {
    pub weight: T,
    pub mean: Vec3<T>,
    pub std: T,
}

/// A Gaussian mixture over structures: a draw picks one component, then
/// every atom coordinate is sampled i.i.d. around that component's mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmSpec<T> {
    pub components: Vec<GmmComponent<T>>,
}

impl<T: Real> GmmSpec<T> {
    pub fn single(mean: Vec3<T>, std: T) -> Self {
        GmmSpec {
            components: vec![GmmComponent {
                weight: T::one(),
                mean,
                std,
            }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::validation("gmm needs at least one component"));
        }
        let mut sum = T::zero();
        for c in &self.components {
            if !(c.std > T::zero()) {
                return Err(Error::validation("gmm component std must be positive"));
            }
            if !(c.weight >= T::zero()) {
                return Err(Error::validation("gmm component weight must be nonnegative"));
            }
            sum += c.weight;
        }
        if (sum - T::one()).abs() > real(1e-9) {
            return Err(Error::validation(format!(
                "gmm weights must sum to 1 (got {sum})"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToyKind {
    PolymerHelix,
    PolymerChain,
    ComplexWithLigand,
    Gmm,
}

/// Synthetic-data spec: what family of structures to draw from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToySpec<T> {
    pub kind: ToyKind,
    pub atoms: usize,
    /// Number of polymer chains; atoms are split evenly across them.
    #[serde(default = "one")]
    pub n_chains: usize,
    /// Target bond length in Angstroms for bonded kinds.
    pub bond_length: T,
    /// Mixture definition, required when `kind` is `gmm`.
    #[serde(default)]
    pub gmm: Option<GmmSpec<T>>,
}

fn one() -> usize {
    1
}

impl<T: Real> ToySpec<T> {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ToyKind::Gmm => {
                if self.atoms == 0 {
                    return Err(Error::validation("gmm structure needs at least one atom"));
                }
                match &self.gmm {
                    Some(g) => g.validate(),
                    None => Err(Error::validation("gmm kind requires a mixture spec")),
                }
            }
            _ => {
                if self.n_chains == 0 {
                    return Err(Error::validation("at least one chain required"));
                }
                if self.atoms < 2 * self.n_chains {
                    return Err(Error::validation(format!(
                        "bonded kinds need at least 2 atoms per chain ({} atoms, {} chains)",
                        self.atoms, self.n_chains
                    )));
                }
                if !(self.bond_length > T::zero()) {
                    return Err(Error::validation("bond length must be positive"));
                }
                Ok(())
            }
        }
    }
}

/// Draws one structure from the spec's family.
pub fn gen_toy<T: Real>(spec: &ToySpec<T>, rng: &mut RngStream) -> Result<Structure<T>> {
    spec.validate()?;
    match spec.kind {
        ToyKind::PolymerHelix => gen_helix(spec, rng),
        ToyKind::PolymerChain => gen_chain(spec, rng),
        ToyKind::ComplexWithLigand => gen_complex(spec, rng),
        ToyKind::Gmm => gen_gmm(spec, rng),
    }
}

/// Splits `atoms` into `n_chains` nearly-even runs.
fn chain_sizes(atoms: usize, n_chains: usize) -> Vec<usize> {
    let base = atoms / n_chains;
    let extra = atoms % n_chains;
    (0..n_chains).map(|c| base + usize::from(c < extra)).collect()
}

/// Bonded structures are emitted in a canonical frame: centroid at the
/// origin. Translation preserves bond lengths exactly.
fn centered<T: Real>(mut coords: Vec<Vec3<T>>) -> Vec<Vec3<T>> {
    let c = crate::vec3::centroid(&coords);
    for p in &mut coords {
        *p -= c;
    }
    coords
}

/// Helix with per-draw radius, twist and phase. The in-plane chord and
/// the axial rise are chosen so consecutive atoms sit exactly one bond
/// length apart.
fn helix_coords<T: Real>(
    n: usize,
    bond: T,
    origin: Vec3<T>,
    rng: &mut RngStream,
) -> Vec<Vec3<T>> {
    let u_frac: T = rng.uniform01();
    let u_radius: T = rng.uniform01();
    let u_phase: T = rng.uniform01();
    // In-plane fraction of the bond chord, kept below 1 so the axial rise
    // stays real.
    let frac = real::<T>(0.65) + real::<T>(0.15) * u_frac;
    let radius = real::<T>(2.0) * (T::one() + real::<T>(0.3) * (u_radius - real(0.5)));
    let chord_xy = frac * bond;
    let half = chord_xy / (real::<T>(2.0) * radius);
    let theta = real::<T>(2.0) * half.asin();
    let rise = (bond * bond - chord_xy * chord_xy).sqrt();
    let phase = real::<T>(std::f64::consts::TAU) * u_phase;
    (0..n)
        .map(|i| {
            let a = phase + theta * crate::num::real_of_usize::<T>(i);
            origin + Vec3::new(radius * a.cos(), radius * a.sin(), rise * crate::num::real_of_usize::<T>(i))
        })
        .collect()
}

fn consecutive_bonds(start: usize, len: usize) -> impl Iterator<Item = (usize, usize)> {
    (start..start + len - 1).map(|i| (i, i + 1))
}

fn gen_helix<T: Real>(spec: &ToySpec<T>, rng: &mut RngStream) -> Result<Structure<T>> {
    let sizes = chain_sizes(spec.atoms, spec.n_chains);
    let mut coords = Vec::with_capacity(spec.atoms);
    let mut chains = Vec::with_capacity(spec.atoms);
    let mut bonds = Vec::new();
    let spacing = real::<T>(6.0);
    let mut start = 0usize;
    for (c, &len) in sizes.iter().enumerate() {
        let origin = Vec3::new(spacing * crate::num::real_of_usize::<T>(c), T::zero(), T::zero());
        coords.extend(helix_coords(len, spec.bond_length, origin, rng));
        chains.extend(std::iter::repeat_n(c as u32, len));
        bonds.extend(consecutive_bonds(start, len));
        start += len;
    }
    Structure::new(
        centered(coords),
        vec![EntityClass::Protein; spec.atoms],
        chains,
        bonds,
        vec![T::one(); spec.atoms],
    )
}

/// Random walk with exact step length; each step direction is a damped
/// perturbation of the previous one so the chain stays extended.
fn walk_coords<T: Real>(
    n: usize,
    bond: T,
    origin: Vec3<T>,
    rng: &mut RngStream,
) -> Vec<Vec3<T>> {
    let mut coords = Vec::with_capacity(n);
    coords.push(origin);
    let mut dir: Vec3<T> = rng.normal3();
    let norm = dir.norm();
    dir = if norm > real(1e-12) {
        dir.scale(T::one() / norm)
    } else {
        Vec3::new(T::one(), T::zero(), T::zero())
    };
    for i in 1..n {
        let prev = coords[i - 1];
        coords.push(prev + dir.scale(bond));
        let kick: Vec3<T> = rng.normal3();
        let mut next = dir + kick.scale(real(0.7));
        let norm = next.norm();
        if norm <= real(1e-12) {
            next = dir;
        } else {
            next = next.scale(T::one() / norm);
        }
        dir = next;
    }
    coords
}

fn gen_chain<T: Real>(spec: &ToySpec<T>, rng: &mut RngStream) -> Result<Structure<T>> {
    let sizes = chain_sizes(spec.atoms, spec.n_chains);
    let mut coords = Vec::with_capacity(spec.atoms);
    let mut chains = Vec::with_capacity(spec.atoms);
    let mut bonds = Vec::new();
    let spacing = real::<T>(4.0);
    let mut start = 0usize;
    for (c, &len) in sizes.iter().enumerate() {
        let origin = Vec3::new(
            spacing * crate::num::real_of_usize::<T>(c),
            spacing * crate::num::real_of_usize::<T>(c % 2),
            T::zero(),
        );
        coords.extend(walk_coords(len, spec.bond_length, origin, rng));
        chains.extend(std::iter::repeat_n(c as u32, len));
        bonds.extend(consecutive_bonds(start, len));
        start += len;
    }
    Structure::new(
        centered(coords),
        vec![EntityClass::Protein; spec.atoms],
        chains,
        bonds,
        vec![T::one(); spec.atoms],
    )
}

fn gen_complex<T: Real>(spec: &ToySpec<T>, rng: &mut RngStream) -> Result<Structure<T>> {
    let n_ligand = (spec.atoms / 5).clamp(2, spec.atoms.saturating_sub(2));
    let n_protein = spec.atoms - n_ligand;
    let protein_spec = ToySpec {
        kind: ToyKind::PolymerHelix,
        atoms: n_protein,
        n_chains: spec.n_chains,
        bond_length: spec.bond_length,
        gmm: None,
    };
    let protein = gen_helix(&protein_spec, rng)?;

    // Ligand: a straight segment with exact bond lengths, parked next to
    // the first protein chain.
    let anchor = protein.coords[n_protein / 2];
    let offset = Vec3::new(real(3.5), real(0.5), T::zero());
    let u: T = rng.uniform01();
    let tilt = real::<T>(std::f64::consts::TAU) * u;
    let dir = Vec3::new(tilt.cos(), tilt.sin(), T::zero());
    let mut coords = protein.coords.clone();
    let mut chains = protein.chains.clone();
    let mut entities = protein.entities.clone();
    let mut bonds = protein.bonds.clone();
    let ligand_chain = spec.n_chains as u32;
    for j in 0..n_ligand {
        coords.push(anchor + offset + dir.scale(spec.bond_length * crate::num::real_of_usize::<T>(j)));
        chains.push(ligand_chain);
        entities.push(EntityClass::Ligand);
    }
    bonds.extend(consecutive_bonds(n_protein, n_ligand));
    Structure::new(centered(coords), entities, chains, bonds, vec![T::one(); spec.atoms])
}

fn gen_gmm<T: Real>(spec: &ToySpec<T>, rng: &mut RngStream) -> Result<Structure<T>> {
    let gmm = spec.gmm.as_ref().expect("validated");
    // Pick the component for this draw, then sample every atom around it.
    let u: T = rng.uniform01();
    let mut acc = T::zero();
    let mut picked = gmm.components.len() - 1;
    for (k, c) in gmm.components.iter().enumerate() {
        acc += c.weight;
        if u < acc {
            picked = k;
            break;
        }
    }
    let comp = &gmm.components[picked];
    let coords = (0..spec.atoms)
        .map(|_| comp.mean + rng.normal3::<T>().scale(comp.std))
        .collect();
    Structure::from_coords(coords, EntityClass::Protein)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain_spec(atoms: usize) -> ToySpec<f64> {
        ToySpec {
            kind: ToyKind::PolymerChain,
            atoms,
            n_chains: 1,
            bond_length: 1.5,
            gmm: None,
        }
    }

    #[test]
    fn chain_bond_lengths_hit_target() {
        let mut rng = RngStream::new(1, 0);
        let s = gen_toy(&chain_spec(3), &mut rng).unwrap();
        assert_eq!(s.bonds.len(), 2);
        for &b in &s.bonds {
            assert!((s.bond_length(b) - 1.5).abs() < 1e-9);
        }
    }

    #[test]
    fn helix_bond_lengths_hit_target() {
        let mut rng = RngStream::new(2, 0);
        let spec: ToySpec<f64> = ToySpec {
            kind: ToyKind::PolymerHelix,
            atoms: 24,
            n_chains: 2,
            bond_length: 1.5,
            gmm: None,
        };
        let s = gen_toy(&spec, &mut rng).unwrap();
        for &b in &s.bonds {
            assert!((s.bond_length(b) - 1.5).abs() < 1e-9, "bond {b:?}");
        }
        // bonds never cross chains
        for &(l, m) in &s.bonds {
            assert_eq!(s.chains[l], s.chains[m]);
        }
    }

    #[test]
    fn complex_has_a_ligand_chain() {
        let mut rng = RngStream::new(3, 0);
        let spec: ToySpec<f64> = ToySpec {
            kind: ToyKind::ComplexWithLigand,
            atoms: 20,
            n_chains: 1,
            bond_length: 1.5,
            gmm: None,
        };
        let s = gen_toy(&spec, &mut rng).unwrap();
        assert!(s.has_class(EntityClass::Ligand));
        for &b in &s.bonds {
            assert!((s.bond_length(b) - 1.5).abs() < 1e-9);
        }
    }

    #[test]
    fn gmm_running_mean_matches_component_mean() {
        // Law of large numbers: 1e5 single-atom draws from a zero-mean
        // unit-std component have per-axis sample mean within 0.02 of 0.
        let spec = ToySpec {
            kind: ToyKind::Gmm,
            atoms: 1,
            n_chains: 1,
            bond_length: 0.0,
            gmm: Some(GmmSpec::single(Vec3::zero(), 1.0)),
        };
        let mut rng = RngStream::new(4, 0);
        let n = 100_000;
        let mut mean = Vec3::<f64>::zero();
        for _ in 0..n {
            let s = gen_toy(&spec, &mut rng).unwrap();
            mean += s.coords[0];
        }
        mean = mean.scale(1.0 / n as f64);
        for k in 0..3 {
            assert!(mean[k].abs() < 0.02, "axis {k} mean {}", mean[k]);
        }
    }

    #[test]
    fn same_seed_same_structure() {
        let spec = chain_spec(8);
        let a = gen_toy(&spec, &mut RngStream::new(9, 5)).unwrap();
        let b = gen_toy(&spec, &mut RngStream::new(9, 5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(gen_toy(&chain_spec(1), &mut RngStream::new(0, 0)).is_err());
        let no_mix = ToySpec::<f64> {
            kind: ToyKind::Gmm,
            atoms: 4,
            n_chains: 1,
            bond_length: 0.0,
            gmm: None,
        };
        assert!(gen_toy(&no_mix, &mut RngStream::new(0, 0)).is_err());
    }
}
