//! Atomic structures: coordinates, entity classes, chains, bonds.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::{real, Real};
use crate::vec3::{centroid, Vec3};

/// Entity class of an atom.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityClass {
    Protein,
    Ligand,
    Dna,
    Rna,
}

impl EntityClass {
    pub const ALL: [EntityClass; 4] = [
        EntityClass::Protein,
        EntityClass::Ligand,
        EntityClass::Dna,
        EntityClass::Rna,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityClass::Protein => "protein",
            EntityClass::Ligand => "ligand",
            EntityClass::Dna => "dna",
            EntityClass::Rna => "rna",
        }
    }

    pub fn from_str_token(s: &str) -> Option<Self> {
        match s {
            "protein" => Some(EntityClass::Protein),
            "ligand" => Some(EntityClass::Ligand),
            "dna" => Some(EntityClass::Dna),
            "rna" => Some(EntityClass::Rna),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        match self {
            EntityClass::Protein => 0,
            EntityClass::Ligand => 1,
            EntityClass::Dna => 2,
            EntityClass::Rna => 3,
        }
    }
}

/// A set of atoms with per-atom class, chain id and weight, plus a bond list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Structure<T> {
    pub coords: Vec<Vec3<T>>,
    pub entities: Vec<EntityClass>,
    pub chains: Vec<u32>,
    /// Bonded atom index pairs, each stored with the smaller index first.
    pub bonds: Vec<(usize, usize)>,
    pub weights: Vec<T>,
}

impl<T: Real> Structure<T> {
    /// Builds a structure and checks its invariants: at least one atom,
    /// per-atom vectors of equal length, finite values, in-range distinct
    /// bonds.
    pub fn new(
        coords: Vec<Vec3<T>>,
        entities: Vec<EntityClass>,
        chains: Vec<u32>,
        bonds: Vec<(usize, usize)>,
        weights: Vec<T>,
    ) -> Result<Self> {
        let n = coords.len();
        if n == 0 {
            return Err(Error::validation("structure must have at least one atom"));
        }
        if entities.len() != n || chains.len() != n || weights.len() != n {
            return Err(Error::validation(format!(
                "per-atom field lengths disagree: coords {n}, entities {}, chains {}, weights {}",
                entities.len(),
                chains.len(),
                weights.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::validation("non-finite coordinate"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < T::zero()) {
            return Err(Error::validation("atom weights must be finite and nonnegative"));
        }
        let mut norm_bonds = Vec::with_capacity(bonds.len());
        for &(a, b) in &bonds {
            if a == b {
                return Err(Error::validation(format!("bond ({a}, {b}) joins an atom to itself")));
            }
            if a >= n || b >= n {
                return Err(Error::validation(format!(
                    "bond ({a}, {b}) out of range for {n} atoms"
                )));
            }
            norm_bonds.push((a.min(b), a.max(b)));
        }
        norm_bonds.sort_unstable();
        let before = norm_bonds.len();
        norm_bonds.dedup();
        if norm_bonds.len() != before {
            return Err(Error::validation("duplicate bond"));
        }
        Ok(Structure {
            coords,
            entities,
            chains,
            bonds: norm_bonds,
            weights,
        })
    }

    /// Single-class structure with unit weights and no bonds.
    pub fn from_coords(coords: Vec<Vec3<T>>, class: EntityClass) -> Result<Self> {
        let n = coords.len();
        Structure::new(coords, vec![class; n], vec![0; n], Vec::new(), vec![T::one(); n])
    }

    pub fn n_atoms(&self) -> usize {
        self.coords.len()
    }

    pub fn centroid(&self) -> Vec3<T> {
        centroid(&self.coords)
    }

    /// Same topology, new coordinates.
    pub fn with_coords(&self, coords: Vec<Vec3<T>>) -> Result<Self> {
        if coords.len() != self.n_atoms() {
            return Err(Error::validation(format!(
                "coordinate count {} does not match atom count {}",
                coords.len(),
                self.n_atoms()
            )));
        }
        Structure::new(
            coords,
            self.entities.clone(),
            self.chains.clone(),
            self.bonds.clone(),
            self.weights.clone(),
        )
    }

    pub fn bond_length(&self, bond: (usize, usize)) -> T {
        self.coords[bond.0].dist(self.coords[bond.1])
    }

    /// Whether two atoms share a declared bond.
    pub fn bonded(&self, a: usize, b: usize) -> bool {
        let key = (a.min(b), a.max(b));
        self.bonds.binary_search(&key).is_ok()
    }

    pub fn has_class(&self, class: EntityClass) -> bool {
        self.entities.iter().any(|e| *e == class)
    }

    /// Atom indices of one entity class.
    pub fn class_indices(&self, class: EntityClass) -> Vec<usize> {
        (0..self.n_atoms()).filter(|&i| self.entities[i] == class).collect()
    }

    /// Serializes to the line-based text format:
    /// one `idx chain entity x y z weight` record per atom, then
    /// `BOND l m` lines. Decimals carry 17 significant digits so the
    /// round-trip is exact.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n_atoms() {
            let c = self.coords[i];
            let _ = writeln!(
                out,
                "{} {} {} {} {} {} {}",
                i,
                self.chains[i],
                self.entities[i].as_str(),
                fmt_scalar(c[0]),
                fmt_scalar(c[1]),
                fmt_scalar(c[2]),
                fmt_scalar(self.weights[i]),
            );
        }
        for &(l, m) in &self.bonds {
            let _ = writeln!(out, "BOND {l} {m}");
        }
        out
    }

    /// Parses the text format. Errors carry the byte offset of the
    /// offending line.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut coords = Vec::new();
        let mut entities = Vec::new();
        let mut chains = Vec::new();
        let mut weights = Vec::new();
        let mut bonds = Vec::new();
        let mut offset = 0usize;
        for line in text.split_inclusive('\n') {
            let line_offset = offset;
            offset += line.len();
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split_whitespace().collect();
            if fields[0] == "BOND" {
                if fields.len() != 3 {
                    return Err(parse_err(line_offset, "BOND line needs two indices"));
                }
                let l = parse_usize(fields[1], line_offset)?;
                let m = parse_usize(fields[2], line_offset)?;
                bonds.push((l, m));
                continue;
            }
            if fields.len() != 7 {
                return Err(parse_err(
                    line_offset,
                    format!("atom record needs 7 fields, found {}", fields.len()),
                ));
            }
            let idx = parse_usize(fields[0], line_offset)?;
            if idx != coords.len() {
                return Err(parse_err(
                    line_offset,
                    format!("atom index {idx} out of order (expected {})", coords.len()),
                ));
            }
            let chain: u32 = fields[1]
                .parse()
                .map_err(|_| parse_err(line_offset, format!("bad chain id `{}`", fields[1])))?;
            let class = EntityClass::from_str_token(fields[2])
                .ok_or_else(|| parse_err(line_offset, format!("unknown entity class `{}`", fields[2])))?;
            let x = parse_scalar::<T>(fields[3], line_offset)?;
            let y = parse_scalar::<T>(fields[4], line_offset)?;
            let z = parse_scalar::<T>(fields[5], line_offset)?;
            let w = parse_scalar::<T>(fields[6], line_offset)?;
            coords.push(Vec3([x, y, z]));
            chains.push(chain);
            entities.push(class);
            weights.push(w);
        }
        if coords.is_empty() {
            return Err(parse_err(0, "no atom records"));
        }
        Structure::new(coords, entities, chains, bonds, weights)
    }
}

fn fmt_scalar<T: Real>(v: T) -> String {
    // 17 significant digits round-trips f64 (and a fortiori f32) exactly.
    format!("{:.16e}", v.to_f64().unwrap_or(f64::NAN))
}

fn parse_scalar<T: Real>(s: &str, offset: usize) -> Result<T> {
    let v: f64 = s
        .parse()
        .map_err(|_| parse_err(offset, format!("bad number `{s}`")))?;
    Ok(real(v))
}

fn parse_usize(s: &str, offset: usize) -> Result<usize> {
    s.parse()
        .map_err(|_| parse_err(offset, format!("bad index `{s}`")))
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}
