//! Evaluation metrics: hard LDDT (complex-level and per interface class),
//! RMSD with success flag, clash statistics over sample grids, and
//! best-to-worst diversity spread.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{kabsch_align, EntityClass, Structure};
use crate::loss::LDDT_THRESHOLDS;
use crate::num::{real, real_of_usize, Real};

/// Interface classes reported by the evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassPair {
    /// Both atoms protein, different chains.
    ProtProt,
    /// One ligand atom, one protein atom.
    LigProt,
    /// One DNA atom, one protein atom.
    DnaProt,
    /// One RNA atom, one protein atom.
    RnaProt,
    /// Both atoms protein, same chain.
    IntraProt,
}

impl ClassPair {
    pub const ALL: [ClassPair; 5] = [
        ClassPair::ProtProt,
        ClassPair::LigProt,
        ClassPair::DnaProt,
        ClassPair::RnaProt,
        ClassPair::IntraProt,
    ];

    fn qualifies<T: Real>(self, s: &Structure<T>, l: usize, m: usize) -> bool {
        let (el, em) = (s.entities[l], s.entities[m]);
        let same_chain = s.chains[l] == s.chains[m];
        match self {
            ClassPair::ProtProt => {
                el == EntityClass::Protein && em == EntityClass::Protein && !same_chain
            }
            ClassPair::LigProt => cross(el, em, EntityClass::Ligand, EntityClass::Protein),
            ClassPair::DnaProt => cross(el, em, EntityClass::Dna, EntityClass::Protein),
            ClassPair::RnaProt => cross(el, em, EntityClass::Rna, EntityClass::Protein),
            ClassPair::IntraProt => {
                el == EntityClass::Protein && em == EntityClass::Protein && same_chain
            }
        }
    }
}

fn cross(a: EntityClass, b: EntityClass, x: EntityClass, y: EntityClass) -> bool {
    (a == x && b == y) || (a == y && b == x)
}

/// Superposition-free distance-difference score over target pairs within
/// the inclusion radius: the fraction of (pair, threshold) combinations
/// whose absolute distance difference stays within the threshold.
/// Accumulated as integer counts, so the score is an exact ratio.
pub fn lddt<T: Real>(
    pred: &Structure<T>,
    target: &Structure<T>,
    inclusion_radius: T,
    thresholds: &[T],
) -> Result<T> {
    lddt_filtered(pred, target, inclusion_radius, thresholds, |_, _| true)
}

/// LDDT restricted to pairs of the given interface class. An empty pair
/// set yields an undefined-score error so callers report the class as
/// absent rather than zero.
pub fn interface_lddt<T: Real>(
    pred: &Structure<T>,
    target: &Structure<T>,
    class_pair: ClassPair,
    inclusion_radius: T,
) -> Result<T> {
    let thresholds: Vec<T> = LDDT_THRESHOLDS.iter().map(|&v| real(v)).collect();
    lddt_filtered(pred, target, inclusion_radius, &thresholds, |l, m| {
        class_pair.qualifies(target, l, m)
    })
}

fn lddt_filtered<T: Real>(
    pred: &Structure<T>,
    target: &Structure<T>,
    inclusion_radius: T,
    thresholds: &[T],
    keep: impl Fn(usize, usize) -> bool,
) -> Result<T> {
    if pred.n_atoms() != target.n_atoms() {
        return Err(Error::validation(format!(
            "atom counts differ: {} vs {}",
            pred.n_atoms(),
            target.n_atoms()
        )));
    }
    if !(inclusion_radius > T::zero()) {
        return Err(Error::validation("inclusion radius must be positive"));
    }
    if thresholds.is_empty() {
        return Err(Error::validation("need at least one threshold"));
    }
    let n = target.n_atoms();
    let mut pairs = 0usize;
    let mut hits = 0usize;
    for l in 0..n {
        for m in (l + 1)..n {
            if !keep(l, m) {
                continue;
            }
            let d_gt = target.coords[l].dist(target.coords[m]);
            if d_gt > inclusion_radius {
                continue;
            }
            let d_pred = pred.coords[l].dist(pred.coords[m]);
            let delta = (d_gt - d_pred).abs();
            pairs += 1;
            for &thr in thresholds {
                if delta <= thr {
                    hits += 1;
                }
            }
        }
    }
    if pairs == 0 {
        return Err(Error::UndefinedScore(
            "no qualifying pairs within the inclusion radius".into(),
        ));
    }
    Ok(real_of_usize::<T>(hits) / real_of_usize::<T>(pairs * thresholds.len()))
}

/// RMSD after superposition on the scored atom subset (ligand atoms when
/// present, all atoms otherwise) plus the success flag `rmsd <= threshold`.
pub fn rmsd_success<T: Real>(
    pred: &Structure<T>,
    target: &Structure<T>,
    threshold: T,
) -> Result<(T, bool)> {
    if pred.n_atoms() != target.n_atoms() {
        return Err(Error::validation(format!(
            "atom counts differ: {} vs {}",
            pred.n_atoms(),
            target.n_atoms()
        )));
    }
    let subset: Vec<usize> = if target.has_class(EntityClass::Ligand) {
        target.class_indices(EntityClass::Ligand)
    } else {
        (0..target.n_atoms()).collect()
    };
    let take = |s: &Structure<T>| -> Structure<T> {
        let coords = subset.iter().map(|&i| s.coords[i]).collect();
        let entities = subset.iter().map(|&i| s.entities[i]).collect();
        let chains = subset.iter().map(|&i| s.chains[i]).collect();
        let weights = subset.iter().map(|_| T::one()).collect();
        Structure::new(coords, entities, chains, Vec::new(), weights)
            .expect("subset of a valid structure is valid")
    };
    let pred_sub = take(pred);
    let target_sub = take(target);
    let weights = vec![T::one(); subset.len()];
    let (_, rmsd) = kabsch_align(&pred_sub, &target_sub, &weights)?;
    Ok((rmsd, rmsd <= threshold))
}

/// Clash detection rule: a structure has a clash when a non-bonded atom
/// pair (optionally restricted to one cross-entity combination) is closer
/// than `min_dist`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, bound = "T: Real")]
pub struct ClashRule<T> {
    pub min_dist: T,
    /// Restrict to pairs joining these two entity classes.
    pub cross_entity_only: Option<(EntityClass, EntityClass)>,
}

impl<T: Real> Default for ClashRule<T> {
    fn default() -> Self {
        ClashRule {
            min_dist: real(1.1),
            cross_entity_only: None,
        }
    }
}

/// Number of clashing pairs under the rule.
pub fn clash_count<T: Real>(s: &Structure<T>, rule: &ClashRule<T>) -> usize {
    let n = s.n_atoms();
    let mut count = 0usize;
    for l in 0..n {
        for m in (l + 1)..n {
            if s.bonded(l, m) {
                continue;
            }
            if let Some((a, b)) = rule.cross_entity_only {
                if !cross(s.entities[l], s.entities[m], a, b) {
                    continue;
                }
            }
            if s.coords[l].dist(s.coords[m]) < rule.min_dist {
                count += 1;
            }
        }
    }
    count
}

pub fn has_clash<T: Real>(s: &Structure<T>, rule: &ClashRule<T>) -> bool {
    clash_count(s, rule) > 0
}

/// Clash summary over a seeds-by-samples grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClashGridReport {
    /// Some cell anywhere in the grid has a clash.
    pub exists_any: bool,
    /// Every sample of the first seed has a clash.
    pub all_first_seed: bool,
    /// Every cell of the whole grid has a clash.
    pub all_grid: bool,
    pub per_cell: Vec<Vec<usize>>,
}

pub fn clash_stats<T: Real>(grid: &[Vec<Structure<T>>], rule: &ClashRule<T>) -> Result<ClashGridReport> {
    if grid.is_empty() || grid.iter().any(|row| row.is_empty()) {
        return Err(Error::validation("clash grid must be non-empty"));
    }
    let per_cell: Vec<Vec<usize>> = grid
        .iter()
        .map(|row| row.iter().map(|s| clash_count(s, rule)).collect())
        .collect();
    let exists_any = per_cell.iter().flatten().any(|&c| c > 0);
    let all_first_seed = per_cell[0].iter().all(|&c| c > 0);
    let all_grid = per_cell.iter().flatten().all(|&c| c > 0);
    Ok(ClashGridReport {
        exists_any,
        all_first_seed,
        all_grid,
        per_cell,
    })
}

/// Best-to-worst score gaps across a set of samples of one target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", bound = "T: Real")]
pub struct DiversityReport<T> {
    pub complex_lddt_spread: T,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prot_prot: Option<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lig_prot: Option<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dna_prot: Option<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rna_prot: Option<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intra_prot: Option<T>,
}

/// Max minus min of the per-sample complex LDDT (and per populated
/// interface class).
pub fn diversity_spread<T: Real>(
    samples: &[Structure<T>],
    target: &Structure<T>,
    inclusion_radius: T,
) -> Result<DiversityReport<T>> {
    if samples.len() < 2 {
        return Err(Error::validation("diversity spread needs at least two samples"));
    }
    let thresholds: Vec<T> = LDDT_THRESHOLDS.iter().map(|&v| real(v)).collect();
    let spread = |scores: &[T]| -> T {
        let mut lo = scores[0];
        let mut hi = scores[0];
        for &s in scores {
            lo = lo.min(s);
            hi = hi.max(s);
        }
        hi - lo
    };
    let complex: Vec<T> = samples
        .iter()
        .map(|s| lddt(s, target, inclusion_radius, &thresholds))
        .collect::<Result<_>>()?;
    let mut per_class: [Option<T>; 5] = [None; 5];
    for (slot, pair) in per_class.iter_mut().zip(ClassPair::ALL) {
        let scores: Result<Vec<T>> = samples
            .iter()
            .map(|s| interface_lddt(s, target, pair, inclusion_radius))
            .collect();
        if let Ok(scores) = scores {
            *slot = Some(spread(&scores));
        }
    }
    Ok(DiversityReport {
        complex_lddt_spread: spread(&complex),
        prot_prot: per_class[0],
        lig_prot: per_class[1],
        dna_prot: per_class[2],
        rna_prot: per_class[3],
        intra_prot: per_class[4],
    })
}

/// Settings shared by the single-pair evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, bound = "T: Real")]
pub struct MetricParams<T> {
    pub inclusion_radius: T,
    pub rmsd_threshold: T,
    pub clash: ClashRule<T>,
}

impl<T: Real> Default for MetricParams<T> {
    fn default() -> Self {
        MetricParams {
            inclusion_radius: real(15.0),
            rmsd_threshold: real(2.0),
            clash: ClashRule::default(),
        }
    }
}

/// All single-pair metrics. Undefined interface classes are omitted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", bound = "T: Real")]
pub struct MetricReport<T> {
    pub complex_lddt: T,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prot_prot: Option<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lig_prot: Option<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dna_prot: Option<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rna_prot: Option<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intra_prot: Option<T>,
    pub rmsd: T,
    pub success: bool,
    pub clash: bool,
    pub clash_count: usize,
}

pub fn metric_report<T: Real>(
    pred: &Structure<T>,
    target: &Structure<T>,
    params: &MetricParams<T>,
) -> Result<MetricReport<T>> {
    let thresholds: Vec<T> = LDDT_THRESHOLDS.iter().map(|&v| real(v)).collect();
    let complex_lddt = lddt(pred, target, params.inclusion_radius, &thresholds)?;
    let score = |pair: ClassPair| -> Option<T> {
        interface_lddt(pred, target, pair, params.inclusion_radius).ok()
    };
    let (rmsd, success) = rmsd_success(pred, target, params.rmsd_threshold)?;
    let n_clashes = clash_count(pred, &params.clash);
    Ok(MetricReport {
        complex_lddt,
        prot_prot: score(ClassPair::ProtProt),
        lig_prot: score(ClassPair::LigProt),
        dna_prot: score(ClassPair::DnaProt),
        rna_prot: score(ClassPair::RnaProt),
        intra_prot: score(ClassPair::IntraProt),
        rmsd,
        success,
        clash: n_clashes > 0,
        clash_count: n_clashes,
    })
}
