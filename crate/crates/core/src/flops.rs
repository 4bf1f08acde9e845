//! Analytic FLOPs estimator for AF3-style architecture configurations.
//!
//! Counting rules, used consistently across every preset (ratios between
//! presets are the meaningful output, not absolute counts):
//!   - dense product of an (m x k) by (k x n): `2 m n k` FLOPs;
//!   - attention over N items at width d: `4 N^2 d` for scores and value
//!     mixing plus `8 N d^2` for the Q/K/V/O projections;
//!   - transition (two 4x-widening dense layers): `16 N d^2`;
//!   - triangle-style pair updates: `TRIANGLE_COEF * N^3 * d_pair`.
//!
//! All counts are exact integers, so breakdowns sum to totals bit-exactly.

use serde::{Deserialize, Serialize};

/// Combined coefficient of the N^3 pair-update stack (two triangle
/// multiplications plus two triangle attentions, four N^3*d passes).
pub const TRIANGLE_COEF: u128 = 8;

/// Channel widths of the trunk representations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Widths {
    pub pair: usize,
    pub single: usize,
    pub atom: usize,
    pub msa: usize,
}

impl Default for Widths {
    fn default() -> Self {
        Widths {
            pair: 128,
            single: 384,
            atom: 128,
            msa: 64,
        }
    }
}

/// Block counts and sampling depth of one model configuration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub name: String,
    pub msa_blocks: usize,
    pub pairformer_blocks: usize,
    pub diffusion_encoder: usize,
    pub diffusion_transformer: usize,
    pub diffusion_decoder: usize,
    pub widths: Widths,
    pub n_cycles: usize,
    pub n_diffusion_steps: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        presets::protenix()
    }
}

/// Named presets.
pub mod presets {
    use super::{ArchConfig, Widths};

    pub fn protenix() -> ArchConfig {
        ArchConfig {
            name: "protenix".into(),
            msa_blocks: 4,
            pairformer_blocks: 48,
            diffusion_encoder: 3,
            diffusion_transformer: 24,
            diffusion_decoder: 3,
            widths: Widths::default(),
            n_cycles: 4,
            n_diffusion_steps: 200,
        }
    }

    pub fn mini() -> ArchConfig {
        ArchConfig {
            name: "mini".into(),
            msa_blocks: 1,
            pairformer_blocks: 16,
            diffusion_encoder: 1,
            diffusion_transformer: 8,
            diffusion_decoder: 1,
            widths: Widths::default(),
            n_cycles: 4,
            n_diffusion_steps: 2,
        }
    }

    pub fn tiny() -> ArchConfig {
        ArchConfig {
            name: "tiny".into(),
            msa_blocks: 1,
            pairformer_blocks: 8,
            diffusion_encoder: 1,
            diffusion_transformer: 8,
            diffusion_decoder: 1,
            widths: Widths::default(),
            n_cycles: 4,
            n_diffusion_steps: 2,
        }
    }

    pub fn by_name(name: &str) -> Option<ArchConfig> {
        match name {
            "protenix" => Some(protenix()),
            "mini" => Some(mini()),
            "tiny" => Some(tiny()),
            _ => None,
        }
    }

    pub const NAMES: [&str; 3] = ["protenix", "mini", "tiny"];
}

/// Input sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadShape {
    pub n_tokens: usize,
    pub n_msa_rows: usize,
    pub n_atoms: usize,
}

impl WorkloadShape {
    pub fn validate(&self) -> crate::error::Result<()> {
        if self.n_tokens == 0 || self.n_msa_rows == 0 || self.n_atoms == 0 {
            return Err(crate::error::Error::validation(
                "workload dimensions must be positive",
            ));
        }
        Ok(())
    }
}

/// Per-stage cost split. `diffusion` covers encoder, transformer and
/// decoder over all sampling steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsBreakdown {
    pub msa: u128,
    pub pairformer: u128,
    pub diffusion: u128,
}

impl FlopsBreakdown {
    pub fn total(&self) -> u128 {
        self.msa + self.pairformer + self.diffusion
    }
}

pub fn matmul_flops(m: usize, n: usize, k: usize) -> u128 {
    2 * m as u128 * n as u128 * k as u128
}

pub fn attention_flops(n_items: usize, width: usize) -> u128 {
    let n = n_items as u128;
    let d = width as u128;
    4 * n * n * d + 8 * n * d * d
}

pub fn transition_flops(n_items: usize, width: usize) -> u128 {
    16 * n_items as u128 * (width as u128).pow(2)
}

pub fn triangle_flops(n_tokens: usize, pair_width: usize) -> u128 {
    TRIANGLE_COEF * (n_tokens as u128).pow(3) * pair_width as u128
}

/// One MSA-module block: per-row attention and transition over the MSA
/// stack, outer-product projection into the pair representation, then the
/// pair update stack.
fn msa_block(w: &WorkloadShape, widths: &Widths) -> u128 {
    let rows = w.n_msa_rows as u128;
    rows * attention_flops(w.n_tokens, widths.msa)
        + rows * transition_flops(w.n_tokens, widths.msa)
        + 2 * rows * (w.n_tokens as u128).pow(2) * widths.msa as u128
        + matmul_flops(w.n_tokens * w.n_tokens, widths.pair, widths.msa)
        + pair_stack(w.n_tokens, widths)
}

fn pair_stack(n_tokens: usize, widths: &Widths) -> u128 {
    triangle_flops(n_tokens, widths.pair) + transition_flops(n_tokens * n_tokens, widths.pair)
}

/// One pairformer block: pair update stack plus single-track attention
/// and transition.
fn pairformer_block(w: &WorkloadShape, widths: &Widths) -> u128 {
    pair_stack(w.n_tokens, widths)
        + attention_flops(w.n_tokens, widths.single)
        + transition_flops(w.n_tokens, widths.single)
}

/// One atom-level block (encoder or decoder side).
fn atom_block(w: &WorkloadShape, widths: &Widths) -> u128 {
    attention_flops(w.n_atoms, widths.atom) + transition_flops(w.n_atoms, widths.atom)
}

/// One token-level diffusion transformer block.
fn diffusion_token_block(w: &WorkloadShape, widths: &Widths) -> u128 {
    attention_flops(w.n_tokens, widths.single) + transition_flops(w.n_tokens, widths.single)
}

/// Cost of one full forward pass of the diffusion module (one sampling
/// step).
pub fn diffusion_step_flops(a: &ArchConfig, w: &WorkloadShape) -> u128 {
    (a.diffusion_encoder + a.diffusion_decoder) as u128 * atom_block(w, &a.widths)
        + a.diffusion_transformer as u128 * diffusion_token_block(w, &a.widths)
}

/// Full inference cost: conditioning trunk over the recycling cycles plus
/// the diffusion module over the sampling steps.
pub fn flops_estimate(a: &ArchConfig, w: &WorkloadShape) -> FlopsBreakdown {
    let cycles = a.n_cycles as u128;
    FlopsBreakdown {
        msa: cycles * a.msa_blocks as u128 * msa_block(w, &a.widths),
        pairformer: cycles * a.pairformer_blocks as u128 * pairformer_block(w, &a.widths),
        diffusion: a.n_diffusion_steps as u128 * diffusion_step_flops(a, w),
    }
}

/// Which workload axis a curve sweeps.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Tokens(Vec<usize>),
    MsaRows(Vec<usize>),
}

/// One breakdown row per grid point along the sweep axis.
pub fn flops_curve(
    a: &ArchConfig,
    sweep: &SweepAxis,
    fixed: &WorkloadShape,
) -> crate::error::Result<Vec<(WorkloadShape, FlopsBreakdown)>> {
    let points: Vec<WorkloadShape> = match sweep {
        SweepAxis::Tokens(values) => values
            .iter()
            .map(|&n_tokens| WorkloadShape { n_tokens, ..*fixed })
            .collect(),
        SweepAxis::MsaRows(values) => values
            .iter()
            .map(|&n_msa_rows| WorkloadShape { n_msa_rows, ..*fixed })
            .collect(),
    };
    if points.is_empty() {
        return Err(crate::error::Error::validation("empty sweep grid"));
    }
    points
        .into_iter()
        .map(|p| {
            p.validate()?;
            Ok((p, flops_estimate(a, &p)))
        })
        .collect()
}
