//! Structure representation, toy generators, rigid alignment and the
//! sampler's random augmentation.

pub mod augment;
pub mod kabsch;
pub mod structure;
pub mod toygen;

pub use augment::{augment_coords, center_random_augmentation, random_rotation};
pub use kabsch::{align_coords, kabsch_align, rotation_onto, weighted_rmsd};
pub use structure::{EntityClass, Structure};
pub use toygen::{gen_toy, GmmComponent, GmmSpec, ToyKind, ToySpec};
