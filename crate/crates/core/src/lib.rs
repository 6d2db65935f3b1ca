pub mod error;
pub mod family;
pub mod geometry;
pub mod map;
pub mod numeric;
pub mod system;
pub mod words;
pub mod rng;
pub mod attractor;
pub mod dimension;
pub mod spatial;
pub mod separation;

#[cfg(test)]
mod tests;

pub use error::{Error, Result};
pub use family::Family;
pub use geometry::Aabb;
pub use map::{ContractionMap, MapKind};
pub use system::{Layer, LayerProfile, LayerSystem, WeightSequence};
pub use words::{compose, cutset, cylinder_weight, Cutset, Word};
