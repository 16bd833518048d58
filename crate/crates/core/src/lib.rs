//! Mass-spring softbody simulation.

pub mod collision;
pub mod engine;
pub mod forces;
pub mod integrators;
pub mod model;
pub mod persistence;
pub mod registry;
pub mod vec3;

pub use vec3::Vec3;
