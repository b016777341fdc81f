//! Periodic particle system, neighbor search and time integration.

pub mod integrate;
pub mod neighbor;
pub mod potential;
pub mod state;
pub mod vec3;
pub mod xyz;

pub use integrate::{Integrator, Thermostat};
pub use neighbor::{build_neighbor_table, open_pairs, NeighborTable, PairGeometry};
pub use potential::{total_energy, ForceEval, ForceProvider, NeighborForces, Potential};
pub use state::{fcc_sites, minimum_image, wrap, SystemState};
pub use vec3::Vec3;
