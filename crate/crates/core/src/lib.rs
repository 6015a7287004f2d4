//! Tersoff-potential molecular dynamics with a reference scalar kernel and
//! vectorized kernels written against a lane-width-oblivious back-end layer.

pub mod cli;
pub mod engine;
pub mod error;
pub mod model;
pub mod neighbor;
pub mod potential_opt;
pub mod potential_ref;
pub mod simd;
pub mod verify;

pub use engine::{make_diamond_lattice, run, RunConfig, RunReport, Scheme};
pub use error::{Error, Result};
pub use model::{AtomSystem, ParamTable, PrecisionMode, SimulationBox, TersoffEntry, Vec3};
pub use neighbor::{build_neighbor_list, FilteredList, NeighborList};
pub use potential_opt::{compute_forces, ForceOptions};
pub use potential_ref::{compute_ref, EnergyForces};
