//! Simulation and analysis of nonstabilizerness and entanglement growth in
//! Stark-tilted transverse-field Ising chains.

pub mod error;
pub mod evolution;
pub mod hamiltonian;
pub mod magic;
pub mod quench;
pub mod rng;
pub mod scaling;
pub mod shadows;
pub mod state;
pub mod theory;
pub mod wht;

pub use error::{Error, ErrorClass, Result};
pub use hamiltonian::{
    build_hamiltonian, find_z_star, prepare_initial_state, ChainSpec, InitialKind,
    InitialStateSpec, LongRangeSpec, ModelSpec, PowerLaw, SparseHamiltonian,
};
pub use rng::SeededRng;
pub use state::{BitString, PauliString, StateVector};
