//! The desk-scale closed-loop workload: differential evolution over
//! sampler parameters, noisy bitstring sampling, configuration recovery,
//! subspace diagonalization and carryover selection.

mod davidson;
mod de;
mod determinant;
mod hamiltonian;
mod recovery;
mod runner;
mod sampler;
mod seeds;
mod slater;
mod subspace;

pub use davidson::{ground_state, SymMatrix, DENSE_CUTOFF};
pub use de::{de_crossover, de_mutate, de_select, DEConfig, ParameterVector};
pub use determinant::Determinant;
pub use hamiltonian::HamiltonianSpec;
pub use recovery::{fix_sector, recover_configurations, split_spin_sectors};
pub use runner::{run_closed_loop, LoopOutcome, WorkloadConfig};
pub use sampler::{RetentionStats, Sampler, SamplerModel};
pub use seeds::{mix_seed, salt};
pub use slater::build_subspace_hamiltonian;
pub use subspace::{build_subspace, select_carryover, SubspaceResult};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SqdError {
    #[error("differential evolution needs at least 4 populations, got {0}")]
    PopulationTooSmall(usize),
    #[error("vector dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("energy comparison with a NaN value")]
    NaNEnergy,
    #[error("particle sector is empty ({electrons} electrons in {orbitals} orbitals)")]
    EmptySector { electrons: usize, orbitals: usize },
    #[error("full bitstrings must have even width, got {0}")]
    OddWidth(u16),
    #[error("occupancy prior has {actual} entries, width needs {expected}")]
    PriorLength { expected: usize, actual: usize },
    #[error("cannot form any determinant from the provided strings")]
    InsufficientStrings,
    #[error("carryover yields {carryover} determinants but d_max is {d_max}")]
    CarryoverExceedsLimit { carryover: usize, d_max: usize },
    #[error("determinant does not fit the Hamiltonian spec: {0}")]
    BasisSpecMismatch(String),
    #[error("eigensolver did not converge after {iterations} iterations (best residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("subspace basis is empty")]
    EmptyBasis,
    #[error("FCIDUMP parse error: {0}")]
    Fcidump(String),
    #[error("integral tables violate the required symmetry: {0}")]
    BadIntegrals(String),
    #[error(transparent)]
    Sched(#[from] crate::sched::SchedError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
