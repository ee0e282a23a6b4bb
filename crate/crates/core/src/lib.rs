//! Over-smoothing analysis for graph convolutional networks.
//!
//! A GCN layer maps node features `X` to `σ(P X W)`, where `P` is built from
//! the augmented normalized Laplacian of the graph. The subspace
//! `M = U ⊗ R^C`, with `U` spanned by `D̃^{1/2}u_m` over the connected
//! components, carries no information beyond component membership and degree.
//! Each layer shrinks the distance to `M` by at least the factor `s·λ`
//! (`s` the largest weight singular value, `λ` the largest non-unit eigenvalue
//! magnitude of `P`).
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`graph`] | graphs, edge-list parsing, Erdős–Rényi sampling, components |
//! | [`spectral`] | `Δ̃`, `P`, dense spectra, the invariant basis, `λ` |
//! | [`dynamics`] | layer maps, `d_M`, singular values, trajectories, vector fields |
//! | [`theory`] | thresholds, concentration, Markov chains, constructions |
//! | [`verify`] | seeded property checks aggregated into JSON reports |
//! | [`export`] | CSV and SVG writers |

pub mod dynamics;
pub mod error;
pub mod export;
pub mod graph;
pub mod rng;
pub mod spectral;
pub mod theory;
pub mod tolerance;
pub mod verify;

pub use dynamics::{Signal, Trajectory, WeightStack};
pub use error::{Error, Result};
pub use graph::{
    connected_components, counterexample_graph, erdos_renyi, ComponentLabeling, Graph,
};
pub use spectral::{Spectrum, SubspaceBasis, SymMatrix};
pub use theory::VerificationReport;
pub use tolerance::Tolerances;
