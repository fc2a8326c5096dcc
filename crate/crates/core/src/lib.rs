//! Numerical laboratory for determinantal and permanental point processes
//! on discretized one-dimensional domains.
//!
//! The crate is organized around six pieces:
//!
//! * [`space`] — quadrature grids, reference densities and their log-derivatives
//! * [`kernel`] — weighted kernel operators, spectra, Fredholm determinants,
//!   the J-operator, rescaling and diffeomorphism pushforward
//! * [`alphadet`] — exact alpha-determinants, permanents, Bell numbers
//! * [`law`] — Laplace functionals, Janossy densities, correlation functions,
//!   exact probability mass on small grids, conditional thinning weights
//! * [`sampler`] — exact samplers (spectral, superposition, Gaussian-Cox,
//!   Poisson, conditional thinning) with reproducible seeded streams
//! * [`flow`] — compactly supported vector fields, their flows and Jacobians,
//!   potential energies and configuration-space gradients
//! * [`verify`] — scenario runner producing machine-readable reports
//!
//! All numerical objects are immutable after construction and safe to share
//! across threads; Monte Carlo drivers use one RNG stream per replica and
//! reduce in replica order so results do not depend on thread scheduling.

pub mod alphadet;
pub mod kernel;
pub mod space;

pub use alphadet::{
    alpha_determinant, bell_number, permanent_ryser, permanent_via_partitions, AlphaDetError,
    SetPartition, SetPartitions,
};
pub use kernel::{
    AlphaKind, AlphaParameter, FredholmMethod, JExtension, KernelError, KernelFn, KernelMatrix,
};
pub use space::{DensityModel, GroundSpace, SpaceError};
