//! Dense linear algebra, distribution helpers and seeded random streams.

mod linalg;
mod rng;
mod stats;

pub use linalg::{kron_vec, solve_spd, sym_eigen, unvec, vec, EigenPair, SymMatrix};
pub use rng::RngStream;
pub use stats::{
    chi2_cdf_1df, chi2_quantile_1df, correlation, mean, population_std, sample_std,
};
