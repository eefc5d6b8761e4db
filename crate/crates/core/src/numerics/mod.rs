//! Dense linear algebra, special functions and scalar minimisation used by
//! the model fitting code.

mod matrix;
mod optimize;
mod special;

pub use matrix::{solve_spd, Cholesky, DenseMatrix, SpdSolveResult};
pub use optimize::{minimize_scalar, GRID_INTERVALS};
pub use special::{chi_square_sf, erfc, gamma_pq, gamma_q, ln_gamma, normal_cdf, normal_quantile};
