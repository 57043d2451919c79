//! Polynomial chaos building blocks: orthonormal univariate families,
//! Gauss quadrature rules, hyperbolic multi-index sets and tensorized bases.

pub(crate) mod basis;
mod multi_index;
mod poly;
mod quadrature;

pub use basis::{BasisSpec, DesignMatrix};
pub use multi_index::{generate_multi_indices, q_norm, MultiIndex};
pub use poly::PolyFamily;
pub use quadrature::{gauss_nodes, QuadratureRule};
