//! Deep Ritz training and error certification for (parametric)
//! p-Dirichlet problems.

pub mod activation;
pub mod autodiff;
pub mod energy;
pub mod experiment;
pub mod expr;
pub mod metrics;
pub mod network;
pub mod quadrature;
pub mod reference;
pub mod trainer;
