//! Collision dynamics for anisotropic homogeneous potentials: McGehee
//! regularization, collision-manifold equilibria, the local stable manifold
//! of the minimal central configuration, and collision arcs as minimizers of
//! the Maupertuis functional.

pub mod equilibria;
pub mod exec;
pub mod manifold;
pub mod mcgehee;
pub mod potential;
pub mod quadrature;
pub mod scenarios;
pub mod variational;
