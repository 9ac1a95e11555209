//! Kibble-Zurek and coarsening toolkit.
//!
//! The [`scaling`] module is the analytic engine. Three simulators exercise
//! its predictions: [`tfim`] (exact free-fermion ramps of the 1D transverse
//! field Ising chain), [`ising`] (kinetic 2D Ising Monte Carlo under
//! temperature protocols) and [`rydberg`] (exact Krylov evolution of small
//! Rydberg arrays). [`estimators`] measures lengths and fits exponents, and
//! [`cli`] wires everything behind declarative run configs.

pub mod scaling;
pub mod estimators;
pub mod ising;
pub mod tfim;
pub mod rydberg;
pub mod cli;
