//! Melnikov analysis and finite-window chaotic orbit construction for planar
//! piecewise-smooth systems whose equilibrium sits on the switching curve.

pub mod acceptance;
pub mod chaos;
pub mod expr;
pub mod integrator;
pub mod leaves;
pub mod melnikov;
pub mod quadrature;
pub mod recurrence;
pub mod rk;
pub mod spectral;
pub mod system;
