//! Contractible periodic orbits of 1-periodic Tonelli Lagrangians on flat tori.
//!
//! The pipeline: a [`LagrangianSpec`] is discretized into broken
//! Euler-Lagrange loops ([`broken`]), whose critical points are found by
//! Newton iteration and classified twice, once by Hessian inertia and once
//! by the Conley-Zehnder-Long index of the linearized flow ([`index`]).

pub mod broken;
pub mod campaign;
pub mod config;
pub mod demo;
pub mod error;
pub mod flow;
pub mod homotopy;
pub mod index;
pub mod lagrangian;
pub mod linalg;
pub mod orbits;
pub mod scalar;
pub mod segment;
pub mod verify;

pub use error::{Error, Result};
pub use lagrangian::{FamilyParams, FamilyTag, LagrangianSpec};
pub use scalar::{HyperDual, Jet2, Real};

pub type HyperDual64 = HyperDual<f64>;
pub type HyperDual32 = HyperDual<f32>;
pub type Jet64 = Jet2<f64>;
