//! Commutation synthesis for switched reluctance motors.
//!
//! The crate builds commutation functions that split a requested torque over
//! three coils so that the torque produced between control samples deviates
//! as little as possible from the request, at a tunable power cost:
//!
//! * [`motor`] holds the torque-gain model `g(phi)`.
//! * [`commutation`] defines the commutation interface and conventional
//!   torque-sharing baselines.
//! * [`ripple`] assembles and solves the convex ripple/power program on a grid.
//! * [`gp`] turns the grid solution into a continuous periodic function with
//!   Gaussian process regression.
//! * [`sim`] runs sampled-data open- and closed-loop simulations.
//! * [`table_io`] reads and writes solution tables.

pub mod commutation;
pub mod gp;
pub mod motor;
pub mod ripple;
pub mod sim;
pub mod table_io;

pub use commutation::{CommutationFunction, CommutationTable, ConventionalTsf, TsfKind};
pub use gp::{GpCommutation, GpModel, Hyperparams, MaternSpec};
pub use motor::{Harmonic, MotorGeometry, TorqueGainModel, COILS};
pub use ripple::{RippleProblem, RippleSolution, SolverOptions, TorqueSign};
pub use sim::{DiscreteController, ReferenceProfile, SimOptions, SimResult};
