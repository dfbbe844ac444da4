//! Numerical toolkit for nonlocal monostable (KPP) equations
//!
//! ```text
//! u_t = ∫ k(y - x) u(t, y) dy - u + u (a0(t, x) - b(t, x) u)
//! ```
//!
//! on the line, with coefficients periodic in time (period `T`) and space
//! (period `p`). The crate computes principal eigenvalues of the tilted
//! period map, the variational spreading speed `c* = inf λ(μ)/μ`, the
//! positive periodic state `u*`, direct front simulations, and periodic
//! traveling waves built by monotone sub/super-solution iteration.

pub mod config;
mod conv;
pub mod error;
pub mod fields;
pub mod frontsim;
mod interp;
pub mod kernel;
pub mod linear;
mod quad;
pub mod spectrum;
pub mod speed;
pub mod steady;
pub mod waves;

pub use config::ProblemConfig;
pub use error::{Error, Result};
pub use fields::{FitnessSpec, FourierMode, FourierTable, PeriodicCell, PeriodicField};
pub use frontsim::{FrontTrace, LineState, SpreadingReport};
pub use kernel::{Direction, Kernel, KernelSpec, TiltedDirection};
pub use linear::LinearBundle;
pub use spectrum::{EigenOptions, EigenResult};
pub use speed::{LambdaSolver, SpeedOptions, SpeedResult};
pub use steady::{PeriodicOrbit, SteadyOptions};
pub use waves::{WaveBounds, WaveOptions, WaveProfile, WaveReport};
