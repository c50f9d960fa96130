//! One-dimensional drift–diffusion with Poissonian resetting to the origin
//! and an absorbing target at `L`: Monte Carlo first-passage sampling and
//! the closed-form mean first-passage time.

mod optimal;
mod sim;
mod theory;

pub use optimal::{optimal_reset_rate, OptimalRate};
pub use sim::{simulate_fpt, FptBatch, LangevinConfig, MfptResult};
pub use theory::{
    fpt_density, laplace_fpt, mfpt_closed_form, mfpt_renewal, peclet, propagator_density,
    reset_beneficial, survival,
};
