//! Charging-price Stackelberg game between a pricing authority and competing
//! ride-hailing fleets.
//!
//! The crate is organised bottom-up:
//!
//! * [`lp`] and [`qp`]: dense simplex and active-set solvers.
//! * [`market`]: the quadratic aggregative game, costs and reward.
//! * [`equilibrium`]: the unique variational Nash equilibrium of the market.
//! * [`exploration`]: price-space bounds that reach every interior equilibrium.
//! * [`bilevel`]: exact big-M MILP/MIQP solution of the pricing problem.
//! * [`policy`], [`trainer`]: Gaussian pricing policy learned as a contextual bandit.
//! * [`scenario`]: synthetic market-state generator and fixtures.

pub mod error;
pub mod bilevel;
pub mod equilibrium;
pub mod exploration;
pub mod lp;
pub mod market;
pub mod policy;
pub mod qp;
pub mod scenario;
pub mod trainer;
mod serde_vec;

pub use error::{Error, Result};
