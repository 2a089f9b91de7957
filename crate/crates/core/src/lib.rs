//! GMWB variable annuity pricing under the Heston Hull-White model.
//!
//! * [`lattice`]: moment-matched trinomial trees for the variance and rate factors.
//! * [`hpde`]: hybrid tree / finite-difference backward induction with optimal withdrawals.
//! * [`mc`]: Monte Carlo oracle for fixed withdrawal strategies and bond prices.
//! * [`gpr`]: Gaussian process surrogate with an ARD squared-exponential kernel.
//! * [`qmc`]: Faure sequences for sampling the parameter box.
//! * [`fee`]: no-arbitrage fee by the secant method.

pub mod contract;
pub mod error;
pub mod fee;
pub mod gpr;
pub mod hpde;
pub mod lattice;
pub mod mc;
pub mod model;
pub mod qmc;

pub use contract::{ContractParams, GmwbState, MortalityTable};
pub use error::*;
pub use hpde::{price_gmwb, Convection, GridConfig, Valuation, WithdrawalMode};
pub use model::{HhwParams, Interval, ParameterBox, ParameterPoint};
