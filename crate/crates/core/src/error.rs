use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("parameter {name} must be positive, got {value}")]
    NotPositive { name: &'static str, value: f64 },
    #[error("rho_v^2 + rho_r^2 must be below 1 (rho_v = {rho_v}, rho_r = {rho_r})")]
    Correlation { rho_v: f64, rho_r: f64 },
    #[error("non-finite model parameter")]
    NonFinite,
    #[error("interval for {name} is invalid: [{lo}, {hi}]")]
    BadInterval { name: &'static str, lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LatticeError {
    #[error("conditional mean {mean} at node ({level}, {node}) falls outside the next level span; time step too large")]
    MeanOutOfRange { level: usize, node: usize, mean: f64 },
    #[error("tree needs at least one step and a positive horizon")]
    BadGeometry,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ContractError {
    #[error("withdrawal must be non-negative, got {0}")]
    NegativeWithdrawal(f64),
    #[error("withdrawal {withdrawal} exceeds base benefit {benefit}")]
    WithdrawalExceedsBenefit { withdrawal: f64, benefit: f64 },
    #[error("time {t} outside [0, {maturity}]")]
    TimeOutOfRange { t: f64, maturity: f64 },
    #[error("invalid contract: {0}")]
    Invalid(String),
    #[error("invalid mortality table: {0}")]
    Mortality(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PricingError {
    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),
    #[error("non-finite value produced at time step {step}; unstable configuration")]
    NonFiniteValue { step: usize },
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Contract(#[from] ContractError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeeError<E> {
    #[error("no fee in [0, {alpha_max}] makes the contract fair: {reason}")]
    NoRoot { alpha_max: f64, reason: String },
    #[error("no convergence after {0} iterations")]
    MaxIterations(usize),
    #[error("value function failed: {0}")]
    Valuation(E),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GprError {
    #[error("Gram matrix is not positive definite even after jitter escalation")]
    SingularGram,
    #[error("training set too small: {n} rows for {d} predictors (need at least d + 2)")]
    TooFewPoints { n: usize, d: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite training data")]
    NonFinite,
    #[error("optimizer failure: {0}")]
    Optimizer(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("prediction and truth lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("relative metrics undefined: truth at index {0} is zero")]
    ZeroTruth(usize),
}
