//! Monte Carlo oracle for the Heston Hull-White model.
//!
//! Log-Euler for the account, full truncation for the variance, exact
//! transition for the rate factor and trapezoidal integration of the short
//! rate. Paths are simulated in fixed-size blocks, each with its own ChaCha
//! stream, and block sums are reduced in block order, so results do not
//! depend on how blocks are scheduled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contract::{cash_flow_unchecked, ContractParams, MortalityTable};
use crate::model::HhwParams;

const BLOCK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub paths: usize,
    pub steps_per_year: usize,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            paths: 100_000,
            steps_per_year: 100,
            seed: 20_190_101,
        }
    }
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

impl Estimate {
    /// True when `value` is within `k` standard errors of the mean.
    pub fn agrees_with(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.std_error
    }
}

/// State of one path at an observation time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathState {
    pub account: f64,
    pub variance: f64,
    pub factor: f64,
    /// `int_0^t r ds`
    pub integrated_rate: f64,
}

/// States of every path at each observation time.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub times: Vec<f64>,
    /// `states[path][observation]`
    pub states: Vec<Vec<PathState>>,
}

/// Fixed withdrawal strategies the oracle can value.
#[derive(Debug, Clone, PartialEq)]
pub enum WithdrawalRule {
    /// `min(G, B)` on every anniversary.
    Static,
    /// Requested amount per anniversary, capped at the remaining benefit.
    Schedule(Vec<f64>),
}

struct Simulator<'a> {
    model: &'a HhwParams,
    alpha: f64,
    dt: f64,
    decay: f64,
    ou_sd: f64,
    rho3: f64,
}

impl<'a> Simulator<'a> {
    fn new(model: &'a HhwParams, alpha: f64, steps_per_year: usize) -> Self {
        let dt = 1.0 / steps_per_year as f64;
        let k = model.k_r;
        Simulator {
            model,
            alpha,
            dt,
            decay: (-k * dt).exp(),
            ou_sd: (-(-2.0 * k * dt).exp_m1() / (2.0 * k)).sqrt(),
            rho3: model.residual_correlation().value(),
        }
    }

    /// Advances `state` by `steps` time steps starting at `t`.
    fn advance<R: Rng>(&self, state: &mut PathState, t: f64, steps: usize, rng: &mut R) {
        let p = self.model;
        let dt = self.dt;
        let mut log_a = state.account.max(f64::MIN_POSITIVE).ln();
        let alive = state.account > 0.0;
        for s in 0..steps {
            let t0 = t + s as f64 * dt;
            let xi_v: f64 = rng.sample(StandardNormal);
            let xi_r: f64 = rng.sample(StandardNormal);
            let xi_3: f64 = rng.sample(StandardNormal);
            let v_plus = state.variance.max(0.0);
            let r0 = p.omega_r * state.factor + p.phi(t0);
            state.factor = state.factor * self.decay + self.ou_sd * xi_r;
            let r1 = p.omega_r * state.factor + p.phi(t0 + dt);
            let int_r = 0.5 * (r0 + r1) * dt;
            state.integrated_rate += int_r;
            let xi_z = p.rho_v * xi_v + p.rho_r * xi_r + self.rho3 * xi_3;
            let sd = (v_plus * dt).sqrt();
            log_a += int_r - (self.alpha + 0.5 * v_plus) * dt + sd * xi_z;
            state.variance += p.k_v * (p.theta_v - v_plus) * dt + p.omega_v * sd * xi_v;
        }
        if alive {
            state.account = log_a.exp();
        }
    }
}

fn block_rng(seed: u64, block: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block as u64);
    rng
}

/// Runs `payoff` on every path and returns the sample mean and standard error.
fn estimate<F>(paths: usize, seed: u64, payoff: F) -> Estimate
where
    F: Fn(&mut ChaCha8Rng) -> f64 + Sync,
{
    let blocks = paths.div_ceil(BLOCK);
    let run_block = |b: usize| {
        let mut rng = block_rng(seed, b);
        let count = BLOCK.min(paths - b * BLOCK);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..count {
            let x = payoff(&mut rng);
            sum += x;
            sum_sq += x * x;
        }
        (sum, sum_sq)
    };
    #[cfg(feature = "parallel")]
    let partial: Vec<(f64, f64)> = (0..blocks).into_par_iter().map(run_block).collect();
    #[cfg(not(feature = "parallel"))]
    let partial: Vec<(f64, f64)> = (0..blocks).map(run_block).collect();
    let (sum, sum_sq) = partial
        .iter()
        .fold((0.0, 0.0), |(a, b), &(x, y)| (a + x, b + y));
    let n = paths as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Estimate {
        mean,
        std_error: (var / n).sqrt(),
    }
}

/// Simulates `config.paths` paths of `(A, v, x, int r)` observed at each
/// time in `times` (years, ascending, multiples of the time step).
pub fn simulate_paths(
    model: &HhwParams,
    alpha: f64,
    initial_account: f64,
    times: &[f64],
    config: &McConfig,
) -> PathEnsemble {
    let sim = Simulator::new(model, alpha, config.steps_per_year);
    let step_index: Vec<usize> = times
        .iter()
        .map(|&t| (t * config.steps_per_year as f64).round() as usize)
        .collect();
    let blocks = config.paths.div_ceil(BLOCK);
    let run_block = |b: usize| {
        let mut rng = block_rng(config.seed, b);
        let count = BLOCK.min(config.paths - b * BLOCK);
        (0..count)
            .map(|_| {
                let mut state = PathState {
                    account: initial_account,
                    variance: model.v0,
                    factor: 0.0,
                    integrated_rate: 0.0,
                };
                let mut done = 0;
                step_index
                    .iter()
                    .map(|&target| {
                        sim.advance(&mut state, done as f64 * sim.dt, target - done, &mut rng);
                        done = target;
                        state
                    })
                    .collect::<Vec<_>>()
            })
            .collect::<Vec<_>>()
    };
    #[cfg(feature = "parallel")]
    let per_block: Vec<Vec<Vec<PathState>>> = (0..blocks).into_par_iter().map(run_block).collect();
    #[cfg(not(feature = "parallel"))]
    let per_block: Vec<Vec<Vec<PathState>>> = (0..blocks).map(run_block).collect();
    PathEnsemble {
        times: times.to_vec(),
        states: per_block.into_iter().flatten().collect(),
    }
}

/// `E[exp(-int_0^t r ds)]` for each `t` in `maturities`, from one set of paths.
pub fn bond_prices(model: &HhwParams, maturities: &[f64], config: &McConfig) -> Vec<Estimate> {
    maturities
        .iter()
        .map(|&t| {
            let steps = (t * config.steps_per_year as f64).round() as usize;
            let sim = Simulator::new(model, 0.0, config.steps_per_year);
            estimate(config.paths, config.seed, |rng| {
                let mut state = PathState {
                    account: 0.0,
                    variance: model.v0,
                    factor: 0.0,
                    integrated_rate: 0.0,
                };
                sim.advance(&mut state, 0.0, steps, rng);
                (-state.integrated_rate).exp()
            })
        })
        .collect()
}

/// Discounted account value with no withdrawals, `E[exp(-int r) A_T]`.
pub fn discounted_account(model: &HhwParams, alpha: f64, premium: f64, horizon: f64, config: &McConfig) -> Estimate {
    let steps = (horizon * config.steps_per_year as f64).round() as usize;
    let sim = Simulator::new(model, alpha, config.steps_per_year);
    estimate(config.paths, config.seed, |rng| {
        let mut state = PathState {
            account: premium,
            variance: model.v0,
            factor: 0.0,
            integrated_rate: 0.0,
        };
        sim.advance(&mut state, 0.0, steps, rng);
        (-state.integrated_rate).exp() * state.account
    })
}

/// Mortality-weighted value of a GMWB under a fixed withdrawal rule.
pub fn gmwb_price(
    model: &HhwParams,
    contract: &ContractParams,
    mortality: &MortalityTable,
    rule: &WithdrawalRule,
    config: &McConfig,
) -> Estimate {
    gmwb_price_with_account(model, contract, mortality, rule, config, contract.premium)
}

pub fn gmwb_price_with_account(
    model: &HhwParams,
    contract: &ContractParams,
    mortality: &MortalityTable,
    rule: &WithdrawalRule,
    config: &McConfig,
    initial_account: f64,
) -> Estimate {
    let years = contract.maturity as usize;
    let sim = Simulator::new(model, contract.alpha, config.steps_per_year);
    let g = contract.guaranteed_withdrawal();
    let kappa = contract.kappa;
    let spy = config.steps_per_year;
    estimate(config.paths, config.seed, |rng| {
        let mut state = PathState {
            account: initial_account,
            variance: model.v0,
            factor: 0.0,
            integrated_rate: 0.0,
        };
        let mut benefit = contract.premium;
        let mut value = 0.0;
        for i in 1..=years {
            sim.advance(&mut state, (i - 1) as f64, spy, rng);
            let disc = (-state.integrated_rate).exp();
            let survive = mortality.survivor_at(i);
            let died = mortality.survivor_at(i - 1) - survive;
            let db = state.account.max((1.0 - kappa) * benefit);
            let w = match rule {
                WithdrawalRule::Static => g.min(benefit),
                WithdrawalRule::Schedule(amounts) => amounts.get(i - 1).copied().unwrap_or(0.0).clamp(0.0, benefit),
            };
            value += disc * (died * db + survive * cash_flow_unchecked(w, g, kappa));
            state.account = (state.account - w).max(0.0);
            benefit -= w;
            if i == years {
                value += disc * survive * state.account.max((1.0 - kappa) * benefit);
            }
        }
        value
    })
}

/// Static-strategy price, `w = min(G, B)` on every anniversary.
pub fn static_gmwb_price(
    model: &HhwParams,
    contract: &ContractParams,
    mortality: &MortalityTable,
    config: &McConfig,
) -> Estimate {
    gmwb_price(model, contract, mortality, &WithdrawalRule::Static, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(paths: usize) -> McConfig {
        McConfig {
            paths,
            steps_per_year: 50,
            seed: 7,
        }
    }

    #[test]
    fn seed_determinism() {
        let p = HhwParams::REFERENCE;
        let c = ContractParams::reference();
        let m = MortalityTable::zero(10);
        let a = static_gmwb_price(&p, &c, &m, &small(3000));
        let b = static_gmwb_price(&p, &c, &m, &small(3000));
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
    }

    #[test]
    fn near_deterministic_limit_matches_hand_recursion() {
        // Vanishing volatilities: cash flows follow a deterministic recursion.
        let p = HhwParams {
            v0: 1e-16,
            k_v: 1.0,
            theta_v: 1e-16,
            omega_v: 1e-9,
            rho_v: 0.0,
            r0: 0.03,
            k_r: 0.5,
            omega_r: 1e-12,
            rho_r: 0.0,
        };
        let c = ContractParams {
            premium: 100.0,
            maturity: 5,
            alpha: 0.02,
            kappa: 0.1,
            guarantee: None,
        };
        let m = MortalityTable::new(vec![0.01, 0.02, 0.02, 0.03, 0.03]).unwrap();
        let est = static_gmwb_price(&p, &c, &m, &small(64));
        let g = 20.0;
        let mut a = 100.0f64;
        let mut b = 100.0f64;
        let mut value = 0.0;
        for i in 1..=5 {
            a *= (0.03f64 - 0.02).exp();
            let disc = (-0.03 * i as f64).exp();
            let died = m.survivor_at(i - 1) - m.survivor_at(i);
            value += disc * (died * a.max(0.9 * b) + m.survivor_at(i) * g);
            a = (a - g).max(0.0);
            b -= g;
            if i == 5 {
                value += disc * m.survivor_at(5) * a.max(0.9 * b);
            }
        }
        assert!((est.mean - value).abs() < 1e-6, "{} vs {value}", est.mean);
    }

    #[test]
    fn discounted_account_is_a_martingale_under_fee_drag() {
        let p = HhwParams::REFERENCE;
        let est = discounted_account(&p, 0.035, 100.0, 5.0, &small(20_000));
        let target = 100.0 * (-0.035f64 * 5.0).exp();
        assert!(est.agrees_with(target, 3.0), "{est:?} vs {target}");
    }

    #[test]
    fn variance_mean_matches_cir() {
        let p = HhwParams {
            v0: 0.09,
            ..HhwParams::REFERENCE
        };
        let ens = simulate_paths(&p, 0.0, 100.0, &[1.0], &small(20_000));
        let n = ens.states.len() as f64;
        let vals: Vec<f64> = ens.states.iter().map(|s| s[0].variance).collect();
        let mean = vals.iter().sum::<f64>() / n;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let exact = p.variance_mean(1.0);
        assert!((mean - exact).abs() < 3.0 * sd / n.sqrt() + 2e-4, "{mean} vs {exact}");
    }

    #[test]
    fn guarantee_floor_with_no_withdrawals() {
        let p = HhwParams::REFERENCE;
        let c = ContractParams {
            guarantee: Some(0.0),
            kappa: 0.0,
            ..ContractParams::reference()
        };
        let m = MortalityTable::zero(10);
        let est = gmwb_price(&p, &c, &m, &WithdrawalRule::Schedule(vec![0.0; 10]), &small(10_000));
        let floor = 100.0 * (-0.035f64 * 10.0).exp();
        assert!(est.mean >= floor * (1.0 - 3.0 * est.std_error / est.mean));
    }

    #[test]
    fn standard_error_scales_with_paths() {
        let p = HhwParams::REFERENCE;
        let c = ContractParams::reference();
        let m = MortalityTable::zero(10);
        let cfg = McConfig {
            paths: 10_000,
            steps_per_year: 10,
            seed: 3,
        };
        let a = static_gmwb_price(&p, &c, &m, &cfg);
        let b = static_gmwb_price(&p, &c, &m, &McConfig { paths: 40_000, ..cfg });
        let ratio = a.std_error / b.std_error;
        assert!((ratio - 2.0).abs() < 0.4, "ratio {ratio}");
    }
}
