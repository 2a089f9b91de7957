//! No-arbitrage fee: the `alpha` at which the contract is worth its premium.
//!
//! The value function is any map `alpha -> V(P, P, v0, r0, 0)`, direct
//! pricing or a surrogate. It must be continuous and decreasing in `alpha`.

use serde::{Deserialize, Serialize};

use crate::error::FeeError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeeConfig {
    pub first: f64,
    pub second: f64,
    /// Search range is `[0, alpha_max]`.
    pub alpha_max: f64,
    /// Stop when `|V - P| <= tol * P`.
    pub tol: f64,
    pub max_iterations: usize,
}

impl Default for FeeConfig {
    fn default() -> Self {
        FeeConfig {
            first: 0.02,
            second: 0.06,
            alpha_max: 0.10,
            tol: 1e-3,
            max_iterations: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeeSolution {
    pub alpha: f64,
    /// Contract value at `alpha`.
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

impl FeeSolution {
    pub fn bps(&self) -> f64 {
        self.alpha * 1e4
    }
}

/// Points with `V > P` (lo) and `V < P` (hi) seen so far.
#[derive(Debug, Clone, Copy)]
struct Bracket {
    lo: f64,
    hi: f64,
}

struct Counted<F> {
    f: F,
    premium: f64,
    evaluations: usize,
    bracket: (Option<f64>, Option<f64>),
}

impl<F, E> Counted<F>
where
    F: FnMut(f64) -> Result<f64, E>,
{
    /// `V(alpha) - P`
    fn excess(&mut self, alpha: f64) -> Result<(f64, f64), FeeError<E>> {
        let v = (self.f)(alpha).map_err(FeeError::Valuation)?;
        self.evaluations += 1;
        let g = v - self.premium;
        if g > 0.0 {
            self.bracket.0 = Some(self.bracket.0.map_or(alpha, |lo| lo.max(alpha)));
        } else if g < 0.0 {
            self.bracket.1 = Some(self.bracket.1.map_or(alpha, |hi| hi.min(alpha)));
        }
        Ok((v, g))
    }

    fn solution(&self, alpha: f64, value: f64, iterations: usize) -> FeeSolution {
        FeeSolution {
            alpha,
            value,
            iterations,
            evaluations: self.evaluations,
        }
    }

    /// Evaluates the ends of the search range until a sign change is known.
    fn ensure_bracket(&mut self, cfg: &FeeConfig) -> Result<Bracket, FeeError<E>> {
        if self.bracket.0.is_none() {
            let (_, g) = self.excess(0.0)?;
            if g < 0.0 {
                return Err(FeeError::NoRoot {
                    alpha_max: cfg.alpha_max,
                    reason: "contract is worth less than the premium even without a fee".into(),
                });
            }
            if g == 0.0 {
                self.bracket.0 = Some(0.0);
            }
        }
        if self.bracket.1.is_none() {
            let (_, g) = self.excess(cfg.alpha_max)?;
            if g > 0.0 {
                return Err(FeeError::NoRoot {
                    alpha_max: cfg.alpha_max,
                    reason: "contract is still worth more than the premium at the largest fee".into(),
                });
            }
            if g == 0.0 {
                self.bracket.1 = Some(cfg.alpha_max);
            }
        }
        match self.bracket {
            (Some(lo), Some(hi)) => Ok(Bracket { lo, hi }),
            _ => unreachable!("both ends were evaluated"),
        }
    }
}

/// Secant iteration from `cfg.first`, `cfg.second`; a step that leaves the
/// known bracket (or `[0, alpha_max]`) is replaced by bisection of the bracket.
pub fn solve_fee<F, E>(premium: f64, cfg: &FeeConfig, f: F) -> Result<FeeSolution, FeeError<E>>
where
    F: FnMut(f64) -> Result<f64, E>,
{
    let tol = cfg.tol * premium;
    let mut c = Counted {
        f,
        premium,
        evaluations: 0,
        bracket: (None, None),
    };
    let (mut x0, (v0, mut g0)) = (cfg.first, c.excess(cfg.first)?);
    if g0.abs() <= tol {
        return Ok(c.solution(x0, v0, 0));
    }
    let (mut x1, (v1, mut g1)) = (cfg.second, c.excess(cfg.second)?);
    if g1.abs() <= tol {
        return Ok(c.solution(x1, v1, 0));
    }
    for it in 1..=cfg.max_iterations {
        let secant = x1 - g1 * (x1 - x0) / (g1 - g0);
        let lo = c.bracket.0.unwrap_or(0.0);
        let hi = c.bracket.1.unwrap_or(cfg.alpha_max);
        let x2 = if secant.is_finite() && secant > lo && secant < hi {
            secant
        } else {
            let b = c.ensure_bracket(cfg)?;
            0.5 * (b.lo + b.hi)
        };
        let (v2, g2) = c.excess(x2)?;
        if g2.abs() <= tol {
            return Ok(c.solution(x2, v2, it));
        }
        (x0, g0, x1, g1) = (x1, g1, x2, g2);
    }
    Err(FeeError::MaxIterations(cfg.max_iterations))
}

/// Plain bisection on `[0, alpha_max]`.
pub fn bisect_fee<F, E>(premium: f64, cfg: &FeeConfig, f: F) -> Result<FeeSolution, FeeError<E>>
where
    F: FnMut(f64) -> Result<f64, E>,
{
    let tol = cfg.tol * premium;
    let mut c = Counted {
        f,
        premium,
        evaluations: 0,
        bracket: (None, None),
    };
    let Bracket { mut lo, mut hi } = c.ensure_bracket(cfg)?;
    for it in 1..=cfg.max_iterations {
        let mid = 0.5 * (lo + hi);
        let (v, g) = c.excess(mid)?;
        if g.abs() <= tol {
            return Ok(c.solution(mid, v, it));
        }
        if g > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(FeeError::MaxIterations(cfg.max_iterations))
}
