//! Hybrid tree / finite-difference pricer for the GMWB contract.
//!
//! Variance and rate factor move on trinomial trees; for every pair of tree
//! nodes the contract value is kept on a grid in
//! `z = ln(A / P) - (rho_v / omega_v) v` for each base-benefit grid level,
//! plus one extra value per benefit level for an exhausted account (`A = 0`).
//!
//! One backward time step, for each node pair `(v, x)`:
//!
//! 1. average the next-level surfaces over the product of the two tree
//!    branches, shifting the `z` argument by `rho_r sqrt(v) (x' - E[x'|x])`
//!    so the rate innovation enters the asset;
//! 2. take one theta-scheme step of
//!    `u_t + mu u_z + 0.5 rho3^2 v u_zz - r u = 0` with the node's `v` and `r`.
//!
//! The drift `mu` is not the continuous one. It is set so that steps 1 and 2
//! together carry `e^{z + c v}` forward at exactly `e^{(r - alpha) dt}` under the
//! discrete branch distributions; with the continuous drift the account
//! picks up an O(dt) spurious growth.
//!
//! At each anniversary the withdrawal operator replaces the surface by the
//! best of the admissible withdrawals plus the death benefit of the cohort
//! that died during the year.

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contract::{cash_flow_unchecked, ContractParams, MortalityTable};
use crate::error::PricingError;
use crate::lattice::{build_tree, Process, TrinomialTree};
use crate::model::HhwParams;

/// Discretization of the pricer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    /// Total time steps; must be a multiple of the maturity in years.
    pub time_steps: usize,
    /// Points on the `z` grid.
    pub space_steps: usize,
    /// Base-benefit grid has `benefit_steps + 1` uniform levels on `[0, P]`.
    pub benefit_steps: usize,
    /// Half-width of the `z` domain in units of `sqrt(vbar T)`, where
    /// `vbar = (v0^4 + theta_v^4)^(1/4)` is a smooth stand-in for `max(v0, theta_v)`.
    pub half_width: f64,
    /// Fully implicit steps taken right after each anniversary.
    pub rannacher_steps: usize,
    /// Tree nodes whose forward probability is below this are not priced;
    /// branches into them read the nearest priced node.
    pub prune_tolerance: f64,
    #[serde(default)]
    pub convection: Convection,
}

/// Discretization of the drift term in `z`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Convection {
    /// Central differences with the diffusion raised to
    /// `(mu dz / 2) coth(mu dz / 2D)`: monotone at any cell Peclet number
    /// and continuous in the coefficients.
    Fitted,
    /// Central differences with the diffusion raised to
    /// `(D^4 + (mu dz / 2)^4)^(1/4)`: monotone, smooth in the coefficients, and
    /// close to plain central differences at low cell Peclet number.
    #[default]
    Blended,
    /// Central differences up to cell Peclet number 2, one-sided beyond.
    Upwind,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            time_steps: 250,
            space_steps: 250,
            benefit_steps: 100,
            half_width: 6.0,
            rannacher_steps: 2,
            prune_tolerance: 1e-12,
            convection: Convection::Blended,
        }
    }
}

impl GridConfig {
    /// `steps` time steps and `steps` space points, everything else default.
    pub fn square(steps: usize) -> Self {
        GridConfig {
            time_steps: steps,
            space_steps: steps,
            ..GridConfig::default()
        }
    }

    pub fn with_benefit_steps(mut self, nb: usize) -> Self {
        self.benefit_steps = nb;
        self
    }

    /// Rounds `time_steps` up to the next multiple of `maturity`, so a
    /// nominal 125-step grid on a 10-year contract runs with 130 steps.
    pub fn aligned(mut self, maturity: u32) -> Self {
        let t = maturity.max(1) as usize;
        self.time_steps = self.time_steps.max(1).div_ceil(t) * t;
        self
    }

    pub fn validate(&self, maturity: u32) -> Result<(), PricingError> {
        let t = maturity as usize;
        if t == 0 || self.time_steps == 0 || self.time_steps % t != 0 {
            return Err(PricingError::GridTooCoarse(format!(
                "{} time steps do not align with {} anniversaries",
                self.time_steps, maturity
            )));
        }
        if self.space_steps < 3 {
            return Err(PricingError::GridTooCoarse("need at least 3 z points".into()));
        }
        if self.benefit_steps == 0 {
            return Err(PricingError::GridTooCoarse("need at least one benefit step".into()));
        }
        if !(self.half_width > 0.0) {
            return Err(PricingError::GridTooCoarse("half width must be positive".into()));
        }
        Ok(())
    }
}

/// Withdrawal policy applied at anniversaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WithdrawalMode {
    /// Holder withdraws whatever maximizes the contract value.
    Optimal,
    /// Holder always takes `min(G, B)`.
    Static,
}

impl std::str::FromStr for WithdrawalMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "optimal" => Ok(WithdrawalMode::Optimal),
            "static" => Ok(WithdrawalMode::Static),
            other => Err(format!("unknown withdrawal mode {other:?}")),
        }
    }
}

/// Price and Delta at inception, plus the value curve in the account value.
#[derive(Debug, Clone, PartialEq)]
pub struct Valuation {
    pub price: f64,
    pub delta: f64,
    /// Value with an exhausted account (`A = 0`, `B = P`).
    pub exhausted: f64,
    /// Account values of the root `z` grid.
    pub accounts: Vec<f64>,
    /// Contract values on `accounts` at `B = P`.
    pub values: Vec<f64>,
}

/// Prices the contract at inception (`A = B = P`).
pub fn price_gmwb(
    model: &HhwParams,
    contract: &ContractParams,
    mortality: &MortalityTable,
    grid: &GridConfig,
    mode: WithdrawalMode,
) -> Result<Valuation, PricingError> {
    price_gmwb_with_account(model, contract, mortality, grid, mode, contract.premium)
}

/// Prices with initial account value `account` and base benefit `P`. The
/// `z` grid is centred on the given account value.
pub fn price_gmwb_with_account(
    model: &HhwParams,
    contract: &ContractParams,
    mortality: &MortalityTable,
    grid: &GridConfig,
    mode: WithdrawalMode,
    account: f64,
) -> Result<Valuation, PricingError> {
    model.validate()?;
    contract.validate()?;
    grid.validate(contract.maturity)?;
    let mortality = mortality.for_maturity(contract.maturity)?;
    if !(account > 0.0) {
        return Err(PricingError::GridTooCoarse("initial account value must be positive".into()));
    }
    Engine::new(model, contract, &mortality, grid, mode, account)?.run()
}

/// Delta by central bump of the initial account value, `B` held at `P`.
pub fn bump_delta(
    model: &HhwParams,
    contract: &ContractParams,
    mortality: &MortalityTable,
    grid: &GridConfig,
    mode: WithdrawalMode,
    rel_bump: f64,
) -> Result<f64, PricingError> {
    let a0 = contract.premium;
    let up = price_gmwb_with_account(model, contract, mortality, grid, mode, a0 * (1.0 + rel_bump))?;
    let down = price_gmwb_with_account(model, contract, mortality, grid, mode, a0 * (1.0 - rel_bump))?;
    Ok((up.price - down.price) / (2.0 * a0 * rel_bump))
}

/// Contract values for every node pair of one tree level.
struct Level {
    v_lo: usize,
    v_hi: usize,
    x_lo: usize,
    x_hi: usize,
    /// `[pair][benefit][z]`
    grid: Vec<f64>,
    /// `[pair][benefit]`, the `A = 0` slice.
    exhausted: Vec<f64>,
}

impl Level {
    fn nx(&self) -> usize {
        self.x_hi - self.x_lo + 1
    }

    fn pair_index(&self, jv: usize, jx: usize) -> usize {
        let jv = jv.clamp(self.v_lo, self.v_hi);
        let jx = jx.clamp(self.x_lo, self.x_hi);
        (jv - self.v_lo) * self.nx() + (jx - self.x_lo)
    }
}

struct Engine<'a> {
    model: &'a HhwParams,
    mortality: &'a MortalityTable,
    mode: WithdrawalMode,
    premium: f64,
    kappa: f64,
    alpha: f64,
    guarantee: f64,
    steps_per_year: usize,
    steps: usize,
    dt: f64,
    vtree: TrinomialTree,
    xtree: TrinomialTree,
    v_windows: Vec<(usize, usize)>,
    x_windows: Vec<(usize, usize)>,
    /// `rho_v / omega_v`
    vol_loading: f64,
    rho3_sq: f64,
    m: usize,
    nb1: usize,
    z: Vec<f64>,
    dz: f64,
    center: usize,
    benefits: Vec<f64>,
    db: f64,
    rannacher: usize,
    convection: Convection,
}

impl<'a> Engine<'a> {
    fn new(
        model: &'a HhwParams,
        contract: &ContractParams,
        mortality: &'a MortalityTable,
        grid: &GridConfig,
        mode: WithdrawalMode,
        account: f64,
    ) -> Result<Self, PricingError> {
        let horizon = f64::from(contract.maturity);
        let steps = grid.time_steps;
        let vtree = build_tree(
            &Process::Cir {
                reversion: model.k_v,
                long_run: model.theta_v,
                vol_of_vol: model.omega_v,
                initial: model.v0,
            },
            steps,
            horizon,
        )?;
        let xtree = build_tree(&Process::OrnsteinUhlenbeck { reversion: model.k_r }, steps, horizon)?;
        let v_windows = vtree.windows(grid.prune_tolerance);
        let x_windows = xtree.windows(grid.prune_tolerance);

        let vol_loading = model.rho_v / model.omega_v;
        let m = grid.space_steps;
        let center = (m - 1) / 2;
        // smooth in v0 so the price has no kink where v0 crosses theta_v
        let vbar = (model.v0.powi(4) + model.theta_v.powi(4)).powf(0.25);
        let half = grid.half_width * (vbar * horizon).sqrt();
        let dz = 2.0 * half / (m - 1) as f64;
        let z_center = (account / contract.premium).ln() - vol_loading * model.v0;
        let z = (0..m)
            .map(|j| z_center + (j as f64 - center as f64) * dz)
            .collect();
        let nb = grid.benefit_steps;
        let db = contract.premium / nb as f64;
        let benefits = (0..=nb).map(|k| k as f64 * db).collect();
        let rho3 = model.residual_correlation().value();
        Ok(Engine {
            model,
            mortality,
            mode,
            premium: contract.premium,
            kappa: contract.kappa,
            alpha: contract.alpha,
            guarantee: contract.guaranteed_withdrawal(),
            steps_per_year: steps / contract.maturity as usize,
            steps,
            dt: horizon / steps as f64,
            vtree,
            xtree,
            v_windows,
            x_windows,
            vol_loading,
            rho3_sq: rho3 * rho3,
            m,
            nb1: nb + 1,
            z,
            dz,
            center,
            benefits,
            db,
            rannacher: grid.rannacher_steps,
            convection: grid.convection,
        })
    }

    fn empty_level(&self, n: usize) -> Level {
        let (v_lo, v_hi) = self.v_windows[n];
        let (x_lo, x_hi) = self.x_windows[n];
        let pairs = (v_hi - v_lo + 1) * (x_hi - x_lo + 1);
        Level {
            v_lo,
            v_hi,
            x_lo,
            x_hi,
            grid: vec![0.0; pairs * self.nb1 * self.m],
            exhausted: vec![0.0; pairs * self.nb1],
        }
    }

    fn run(&self) -> Result<Valuation, PricingError> {
        let n_last = self.steps;
        let mut level = self.empty_level(n_last);
        self.terminal_anniversary(&mut level);
        check_finite(&level, n_last)?;
        let mut since_anniversary = 0;
        for n in (0..n_last).rev() {
            let theta = if since_anniversary < self.rannacher { 1.0 } else { 0.5 };
            let mut current = self.empty_level(n);
            self.backward_step(n, &level, &mut current, theta);
            since_anniversary += 1;
            if n > 0 && n % self.steps_per_year == 0 {
                let i = n / self.steps_per_year;
                self.anniversary(n, i, &mut current);
                since_anniversary = 0;
            }
            check_finite(&current, n)?;
            level = current;
        }
        // Root pair, benefit P.
        let block = (self.nb1 - 1) * self.m;
        let u = &level.grid[block..block + self.m];
        let c = self.center;
        let a0 = self.account_at(c, self.model.v0);
        let delta = (u[c + 1] - u[c - 1]) / (2.0 * self.dz) / a0;
        let accounts = (0..self.m).map(|j| self.account_at(j, self.model.v0)).collect();
        Ok(Valuation {
            price: u[c],
            delta,
            exhausted: level.exhausted[self.nb1 - 1],
            accounts,
            values: u.to_vec(),
        })
    }

    fn account_at(&self, j: usize, v: f64) -> f64 {
        self.premium * (self.z[j] + self.vol_loading * v).exp()
    }

    fn pairs(&self, lvl: &Level) -> Vec<(usize, usize)> {
        (lvl.v_lo..=lvl.v_hi)
            .flat_map(|jv| (lvl.x_lo..=lvl.x_hi).map(move |jx| (jv, jx)))
            .collect()
    }

    /// Tree expectation followed by one finite-difference step.
    fn backward_step(&self, n: usize, next: &Level, out: &mut Level, theta: f64) {
        let pairs = self.pairs(out);
        let block = self.nb1 * self.m;
        let work = |(((jv, jx), grid), exhausted): (((usize, usize), &mut [f64]), &mut [f64])| {
            self.step_pair(n, jv, jx, next, grid, exhausted, theta);
        };
        #[cfg(feature = "parallel")]
        pairs
            .par_iter()
            .copied()
            .zip(out.grid.par_chunks_mut(block))
            .zip(out.exhausted.par_chunks_mut(self.nb1))
            .for_each(work);
        #[cfg(not(feature = "parallel"))]
        pairs
            .iter()
            .copied()
            .zip(out.grid.chunks_mut(block))
            .zip(out.exhausted.chunks_mut(self.nb1))
            .for_each(work);
    }

    #[allow(clippy::too_many_arguments)]
    fn step_pair(
        &self,
        n: usize,
        jv: usize,
        jx: usize,
        next: &Level,
        out: &mut [f64],
        exhausted: &mut [f64],
        theta: f64,
    ) {
        let m = self.m;
        let nb1 = self.nb1;
        let block = nb1 * m;
        let v = self.vtree.node_value(n, jv);
        let x = self.xtree.node_value(n, jx);
        let bv = self.vtree.branch(n, jv);
        let bx = self.xtree.branch(n, jx);
        let t = n as f64 * self.dt;
        let p = self.model;
        let r = p.short_rate(x, t);

        // 1. Expectation over the branches.
        let mut mixed = vec![0.0; block];
        let sqrt_v = v.sqrt();
        out.fill(0.0);
        exhausted.fill(0.0);
        for (&tx, &px) in bx.targets.iter().zip(&bx.probs) {
            if px == 0.0 {
                continue;
            }
            mixed.fill(0.0);
            for (&tv, &pv) in bv.targets.iter().zip(&bv.probs) {
                if pv == 0.0 {
                    continue;
                }
                let src = next.pair_index(tv, tx);
                let g = &next.grid[src * block..(src + 1) * block];
                for (acc, &val) in mixed.iter_mut().zip(g) {
                    *acc += pv * val;
                }
                let e = &next.exhausted[src * nb1..(src + 1) * nb1];
                for (acc, &val) in exhausted.iter_mut().zip(e) {
                    *acc += px * pv * val;
                }
            }
            let innovation = self.xtree.node_value(n + 1, tx) - bx.moments.mean;
            let shift = p.rho_r * sqrt_v * innovation / self.dz;
            let k = shift.floor();
            let frac = shift - k;
            let k = k as isize;
            for b in 0..nb1 {
                let src = &mixed[b * m..(b + 1) * m];
                let dst = &mut out[b * m..(b + 1) * m];
                for (j, d) in dst.iter_mut().enumerate() {
                    *d += px * sample_shifted(src, j as isize + k, frac);
                }
            }
        }

        // 2. Theta-scheme step in z.
        let diffusion = 0.5 * self.rho3_sq * v;
        // Compensator chosen so that the tree expectation followed by the
        // z step maps e^{z + c v} to e^{(r - alpha) dt} e^{z + c v} exactly
        // in the branch moments.
        let c = self.vol_loading;
        let ev: f64 = bv
            .targets
            .iter()
            .zip(&bv.probs)
            .map(|(&tv, &pv)| pv * (c * (self.vtree.node_value(n + 1, tv) - v)).exp())
            .sum();
        let ex: f64 = bx
            .targets
            .iter()
            .zip(&bx.probs)
            .map(|(&tx, &px)| {
                let innovation = self.xtree.node_value(n + 1, tx) - bx.moments.mean;
                px * (p.rho_r * sqrt_v * innovation).exp()
            })
            .sum();
        let drift = r - self.alpha - diffusion - (ev.ln() + ex.ln()) / self.dt;
        let ops = Operator::new(drift, diffusion, r, self.dz, m, self.convection);
        let solver = ops.implicit_factor(theta * self.dt);
        let explicit = (1.0 - theta) * self.dt;
        let mut rhs = vec![0.0; m];
        for b in 0..nb1 {
            let row = &mut out[b * m..(b + 1) * m];
            ops.apply_explicit(row, explicit, &mut rhs);
            solver.solve(&rhs, row);
        }
        let discount = (1.0 - explicit * r) / (1.0 + theta * self.dt * r);
        for e in exhausted.iter_mut() {
            *e *= discount;
        }
    }

    /// `V(T-)` from the terminal payoff `R(T) FP`.
    fn terminal_anniversary(&self, level: &mut Level) {
        let n = self.steps;
        let i = self.mortality.years();
        let survive = self.mortality.survivor_at(i);
        let kappa = self.kappa;
        let benefits = &self.benefits;
        let cont = |a: f64, b: usize| survive * a.max((1.0 - kappa) * benefits[b]);
        self.for_each_pair(level, |jv, grid, exhausted| {
            let v = self.vtree.node_value(n, jv);
            let accounts: Vec<f64> = (0..self.m).map(|j| self.account_at(j, v)).collect();
            let on_grid = |j: usize, d: usize, k: usize| cont((accounts[j] - d as f64 * self.db).max(0.0), k);
            let at = |j: usize, w: f64, k: usize| cont((accounts[j] - w).max(0.0), k);
            self.withdrawal_operator(i, &accounts, grid, exhausted, on_grid, at, |k| cont(0.0, k));
        });
    }

    /// Replaces `V(t_i+)` by `V(t_i-)` in place.
    fn anniversary(&self, n: usize, i: usize, level: &mut Level) {
        let m = self.m;
        self.for_each_pair(level, |jv, grid, exhausted| {
            let v = self.vtree.node_value(n, jv);
            let after = grid.to_vec();
            let after_exhausted = exhausted.to_vec();
            let accounts: Vec<f64> = (0..m).map(|j| self.account_at(j, v)).collect();
            let a_first = accounts[0];
            let z0 = self.z[0] + self.vol_loading * v;
            let land = |a: f64| -> Landing {
                if a <= 0.0 {
                    Landing::Exhausted
                } else if a <= a_first {
                    Landing::Below(a / a_first)
                } else {
                    let pos = ((a / self.premium).ln() - z0) / self.dz;
                    let k = (pos.floor() as usize).min(m - 2);
                    Landing::On(k, pos - k as f64)
                }
            };
            // landing[d * m + j]: where A_j - d db falls on the z grid
            let landing: Vec<Landing> = (0..self.nb1)
                .flat_map(|d| accounts.iter().map(move |&a| (a, d)))
                .map(|(a, d)| land(a - d as f64 * self.db))
                .collect();
            let read = |l: Landing, k: usize| -> f64 {
                let zero = after_exhausted[k];
                let row = &after[k * m..(k + 1) * m];
                match l {
                    Landing::Exhausted => zero,
                    Landing::Below(f) => zero + f * (row[0] - zero),
                    Landing::On(j, f) => row[j] + f * (row[j + 1] - row[j]),
                }
            };
            let on_grid = |j: usize, d: usize, k: usize| read(landing[d * m + j], k);
            let at = |j: usize, w: f64, k: usize| read(land(accounts[j] - w), k);
            self.withdrawal_operator(i, &accounts, grid, exhausted, on_grid, at, |k| after_exhausted[k]);
        });
    }

    fn for_each_pair<F>(&self, level: &mut Level, f: F)
    where
        F: Fn(usize, &mut [f64], &mut [f64]) + Sync + Send,
    {
        let pairs = self.pairs(level);
        let block = self.nb1 * self.m;
        let work = |(((jv, _jx), grid), exhausted): (((usize, usize), &mut [f64]), &mut [f64])| {
            f(jv, grid, exhausted)
        };
        #[cfg(feature = "parallel")]
        pairs
            .par_iter()
            .copied()
            .zip(level.grid.par_chunks_mut(block))
            .zip(level.exhausted.par_chunks_mut(self.nb1))
            .for_each(work);
        #[cfg(not(feature = "parallel"))]
        pairs
            .iter()
            .copied()
            .zip(level.grid.chunks_mut(block))
            .zip(level.exhausted.chunks_mut(self.nb1))
            .for_each(work);
    }

    /// Evaluates `max_w [cont(max(A - w, 0), B - w) + R(t_i) f(w)] + (R(t_{i-1}) - R(t_i)) DB`
    /// for every grid point of one node pair, ties going to the smaller `w`.
    ///
    /// `on_grid(j, d, k)` is the continuation value after withdrawing `d` benefit
    /// steps from account `accounts[j]`, landing on benefit level `k`;
    /// `at(j, w, k)` the same for an arbitrary amount `w`; `exhausted_cont(k)`
    /// the value at `A = 0`.
    #[allow(clippy::too_many_arguments)]
    fn withdrawal_operator<C, W, E>(
        &self,
        i: usize,
        accounts: &[f64],
        grid: &mut [f64],
        exhausted: &mut [f64],
        on_grid: C,
        at: W,
        exhausted_cont: E,
    ) where
        C: Fn(usize, usize, usize) -> f64,
        W: Fn(usize, f64, usize) -> f64,
        E: Fn(usize) -> f64,
    {
        let m = self.m;
        let survive = self.mortality.survivor_at(i);
        let died = self.mortality.survivor_at(i - 1) - survive;
        let g = self.guarantee;
        let kappa = self.kappa;
        let cash = |w: f64| survive * cash_flow_unchecked(w, g, kappa);
        let g_pos = g / self.db;
        let g_steps = g_pos.round() as usize;
        let g_on_grid = (g_pos - g_pos.round()).abs() < 1e-9;
        // Benefit left after withdrawing `g` off grid: linear between levels.
        let g_split = |b: usize| -> (usize, f64) {
            let left = (self.benefits[b] - g) / self.db;
            let lo = (left.floor().max(0.0) as usize).min(self.nb1 - 1);
            (lo, left - lo as f64)
        };
        let blend = |(lo, f): (usize, f64), val: &dyn Fn(usize) -> f64| -> f64 {
            if f.abs() < 1e-9 || lo + 1 >= self.nb1 {
                val(lo)
            } else {
                (1.0 - f) * val(lo) + f * val(lo + 1)
            }
        };
        let mut best = vec![0.0; m];
        for b in 0..self.nb1 {
            let benefit = self.benefits[b];
            let death = |a: f64| died * a.max((1.0 - kappa) * benefit);
            let static_grid = g_on_grid || g >= benefit;
            match self.mode {
                WithdrawalMode::Static => {
                    if static_grid {
                        let d = if g >= benefit { b } else { g_steps };
                        let c = cash(self.benefits[d]);
                        exhausted[b] = exhausted_cont(b - d) + c;
                        for (j, out) in best.iter_mut().enumerate() {
                            *out = on_grid(j, d, b - d) + c;
                        }
                    } else {
                        let split = g_split(b);
                        let c = cash(g);
                        exhausted[b] = blend(split, &|k| exhausted_cont(k)) + c;
                        for (j, out) in best.iter_mut().enumerate() {
                            *out = blend(split, &|k| at(j, g, k)) + c;
                        }
                    }
                }
                WithdrawalMode::Optimal => {
                    best.fill(f64::NEG_INFINITY);
                    let mut best0 = f64::NEG_INFINITY;
                    for k in (0..=b).rev() {
                        let d = b - k;
                        let c = cash(self.benefits[d]);
                        best0 = best0.max(exhausted_cont(k) + c);
                        for (j, out) in best.iter_mut().enumerate() {
                            let val = on_grid(j, d, k) + c;
                            if val > *out {
                                *out = val;
                            }
                        }
                    }
                    if !static_grid {
                        let split = g_split(b);
                        let c = cash(g);
                        best0 = best0.max(blend(split, &|k| exhausted_cont(k)) + c);
                        for (j, out) in best.iter_mut().enumerate() {
                            let val = blend(split, &|k| at(j, g, k)) + c;
                            if val > *out {
                                *out = val;
                            }
                        }
                    }
                    exhausted[b] = best0;
                }
            }
            exhausted[b] += death(0.0);
            for (j, &val) in best.iter().enumerate() {
                grid[b * m + j] = val + death(accounts[j]);
            }
        }
    }
}

/// Position of a post-withdrawal account on the `z` grid of one node.
#[derive(Debug, Clone, Copy)]
enum Landing {
    Exhausted,
    /// Between `A = 0` and the first grid point, with weight on the latter.
    Below(f64),
    On(usize, f64),
}

fn check_finite(level: &Level, step: usize) -> Result<(), PricingError> {
    let ok = level.grid.iter().chain(&level.exhausted).all(|v| v.is_finite());
    if ok {
        Ok(())
    } else {
        Err(PricingError::NonFiniteValue { step })
    }
}

/// Interpolates `row` at `idx + frac`: cubic in the interior, linear in the
/// end cells and beyond.
#[inline]
fn sample_shifted(row: &[f64], idx: isize, frac: f64) -> f64 {
    let last = row.len() as isize - 1;
    if idx >= 1 && idx < last - 1 {
        // four-point Lagrange; linear interpolation of a convex profile
        // biases every step by O(dz^2)
        let i = idx as usize;
        let t = frac;
        let w0 = -t * (t - 1.0) * (t - 2.0) / 6.0;
        let w1 = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0;
        let w2 = -(t + 1.0) * t * (t - 2.0) / 2.0;
        let w3 = (t + 1.0) * t * (t - 1.0) / 6.0;
        return w0 * row[i - 1] + w1 * row[i] + w2 * row[i + 1] + w3 * row[i + 2];
    }
    if idx >= 0 && idx < last {
        let i = idx as usize;
        return row[i] + frac * (row[i + 1] - row[i]);
    }
    let pos = idx as f64 + frac;
    if pos < 0.0 {
        row[0] + pos * (row[1] - row[0])
    } else {
        let l = last as usize;
        row[l] + (pos - last as f64) * (row[l] - row[l - 1])
    }
}

/// Tridiagonal discretization of `L u = mu u_z + D u_zz - r u` on a uniform
/// grid, with one-sided drift and no diffusion at the two boundary points.
struct Operator {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

impl Operator {
    fn new(mu: f64, diffusion: f64, r: f64, dz: f64, m: usize, convection: Convection) -> Self {
        let (a, b, c) = match convection {
            Convection::Fitted => {
                let h = 0.5 * mu * dz;
                let fitted = if diffusion > 0.0 {
                    let pe = h / diffusion;
                    if pe.abs() < 1e-8 {
                        diffusion
                    } else {
                        h / pe.tanh()
                    }
                } else {
                    h.abs()
                };
                let d2 = fitted / (dz * dz);
                let h = mu / (2.0 * dz);
                (d2 - h, -2.0 * d2 - r, d2 + h)
            }
            Convection::Blended => {
                let h = 0.5 * mu * dz;
                let d2 = (diffusion.powi(4) + h.powi(4)).powf(0.25) / (dz * dz);
                let h = mu / (2.0 * dz);
                (d2 - h, -2.0 * d2 - r, d2 + h)
            }
            Convection::Upwind => {
                let d2 = diffusion / (dz * dz);
                let peclet = if diffusion > 0.0 {
                    mu.abs() * dz / diffusion
                } else {
                    f64::INFINITY
                };
                if peclet <= 2.0 {
                    let h = mu / (2.0 * dz);
                    (d2 - h, -2.0 * d2 - r, d2 + h)
                } else if mu > 0.0 {
                    (d2, -2.0 * d2 - mu / dz - r, d2 + mu / dz)
                } else {
                    (d2 - mu / dz, -2.0 * d2 + mu / dz - r, d2)
                }
            }
        };
        let mut lower = vec![a; m];
        let mut diag = vec![b; m];
        let mut upper = vec![c; m];
        lower[0] = 0.0;
        diag[0] = -mu / dz - r;
        upper[0] = mu / dz;
        lower[m - 1] = -mu / dz;
        diag[m - 1] = mu / dz - r;
        upper[m - 1] = 0.0;
        Operator { lower, diag, upper }
    }

    /// `out = u + scale * L u`
    fn apply_explicit(&self, u: &[f64], scale: f64, out: &mut [f64]) {
        let m = u.len();
        if scale == 0.0 {
            out.copy_from_slice(u);
            return;
        }
        out[0] = u[0] + scale * (self.diag[0] * u[0] + self.upper[0] * u[1]);
        for j in 1..m - 1 {
            out[j] = u[j]
                + scale * (self.lower[j] * u[j - 1] + self.diag[j] * u[j] + self.upper[j] * u[j + 1]);
        }
        out[m - 1] = u[m - 1] + scale * (self.lower[m - 1] * u[m - 2] + self.diag[m - 1] * u[m - 1]);
    }

    /// LU factors of `I - scale * L` for the Thomas algorithm.
    fn implicit_factor(&self, scale: f64) -> Thomas {
        let m = self.diag.len();
        let mut c_prime = vec![0.0; m];
        let mut inv_den = vec![0.0; m];
        let mut a = vec![0.0; m];
        let mut prev_c = 0.0;
        for j in 0..m {
            let lo = -scale * self.lower[j];
            let d = 1.0 - scale * self.diag[j];
            let up = -scale * self.upper[j];
            let den = d - lo * prev_c;
            inv_den[j] = 1.0 / den;
            c_prime[j] = up * inv_den[j];
            a[j] = lo;
            prev_c = c_prime[j];
        }
        Thomas {
            lower: a,
            c_prime,
            inv_den,
        }
    }
}

struct Thomas {
    lower: Vec<f64>,
    c_prime: Vec<f64>,
    inv_den: Vec<f64>,
}

impl Thomas {
    fn solve(&self, rhs: &[f64], out: &mut [f64]) {
        let m = rhs.len();
        let mut prev = 0.0;
        for j in 0..m {
            prev = (rhs[j] - self.lower[j] * prev) * self.inv_den[j];
            out[j] = prev;
        }
        for j in (0..m - 1).rev() {
            out[j] -= self.c_prime[j] * out[j + 1];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_grid(steps: usize) -> GridConfig {
        GridConfig {
            time_steps: steps,
            space_steps: steps + 1,
            benefit_steps: 10,
            ..GridConfig::default()
        }
    }

    const SCHEMES: [Convection; 3] = [Convection::Blended, Convection::Fitted, Convection::Upwind];

    #[test]
    fn thomas_solves_tridiagonal_system() {
        for conv in SCHEMES {
            let op = Operator::new(0.05, 0.02, 0.03, 0.1, 7, conv);
            let solver = op.implicit_factor(0.2);
            let x: Vec<f64> = (0..7).map(|j| (j as f64 * 0.7).sin() + 2.0).collect();
            // b = (I - 0.2 L) x
            let mut lx = vec![0.0; 7];
            op.apply_explicit(&x, -0.2, &mut lx);
            let mut back = vec![0.0; 7];
            solver.solve(&lx, &mut back);
            for (a, b) in x.iter().zip(&back) {
                assert!((a - b).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn operator_annihilates_constants_without_discounting() {
        for conv in SCHEMES {
            for (mu, d) in [(0.1, 0.02), (-0.3, 0.001), (0.2, 0.0)] {
                let op = Operator::new(mu, d, 0.0, 0.05, 9, conv);
                let u = vec![3.5; 9];
                let mut out = vec![0.0; 9];
                op.apply_explicit(&u, 0.7, &mut out);
                assert!(out.iter().all(|&x| (x - 3.5).abs() < 1e-14));
            }
        }
    }

    #[test]
    fn smooth_schemes_are_monotone_and_continuous() {
        let (d, dz) = (0.01, 0.1);
        for conv in [Convection::Blended, Convection::Fitted] {
            let mut prev: Option<f64> = None;
            // mu sweeps through cell Peclet number 2 at mu = 0.2
            for i in 0..=400 {
                let mu = -0.5 + i as f64 * 2.5e-3;
                let op = Operator::new(mu, d, 0.0, dz, 5, conv);
                assert!(op.lower[2] >= 0.0 && op.upper[2] >= 0.0, "{conv:?} mu {mu}");
                if let Some(p) = prev {
                    assert!((op.upper[2] - p).abs() < 0.05, "{conv:?} jump at mu {mu}");
                }
                prev = Some(op.upper[2]);
            }
            // no drift: plain central differences
            let op = Operator::new(0.0, d, 0.0, dz, 5, conv);
            assert!((op.upper[2] - d / (dz * dz)).abs() < 1e-12);
            // strong drift: the one-sided limit
            let op = Operator::new(50.0, d, 0.0, dz, 5, conv);
            assert!(op.lower[2].abs() < 1e-9 * op.upper[2], "{conv:?}");
            assert!((op.upper[2] / (50.0 / dz) - 1.0).abs() < 1e-9);
        }
        // at moderate drift the blend stays closer to central differences
        let added = |conv| Operator::new(0.1, d, 0.0, dz, 5, conv).upper[2] - 0.1 / (2.0 * dz) - d / (dz * dz);
        assert!(added(Convection::Blended) > 0.0);
        assert!(added(Convection::Blended) < 0.5 * added(Convection::Fitted));
        // the switching scheme jumps at Peclet number 2
        let below = Operator::new(0.2 - 1e-9, d, 0.0, dz, 5, Convection::Upwind);
        let above = Operator::new(0.2 + 1e-9, d, 0.0, dz, 5, Convection::Upwind);
        assert!((above.upper[2] - below.upper[2]).abs() > 0.5);
    }

    #[test]
    fn shifted_sampling_extrapolates_linearly() {
        let row = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(sample_shifted(&row, 1, 0.5), 2.5);
        assert_eq!(sample_shifted(&row, -1, 0.0), 0.0);
        assert_eq!(sample_shifted(&row, 3, 0.5), 4.5);
    }

    #[test]
    fn shifted_sampling_is_exact_on_cubics() {
        let f = |x: f64| 0.3 * x * x * x - x * x + 2.0;
        let row: Vec<f64> = (0..8).map(|j| f(j as f64)).collect();
        for (idx, frac) in [(1, 0.25), (3, 0.5), (5, 0.9)] {
            let got = sample_shifted(&row, idx, frac);
            assert!((got - f(idx as f64 + frac)).abs() < 1e-12);
        }
    }

    #[test]
    fn aligned_grid_rounds_up() {
        assert_eq!(GridConfig::square(125).aligned(10).time_steps, 130);
        assert_eq!(GridConfig::square(250).aligned(10).time_steps, 250);
        assert!(GridConfig::square(125).aligned(10).validate(10).is_ok());
    }

    #[test]
    fn grid_alignment_is_checked() {
        let g = GridConfig {
            time_steps: 25,
            ..GridConfig::default()
        };
        assert!(matches!(g.validate(10), Err(PricingError::GridTooCoarse(_))));
        assert!(g.validate(5).is_ok());
    }

    #[test]
    fn constant_payoff_is_preserved_at_zero_rate_in_step() {
        // With r = 0 the z operator keeps constants; the tree average does too.
        let op = Operator::new(0.04, 0.01, 0.0, 0.03, 11, Convection::Blended);
        let solver = op.implicit_factor(0.5 * 0.1);
        let u = vec![7.0; 11];
        let mut rhs = vec![0.0; 11];
        op.apply_explicit(&u, 0.5 * 0.1, &mut rhs);
        let mut out = vec![0.0; 11];
        solver.solve(&rhs, &mut out);
        assert!(out.iter().all(|&x| (x - 7.0).abs() < 1e-13));
    }

    #[test]
    fn price_is_positive_and_optimal_dominates_static() {
        let model = HhwParams::REFERENCE;
        let contract = ContractParams::reference();
        let mort = MortalityTable::zero(10);
        let grid = quick_grid(20);
        let opt = price_gmwb(&model, &contract, &mort, &grid, WithdrawalMode::Optimal).unwrap();
        let stat = price_gmwb(&model, &contract, &mort, &grid, WithdrawalMode::Static).unwrap();
        assert!(stat.price > 0.0);
        assert!(opt.price >= stat.price - 1e-12);
        assert!(opt.delta > 0.0 && opt.delta < 1.0);
    }

    #[test]
    fn deterministic_bitwise() {
        let model = HhwParams::REFERENCE;
        let contract = ContractParams::reference();
        let mort = MortalityTable::zero(10);
        let grid = quick_grid(20);
        let a = price_gmwb(&model, &contract, &mort, &grid, WithdrawalMode::Optimal).unwrap();
        let b = price_gmwb(&model, &contract, &mort, &grid, WithdrawalMode::Optimal).unwrap();
        assert_eq!(a.price.to_bits(), b.price.to_bits());
        assert_eq!(a.delta.to_bits(), b.delta.to_bits());
    }

    #[test]
    fn one_step_matches_monte_carlo() {
        use crate::mc::{simulate_paths, McConfig};
        let model = HhwParams::REFERENCE;
        let contract = ContractParams {
            maturity: 1,
            ..ContractParams::reference()
        };
        let mort = MortalityTable::zero(1);
        let grid = GridConfig {
            time_steps: 20,
            space_steps: 301,
            benefit_steps: 1,
            ..GridConfig::default()
        };
        let e = Engine::new(&model, &contract, &mort, &grid, WithdrawalMode::Static, 100.0).unwrap();
        let f = |a: f64| 100.0 * (a / 100.0).sqrt();
        let mut next = e.empty_level(1);
        let block = e.nb1 * e.m;
        for (pair, (jv, _)) in e.pairs(&next).into_iter().enumerate() {
            let v = e.vtree.node_value(1, jv);
            for b in 0..e.nb1 {
                for j in 0..e.m {
                    next.grid[pair * block + b * e.m + j] = f(e.account_at(j, v));
                }
            }
        }
        let mut out = e.empty_level(0);
        e.backward_step(0, &next, &mut out, 0.5);
        let hpde = out.grid[(e.nb1 - 1) * e.m + e.center];

        let cfg = McConfig {
            paths: 400_000,
            steps_per_year: 2000,
            seed: 5,
        };
        let paths = simulate_paths(&model, contract.alpha, 100.0, &[e.dt], &cfg);
        let xs: Vec<f64> = paths
            .states
            .iter()
            .map(|p| (-p[0].integrated_rate).exp() * f(p[0].account))
            .collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let se = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
        assert!((hpde - mean).abs() < 3.0 * se, "{hpde} vs {mean} +- {se}");
    }
}
