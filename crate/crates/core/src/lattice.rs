//! Recombining trinomial trees that match the first two conditional moments
//! of the rate factor `x` (Ornstein-Uhlenbeck) and of the variance `v` (CIR).
//!
//! Level `n` holds `2n + 1` nodes on a uniform grid with spacing `1.5 sigma`,
//! where `sigma^2` is the one-step conditional variance of the Gaussian
//! coordinate. From each node the process moves to three consecutive nodes of
//! the next level: `(j_A - 1, j_A, j_A + 1)` when the conditional mean sits in
//! the upper three quarters of a half cell below `G_A`, otherwise
//! `(j_A - 2, j_A - 1, j_A)`. `j_A` is the first node at or above the mean.
//!
//! The variance tree lives on `y = 2 sqrt(v) / omega_v`, which has unit
//! diffusion, and nodes are mapped back with `v = (omega_v y / 2)^2`, clamped
//! to zero for `y <= 0`. Probabilities there are solved against the exact CIR
//! moments of `v` at the node.

use crate::error::LatticeError;

/// Conditional mean and variance after one time step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentSpec {
    pub mean: f64,
    pub variance: f64,
}

impl MomentSpec {
    pub fn second_moment(&self) -> f64 {
        self.mean * self.mean + self.variance
    }
}

/// Exact one-step moments of `dx = -k x dt + dW`.
pub fn ou_moments(x: f64, dt: f64, k: f64) -> MomentSpec {
    MomentSpec {
        mean: x * (-k * dt).exp(),
        variance: -(-2.0 * k * dt).exp_m1() / (2.0 * k),
    }
}

/// Exact one-step moments of `dv = k (theta - v) dt + omega sqrt(v) dW`.
pub fn cir_moments(v: f64, dt: f64, k: f64, theta: f64, omega: f64) -> MomentSpec {
    let e1 = (-k * dt).exp();
    let one_minus = -(-k * dt).exp_m1();
    let w2 = omega * omega;
    MomentSpec {
        mean: theta + (v - theta) * e1,
        variance: v * (w2 / k) * e1 * one_minus + theta * (w2 / (2.0 * k)) * one_minus * one_minus,
    }
}

/// Which of the two branch patterns a node uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchShape {
    /// Targets `j_A, j_B = j_A - 1, j_C = j_A + 1`.
    Upper,
    /// Targets `j_A, j_B = j_A - 1, j_D = j_A - 2`.
    Lower,
}

/// Transition out of one node: targets at the next level and their weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch {
    /// Ordered as `(A, B, C)` or `(A, B, D)`.
    pub targets: [usize; 3],
    pub probs: [f64; 3],
    pub shape: BranchShape,
    /// Moments the probabilities reproduce. Equal to the process moments
    /// unless the variance had to be clamped to the feasible range.
    pub moments: MomentSpec,
    pub clamped: bool,
}

impl Branch {
    /// Mean and second moment of the branch distribution over `values`.
    pub fn implied_moments(&self, values: &[f64]) -> (f64, f64) {
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for (&t, &p) in self.targets.iter().zip(&self.probs) {
            m1 += p * values[t];
            m2 += p * values[t] * values[t];
        }
        (m1, m2)
    }
}

/// Transition probabilities on a uniform level with spacing `1.5 sigma`, as a
/// function of `d = G_A - mu`.
pub fn table5_probabilities(d: f64, sigma: f64) -> ([f64; 3], BranchShape) {
    let s2 = sigma * sigma;
    let den = 9.0 * s2;
    if d <= 0.75 * sigma {
        let p_a = (5.0 * s2 - 4.0 * d * d) / den;
        let p_b = (2.0 * d * d + 3.0 * sigma * d + 2.0 * s2) / den;
        let p_c = (2.0 * d * d - 3.0 * sigma * d + 2.0 * s2) / den;
        ([p_a, p_b, p_c], BranchShape::Upper)
    } else {
        // e = mu - G_B
        let e = 1.5 * sigma - d;
        let p_a = (2.0 * e * e + 3.0 * sigma * e + 2.0 * s2) / den;
        let p_b = (5.0 * s2 - 4.0 * e * e) / den;
        let p_d = (2.0 * e * e - 3.0 * sigma * e + 2.0 * s2) / den;
        ([p_a, p_b, p_d], BranchShape::Lower)
    }
}

/// Probabilities on three distinct points reproducing a mean and variance.
///
/// Uses deviations from the mean: `p_i = (s2 + d_j d_k) / ((d_i - d_j)(d_i - d_k))`.
pub fn match_three_points(points: [f64; 3], mean: f64, variance: f64) -> [f64; 3] {
    let d = points.map(|g| g - mean);
    let p = |i: usize, j: usize, k: usize| (variance + d[j] * d[k]) / ((d[i] - d[j]) * (d[i] - d[k]));
    [p(0, 1, 2), p(1, 0, 2), p(2, 0, 1)]
}

/// Uniform level geometry `G_{n,j} = origin + (j - n) * spacing`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformGeometry {
    pub origin: f64,
    pub spacing: f64,
}

impl UniformGeometry {
    pub fn node(&self, level: usize, j: usize) -> f64 {
        self.origin + (j as f64 - level as f64) * self.spacing
    }

    /// `j_A` at level `level + 1`: the first node at or above `mean`.
    ///
    /// Starts from `n + ceil(2 (mean - G_0) / (3 sigma))` and corrects it until
    /// `G_B < mean <= G_A` holds.
    fn upper_index(&self, level: usize, mean: f64) -> Option<usize> {
        let next = level + 1;
        let top = 2 * next;
        if mean > self.node(next, top) || mean <= self.node(next, 0) {
            return None;
        }
        let guess = level as f64 + ((mean - self.origin) / self.spacing).ceil();
        let mut j = guess.clamp(0.0, top as f64) as usize;
        while j < top && self.node(next, j) < mean {
            j += 1;
        }
        while j > 0 && self.node(next, j - 1) >= mean {
            j -= 1;
        }
        Some(j)
    }
}

/// Branch of node `(level, node)` on a uniform Gaussian tree.
pub fn branch(
    level: usize,
    node: usize,
    spec: &MomentSpec,
    geometry: &UniformGeometry,
) -> Result<Branch, LatticeError> {
    let out_of_range = LatticeError::MeanOutOfRange {
        level,
        node,
        mean: spec.mean,
    };
    let j_a = geometry.upper_index(level, spec.mean).ok_or(out_of_range.clone())?;
    let sigma = spec.variance.sqrt();
    let g_a = geometry.node(level + 1, j_a);
    let (probs, shape) = table5_probabilities(g_a - spec.mean, sigma);
    let targets = match shape {
        BranchShape::Upper if j_a < 2 * (level + 1) => [j_a, j_a - 1, j_a + 1],
        BranchShape::Lower if j_a >= 2 => [j_a, j_a - 1, j_a - 2],
        _ => return Err(out_of_range),
    };
    Ok(Branch {
        targets,
        probs,
        shape,
        moments: *spec,
        clamped: false,
    })
}

/// Stochastic factor a tree is built for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Process {
    /// `dx = -k x dt + dW`, `x_0 = 0`.
    OrnsteinUhlenbeck { reversion: f64 },
    /// `dv = k (theta - v) dt + omega sqrt(v) dW`.
    Cir {
        reversion: f64,
        long_run: f64,
        vol_of_vol: f64,
        initial: f64,
    },
}

/// An immutable recombining trinomial tree.
#[derive(Debug, Clone)]
pub struct TrinomialTree {
    steps: usize,
    dt: f64,
    /// Node values in process units, `2n + 1` per level.
    values: Vec<Vec<f64>>,
    /// Branches for levels `0..steps`.
    branches: Vec<Vec<Branch>>,
}

impl TrinomialTree {
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn node_value(&self, level: usize, j: usize) -> f64 {
        self.values[level][j]
    }

    pub fn level(&self, level: usize) -> &[f64] {
        &self.values[level]
    }

    pub fn branch(&self, level: usize, j: usize) -> &Branch {
        &self.branches[level][j]
    }

    pub fn branches(&self, level: usize) -> &[Branch] {
        &self.branches[level]
    }

    /// Forward sweep of node probabilities from the root.
    pub fn marginals(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.steps + 1);
        out.push(vec![1.0]);
        for n in 0..self.steps {
            let mut next = vec![0.0; 2 * n + 3];
            for (j, &mass) in out[n].iter().enumerate() {
                if mass == 0.0 {
                    continue;
                }
                let b = &self.branches[n][j];
                for (&t, &p) in b.targets.iter().zip(&b.probs) {
                    next[t] += mass * p;
                }
            }
            out.push(next);
        }
        out
    }

    /// Mean and variance of the terminal node distribution.
    pub fn terminal_moments(&self) -> (f64, f64) {
        let marg = self.marginals();
        let last = &marg[self.steps];
        let vals = &self.values[self.steps];
        let m1: f64 = last.iter().zip(vals).map(|(p, v)| p * v).sum();
        let m2: f64 = last.iter().zip(vals).map(|(p, v)| p * v * v).sum();
        (m1, m2 - m1 * m1)
    }

    /// Contiguous index window per level covering every node whose forward
    /// probability is at least `eps`.
    pub fn windows(&self, eps: f64) -> Vec<(usize, usize)> {
        self.marginals()
            .iter()
            .map(|level| {
                let lo = level.iter().position(|&p| p >= eps).unwrap_or(0);
                let hi = level.iter().rposition(|&p| p >= eps).unwrap_or(level.len() - 1);
                (lo, hi.max(lo))
            })
            .collect()
    }
}

/// Builds the tree for `process` over `[0, horizon]` with `steps` levels.
pub fn build_tree(process: &Process, steps: usize, horizon: f64) -> Result<TrinomialTree, LatticeError> {
    if steps == 0 || !(horizon > 0.0) {
        return Err(LatticeError::BadGeometry);
    }
    let dt = horizon / steps as f64;
    match *process {
        Process::OrnsteinUhlenbeck { reversion } => build_ou(reversion, steps, dt),
        Process::Cir {
            reversion,
            long_run,
            vol_of_vol,
            initial,
        } => build_cir(reversion, long_run, vol_of_vol, initial, steps, dt),
    }
}

fn build_ou(k: f64, steps: usize, dt: f64) -> Result<TrinomialTree, LatticeError> {
    let sigma = ou_moments(0.0, dt, k).variance.sqrt();
    let geometry = UniformGeometry {
        origin: 0.0,
        spacing: 1.5 * sigma,
    };
    let values: Vec<Vec<f64>> = (0..=steps)
        .map(|n| (0..=2 * n).map(|j| geometry.node(n, j)).collect())
        .collect();
    let mut branches = Vec::with_capacity(steps);
    for n in 0..steps {
        let level = values[n]
            .iter()
            .enumerate()
            .map(|(j, &x)| branch(n, j, &ou_moments(x, dt, k), &geometry))
            .collect::<Result<Vec<_>, _>>()?;
        branches.push(level);
    }
    Ok(TrinomialTree {
        steps,
        dt,
        values,
        branches,
    })
}

fn build_cir(
    k: f64,
    theta: f64,
    omega: f64,
    v0: f64,
    steps: usize,
    dt: f64,
) -> Result<TrinomialTree, LatticeError> {
    if !(k > 0.0 && theta > 0.0 && omega > 0.0 && v0 >= 0.0) {
        return Err(LatticeError::BadGeometry);
    }
    let y_geometry = UniformGeometry {
        origin: 2.0 * v0.sqrt() / omega,
        spacing: 1.5 * dt.sqrt(),
    };
    let to_v = |y: f64| if y > 0.0 { 0.25 * omega * omega * y * y } else { 0.0 };
    let values: Vec<Vec<f64>> = (0..=steps)
        .map(|n| (0..=2 * n).map(|j| to_v(y_geometry.node(n, j))).collect())
        .collect();
    let mut branches = Vec::with_capacity(steps);
    for n in 0..steps {
        let next = &values[n + 1];
        // Lowest distinct node: every node below it is also mapped to zero.
        let floor = next.iter().rposition(|&v| v == 0.0).unwrap_or(0);
        let mut level = Vec::with_capacity(2 * n + 1);
        let mut cache: Option<(f64, Branch)> = None;
        for (j, &v) in values[n].iter().enumerate() {
            if let Some((cv, b)) = cache {
                if cv == v {
                    level.push(b);
                    continue;
                }
            }
            let spec = cir_moments(v, dt, k, theta, omega);
            let b = cir_branch(n, j, &spec, next, floor, &y_geometry, omega, dt)?;
            cache = Some((v, b));
            level.push(b);
        }
        branches.push(level);
    }
    Ok(TrinomialTree {
        steps,
        dt,
        values,
        branches,
    })
}

#[allow(clippy::too_many_arguments)]
fn cir_branch(
    level: usize,
    node: usize,
    spec: &MomentSpec,
    next: &[f64],
    floor: usize,
    y_geometry: &UniformGeometry,
    omega: f64,
    dt: f64,
) -> Result<Branch, LatticeError> {
    let top = next.len() - 1;
    if spec.mean > next[top] || spec.mean <= next[floor] || top < floor + 2 {
        return Err(LatticeError::MeanOutOfRange {
            level,
            node,
            mean: spec.mean,
        });
    }
    let j_a = (floor + 1..=top)
        .find(|&j| next[j] >= spec.mean)
        .expect("mean is below the top node");
    // Pattern choice on the transformed coordinate, as on a Gaussian tree.
    let y_mean = 2.0 * spec.mean.sqrt() / omega;
    let d = y_geometry.node(level + 1, j_a) - y_mean;
    let preferred = if d <= 0.75 * dt.sqrt() {
        BranchShape::Upper
    } else {
        BranchShape::Lower
    };
    let alternate = match preferred {
        BranchShape::Upper => BranchShape::Lower,
        BranchShape::Lower => BranchShape::Upper,
    };
    let targets_for = |shape: BranchShape| -> Option<[usize; 3]> {
        match shape {
            BranchShape::Upper if j_a < top => Some([j_a, j_a - 1, j_a + 1]),
            BranchShape::Lower if j_a >= floor + 2 => Some([j_a, j_a - 1, j_a - 2]),
            _ => None,
        }
    };
    let solve = |targets: [usize; 3], variance: f64| {
        match_three_points(targets.map(|t| next[t]), spec.mean, variance)
    };
    const NEG_TOL: f64 = 1e-13;
    let mut first_available = None;
    for shape in [preferred, alternate] {
        let Some(targets) = targets_for(shape) else {
            continue;
        };
        first_available.get_or_insert((shape, targets));
        let probs = solve(targets, spec.variance);
        if probs.iter().all(|&p| p >= -NEG_TOL) {
            return Ok(Branch {
                targets,
                probs: probs.map(|p| p.max(0.0)),
                shape,
                moments: *spec,
                clamped: false,
            });
        }
    }
    // Neither pattern can carry the variance: clamp it into the feasible
    // range of the first available pattern.
    let (shape, targets) = first_available.ok_or(LatticeError::MeanOutOfRange {
        level,
        node,
        mean: spec.mean,
    })?;
    let mut pts = targets.map(|t| next[t]);
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (lo, hi) = if spec.mean <= pts[1] {
        (pts[0], pts[1])
    } else {
        (pts[1], pts[2])
    };
    let min_var = (spec.mean - lo) * (hi - spec.mean);
    let max_var = (spec.mean - pts[0]) * (pts[2] - spec.mean);
    let variance = spec.variance.clamp(min_var, max_var);
    let probs = solve(targets, variance);
    Ok(Branch {
        targets,
        probs: probs.map(|p| p.max(0.0)),
        shape,
        moments: MomentSpec {
            mean: spec.mean,
            variance,
        },
        clamped: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_moments(points: &[f64], probs: &[f64]) -> (f64, f64, f64) {
        let mut s = 0.0;
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for (x, p) in points.iter().zip(probs) {
            s += p;
            m1 += p * x;
            m2 += p * x * x;
        }
        (s, m1, m2)
    }

    #[test]
    fn ou_moments_small_dt_and_symmetry() {
        let m = ou_moments(0.7, 1e-12, 0.15);
        assert!((m.mean - 0.7).abs() < 1e-12);
        assert!(m.variance < 1e-11);
        assert_eq!(ou_moments(0.0, 0.3, 0.15).mean, 0.0);
    }

    #[test]
    fn ou_moments_reference_values() {
        let m = ou_moments(1.0, 0.1, 0.15);
        assert!((m.mean - (-0.015f64).exp()).abs() < 1e-15);
        assert!((m.variance - (1.0 - (-0.03f64).exp()) / 0.3).abs() < 1e-15);
    }

    #[test]
    fn cir_moments_special_cases() {
        let (k, theta, omega, dt) = (2.0, 0.05, 0.5, 0.04);
        let m = cir_moments(theta, dt, k, theta, omega);
        assert!((m.mean - theta).abs() < 1e-16);
        let m0 = cir_moments(0.0, dt, k, theta, omega);
        let one_minus = 1.0 - (-k * dt).exp();
        assert!((m0.mean - theta * one_minus).abs() < 1e-16);
        let expect = theta * omega * omega / (2.0 * k) * one_minus * one_minus;
        assert!((m0.variance - expect).abs() < 1e-18);
    }

    #[test]
    fn table5_at_node_and_at_switch() {
        let (p, shape) = table5_probabilities(0.0, 1.0);
        assert_eq!(shape, BranchShape::Upper);
        for (got, want) in p.iter().zip([5.0 / 9.0, 2.0 / 9.0, 2.0 / 9.0]) {
            assert!((got - want).abs() < 1e-15);
        }
        let sigma = 0.8;
        let (p, shape) = table5_probabilities(0.75 * sigma, sigma);
        assert_eq!(shape, BranchShape::Upper);
        for (got, want) in p.iter().zip([2.75 / 9.0, 5.375 / 9.0, 0.875 / 9.0]) {
            assert!((got - want).abs() < 1e-14);
        }
    }

    #[test]
    fn table5_agrees_with_general_solver() {
        let sigma = 0.3;
        let h = 1.5 * sigma;
        for i in 0..=100 {
            let d = h * i as f64 / 100.0;
            let mu = -d; // G_A = 0
            let (p, shape) = table5_probabilities(d, sigma);
            let pts = match shape {
                BranchShape::Upper => [0.0, -h, h],
                BranchShape::Lower => [0.0, -h, -2.0 * h],
            };
            let q = match_three_points(pts, mu, sigma * sigma);
            for (a, b) in p.iter().zip(q) {
                assert!((a - b).abs() < 1e-13, "d = {d}: {p:?} vs {q:?}");
            }
        }
    }

    #[test]
    fn branch_moments_match_by_enumeration() {
        let geometry = UniformGeometry {
            origin: 0.0,
            spacing: 1.5 * 0.2,
        };
        let level = 6;
        for j in 0..=2 * level {
            for frac in [0.0, 0.1, 0.5, 0.9] {
                let x = geometry.node(level, j);
                let spec = MomentSpec {
                    mean: x * 0.97 + frac * 0.01,
                    variance: 0.04,
                };
                let b = branch(level, j, &spec, &geometry).unwrap();
                let pts: Vec<f64> = b.targets.iter().map(|&t| geometry.node(level + 1, t)).collect();
                let (s, m1, m2) = brute_moments(&pts, &b.probs);
                assert!((s - 1.0).abs() < 1e-12);
                assert!((m1 - spec.mean).abs() < 1e-12);
                assert!((m2 - spec.second_moment()).abs() < 1e-12);
                assert!(b.probs.iter().all(|&p| (0.0..=1.0).contains(&p)));
                // bracketing
                let g_a = geometry.node(level + 1, b.targets[0]);
                let g_b = geometry.node(level + 1, b.targets[1]);
                assert!(g_b < spec.mean && spec.mean <= g_a);
            }
        }
    }

    #[test]
    fn mean_out_of_range_is_reported() {
        let geometry = UniformGeometry {
            origin: 0.0,
            spacing: 0.3,
        };
        let spec = MomentSpec {
            mean: 5.0,
            variance: 0.04,
        };
        assert!(matches!(
            branch(1, 1, &spec, &geometry),
            Err(LatticeError::MeanOutOfRange { level: 1, .. })
        ));
    }

    #[test]
    fn ou_tree_first_level() {
        let k = 0.15;
        let tree = build_tree(&Process::OrnsteinUhlenbeck { reversion: k }, 1, 0.5).unwrap();
        let sigma = ((1.0 - (-2.0f64 * k * 0.5).exp()) / (2.0 * k)).sqrt();
        let lvl = tree.level(1);
        assert_eq!(lvl.len(), 3);
        assert!((lvl[0] + 1.5 * sigma).abs() < 1e-15);
        assert_eq!(lvl[1], 0.0);
        assert!((lvl[2] - 1.5 * sigma).abs() < 1e-15);
        let root = tree.branch(0, 0);
        assert_eq!(root.targets, [1, 0, 2]);
        assert!((root.probs[0] - 5.0 / 9.0).abs() < 1e-15);
        assert!((root.probs[1] - 2.0 / 9.0).abs() < 1e-15);
        assert!((root.probs[2] - 2.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn trees_recombine() {
        let tree = build_tree(&Process::OrnsteinUhlenbeck { reversion: 0.2 }, 40, 10.0).unwrap();
        for n in 0..=40 {
            assert_eq!(tree.level(n).len(), 2 * n + 1);
        }
        let cir = build_tree(
            &Process::Cir {
                reversion: 2.0,
                long_run: 0.05,
                vol_of_vol: 0.5,
                initial: 0.05,
            },
            40,
            10.0,
        )
        .unwrap();
        for n in 0..40 {
            assert_eq!(cir.level(n).len(), 2 * n + 1);
            for b in cir.branches(n) {
                assert!(b.targets.iter().all(|&t| t <= 2 * (n + 1)));
            }
        }
    }

    #[test]
    fn ou_terminal_variance_is_exact() {
        let k: f64 = 0.15;
        let horizon = 10.0;
        let exact = (1.0 - (-2.0 * k * horizon).exp()) / (2.0 * k);
        let mut prev_err = f64::INFINITY;
        for steps in [125, 250, 500] {
            let tree = build_tree(&Process::OrnsteinUhlenbeck { reversion: k }, steps, horizon).unwrap();
            let (m, var) = tree.terminal_moments();
            assert!(m.abs() < 1e-10);
            let err = (var - exact).abs();
            assert!(err < 1e-9, "steps {steps}: {var} vs {exact}");
            assert!(err <= prev_err.max(1e-10));
            prev_err = err;
        }
    }

    #[test]
    fn cir_tree_matches_moments_and_mean() {
        let (k, theta, omega, v0) = (2.0, 0.05, 0.5, 0.05);
        let steps = 250;
        let horizon = 10.0;
        let tree = build_tree(
            &Process::Cir {
                reversion: k,
                long_run: theta,
                vol_of_vol: omega,
                initial: v0,
            },
            steps,
            horizon,
        )
        .unwrap();
        let dt = tree.dt();
        for n in 0..steps {
            let next = tree.level(n + 1);
            for (j, b) in tree.branches(n).iter().enumerate() {
                let s: f64 = b.probs.iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
                assert!(b.probs.iter().all(|&p| (0.0..=1.0).contains(&p)));
                let (m1, m2) = b.implied_moments(next);
                assert!((m1 - b.moments.mean).abs() <= 1e-10 * b.moments.mean.abs());
                assert!((m2 - b.moments.second_moment()).abs() <= 1e-10 * b.moments.second_moment());
                let spec = cir_moments(tree.node_value(n, j), dt, k, theta, omega);
                assert!((b.moments.mean - spec.mean).abs() < 1e-15);
                if !b.clamped {
                    assert_eq!(b.moments.variance, spec.variance);
                }
            }
        }
        let (mean_t, _) = tree.terminal_moments();
        let exact = theta + (v0 - theta) * (-k * horizon).exp();
        assert!((mean_t - exact).abs() < 1e-3);
    }

    #[test]
    fn windows_cover_the_mass() {
        let tree = build_tree(&Process::OrnsteinUhlenbeck { reversion: 0.15 }, 100, 10.0).unwrap();
        let marg = tree.marginals();
        for (n, (lo, hi)) in tree.windows(1e-12).into_iter().enumerate() {
            let inside: f64 = marg[n][lo..=hi].iter().sum();
            assert!(inside > 1.0 - 1e-9);
        }
    }
}
