//! Gaussian process regression with an ARD squared-exponential kernel and a
//! linear mean fitted by least squares.
//!
//! Inputs are mapped to the unit cube of a box before anything else, so
//! length scales are in box-width units. The mean is fitted once; the
//! kernel hyperparameters then maximize the marginal likelihood of the
//! residuals.

use std::io;
use std::path::Path;

use argmin::core::{CostFunction, Executor, Gradient, State};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::neldermead::NelderMead;
use argmin::solver::quasinewton::LBFGS;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GprError, MetricsError};
use crate::model::Interval;

/// Kernel scales, all in natural units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// `sigma_f`
    pub signal: f64,
    /// `l_1 .. l_D`, in unit-cube coordinates.
    pub lengths: Vec<f64>,
    /// `sigma_n`
    pub noise: f64,
}

impl Hyperparameters {
    pub fn isotropic(dim: usize, signal: f64, length: f64, noise: f64) -> Self {
        Hyperparameters {
            signal,
            lengths: vec![length; dim],
            noise,
        }
    }

    /// `[ln sigma_f, ln l_1, .., ln l_D, ln sigma_n]`
    pub fn to_log(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.lengths.len() + 2);
        v.push(self.signal.ln());
        v.extend(self.lengths.iter().map(|l| l.ln()));
        v.push(self.noise.ln());
        v
    }

    pub fn from_log(p: &[f64]) -> Self {
        let d = p.len() - 2;
        Hyperparameters {
            signal: p[0].exp(),
            lengths: p[1..=d].iter().map(|x| x.exp()).collect(),
            noise: p[d + 1].exp(),
        }
    }
}

/// ARD squared exponential `sigma_f^2 exp(-0.5 sum (x_k - y_k)^2 / l_k^2)`.
pub fn kernel(x: &[f64], y: &[f64], h: &Hyperparameters) -> f64 {
    let q: f64 = x
        .iter()
        .zip(y)
        .zip(&h.lengths)
        .map(|((a, b), l)| {
            let d = (a - b) / l;
            d * d
        })
        .sum();
    h.signal * h.signal * (-0.5 * q).exp()
}

/// `K(X, X) + sigma_n^2 I` for unit-cube inputs.
pub fn gram(x: &[Vec<f64>], h: &Hyperparameters) -> DMatrix<f64> {
    let n = x.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            let v = kernel(&x[i], &x[j], h);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] = h.signal * h.signal + h.noise * h.noise;
    }
    k
}

/// Cholesky of `k`, escalating a diagonal jitter from `1e-10` to `1e-4` times
/// the mean diagonal when needed. Returns the factor and the jitter used.
fn factorize(mut k: DMatrix<f64>, jitter: bool) -> Result<(Cholesky<f64, Dyn>, f64), GprError> {
    let n = k.nrows();
    if let Some(c) = Cholesky::new(k.clone()) {
        return Ok((c, 0.0));
    }
    if !jitter {
        return Err(GprError::SingularGram);
    }
    let scale = k.diagonal().mean();
    let mut eps = 1e-10 * scale;
    let mut added = 0.0;
    while eps <= 1e-4 * scale * (1.0 + 1e-12) {
        for i in 0..n {
            k[(i, i)] += eps - added;
        }
        added = eps;
        if let Some(c) = Cholesky::new(k.clone()) {
            return Ok((c, eps));
        }
        eps *= 2.0;
    }
    Err(GprError::SingularGram)
}

/// Log marginal likelihood of residuals `r` and its gradient with respect to
/// `[ln sigma_f, ln l_1, .., ln l_D, ln sigma_n]`.
pub fn log_marginal_likelihood(
    x: &[Vec<f64>],
    r: &[f64],
    h: &Hyperparameters,
    jitter: bool,
) -> Result<(f64, Vec<f64>), GprError> {
    let n = x.len();
    let d = h.lengths.len();
    let (chol, _) = factorize(gram(x, h), jitter)?;
    let rv = DVector::from_column_slice(r);
    let alpha = chol.solve(&rv);
    let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let lml = -0.5 * rv.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();

    // d lml / d theta = 0.5 tr((a a^T - K^-1) dK/d theta)
    let kinv = chol.inverse();
    let mut grad = vec![0.0; d + 2];
    let sf2 = h.signal * h.signal;
    let inv_l2: Vec<f64> = h.lengths.iter().map(|l| 1.0 / (l * l)).collect();
    for i in 0..n {
        let wii = alpha[i] * alpha[i] - kinv[(i, i)];
        grad[0] += 0.5 * wii * 2.0 * sf2;
        grad[d + 1] += 0.5 * wii * 2.0 * h.noise * h.noise;
        for j in 0..i {
            // symmetric pair counted twice
            let w = alpha[i] * alpha[j] - kinv[(i, j)];
            let kf = kernel(&x[i], &x[j], h);
            grad[0] += w * 2.0 * kf;
            for k in 0..d {
                let diff = x[i][k] - x[j][k];
                grad[k + 1] += w * kf * diff * diff * inv_l2[k];
            }
        }
    }
    Ok((lml, grad))
}

/// What the model's outputs mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    /// Price per unit premium.
    Price,
    Delta,
    /// Fee rate.
    Fee,
}

impl std::str::FromStr for Target {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "price" => Ok(Target::Price),
            "delta" => Ok(Target::Delta),
            "fee" => Ok(Target::Fee),
            other => Err(format!("unknown target {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    /// Local optimizations; the first starts from the default point.
    pub restarts: usize,
    pub seed: u64,
    /// Keep the noise fixed at this value instead of fitting it.
    pub fixed_noise: Option<f64>,
    pub jitter: bool,
    pub max_iters: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            restarts: 5,
            seed: 0,
            fixed_noise: None,
            jitter: true,
            max_iters: 200,
        }
    }
}

/// Summary of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub log_likelihood: f64,
    /// Likelihood at each start point, before optimization.
    pub initial_log_likelihoods: Vec<f64>,
    /// Starts whose analytic gradient failed the finite-difference check
    /// and were optimized by Nelder-Mead instead.
    pub simplex_fallbacks: usize,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GprModel {
    pub target: Target,
    pub bounds: Vec<Interval>,
    /// Mean coefficients on `[1, u_1, .., u_D]`.
    pub beta: Vec<f64>,
    pub hyper: Hyperparameters,
    /// Diagonal jitter that the factorization needed.
    pub jitter: f64,
    /// Training inputs in unit-cube coordinates.
    pub inputs: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

/// Unit-cube coordinates; a zero-width interval maps to 0.
pub fn normalize(x: &[f64], bounds: &[Interval]) -> Vec<f64> {
    x.iter()
        .zip(bounds)
        .map(|(&v, iv)| {
            let w = iv.width();
            if w > 0.0 {
                (v - iv.lo) / w
            } else {
                0.0
            }
        })
        .collect()
}

fn check_data(x: &[Vec<f64>], y: &[f64], bounds: &[Interval]) -> Result<(), GprError> {
    let d = bounds.len();
    if x.len() != y.len() {
        return Err(GprError::Dimension { expected: x.len(), got: y.len() });
    }
    if x.len() < d + 2 {
        return Err(GprError::TooFewPoints { n: x.len(), d });
    }
    for row in x {
        if row.len() != d {
            return Err(GprError::Dimension { expected: d, got: row.len() });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(GprError::NonFinite);
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(GprError::NonFinite);
    }
    Ok(())
}

/// Least squares of `y` on `[1, u]`, minimum norm when columns are degenerate.
fn linear_mean(u: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>, GprError> {
    let n = u.len();
    let d = u[0].len();
    let h = DMatrix::from_fn(n, d + 1, |i, j| if j == 0 { 1.0 } else { u[i][j - 1] });
    let yv = DVector::from_column_slice(y);
    let beta = h
        .svd(true, true)
        .solve(&yv, 1e-12)
        .map_err(|e| GprError::Optimizer(e.to_string()))?;
    Ok(beta.iter().copied().collect())
}

fn mean_at(beta: &[f64], u: &[f64]) -> f64 {
    beta[0] + beta[1..].iter().zip(u).map(|(b, x)| b * x).sum::<f64>()
}

/// Negative log likelihood over log-parameters, with a quadratic wall around
/// the box where the Gram matrix stays usable.
struct Objective<'a> {
    x: &'a [Vec<f64>],
    r: &'a [f64],
    fixed_noise: Option<f64>,
    jitter: bool,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Objective<'_> {
    fn hyper(&self, p: &[f64]) -> Hyperparameters {
        match self.fixed_noise {
            Some(sn) => {
                let mut full = p.to_vec();
                full.push(0.0);
                let mut h = Hyperparameters::from_log(&full);
                h.noise = sn;
                h
            }
            None => Hyperparameters::from_log(p),
        }
    }

    fn clamp(&self, p: &[f64]) -> Vec<f64> {
        p.iter()
            .enumerate()
            .map(|(i, &v)| v.clamp(self.lower[i], self.upper[i]))
            .collect()
    }

    fn wall(&self, p: &[f64]) -> (f64, Vec<f64>) {
        const STIFF: f64 = 10.0;
        let mut cost = 0.0;
        let mut grad = vec![0.0; p.len()];
        for (i, &v) in p.iter().enumerate() {
            let over = (v - self.upper[i]).max(0.0) - (self.lower[i] - v).max(0.0);
            cost += 0.5 * STIFF * over * over;
            grad[i] = STIFF * over;
        }
        (cost, grad)
    }

    /// Cost per training point. Outside the box the likelihood is read at the
    /// nearest point inside it, so the cost stays finite for the line search.
    fn eval(&self, p: &[f64]) -> Result<(f64, Vec<f64>), GprError> {
        let inside = self.clamp(p);
        let h = self.hyper(&inside);
        let (lml, g) = log_marginal_likelihood(self.x, self.r, &h, self.jitter)?;
        let (w, wg) = self.wall(p);
        let n = self.x.len() as f64;
        let grad = (0..p.len())
            .map(|i| {
                let lik = if p[i] == inside[i] { -g[i] / n } else { 0.0 };
                lik + wg[i]
            })
            .collect();
        Ok((-lml / n + w, grad))
    }
}

impl CostFunction for Objective<'_> {
    type Param = Vec<f64>;
    type Output = f64;
    fn cost(&self, p: &Vec<f64>) -> Result<f64, argmin::core::Error> {
        if p.iter().any(|v| !v.is_finite()) {
            return Ok(f64::INFINITY);
        }
        Ok(self.eval(p).map(|(c, _)| c).unwrap_or(f64::INFINITY))
    }
}

impl Gradient for Objective<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;
    fn gradient(&self, p: &Vec<f64>) -> Result<Vec<f64>, argmin::core::Error> {
        Ok(self.eval(p)?.1)
    }
}

/// Largest relative mismatch between the analytic gradient and central
/// differences of the cost.
fn gradient_mismatch(obj: &Objective, p: &[f64]) -> f64 {
    let Ok((_, g)) = obj.eval(p) else {
        return f64::INFINITY;
    };
    let scale = g.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let h = 1e-5;
        let mut up = p.to_vec();
        up[i] += h;
        let mut down = p.to_vec();
        down[i] -= h;
        let (Ok((cu, _)), Ok((cd, _))) = (obj.eval(&up), obj.eval(&down)) else {
            return f64::INFINITY;
        };
        let fd = (cu - cd) / (2.0 * h);
        worst = worst.max((fd - g[i]).abs() / scale);
    }
    if worst.is_finite() {
        worst
    } else {
        f64::INFINITY
    }
}

fn run_lbfgs(obj: Objective, start: Vec<f64>, iters: u64) -> Option<Vec<f64>> {
    let solver = LBFGS::new(MoreThuenteLineSearch::new(), 7)
        .with_tolerance_grad(1e-7)
        .ok()?
        .with_tolerance_cost(1e-12)
        .ok()?;
    let res = Executor::new(obj, solver)
        .configure(|s| s.param(start).max_iters(iters))
        .run()
        .ok()?;
    res.state().get_best_param().cloned()
}

fn run_simplex(obj: Objective, start: Vec<f64>, iters: u64) -> Option<Vec<f64>> {
    let mut simplex = vec![start.clone()];
    for i in 0..start.len() {
        let mut p = start.clone();
        p[i] += 0.5;
        simplex.push(p);
    }
    let solver = NelderMead::new(simplex).with_sd_tolerance(1e-8).ok()?;
    let res = Executor::new(obj, solver)
        .configure(|s| s.max_iters(iters * 10))
        .run()
        .ok()?;
    res.state().get_best_param().cloned()
}

impl GprModel {
    /// Fits mean and hyperparameters, then factorizes.
    pub fn train(
        x: &[Vec<f64>],
        y: &[f64],
        bounds: &[Interval],
        target: Target,
        opts: &TrainOptions,
    ) -> Result<(GprModel, TrainReport), GprError> {
        check_data(x, y, bounds)?;
        let d = bounds.len();
        let u: Vec<Vec<f64>> = x.iter().map(|row| normalize(row, bounds)).collect();
        let beta = linear_mean(&u, y)?;
        let r: Vec<f64> = u.iter().zip(y).map(|(ui, yi)| yi - mean_at(&beta, ui)).collect();
        let n = r.len() as f64;
        let spread = (r.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
        let level = y.iter().map(|v| v.abs()).sum::<f64>() / n;
        if spread <= 1e-12 * (1.0 + level) {
            // the mean explains the data; the kernel part is switched off
            let model = GprModel {
                target,
                bounds: bounds.to_vec(),
                beta,
                hyper: Hyperparameters::isotropic(d, 1.0, 1.0, 0.0),
                jitter: 0.0,
                inputs: u,
                weights: vec![0.0; x.len()],
            };
            let report = TrainReport {
                log_likelihood: f64::NAN,
                initial_log_likelihoods: Vec::new(),
                simplex_fallbacks: 0,
                degenerate: true,
            };
            return Ok((model, report));
        }

        let fit_noise = opts.fixed_noise.is_none();
        let np = d + 1 + usize::from(fit_noise);
        let ln_s = spread.ln();
        let mut lower = vec![ln_s + 1e-3f64.ln()];
        let mut upper = vec![ln_s + 1e3f64.ln()];
        lower.extend(std::iter::repeat(1e-2f64.ln()).take(d));
        upper.extend(std::iter::repeat(1e2f64.ln()).take(d));
        if fit_noise {
            lower.push(ln_s + 1e-8f64.ln());
            upper.push(ln_s);
        }
        let obj = || Objective {
            x: &u,
            r: &r,
            fixed_noise: opts.fixed_noise,
            jitter: opts.jitter,
            lower: lower.clone(),
            upper: upper.clone(),
        };

        let mut base = vec![ln_s];
        base.extend(std::iter::repeat(0.0).take(d));
        if fit_noise {
            base.push(ln_s + 0.01f64.ln());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let spread_ln = 10.0f64.ln();
        let mut starts = vec![base.clone()];
        for _ in 1..opts.restarts.max(1) {
            starts.push(base.iter().map(|b| b + rng.random_range(-spread_ln..spread_ln)).collect());
        }

        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut initial = Vec::with_capacity(starts.len());
        let mut fallbacks = 0;
        let consider = |p: Vec<f64>, best: &mut Option<(f64, Vec<f64>)>| {
            let o = obj();
            let p = o.clamp(&p);
            if let Ok((lml, _)) = log_marginal_likelihood(&u, &r, &o.hyper(&p), opts.jitter) {
                if lml.is_finite() && best.as_ref().is_none_or(|(b, _)| lml > *b) {
                    *best = Some((lml, p));
                }
            }
        };
        for start in starts {
            let o = obj();
            let lml0 = log_marginal_likelihood(&u, &r, &o.hyper(&start), opts.jitter)
                .map(|(l, _)| l)
                .unwrap_or(f64::NEG_INFINITY);
            initial.push(lml0);
            consider(start.clone(), &mut best);
            let found = if gradient_mismatch(&o, &start) < 1e-4 {
                run_lbfgs(o, start.clone(), opts.max_iters).or_else(|| {
                    fallbacks += 1;
                    run_simplex(obj(), start.clone(), opts.max_iters)
                })
            } else {
                fallbacks += 1;
                run_simplex(o, start.clone(), opts.max_iters)
            };
            if let Some(p) = found {
                consider(p, &mut best);
            }
        }
        debug_assert_eq!(np, base.len());
        let (lml, p) = best.ok_or(GprError::SingularGram)?;
        let hyper = obj().hyper(&p);
        let model = GprModel::fit_normalized(u, y, bounds, beta, hyper, target, opts.jitter)?;
        let report = TrainReport {
            log_likelihood: lml,
            initial_log_likelihoods: initial,
            simplex_fallbacks: fallbacks,
            degenerate: false,
        };
        Ok((model, report))
    }

    /// Conditions on data with given hyperparameters (no likelihood search).
    pub fn fit(
        x: &[Vec<f64>],
        y: &[f64],
        bounds: &[Interval],
        hyper: Hyperparameters,
        target: Target,
        jitter: bool,
    ) -> Result<GprModel, GprError> {
        check_data(x, y, bounds)?;
        if hyper.lengths.len() != bounds.len() {
            return Err(GprError::Dimension { expected: bounds.len(), got: hyper.lengths.len() });
        }
        let u: Vec<Vec<f64>> = x.iter().map(|row| normalize(row, bounds)).collect();
        let beta = linear_mean(&u, y)?;
        GprModel::fit_normalized(u, y, bounds, beta, hyper, target, jitter)
    }

    fn fit_normalized(
        u: Vec<Vec<f64>>,
        y: &[f64],
        bounds: &[Interval],
        beta: Vec<f64>,
        hyper: Hyperparameters,
        target: Target,
        jitter: bool,
    ) -> Result<GprModel, GprError> {
        let r: Vec<f64> = u.iter().zip(y).map(|(ui, yi)| yi - mean_at(&beta, ui)).collect();
        let (chol, eps) = factorize(gram(&u, &hyper), jitter)?;
        let w = chol.solve(&DVector::from_column_slice(&r));
        Ok(GprModel {
            target,
            bounds: bounds.to_vec(),
            beta,
            hyper,
            jitter: eps,
            inputs: u,
            weights: w.iter().copied().collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    /// Posterior mean at a raw point, and whether it lies outside the box.
    pub fn predict_one(&self, x: &[f64]) -> Result<(f64, bool), GprError> {
        if x.len() != self.dim() {
            return Err(GprError::Dimension { expected: self.dim(), got: x.len() });
        }
        let outside = x.iter().zip(&self.bounds).any(|(&v, iv)| !iv.contains(v));
        let u = normalize(x, &self.bounds);
        let mut value = mean_at(&self.beta, &u);
        for (xi, wi) in self.inputs.iter().zip(&self.weights) {
            value += wi * kernel(&u, xi, &self.hyper);
        }
        Ok((value, outside))
    }

    pub fn predict(&self, points: &[Vec<f64>]) -> Result<Predictions, GprError> {
        #[cfg(feature = "parallel")]
        let each: Vec<_> = points.par_iter().map(|p| self.predict_one(p)).collect();
        #[cfg(not(feature = "parallel"))]
        let each: Vec<_> = points.iter().map(|p| self.predict_one(p)).collect();
        let mut values = Vec::with_capacity(points.len());
        let mut extrapolated = Vec::new();
        for (i, res) in each.into_iter().enumerate() {
            let (v, out) = res?;
            values.push(v);
            if out {
                extrapolated.push(i);
            }
        }
        Ok(Predictions { values, extrapolated })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<GprModel, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn load(path: &Path) -> io::Result<GprModel> {
        let s = std::fs::read_to_string(path)?;
        GprModel::from_json(&s).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub values: Vec<f64>,
    /// Indices of points with a coordinate outside the box.
    pub extrapolated: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub rmsre: f64,
    pub max_ae: f64,
    pub max_re: f64,
}

pub fn evaluate(predicted: &[f64], truth: &[f64]) -> Result<Metrics, MetricsError> {
    if predicted.len() != truth.len() {
        return Err(MetricsError::LengthMismatch(predicted.len(), truth.len()));
    }
    if truth.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some(i) = truth.iter().position(|&y| y == 0.0) {
        return Err(MetricsError::ZeroTruth(i));
    }
    let n = truth.len() as f64;
    let (mut se, mut sre, mut max_ae, mut max_re) = (0.0, 0.0, 0.0f64, 0.0f64);
    for (p, y) in predicted.iter().zip(truth) {
        let e = (p - y).abs();
        let re = e / y.abs();
        se += e * e;
        sre += re * re;
        max_ae = max_ae.max(e);
        max_re = max_re.max(re);
    }
    Ok(Metrics {
        rmse: (se / n).sqrt(),
        rmsre: (sre / n).sqrt(),
        max_ae,
        max_re,
    })
}
