//! Command implementations.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use gmwb_core::fee::{solve_fee, FeeConfig};
use gmwb_core::gpr::{self, GprModel, Target, TrainOptions};
use gmwb_core::hpde::bump_delta;
use gmwb_core::mc::{bond_prices, static_gmwb_price, McConfig};
use gmwb_core::model::{ParameterBox, ParameterPoint, PREDICTOR_COUNT};
use gmwb_core::qmc::FaureGenerator;
use gmwb_core::{price_gmwb, ContractParams, FeeError, PricingError, WithdrawalMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::files::{self, Row, VALUE_COLUMN};
use crate::{
    EvaluateArgs, FeeArgs, GenDataArgs, McCheckArgs, PredictArgs, PriceArgs, PricingArgs, Report, Sampler, Setup,
    TrainArgs,
};

fn note_alignment(s: &Setup) {
    if s.grid.time_steps != s.requested_steps {
        eprintln!(
            "note: {} time steps rounded up to {} so anniversaries fall on the grid",
            s.requested_steps, s.grid.time_steps
        );
    }
}

fn load(args: &PricingArgs) -> Result<Setup> {
    let s = args.load()?;
    note_alignment(&s);
    Ok(s)
}

fn load_box(path: Option<&Path>) -> Result<ParameterBox> {
    let b = match path {
        Some(p) => files::read_json(p)?,
        None => ParameterBox::REFERENCE,
    };
    b.validate().context("parameter box")?;
    Ok(b)
}

/// Setup with the model, fee and penalty of `p`.
fn at_point(s: &Setup, p: &ParameterPoint) -> (gmwb_core::HhwParams, ContractParams) {
    let contract = ContractParams {
        alpha: p.alpha,
        kappa: p.kappa,
        ..s.contract.clone()
    };
    (p.model, contract)
}

fn point_of(s: &Setup) -> ParameterPoint {
    ParameterPoint {
        model: s.model,
        alpha: s.contract.alpha,
        kappa: s.contract.kappa,
    }
}

fn hpde_fee(s: &Setup, contract: &ContractParams, model: &gmwb_core::HhwParams, tol: f64) -> Result<gmwb_core::fee::FeeSolution, FeeError<PricingError>> {
    let cfg = FeeConfig { tol, ..FeeConfig::default() };
    solve_fee(contract.premium, &cfg, |alpha| {
        let c = ContractParams { alpha, ..contract.clone() };
        price_gmwb(model, &c, &s.mortality, &s.grid, s.mode).map(|v| v.price)
    })
}

/// The target value for one parameter set; `NaN` when no fair fee exists.
fn target_value(s: &Setup, p: &ParameterPoint, target: Target) -> Result<f64> {
    let (model, contract) = at_point(s, p);
    Ok(match target {
        Target::Price => price_gmwb(&model, &contract, &s.mortality, &s.grid, s.mode)?.price / contract.premium,
        Target::Delta => price_gmwb(&model, &contract, &s.mortality, &s.grid, s.mode)?.delta,
        Target::Fee => match hpde_fee(s, &contract, &model, 1e-3) {
            Ok(sol) => sol.alpha,
            Err(FeeError::NoRoot { .. }) => f64::NAN,
            Err(e) => return Err(e.into()),
        },
    })
}

pub fn price(a: &PriceArgs) -> Result<Report> {
    let s = load(&a.pricing)?;
    let start = Instant::now();
    let v = price_gmwb(&s.model, &s.contract, &s.mortality, &s.grid, s.mode)?;
    let elapsed = start.elapsed().as_secs_f64();
    let mut out = format!("price {:.6}\ndelta {:.6}\n", v.price, v.delta);
    if let Some(h) = a.bump {
        let d = bump_delta(&s.model, &s.contract, &s.mortality, &s.grid, s.mode, h)?;
        writeln!(out, "bump_delta {d:.6}")?;
    }
    writeln!(out, "time_s {elapsed:.3}")?;
    Ok(Report::ok(out))
}

pub fn fee(a: &FeeArgs) -> Result<Report> {
    let s = load(&a.pricing)?;
    let cfg = FeeConfig { tol: a.tol, ..FeeConfig::default() };
    let start = Instant::now();
    let sol = if a.engine == "hpde" {
        hpde_fee(&s, &s.contract, &s.model, a.tol).map_err(anyhow::Error::from)
    } else {
        let m = GprModel::load(Path::new(&a.engine)).with_context(|| format!("loading surrogate {}", a.engine))?;
        if m.target != Target::Price {
            bail!("fee engine needs a price surrogate, {} predicts {:?}", a.engine, m.target);
        }
        let mut p = point_of(&s);
        let premium = s.contract.premium;
        solve_fee(premium, &cfg, |alpha| {
            p.alpha = alpha;
            m.predict_one(&p.to_array()).map(|(v, _)| v * premium)
        })
        .map_err(anyhow::Error::from)
    }?;
    let elapsed = start.elapsed().as_secs_f64();
    Ok(Report::ok(format!(
        "fee_bps {:.4}\nvalue {:.6}\niterations {}\nevaluations {}\ntime_s {elapsed:.3}\n",
        sol.bps(),
        sol.value,
        sol.iterations,
        sol.evaluations
    )))
}

/// The first `n` sample points, in index order.
pub fn sample_points(pbox: &ParameterBox, n: usize, sampler: Sampler, skip: u64, seed: u64) -> Vec<ParameterPoint> {
    match sampler {
        Sampler::Faure => {
            let mut g = FaureGenerator::new(PREDICTOR_COUNT);
            (0..n as u64).map(|i| pbox.map_unit(&g.point(skip + i + 1))).collect()
        }
        Sampler::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n)
                .map(|_| {
                    let u: Vec<f64> = (0..PREDICTOR_COUNT).map(|_| rng.random::<f64>()).collect();
                    pbox.map_unit(&u)
                })
                .collect()
        }
    }
}

pub fn gen_data(a: &GenDataArgs) -> Result<Report> {
    if a.n == 0 {
        bail!("--n must be at least 1");
    }
    let s = load(&a.pricing)?;
    let pbox = load_box(a.pbox.as_deref())?;
    let target: Target = a.target.into();
    let mut points = sample_points(&pbox, a.n, a.sampler, a.skip, a.seed);
    if target == Target::Fee {
        // the fee is the output, so its input column carries no information
        for p in &mut points {
            p.alpha = 0.0;
        }
    }
    let start = Instant::now();
    let values = points
        .par_iter()
        .enumerate()
        .map(|(i, p)| target_value(&s, p, target).with_context(|| format!("row {}", i + 1)))
        .collect::<Result<Vec<f64>>>()?;
    let elapsed = start.elapsed().as_secs_f64();
    files::write_atomic(&a.out, files::render_rows(VALUE_COLUMN, points.iter().zip(values.iter().copied())).as_bytes())?;
    let missing = values.iter().filter(|v| !v.is_finite()).count();
    eprintln!("priced {} rows in {elapsed:.1} s", a.n);
    Ok(Report::ok(format!(
        "rows {}\nno_fee_rows {missing}\nout {}\n",
        a.n,
        a.out.display()
    )))
}

fn split(rows: &[Row]) -> (Vec<Vec<f64>>, Vec<f64>, usize) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut dropped = 0;
    for r in rows {
        match r.value {
            Some(v) if v.is_finite() => {
                x.push(r.point.to_array().to_vec());
                y.push(v);
            }
            _ => dropped += 1,
        }
    }
    (x, y, dropped)
}

pub fn train(a: &TrainArgs) -> Result<Report> {
    let rows = files::read_rows(&a.data, true)?;
    let (x, y, dropped) = split(&rows);
    let bounds = load_box(a.pbox.as_deref())?.intervals().to_vec();
    let target: Target = a.target.into();
    let mut out = String::new();
    let model = match &a.hyper_from {
        Some(path) => {
            let donor = GprModel::load(path).with_context(|| format!("loading {}", path.display()))?;
            let m = GprModel::fit(&x, &y, &bounds, donor.hyper.clone(), target, true)?;
            writeln!(out, "hyperparameters from {}", path.display())?;
            m
        }
        None => {
            let opts = TrainOptions {
                restarts: a.restarts,
                seed: a.seed,
                max_iters: a.max_iters,
                ..TrainOptions::default()
            };
            let (m, rep) = GprModel::train(&x, &y, &bounds, target, &opts)?;
            writeln!(out, "log_likelihood {:.6}", rep.log_likelihood)?;
            writeln!(out, "simplex_fallbacks {}", rep.simplex_fallbacks)?;
            if rep.degenerate {
                writeln!(out, "degenerate residual: mean-only model")?;
            }
            m
        }
    };
    files::write_atomic(&a.out, model.to_json().as_bytes())?;
    writeln!(out, "rows {}", y.len())?;
    if dropped > 0 {
        writeln!(out, "dropped_rows {dropped}")?;
    }
    writeln!(out, "signal {:.6e}\nnoise {:.6e}", model.hyper.signal, model.hyper.noise)?;
    let lengths: Vec<String> = model.hyper.lengths.iter().map(|l| format!("{l:.4e}")).collect();
    writeln!(out, "lengths {}", lengths.join(" "))?;
    writeln!(out, "out {}", a.out.display())?;
    Ok(Report::ok(out))
}

pub fn predict(a: &PredictArgs) -> Result<Report> {
    let m = GprModel::load(&a.gpr).with_context(|| format!("loading {}", a.gpr.display()))?;
    let rows = files::read_rows(&a.data, false)?;
    let xs: Vec<Vec<f64>> = rows.iter().map(|r| r.point.to_array().to_vec()).collect();
    let pred = m.predict(&xs)?;
    let text = files::render_rows("prediction", rows.iter().map(|r| &r.point).zip(pred.values.iter().copied()));
    files::write_atomic(&a.out, text.as_bytes())?;
    let mut out = format!("rows {}\n", rows.len());
    if !pred.extrapolated.is_empty() {
        writeln!(out, "outside_box {}", pred.extrapolated.len())?;
    }
    writeln!(out, "out {}", a.out.display())?;
    Ok(Report::ok(out))
}

pub fn evaluate(a: &EvaluateArgs) -> Result<Report> {
    let m = GprModel::load(&a.gpr).with_context(|| format!("loading {}", a.gpr.display()))?;
    let rows = files::read_rows(&a.data, true)?;
    let (x, y, dropped) = split(&rows);
    if x.is_empty() {
        bail!("{}: no rows with finite values", a.data.display());
    }
    // one prediction at a time, as a user of the surrogate would call it
    let start = Instant::now();
    let mut predicted = Vec::with_capacity(x.len());
    for xi in &x {
        predicted.push(m.predict_one(xi)?.0);
    }
    let per_prediction = start.elapsed().as_secs_f64() / x.len() as f64;
    let metrics = gpr::evaluate(&predicted, &y)?;

    let mut out = String::new();
    writeln!(out, "rows {}", y.len())?;
    if dropped > 0 {
        writeln!(out, "dropped_rows {dropped}")?;
    }
    writeln!(
        out,
        "rmse {:.6e}\nrmsre {:.6e}\nmax_ae {:.6e}\nmax_re {:.6e}",
        metrics.rmse, metrics.rmsre, metrics.max_ae, metrics.max_re
    )?;
    writeln!(out, "prediction_time_s {per_prediction:.3e}")?;
    if a.time_samples > 0 {
        let s = load(&a.pricing)?;
        let count = a.time_samples.min(rows.len());
        let start = Instant::now();
        for r in rows.iter().take(count) {
            target_value(&s, &r.point, m.target)?;
        }
        let per_price = start.elapsed().as_secs_f64() / count as f64;
        writeln!(out, "pricing_time_s {per_price:.3e}")?;
        writeln!(out, "speed_up {:.3e}", per_price / per_prediction.max(f64::MIN_POSITIVE))?;
    }
    if let Some(path) = &a.scatter {
        let mut csv = String::from("truth,error\n");
        for (t, p) in y.iter().zip(&predicted) {
            writeln!(csv, "{},{}", files::fmt17(*t), files::fmt17(p - t))?;
        }
        files::write_atomic(path, csv.as_bytes())?;
        writeln!(out, "scatter {}", path.display())?;
    }
    Ok(Report::ok(out))
}

/// Bond maturities checked against the flat initial curve.
pub const BOND_MATURITIES: [f64; 3] = [1.0, 5.0, 10.0];

pub fn mc_check(a: &McCheckArgs) -> Result<Report> {
    let s = load(&a.pricing)?;
    let cfg = McConfig {
        paths: a.paths,
        steps_per_year: a.steps_per_year,
        seed: a.seed,
    };
    let premium = s.contract.premium;
    let mut ok = true;
    let mut out = String::new();
    let verdict = |pass: bool| if pass { "PASS" } else { "FAIL" };

    let start = Instant::now();
    let mc = static_gmwb_price(&s.model, &s.contract, &s.mortality, &cfg);
    let hpde = price_gmwb(&s.model, &s.contract, &s.mortality, &s.grid, WithdrawalMode::Static)?;
    let tol = (3.0 * mc.std_error).max(1e-3 * premium);
    let pass = (hpde.price - mc.mean).abs() <= tol;
    ok &= pass;
    writeln!(out, "static_mc {:.6} +- {:.6}", mc.mean, mc.std_error)?;
    writeln!(out, "static_hpde {:.6}", hpde.price)?;
    writeln!(
        out,
        "static_check diff {:.6} tol {:.6} {}",
        hpde.price - mc.mean,
        tol,
        verdict(pass)
    )?;

    let bonds = bond_prices(&s.model, &BOND_MATURITIES, &cfg);
    for (t, b) in BOND_MATURITIES.iter().zip(&bonds) {
        let exact = (-s.model.r0 * t).exp();
        let pass = b.agrees_with(exact, 3.0);
        ok &= pass;
        writeln!(
            out,
            "bond T={t} mc {:.6} +- {:.6} curve {:.6} {}",
            b.mean,
            b.std_error,
            exact,
            verdict(pass)
        )?;
    }
    writeln!(out, "overall {}", verdict(ok))?;
    eprintln!("mc-check took {:.1} s", start.elapsed().as_secs_f64());
    if let Some(path) = &a.out {
        files::write_atomic(path, out.as_bytes())?;
    }
    Ok(Report { text: out, ok })
}
