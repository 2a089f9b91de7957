//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Inputs arrive as JSON, `{"model": {..}, "contract": {..}}`, and results
//! go back as JSON strings. Errors become JavaScript exceptions.

use gmwb_core::fee::{solve_fee, FeeConfig};
use gmwb_core::qmc::FaureGenerator;
use gmwb_core::{price_gmwb, ContractParams, GridConfig, HhwParams, MortalityTable, WithdrawalMode};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

#[derive(Debug, Deserialize)]
struct Inputs {
    model: HhwParams,
    contract: ContractParams,
}

#[derive(Debug, Serialize)]
struct Curve {
    price: f64,
    delta: f64,
    time_steps: usize,
    accounts: Vec<f64>,
    values: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct Fee {
    bps: f64,
    value: f64,
    evaluations: usize,
}

fn parse(json: &str) -> Result<Inputs, String> {
    let inputs: Inputs = serde_json::from_str(json).map_err(|e| e.to_string())?;
    inputs.model.validate().map_err(|e| e.to_string())?;
    inputs.contract.validate().map_err(|e| e.to_string())?;
    Ok(inputs)
}

fn grid(steps: usize, benefit_steps: usize, maturity: u32) -> GridConfig {
    GridConfig::square(steps.max(1)).with_benefit_steps(benefit_steps.max(1)).aligned(maturity)
}

fn mode(optimal: bool) -> WithdrawalMode {
    if optimal {
        WithdrawalMode::Optimal
    } else {
        WithdrawalMode::Static
    }
}

/// Price, Delta and the value curve over the account value at inception.
pub fn value_curve_json(json: &str, steps: usize, benefit_steps: usize, optimal: bool) -> Result<String, String> {
    let Inputs { model, contract } = parse(json)?;
    let g = grid(steps, benefit_steps, contract.maturity);
    let v = price_gmwb(&model, &contract, &MortalityTable::zero(contract.maturity), &g, mode(optimal))
        .map_err(|e| e.to_string())?;
    // keep the plotted range near the premium
    let keep: Vec<usize> = (0..v.accounts.len())
        .filter(|&i| v.accounts[i] <= 4.0 * contract.premium)
        .collect();
    let curve = Curve {
        price: v.price,
        delta: v.delta,
        time_steps: g.time_steps,
        accounts: keep.iter().map(|&i| v.accounts[i]).collect(),
        values: keep.iter().map(|&i| v.values[i]).collect(),
    };
    serde_json::to_string(&curve).map_err(|e| e.to_string())
}

/// Fair fee by the secant method on direct prices.
pub fn fair_fee_json(json: &str, steps: usize, benefit_steps: usize) -> Result<String, String> {
    let Inputs { model, contract } = parse(json)?;
    let g = grid(steps, benefit_steps, contract.maturity);
    let mortality = MortalityTable::zero(contract.maturity);
    let sol = solve_fee(contract.premium, &FeeConfig::default(), |alpha| {
        let c = ContractParams { alpha, ..contract.clone() };
        price_gmwb(&model, &c, &mortality, &g, WithdrawalMode::Optimal).map(|v| v.price)
    })
    .map_err(|e| e.to_string())?;
    serde_json::to_string(&Fee {
        bps: sol.bps(),
        value: sol.value,
        evaluations: sol.evaluations,
    })
    .map_err(|e| e.to_string())
}

/// Coordinates `a` and `b` of the first `n` points of the eleven-dimensional
/// Faure sequence, interleaved as `[a_1, b_1, a_2, b_2, ..]`.
pub fn faure_projection(n: usize, a: usize, b: usize) -> Vec<f64> {
    let mut g = FaureGenerator::new(11);
    let (a, b) = (a.min(10), b.min(10));
    (1..=n as u64)
        .flat_map(|i| {
            let p = g.point(i);
            [p[a], p[b]]
        })
        .collect()
}

#[wasm_bindgen(js_name = valueCurve)]
pub fn value_curve(json: &str, steps: usize, benefit_steps: usize, optimal: bool) -> Result<String, JsError> {
    value_curve_json(json, steps, benefit_steps, optimal).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = fairFee)]
pub fn fair_fee(json: &str, steps: usize, benefit_steps: usize) -> Result<String, JsError> {
    fair_fee_json(json, steps, benefit_steps).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = faurePoints)]
pub fn faure_points(n: usize, a: usize, b: usize) -> Vec<f64> {
    faure_projection(n, a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    const INPUTS: &str = r#"{
        "model": {"v0": 0.05, "kv": 2.0, "thetav": 0.05, "omegav": 0.5, "rhov": -0.55,
                  "r0": 0.02, "kr": 0.15, "omegar": 0.015, "rhor": 0.2},
        "contract": {"premium": 100.0, "maturity": 10, "alpha": 0.035, "kappa": 0.1, "guarantee": null}
    }"#;

    #[test]
    fn curve_matches_core_price() {
        let out: serde_json::Value = serde_json::from_str(&value_curve_json(INPUTS, 20, 4, true).unwrap()).unwrap();
        let direct = price_gmwb(
            &HhwParams::REFERENCE,
            &ContractParams::reference(),
            &MortalityTable::zero(10),
            &GridConfig::square(20).with_benefit_steps(4),
            WithdrawalMode::Optimal,
        )
        .unwrap();
        assert_eq!(out["price"].as_f64().unwrap(), direct.price);
        let n = out["accounts"].as_array().unwrap().len();
        assert!(n > 2 && n == out["values"].as_array().unwrap().len());
    }

    #[test]
    fn fee_makes_contract_fair() {
        let out: serde_json::Value = serde_json::from_str(&fair_fee_json(INPUTS, 20, 4).unwrap()).unwrap();
        assert!((out["value"].as_f64().unwrap() - 100.0).abs() <= 0.1);
    }

    #[test]
    fn bad_inputs_are_reported() {
        assert!(value_curve_json("{}", 20, 4, true).is_err());
        let negative = INPUTS.replace("\"v0\": 0.05", "\"v0\": -0.05");
        assert!(value_curve_json(&negative, 20, 4, true).is_err());
    }

    #[test]
    fn projection_interleaves_coordinates() {
        let p = faure_projection(3, 0, 10);
        assert_eq!(p.len(), 6);
        assert_eq!(p[0], 1.0 / 11.0);
        assert_eq!(p[1], 1.0 / 11.0);
    }
}
