//! GMWB contract mechanics: withdrawals, penalties, death benefit, final
//! payoff and mortality weighting.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::ContractError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractParams {
    pub premium: f64,
    /// Whole years; withdrawals happen on each anniversary `1..=maturity`.
    pub maturity: u32,
    pub alpha: f64,
    pub kappa: f64,
    /// Guaranteed annual withdrawal. Defaults to `premium / maturity`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guarantee: Option<f64>,
}

impl ContractParams {
    /// Premium 100, ten years, 3.5% fee, 10% penalty.
    pub fn reference() -> Self {
        ContractParams {
            premium: 100.0,
            maturity: 10,
            alpha: 0.035,
            kappa: 0.10,
            guarantee: None,
        }
    }

    pub fn guaranteed_withdrawal(&self) -> f64 {
        self.guarantee
            .unwrap_or(self.premium / f64::from(self.maturity.max(1)))
    }

    pub fn validate(&self) -> Result<(), ContractError> {
        let g = self.guaranteed_withdrawal();
        if !(self.premium > 0.0 && self.premium.is_finite()) {
            return Err(ContractError::Invalid(format!("premium must be positive, got {}", self.premium)));
        }
        if self.maturity == 0 {
            return Err(ContractError::Invalid("maturity must be at least one year".into()));
        }
        if !(0.0..=1.0).contains(&self.kappa) {
            return Err(ContractError::Invalid(format!("kappa must lie in [0, 1], got {}", self.kappa)));
        }
        if !(0.0..=self.premium).contains(&g) {
            return Err(ContractError::Invalid(format!("guarantee must lie in [0, P], got {g}")));
        }
        if !self.alpha.is_finite() {
            return Err(ContractError::Invalid("fee rate must be finite".into()));
        }
        Ok(())
    }

    pub fn net_cash_flow(&self, w: f64) -> Result<f64, ContractError> {
        net_cash_flow(w, self.guaranteed_withdrawal(), self.kappa)
    }
}

/// Account value and base benefit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmwbState {
    pub account: f64,
    pub benefit: f64,
}

impl GmwbState {
    pub fn inception(premium: f64) -> Self {
        GmwbState {
            account: premium,
            benefit: premium,
        }
    }
}

/// Cash actually received for a withdrawal `w`: amounts above the guarantee
/// are charged the penalty fraction `kappa`.
pub fn net_cash_flow(w: f64, guarantee: f64, kappa: f64) -> Result<f64, ContractError> {
    if w < 0.0 {
        return Err(ContractError::NegativeWithdrawal(w));
    }
    Ok(cash_flow_unchecked(w, guarantee, kappa))
}

#[inline]
pub(crate) fn cash_flow_unchecked(w: f64, guarantee: f64, kappa: f64) -> f64 {
    if w <= guarantee {
        w
    } else {
        w - kappa * (w - guarantee)
    }
}

pub fn apply_withdrawal(state: GmwbState, w: f64) -> Result<GmwbState, ContractError> {
    if w < 0.0 {
        return Err(ContractError::NegativeWithdrawal(w));
    }
    if w > state.benefit {
        return Err(ContractError::WithdrawalExceedsBenefit {
            withdrawal: w,
            benefit: state.benefit,
        });
    }
    Ok(GmwbState {
        account: (state.account - w).max(0.0),
        benefit: state.benefit - w,
    })
}

/// Paid at the anniversary following death, on the pre-withdrawal state.
pub fn death_benefit(state: GmwbState, kappa: f64) -> f64 {
    state.account.max((1.0 - kappa) * state.benefit)
}

/// Paid at maturity on the post-withdrawal state.
pub fn final_payoff(state: GmwbState, kappa: f64) -> f64 {
    state.account.max((1.0 - kappa) * state.benefit)
}

/// Unconditional annual death probabilities of the original cohort.
///
/// `q[i - 1]` is the fraction of the initial cohort dying in contract year
/// `i`. The survivor fraction `R` is piecewise linear between anniversaries,
/// so the death density is constant inside each year.
#[derive(Debug, Clone, PartialEq)]
pub struct MortalityTable {
    deaths: Vec<f64>,
    survivors: Vec<f64>,
}

impl MortalityTable {
    pub fn new(deaths: Vec<f64>) -> Result<Self, ContractError> {
        for (i, &q) in deaths.iter().enumerate() {
            if !(0.0..=1.0).contains(&q) {
                return Err(ContractError::Mortality(format!(
                    "year {}: probability {q} outside [0, 1]",
                    i + 1
                )));
            }
        }
        let mut survivors = Vec::with_capacity(deaths.len() + 1);
        survivors.push(1.0);
        let mut alive = 1.0;
        for &q in &deaths {
            alive -= q;
            survivors.push(alive);
        }
        if alive < -1e-12 {
            return Err(ContractError::Mortality(format!(
                "death probabilities sum to {} > 1",
                1.0 - alive
            )));
        }
        if let Some(last) = survivors.last_mut() {
            *last = last.max(0.0);
        }
        Ok(MortalityTable { deaths, survivors })
    }

    /// Nobody dies: `R` is identically one.
    pub fn zero(years: u32) -> Self {
        MortalityTable::new(vec![0.0; years as usize]).expect("zero table is valid")
    }

    pub fn years(&self) -> usize {
        self.deaths.len()
    }

    pub fn death_probability(&self, year: usize) -> f64 {
        self.deaths[year - 1]
    }

    /// `R(i)` at integer anniversary `i`.
    pub fn survivor_at(&self, anniversary: usize) -> f64 {
        self.survivors[anniversary]
    }

    /// `R(t)` for `0 <= t <= years`.
    pub fn survivor_fraction(&self, t: f64) -> Result<f64, ContractError> {
        let years = self.years() as f64;
        if !(0.0..=years).contains(&t) {
            return Err(ContractError::TimeOutOfRange { t, maturity: years });
        }
        let i = (t.floor() as usize).min(self.years().saturating_sub(1));
        if self.years() == 0 {
            return Ok(1.0);
        }
        let frac = t - i as f64;
        Ok(self.survivors[i] - frac * self.deaths[i])
    }

    /// Density `M(t)`, constant on `(i - 1, i]`.
    pub fn density(&self, t: f64) -> Result<f64, ContractError> {
        let years = self.years() as f64;
        if !(0.0..=years).contains(&t) || self.years() == 0 {
            return Err(ContractError::TimeOutOfRange { t, maturity: years });
        }
        let year = (t.ceil() as usize).clamp(1, self.years());
        Ok(self.deaths[year - 1])
    }

    /// Two-column CSV `year,death_probability` with years `1..=T` in order.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self, ContractError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| ContractError::Mortality(e.to_string()))?
            .clone();
        if headers.len() != 2 || &headers[0] != "year" || &headers[1] != "death_probability" {
            return Err(ContractError::Mortality(
                "expected header `year,death_probability`".into(),
            ));
        }
        let mut deaths = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| ContractError::Mortality(e.to_string()))?;
            let year: usize = rec[0]
                .parse()
                .map_err(|_| ContractError::Mortality(format!("row {}: bad year {:?}", row + 1, &rec[0])))?;
            if year != row + 1 {
                return Err(ContractError::Mortality(format!(
                    "row {}: expected year {}, found {year}",
                    row + 1,
                    row + 1
                )));
            }
            let q: f64 = rec[1].parse().map_err(|_| {
                ContractError::Mortality(format!("row {}: bad probability {:?}", row + 1, &rec[1]))
            })?;
            deaths.push(q);
        }
        MortalityTable::new(deaths)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self, ContractError> {
        let file = std::fs::File::open(path)
            .map_err(|e| ContractError::Mortality(format!("{}: {e}", path.display())))?;
        Self::from_csv_reader(file)
    }

    /// Restricts or checks the table against a contract maturity.
    pub fn for_maturity(&self, maturity: u32) -> Result<Self, ContractError> {
        let t = maturity as usize;
        if self.years() < t {
            return Err(ContractError::Mortality(format!(
                "table covers {} years, contract needs {t}",
                self.years()
            )));
        }
        MortalityTable::new(self.deaths[..t].to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cash_flow_branches() {
        assert_eq!(net_cash_flow(8.0, 10.0, 0.1).unwrap(), 8.0);
        assert!((net_cash_flow(15.0, 10.0, 0.1).unwrap() - 14.5).abs() < 1e-14);
        for w in [0.0, 3.0, 10.0, 25.0, 100.0] {
            assert_eq!(net_cash_flow(w, 10.0, 0.0).unwrap(), w);
        }
        assert_eq!(net_cash_flow(-1.0, 10.0, 0.1), Err(ContractError::NegativeWithdrawal(-1.0)));
    }

    #[test]
    fn cash_flow_never_exceeds_withdrawal() {
        for i in 0..=200 {
            let w = i as f64 * 0.5;
            let f = net_cash_flow(w, 10.0, 0.2).unwrap();
            assert!(f <= w);
            assert_eq!(f == w, w <= 10.0);
        }
    }

    #[test]
    fn withdrawal_updates() {
        let s = GmwbState {
            account: 50.0,
            benefit: 80.0,
        };
        assert_eq!(apply_withdrawal(s, 0.0).unwrap(), s);
        assert_eq!(
            apply_withdrawal(s, 60.0).unwrap(),
            GmwbState {
                account: 0.0,
                benefit: 20.0
            }
        );
        assert_eq!(
            apply_withdrawal(GmwbState::inception(100.0), 100.0).unwrap(),
            GmwbState {
                account: 0.0,
                benefit: 0.0
            }
        );
        assert!(matches!(
            apply_withdrawal(s, 81.0),
            Err(ContractError::WithdrawalExceedsBenefit { .. })
        ));
    }

    #[test]
    fn death_benefit_and_final_payoff() {
        let s = |a, b| GmwbState {
            account: a,
            benefit: b,
        };
        assert_eq!(death_benefit(s(90.0, 100.0), 0.1), 90.0);
        assert_eq!(death_benefit(s(0.0, 100.0), 0.1), 90.0);
        assert_eq!(death_benefit(s(37.0, 100.0), 1.0), 37.0);
        assert_eq!(final_payoff(s(90.0, 100.0), 0.1), 90.0);
        assert_eq!(final_payoff(s(0.0, 100.0), 0.1), 90.0);
        assert_eq!(final_payoff(s(37.0, 100.0), 1.0), 37.0);
    }

    #[test]
    fn survivor_fraction_basics() {
        let one = MortalityTable::new(vec![0.02]).unwrap();
        assert_eq!(one.survivor_fraction(0.0).unwrap(), 1.0);
        assert!((one.survivor_fraction(1.0).unwrap() - 0.98).abs() < 1e-15);
        assert!((one.survivor_fraction(0.5).unwrap() - 0.99).abs() < 1e-15);
        assert!(matches!(
            one.survivor_fraction(1.5),
            Err(ContractError::TimeOutOfRange { .. })
        ));
        let table = MortalityTable::new(vec![0.01, 0.02, 0.03]).unwrap();
        let mut total = table.survivor_at(3);
        for i in 1..=3 {
            let d = table.survivor_at(i - 1) - table.survivor_at(i);
            assert!((d - table.death_probability(i)).abs() < 1e-15);
            assert!((table.density(i as f64 - 0.5).unwrap() - d).abs() < 1e-15);
            total += d;
        }
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mortality_csv() {
        let csv = "year,death_probability\n1,0.01\n2,0.015\n";
        let t = MortalityTable::from_csv_reader(csv.as_bytes()).unwrap();
        assert_eq!(t.years(), 2);
        assert!((t.survivor_at(2) - 0.975).abs() < 1e-15);
        assert!(MortalityTable::from_csv_reader("year,q\n1,0.1\n".as_bytes()).is_err());
        assert!(MortalityTable::from_csv_reader("year,death_probability\n2,0.1\n".as_bytes()).is_err());
        assert!(MortalityTable::from_csv_reader("year,death_probability\n1,1.5\n".as_bytes()).is_err());
        assert!(t.for_maturity(3).is_err());
    }

    #[test]
    fn contract_validation() {
        let c = ContractParams::reference();
        c.validate().unwrap();
        assert_eq!(c.guaranteed_withdrawal(), 10.0);
        let mut bad = c.clone();
        bad.kappa = 1.5;
        assert!(bad.validate().is_err());
        bad = c.clone();
        bad.guarantee = Some(150.0);
        assert!(bad.validate().is_err());
    }
}
