//! Heston Hull-White parameterization on a flat initial yield curve.
//!
//! The short rate is carried as `r = omega_r * x + phi(t)` where `x` is a
//! unit-volatility Ornstein-Uhlenbeck factor started at zero and `phi` is the
//! deterministic shift that reprices the flat discount curve `exp(-r0 t)`.

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// The nine stochastic-model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HhwParams {
    pub v0: f64,
    #[serde(rename = "kv")]
    pub k_v: f64,
    #[serde(rename = "thetav")]
    pub theta_v: f64,
    #[serde(rename = "omegav")]
    pub omega_v: f64,
    #[serde(rename = "rhov")]
    pub rho_v: f64,
    pub r0: f64,
    #[serde(rename = "kr")]
    pub k_r: f64,
    #[serde(rename = "omegar")]
    pub omega_r: f64,
    #[serde(rename = "rhor")]
    pub rho_r: f64,
}

impl HhwParams {
    /// Reference parameter set used throughout the tests and the demo.
    pub const REFERENCE: HhwParams = HhwParams {
        v0: 0.05,
        k_v: 2.0,
        theta_v: 0.05,
        omega_v: 0.5,
        rho_v: -0.55,
        r0: 0.02,
        k_r: 0.15,
        omega_r: 0.015,
        rho_r: 0.2,
    };

    pub fn validate(&self) -> Result<(), ModelError> {
        let all = [
            self.v0,
            self.k_v,
            self.theta_v,
            self.omega_v,
            self.rho_v,
            self.r0,
            self.k_r,
            self.omega_r,
            self.rho_r,
        ];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        for (name, value) in [
            ("v0", self.v0),
            ("kv", self.k_v),
            ("thetav", self.theta_v),
            ("omegav", self.omega_v),
            ("kr", self.k_r),
            ("omegar", self.omega_r),
        ] {
            if value <= 0.0 {
                return Err(ModelError::NotPositive { name, value });
            }
        }
        if self.rho_v * self.rho_v + self.rho_r * self.rho_r >= 1.0 {
            return Err(ModelError::Correlation {
                rho_v: self.rho_v,
                rho_r: self.rho_r,
            });
        }
        Ok(())
    }

    /// Loading of the asset Brownian motion on the component orthogonal to
    /// both the variance and the rate drivers.
    pub fn residual_correlation(&self) -> ResidualCorrelation {
        ResidualCorrelation::new(self.rho_v, self.rho_r)
    }

    /// Deterministic shift of the short rate, `phi(t)`.
    pub fn phi(&self, t: f64) -> f64 {
        phi(t, self)
    }

    pub fn short_rate(&self, x: f64, t: f64) -> f64 {
        short_rate(x, t, self)
    }

    /// Unconditional mean of the variance process at time `t`.
    pub fn variance_mean(&self, t: f64) -> f64 {
        self.theta_v + (self.v0 - self.theta_v) * (-self.k_v * t).exp()
    }
}

/// `rho3 = sqrt(1 - rho_v^2 - rho_r^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualCorrelation(f64);

impl ResidualCorrelation {
    pub fn new(rho_v: f64, rho_r: f64) -> Self {
        ResidualCorrelation((1.0 - rho_v * rho_v - rho_r * rho_r).max(0.0).sqrt())
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Flat-curve shift `phi(t) = r0 + omega_r^2 / (2 k_r^2) (1 - exp(-k_r t))^2`.
pub fn phi(t: f64, p: &HhwParams) -> f64 {
    let decay = 1.0 - (-p.k_r * t).exp();
    p.r0 + p.omega_r * p.omega_r / (2.0 * p.k_r * p.k_r) * decay * decay
}

pub fn short_rate(x: f64, t: f64, p: &HhwParams) -> f64 {
    p.omega_r * x + phi(t, p)
}

/// The eleven predictors: model parameters plus fee and penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterPoint {
    #[serde(flatten)]
    pub model: HhwParams,
    pub alpha: f64,
    pub kappa: f64,
}

pub const PREDICTOR_NAMES: [&str; 11] = [
    "v0", "kv", "thetav", "omegav", "rhov", "r0", "kr", "omegar", "rhor", "alpha", "kappa",
];

pub const PREDICTOR_COUNT: usize = PREDICTOR_NAMES.len();

impl ParameterPoint {
    pub fn to_array(&self) -> [f64; PREDICTOR_COUNT] {
        let m = &self.model;
        [
            m.v0, m.k_v, m.theta_v, m.omega_v, m.rho_v, m.r0, m.k_r, m.omega_r, m.rho_r, self.alpha,
            self.kappa,
        ]
    }

    pub fn from_slice(x: &[f64]) -> Self {
        assert_eq!(x.len(), PREDICTOR_COUNT, "expected {PREDICTOR_COUNT} predictors");
        ParameterPoint {
            model: HhwParams {
                v0: x[0],
                k_v: x[1],
                theta_v: x[2],
                omega_v: x[3],
                rho_v: x[4],
                r0: x[5],
                k_r: x[6],
                omega_r: x[7],
                rho_r: x[8],
            },
            alpha: x[9],
            kappa: x[10],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

/// Closed interval per predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterBox {
    pub v0: Interval,
    pub kv: Interval,
    pub thetav: Interval,
    pub omegav: Interval,
    pub rhov: Interval,
    pub r0: Interval,
    pub kr: Interval,
    pub omegar: Interval,
    pub rhor: Interval,
    pub alpha: Interval,
    pub kappa: Interval,
}

impl ParameterBox {
    /// Sampling ranges used for the surrogate experiments.
    pub const REFERENCE: ParameterBox = ParameterBox {
        v0: Interval::new(0.01, 0.10),
        kv: Interval::new(1.40, 2.60),
        thetav: Interval::new(0.01, 0.10),
        omegav: Interval::new(0.45, 0.75),
        rhov: Interval::new(-0.70, -0.40),
        r0: Interval::new(0.01, 0.03),
        kr: Interval::new(0.05, 0.25),
        omegar: Interval::new(0.005, 0.025),
        rhor: Interval::new(0.05, 0.35),
        alpha: Interval::new(0.00, 0.10),
        kappa: Interval::new(0.00, 0.20),
    };

    pub fn intervals(&self) -> [Interval; PREDICTOR_COUNT] {
        [
            self.v0,
            self.kv,
            self.thetav,
            self.omegav,
            self.rhov,
            self.r0,
            self.kr,
            self.omegar,
            self.rhor,
            self.alpha,
            self.kappa,
        ]
    }

    pub fn from_intervals(iv: [Interval; PREDICTOR_COUNT]) -> Self {
        ParameterBox {
            v0: iv[0],
            kv: iv[1],
            thetav: iv[2],
            omegav: iv[3],
            rhov: iv[4],
            r0: iv[5],
            kr: iv[6],
            omegar: iv[7],
            rhor: iv[8],
            alpha: iv[9],
            kappa: iv[10],
        }
    }

    /// The box containing the single point `p`.
    pub fn degenerate(p: &ParameterPoint) -> Self {
        let a = p.to_array();
        Self::from_intervals(std::array::from_fn(|k| Interval::new(a[k], a[k])))
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, iv) in PREDICTOR_NAMES.iter().zip(self.intervals()) {
            if !(iv.lo.is_finite() && iv.hi.is_finite()) || iv.lo > iv.hi {
                return Err(ModelError::BadInterval {
                    name,
                    lo: iv.lo,
                    hi: iv.hi,
                });
            }
        }
        // Corners are the worst case for every positivity and correlation bound.
        let corner = ParameterPoint::from_slice(&self.intervals().map(|iv| iv.lo));
        let mut worst = corner.model;
        worst.rho_v = self.rhov.lo.abs().max(self.rhov.hi.abs());
        worst.rho_r = self.rhor.lo.abs().max(self.rhor.hi.abs());
        worst.validate()
    }

    pub fn contains(&self, p: &ParameterPoint) -> bool {
        self.intervals()
            .iter()
            .zip(p.to_array())
            .all(|(iv, x)| iv.contains(x))
    }

    /// Affine map of a unit-cube point into the box.
    pub fn map_unit(&self, u: &[f64]) -> ParameterPoint {
        let iv = self.intervals();
        let x: Vec<f64> = iv.iter().zip(u).map(|(iv, &u)| iv.lo + u * iv.width()).collect();
        ParameterPoint::from_slice(&x)
    }
}
