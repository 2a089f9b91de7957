//! Faure low-discrepancy points.

use crate::model::{ParameterBox, ParameterPoint, PREDICTOR_COUNT};

/// Smallest prime `>= max(dim, 2)`.
pub fn faure_base(dim: usize) -> u64 {
    let mut b = dim.max(2) as u64;
    while !is_prime(b) {
        b += 1;
    }
    b
}

fn is_prime(n: u64) -> bool {
    n >= 2 && (2..).take_while(|d| d * d <= n).all(|d| n % d != 0)
}

/// Faure sequence in `dim` dimensions with a cursor starting at index 1.
#[derive(Debug, Clone)]
pub struct FaureGenerator {
    dim: usize,
    base: u64,
    /// `binom[m][j] = C(m, j) mod b`, grown on demand.
    binom: Vec<Vec<u64>>,
    next_index: u64,
}

impl FaureGenerator {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1, "dimension must be positive");
        FaureGenerator {
            dim,
            base: faure_base(dim),
            binom: vec![vec![1]],
            next_index: 1,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn base(&self) -> u64 {
        self.base
    }

    pub fn next_index(&self) -> u64 {
        self.next_index
    }

    /// Point number `i >= 1`.
    pub fn point(&mut self, i: u64) -> Vec<f64> {
        assert!(i >= 1, "Faure indices start at 1");
        let b = self.base;
        let mut digits = Vec::new();
        let mut k = i;
        while k > 0 {
            digits.push(k % b);
            k /= b;
        }
        self.grow(digits.len());
        let mut out = Vec::with_capacity(self.dim);
        let mut mixed = vec![0u64; digits.len()];
        for d in 0..self.dim as u64 {
            let d = d % b;
            for (j, c) in mixed.iter_mut().enumerate() {
                // c_j = sum_{m >= j} C(m, j) d^(m - j) a_m mod b
                let mut acc = 0;
                let mut pow = 1;
                for (m, &a) in digits.iter().enumerate().skip(j) {
                    acc = (acc + self.binom[m][j] * pow % b * a) % b;
                    pow = pow * d % b;
                }
                *c = acc;
            }
            out.push(radical_inverse(&mixed, b));
        }
        out
    }

    fn grow(&mut self, rows: usize) {
        let b = self.base;
        while self.binom.len() < rows {
            let prev = self.binom.last().expect("row 0 exists");
            let mut row = vec![1u64; prev.len() + 1];
            for j in 1..prev.len() {
                row[j] = (prev[j - 1] + prev[j]) % b;
            }
            self.binom.push(row);
        }
    }
}

impl Iterator for FaureGenerator {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        let i = self.next_index;
        self.next_index += 1;
        Some(self.point(i))
    }
}

fn radical_inverse(digits: &[u64], b: u64) -> f64 {
    let inv = 1.0 / b as f64;
    let mut scale = inv;
    let mut x = 0.0;
    for &c in digits {
        x += c as f64 * scale;
        scale *= inv;
    }
    x
}

/// Point `i >= 1` of the `dim`-dimensional Faure sequence.
pub fn faure_point(i: u64, dim: usize) -> Vec<f64> {
    FaureGenerator::new(dim).point(i)
}

/// First `n` Faure points (indices `1..=n`) mapped affinely into the box.
pub fn sample_box(pbox: &ParameterBox, n: usize) -> Vec<ParameterPoint> {
    FaureGenerator::new(PREDICTOR_COUNT)
        .take(n)
        .map(|u| pbox.map_unit(&u))
        .collect()
}
