//! Trigonometric polynomials on the circle and small matrices of them.
//!
//! A [`TrigPoly`] stores the Fourier coefficients of `Σ c_n e^{inx}` densely
//! over a contiguous frequency range. Everything downstream (symbols, crossed
//! products, quantization) is built from these.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub type C64 = Complex64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigPoly {
    lo: i64,
    coeffs: Vec<C64>,
}

impl Default for TrigPoly {
    fn default() -> Self {
        Self::zero()
    }
}

impl TrigPoly {
    pub fn zero() -> Self {
        Self {
            lo: 0,
            coeffs: Vec::new(),
        }
    }

    pub fn constant(c: C64) -> Self {
        Self::monomial(0, c)
    }

    pub fn monomial(freq: i64, c: C64) -> Self {
        Self {
            lo: freq,
            coeffs: vec![c],
        }
        .trimmed()
    }

    pub fn from_map(map: &BTreeMap<i64, C64>) -> Self {
        let Some((&lo, _)) = map.iter().next() else {
            return Self::zero();
        };
        let hi = *map.keys().next_back().unwrap();
        let mut coeffs = vec![C64::new(0.0, 0.0); (hi - lo + 1) as usize];
        for (&f, &c) in map {
            coeffs[(f - lo) as usize] += c;
        }
        Self { lo, coeffs }.trimmed()
    }

    pub fn from_coeffs(lo: i64, coeffs: Vec<C64>) -> Self {
        Self { lo, coeffs }.trimmed()
    }

    pub fn to_map(&self) -> BTreeMap<i64, C64> {
        self.iter().filter(|(_, c)| c.norm() > 0.0).collect()
    }

    /// Iterates `(frequency, coefficient)` over the stored range.
    pub fn iter(&self) -> impl Iterator<Item = (i64, C64)> + '_ {
        self.coeffs
            .iter()
            .enumerate()
            .map(move |(i, &c)| (self.lo + i as i64, c))
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coeff(&self, freq: i64) -> C64 {
        let idx = freq - self.lo;
        if idx < 0 || idx >= self.coeffs.len() as i64 {
            C64::new(0.0, 0.0)
        } else {
            self.coeffs[idx as usize]
        }
    }

    /// Lowest and highest stored frequency, `None` for the zero polynomial.
    pub fn freq_range(&self) -> Option<(i64, i64)> {
        if self.coeffs.is_empty() {
            None
        } else {
            Some((self.lo, self.lo + self.coeffs.len() as i64 - 1))
        }
    }

    /// Largest `|n|` with a stored coefficient.
    pub fn bandwidth(&self) -> usize {
        self.freq_range()
            .map(|(lo, hi)| lo.unsigned_abs().max(hi.unsigned_abs()) as usize)
            .unwrap_or(0)
    }

    /// `Σ |c_n|`, an upper bound for the sup norm.
    pub fn wiener_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).sum()
    }

    pub fn eval(&self, x: f64) -> C64 {
        self.iter()
            .map(|(n, c)| c * C64::from_polar(1.0, n as f64 * x))
            .sum()
    }

    /// Samples on the uniform grid `x_i = 2πi/len`.
    pub fn sample(&self, len: usize) -> Vec<C64> {
        let h = TAU / len as f64;
        (0..len).map(|i| self.eval(i as f64 * h)).collect()
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            lo: self.lo,
            coeffs: self.coeffs.iter().map(|&c| c * s).collect(),
        }
        .trimmed()
    }

    pub fn add(&self, other: &Self) -> Self {
        match (self.freq_range(), other.freq_range()) {
            (None, _) => other.clone(),
            (_, None) => self.clone(),
            (Some((a0, a1)), Some((b0, b1))) => {
                let lo = a0.min(b0);
                let hi = a1.max(b1);
                let coeffs = (lo..=hi).map(|n| self.coeff(n) + other.coeff(n)).collect();
                Self { lo, coeffs }.trimmed()
            }
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(C64::new(-1.0, 0.0)))
    }

    /// Pointwise product, i.e. convolution of the coefficient sequences.
    pub fn mul(&self, other: &Self) -> Self {
        if self.is_zero() || other.is_zero() {
            return Self::zero();
        }
        let mut coeffs = vec![C64::new(0.0, 0.0); self.coeffs.len() + other.coeffs.len() - 1];
        for (i, &a) in self.coeffs.iter().enumerate() {
            if a == C64::new(0.0, 0.0) {
                continue;
            }
            for (j, &b) in other.coeffs.iter().enumerate() {
                coeffs[i + j] += a * b;
            }
        }
        Self {
            lo: self.lo + other.lo,
            coeffs,
        }
        .trimmed()
    }

    /// Pullback along the rotation `x ↦ x + alpha`.
    pub fn translate(&self, alpha: f64) -> Self {
        if alpha == 0.0 {
            return self.clone();
        }
        Self {
            lo: self.lo,
            coeffs: self
                .iter()
                .map(|(n, c)| c * C64::from_polar(1.0, n as f64 * alpha))
                .collect(),
        }
    }

    /// The pointwise complex conjugate function.
    pub fn conj(&self) -> Self {
        let Some((_, hi)) = self.freq_range() else {
            return Self::zero();
        };
        Self {
            lo: -hi,
            coeffs: self.coeffs.iter().rev().map(|c| c.conj()).collect(),
        }
    }

    /// Drops frequencies with `|n| > band`, returning the Wiener mass removed.
    pub fn truncate_band(&mut self, band: usize) -> f64 {
        let band = band as i64;
        let mut dropped = 0.0;
        let kept: BTreeMap<i64, C64> = self
            .iter()
            .filter(|&(n, c)| {
                if n.abs() > band {
                    dropped += c.norm();
                    false
                } else {
                    true
                }
            })
            .collect();
        *self = Self::from_map(&kept);
        dropped
    }

    /// Zeroes coefficients below `tol` in modulus, returning the mass removed.
    pub fn prune(&mut self, tol: f64) -> f64 {
        let mut dropped = 0.0;
        for c in self.coeffs.iter_mut() {
            let m = c.norm();
            if m <= tol && m > 0.0 {
                dropped += m;
                *c = C64::new(0.0, 0.0);
            }
        }
        *self = std::mem::take(self).trimmed();
        dropped
    }

    fn trimmed(mut self) -> Self {
        let zero = C64::new(0.0, 0.0);
        let start = self.coeffs.iter().position(|&c| c != zero);
        match start {
            None => Self::zero(),
            Some(s) => {
                let end = self.coeffs.iter().rposition(|&c| c != zero).unwrap();
                self.coeffs.truncate(end + 1);
                self.coeffs.drain(..s);
                self.lo += s as i64;
                self
            }
        }
    }
}

/// Dense `rows × cols` matrix of trigonometric polynomials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<TrigPoly>,
}

impl PolyMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: vec![TrigPoly::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::scalar(n, C64::new(1.0, 0.0))
    }

    pub fn scalar(n: usize, c: C64) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.entries[i * n + i] = TrigPoly::constant(c);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> TrigPoly) -> Self {
        let mut entries = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                entries.push(f(i, j));
            }
        }
        Self { rows, cols, entries }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> &TrigPoly {
        &self.entries[i * self.cols + j]
    }

    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut TrigPoly {
        &mut self.entries[i * self.cols + j]
    }

    pub fn entries(&self) -> &[TrigPoly] {
        &self.entries
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(TrigPoly::is_zero)
    }

    pub fn bandwidth(&self) -> usize {
        self.entries.iter().map(TrigPoly::bandwidth).max().unwrap_or(0)
    }

    /// Sum of the entries' Wiener norms; dominates the operator norm of the
    /// multiplication operator on `L²(S¹, C^cols)`.
    pub fn wiener_norm(&self) -> f64 {
        self.entries.iter().map(TrigPoly::wiener_norm).sum()
    }

    pub fn map(&self, f: impl Fn(&TrigPoly) -> TrigPoly) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(f).collect(),
        }
    }

    pub fn scale(&self, s: C64) -> Self {
        self.map(|p| p.scale(s))
    }

    pub fn translate(&self, alpha: f64) -> Self {
        self.map(|p| p.translate(alpha))
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(a, b)| a.add(b))
                .collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(C64::new(-1.0, 0.0)))
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..other.cols {
                let mut acc = TrigPoly::zero();
                for j in 0..self.cols {
                    let a = self.get(i, j);
                    let b = other.get(j, k);
                    if !a.is_zero() && !b.is_zero() {
                        acc = acc.add(&a.mul(b));
                    }
                }
                *out.get_mut(i, k) = acc;
            }
        }
        out
    }

    /// Pointwise conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i).conj())
    }

    /// Evaluates to a dense complex matrix at `x`.
    pub fn eval(&self, x: f64) -> nalgebra::DMatrix<C64> {
        nalgebra::DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j).eval(x))
    }

    pub fn truncate_band(&mut self, band: usize) -> f64 {
        self.entries.iter_mut().map(|p| p.truncate_band(band)).sum()
    }

    pub fn prune(&mut self, tol: f64) -> f64 {
        self.entries.iter_mut().map(|p| p.prune(tol)).sum()
    }
}
