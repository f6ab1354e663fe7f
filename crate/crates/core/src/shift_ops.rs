//! Pseudodifferential operators with shifts on the circle, `D = Σ_g T_g D_g`.
//!
//! Functions are represented by their Fourier modes `û_k`. An elementary
//! coefficient of order `m` with sheet symbols `a(x, ±1)` acts by
//!
//! ```text
//! û ↦ Σ_k a(x, sgn k) |k|^m û_k e^{ikx}      (sgn 0 = +, 0^0 = 1)
//! ```
//!
//! so a symbol with frequencies `j` moves mode `k` to `k + j`. Composite
//! coefficients are kept as sums of products ("chains") of elementary ones,
//! which makes operator composition exact at the matrix level.
//!
//! `T_g` is pullback by `g⁻¹`: `(T_g u)(x) = u(x − α_g)`, diagonal on modes
//! with entries `e^{−ikα_g}`.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WorkbenchError};
use crate::group_model::{GroupElement, GroupSpec, Sheet};
use crate::linalg::{max_singular_value, CMatrix};
use crate::trig::{PolyMatrix, TrigPoly, C64};

fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

fn one() -> C64 {
    C64::new(1.0, 0.0)
}

/// Number of modes `|k| ≤ n`.
pub fn modes(n: usize) -> usize {
    2 * n + 1
}

/// A function on `S*S¹ = {±1} × S¹`, one trigonometric polynomial per sheet.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SheetPair {
    pub plus: TrigPoly,
    pub minus: TrigPoly,
}

impl SheetPair {
    pub fn new(plus: TrigPoly, minus: TrigPoly) -> Self {
        Self { plus, minus }
    }

    /// The same function on both sheets.
    pub fn uniform(p: TrigPoly) -> Self {
        Self {
            plus: p.clone(),
            minus: p,
        }
    }

    pub fn constant(c: C64) -> Self {
        Self::uniform(TrigPoly::constant(c))
    }

    pub fn sheet(&self, s: Sheet) -> &TrigPoly {
        match s {
            Sheet::Plus => &self.plus,
            Sheet::Minus => &self.minus,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.plus.is_zero() && self.minus.is_zero()
    }

    pub fn bandwidth(&self) -> usize {
        self.plus.bandwidth().max(self.minus.bandwidth())
    }

    pub fn wiener_norm(&self) -> f64 {
        self.plus.wiener_norm().max(self.minus.wiener_norm())
    }

    pub fn translate(&self, alpha: f64) -> Self {
        Self::new(self.plus.translate(alpha), self.minus.translate(alpha))
    }

    pub fn mul(&self, other: &Self) -> Self {
        Self::new(self.plus.mul(&other.plus), self.minus.mul(&other.minus))
    }

    pub fn scale(&self, s: C64) -> Self {
        Self::new(self.plus.scale(s), self.minus.scale(s))
    }
}

/// A classical scalar ΨDO: principal sheet symbol of order `m` plus lower
/// terms `a_l(x, sgn k) |k|^{m−l}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElementaryPdo {
    pub order: i32,
    pub principal: SheetPair,
    #[serde(default)]
    pub lower: Vec<SheetPair>,
}

/// `|k|^p` with `0^0 = 1` and `0^p = 0` otherwise.
fn mode_weight(k: i64, p: i32) -> f64 {
    if k == 0 {
        if p == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        (k.unsigned_abs() as f64).powi(p)
    }
}

impl ElementaryPdo {
    pub fn new(order: i32, principal: SheetPair) -> Self {
        Self {
            order,
            principal,
            lower: Vec::new(),
        }
    }

    pub fn with_lower(mut self, lower: Vec<SheetPair>) -> Self {
        self.lower = lower;
        self
    }

    pub fn bandwidth(&self) -> usize {
        self.lower
            .iter()
            .map(SheetPair::bandwidth)
            .fold(self.principal.bandwidth(), usize::max)
    }

    pub fn translate(&self, alpha: f64) -> Self {
        Self {
            order: self.order,
            principal: self.principal.translate(alpha),
            lower: self.lower.iter().map(|l| l.translate(alpha)).collect(),
        }
    }

    pub fn wiener_norm(&self) -> f64 {
        self.principal.wiener_norm() + self.lower.iter().map(SheetPair::wiener_norm).sum::<f64>()
    }

    /// Matrix from modes `|k| ≤ n_in` to modes `|r| ≤ n_out`.
    pub fn block(&self, n_in: usize, n_out: usize) -> CMatrix {
        let mut m = CMatrix::zeros(modes(n_out), modes(n_in));
        let terms = std::iter::once(&self.principal).chain(self.lower.iter());
        for (l, sym) in terms.enumerate() {
            let p = self.order - l as i32;
            for k in -(n_in as i64)..=(n_in as i64) {
                let w = mode_weight(k, p);
                if w == 0.0 {
                    continue;
                }
                let col = (k + n_in as i64) as usize;
                for (j, c) in sym.sheet(Sheet::of_mode(k)).iter() {
                    let r = k + j;
                    if r.unsigned_abs() as usize <= n_out {
                        m[((r + n_out as i64) as usize, col)] += c * w;
                    }
                }
            }
        }
        m
    }
}

/// A weighted product `f_L ∘ … ∘ f_1` of elementary coefficients (`factors[0]`
/// acts first).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdoChain {
    pub weight: C64,
    pub factors: Vec<ElementaryPdo>,
}

impl PdoChain {
    pub fn order(&self) -> i32 {
        self.factors.iter().map(|f| f.order).sum()
    }

    pub fn bandwidth(&self) -> usize {
        self.factors.iter().map(ElementaryPdo::bandwidth).sum()
    }

    pub fn principal_symbol(&self) -> SheetPair {
        self.factors
            .iter()
            .fold(SheetPair::constant(self.weight), |acc, f| acc.mul(&f.principal))
    }

    pub fn block(&self, n_in: usize, n_out: usize) -> CMatrix {
        let Some((last, init)) = self.factors.split_last() else {
            // empty chain is the weighted identity
            let mut m = CMatrix::zeros(modes(n_out), modes(n_in));
            for k in 0..modes(n_in.min(n_out)) {
                let off_in = n_in - n_in.min(n_out);
                let off_out = n_out - n_in.min(n_out);
                m[(k + off_out, k + off_in)] = self.weight;
            }
            return m;
        };
        let mut n_cur = n_in;
        let mut acc: Option<CMatrix> = None;
        for f in init {
            let n_next = n_cur + f.bandwidth();
            let b = f.block(n_cur, n_next);
            acc = Some(match acc {
                None => b,
                Some(a) => b * a,
            });
            n_cur = n_next;
        }
        let b = last.block(n_cur, n_out);
        let m = match acc {
            None => b,
            Some(a) => b * a,
        };
        m * self.weight
    }
}

/// A finite sum of chains: one matrix entry of a coefficient.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PdoEntry {
    pub chains: Vec<PdoChain>,
}

impl PdoEntry {
    pub fn elementary(f: ElementaryPdo) -> Self {
        if f.principal.is_zero() && f.lower.iter().all(SheetPair::is_zero) {
            return Self::default();
        }
        Self {
            chains: vec![PdoChain {
                weight: one(),
                factors: vec![f],
            }],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.chains.is_empty()
    }

    pub fn bandwidth(&self) -> usize {
        self.chains.iter().map(PdoChain::bandwidth).max().unwrap_or(0)
    }

    pub fn weight(&self) -> f64 {
        self.chains
            .iter()
            .map(|c| c.weight.norm() * c.factors.iter().map(ElementaryPdo::wiener_norm).product::<f64>())
            .sum()
    }

    pub fn principal_symbol(&self) -> SheetPair {
        self.chains.iter().fold(SheetPair::default(), |acc, c| {
            let p = c.principal_symbol();
            SheetPair::new(acc.plus.add(&p.plus), acc.minus.add(&p.minus))
        })
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Self) -> Self {
        let mut chains = Vec::new();
        for a in &self.chains {
            for b in &other.chains {
                let mut factors = b.factors.clone();
                factors.extend(a.factors.iter().cloned());
                chains.push(PdoChain {
                    weight: a.weight * b.weight,
                    factors,
                });
            }
        }
        Self { chains }
    }

    pub fn translate(&self, alpha: f64) -> Self {
        Self {
            chains: self
                .chains
                .iter()
                .map(|c| PdoChain {
                    weight: c.weight,
                    factors: c.factors.iter().map(|f| f.translate(alpha)).collect(),
                })
                .collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut chains = self.chains.clone();
        chains.extend(other.chains.iter().cloned());
        Self { chains }
    }

    pub fn scale(&self, s: C64) -> Self {
        if s == zero() {
            return Self::default();
        }
        Self {
            chains: self
                .chains
                .iter()
                .map(|c| PdoChain {
                    weight: c.weight * s,
                    factors: c.factors.clone(),
                })
                .collect(),
        }
    }

    pub fn block(&self, n_in: usize, n_out: usize) -> CMatrix {
        let mut m = CMatrix::zeros(modes(n_out), modes(n_in));
        for c in &self.chains {
            m += c.block(n_in, n_out);
        }
        m
    }
}

/// An `n′ × n` matrix of order-`m` coefficients, the `D_g` of one group element.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdoCoefficient {
    pub order: i32,
    rows: usize,
    cols: usize,
    entries: Vec<PdoEntry>,
}

impl PdoCoefficient {
    pub fn zeros(order: i32, rows: usize, cols: usize) -> Self {
        Self {
            order,
            rows,
            cols,
            entries: vec![PdoEntry::default(); rows * cols],
        }
    }

    /// Elementary entries from principal sheet symbols.
    pub fn from_symbols(order: i32, plus: &PolyMatrix, minus: &PolyMatrix) -> Result<Self> {
        if (plus.rows(), plus.cols()) != (minus.rows(), minus.cols()) {
            return Err(WorkbenchError::RankMismatch("sheet symbol shapes differ".into()));
        }
        let mut c = Self::zeros(order, plus.rows(), plus.cols());
        for i in 0..plus.rows() {
            for j in 0..plus.cols() {
                c.entries[i * c.cols + j] = PdoEntry::elementary(ElementaryPdo::new(
                    order,
                    SheetPair::new(plus.get(i, j).clone(), minus.get(i, j).clone()),
                ));
            }
        }
        Ok(c)
    }

    /// Scalar coefficient from one elementary operator.
    pub fn scalar(f: ElementaryPdo) -> Self {
        Self {
            order: f.order,
            rows: 1,
            cols: 1,
            entries: vec![PdoEntry::elementary(f)],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut c = Self::zeros(0, n, n);
        for i in 0..n {
            c.entries[i * n + i] = PdoEntry::elementary(ElementaryPdo::new(0, SheetPair::constant(one())));
        }
        c
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entry(&self, i: usize, j: usize) -> &PdoEntry {
        &self.entries[i * self.cols + j]
    }

    pub fn set_entry(&mut self, i: usize, j: usize, e: PdoEntry) {
        self.entries[i * self.cols + j] = e;
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(PdoEntry::is_zero)
    }

    pub fn bandwidth(&self) -> usize {
        self.entries.iter().map(PdoEntry::bandwidth).max().unwrap_or(0)
    }

    /// Decay weight `‖D_g‖`: summed Wiener norms of all entries.
    pub fn weight(&self) -> f64 {
        self.entries.iter().map(PdoEntry::weight).sum()
    }

    /// Principal symbol on the two sheets.
    pub fn principal_symbol(&self) -> [PolyMatrix; 2] {
        let sym: Vec<SheetPair> = self.entries.iter().map(PdoEntry::principal_symbol).collect();
        let plus = PolyMatrix::from_fn(self.rows, self.cols, |i, j| sym[i * self.cols + j].plus.clone());
        let minus = PolyMatrix::from_fn(self.rows, self.cols, |i, j| sym[i * self.cols + j].minus.clone());
        [plus, minus]
    }

    pub fn translate(&self, alpha: f64) -> Self {
        Self {
            order: self.order,
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(|e| e.translate(alpha)).collect(),
        }
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(WorkbenchError::RankMismatch(format!(
                "cannot compose {}x{} after {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.order + other.order, self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..other.cols {
                let mut acc = PdoEntry::default();
                for j in 0..self.cols {
                    let a = self.entry(i, j);
                    let b = other.entry(j, k);
                    if !a.is_zero() && !b.is_zero() {
                        acc = acc.add(&a.compose(b));
                    }
                }
                out.set_entry(i, k, acc);
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(WorkbenchError::RankMismatch("cannot add coefficients of different shapes".into()));
        }
        Ok(Self {
            order: self.order.max(other.order),
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().zip(&other.entries).map(|(a, b)| a.add(b)).collect(),
        })
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            order: self.order,
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(|e| e.scale(s)).collect(),
        }
    }

    /// Block matrix from `cols` copies of modes `|k| ≤ n_in` to `rows` copies of `|r| ≤ n_out`.
    pub fn block(&self, n_in: usize, n_out: usize) -> CMatrix {
        let (bi, bo) = (modes(n_in), modes(n_out));
        let mut m = CMatrix::zeros(self.rows * bo, self.cols * bi);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let e = self.entry(i, j);
                if !e.is_zero() {
                    m.view_mut((i * bo, j * bi), (bo, bi)).copy_from(&e.block(n_in, n_out));
                }
            }
        }
        m
    }
}

/// A dense truncation of an operator to Fourier modes.
#[derive(Clone, Debug, PartialEq)]
pub struct TruncatedOperator {
    pub cutoff_in: usize,
    pub cutoff_out: usize,
    pub matrix: CMatrix,
}

impl TruncatedOperator {
    pub fn cutoff(&self) -> usize {
        self.cutoff_in
    }
}

/// Square truncation of a single coefficient to modes `|k| ≤ n`.
pub fn quantize(coef: &PdoCoefficient, n: usize) -> Result<TruncatedOperator> {
    let bw = coef.bandwidth();
    if n < bw {
        return Err(WorkbenchError::CutoffTooSmall { cutoff: n, bandwidth: bw });
    }
    Ok(TruncatedOperator {
        cutoff_in: n,
        cutoff_out: n,
        matrix: coef.block(n, n),
    })
}

/// Diagonal matrix of `T_g` on modes `|k| ≤ n`.
pub fn shift_matrix(g: GroupElement, n: usize, spec: &GroupSpec) -> TruncatedOperator {
    let alpha = spec.angle(g);
    let diag = DVector::from_iterator(
        modes(n),
        (-(n as i64)..=(n as i64)).map(|k| C64::from_polar(1.0, -(k as f64) * alpha)),
    );
    TruncatedOperator {
        cutoff_in: n,
        cutoff_out: n,
        matrix: CMatrix::from_diagonal(&diag),
    }
}

/// Rows of a block matrix (with `ranks` blocks of modes `|r| ≤ n_out`) scaled by `T_g`.
fn apply_shift_rows(m: &mut CMatrix, alpha: f64, ranks: usize, n_out: usize) {
    if alpha == 0.0 {
        return;
    }
    let bo = modes(n_out);
    for c in 0..ranks {
        for (i, r) in (-(n_out as i64)..=(n_out as i64)).enumerate() {
            let ph = C64::from_polar(1.0, -(r as f64) * alpha);
            for v in m.row_mut(c * bo + i).iter_mut() {
                *v *= ph;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    /// `(label, |g|, ‖D_g‖)` over the support.
    pub weights: Vec<(i64, usize, f64)>,
    pub exponent: f64,
    pub constant: f64,
    pub within_envelope: bool,
}

/// Finitely supported operator with shifts `Σ_g T_g D_g`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftOperator {
    group: GroupSpec,
    rank_in: usize,
    rank_out: usize,
    order: i32,
    terms: BTreeMap<GroupElement, PdoCoefficient>,
}

impl ShiftOperator {
    pub fn new(
        group: GroupSpec,
        rank_in: usize,
        rank_out: usize,
        order: i32,
        terms: impl IntoIterator<Item = (GroupElement, PdoCoefficient)>,
    ) -> Result<Self> {
        let mut map: BTreeMap<GroupElement, PdoCoefficient> = BTreeMap::new();
        for (g, c) in terms {
            if (c.rows(), c.cols()) != (rank_out, rank_in) {
                return Err(WorkbenchError::RankMismatch(format!(
                    "coefficient at {} is {}x{}, expected {}x{}",
                    g.0,
                    c.rows(),
                    c.cols(),
                    rank_out,
                    rank_in
                )));
            }
            for e in &c.entries {
                for ch in &e.chains {
                    if ch.order() != order {
                        return Err(WorkbenchError::InvalidOperator(format!(
                            "coefficient at {} has a term of order {}, operator order is {}",
                            g.0,
                            ch.order(),
                            order
                        )));
                    }
                }
            }
            let g = group.element(g.0);
            let merged = match map.remove(&g) {
                Some(prev) => prev.add(&c)?,
                None => c,
            };
            map.insert(g, merged);
        }
        map.retain(|_, c| !c.is_zero());
        Ok(Self {
            group,
            rank_in,
            rank_out,
            order,
            terms: map,
        })
    }

    pub fn identity(group: GroupSpec, n: usize) -> Self {
        Self::new(group, n, n, 0, [(GroupElement::IDENTITY, PdoCoefficient::identity(n))]).expect("consistent identity")
    }

    /// Operator with no shifts whose coefficient at the identity has the given sheet symbols.
    pub fn from_symbols(group: GroupSpec, order: i32, plus: &PolyMatrix, minus: &PolyMatrix) -> Result<Self> {
        let c = PdoCoefficient::from_symbols(order, plus, minus)?;
        Self::new(group, c.cols(), c.rows(), order, [(GroupElement::IDENTITY, c)])
    }

    pub fn group(&self) -> &GroupSpec {
        &self.group
    }

    pub fn rank_in(&self) -> usize {
        self.rank_in
    }

    pub fn rank_out(&self) -> usize {
        self.rank_out
    }

    pub fn order(&self) -> i32 {
        self.order
    }

    pub fn terms(&self) -> &BTreeMap<GroupElement, PdoCoefficient> {
        &self.terms
    }

    pub fn coefficient(&self, g: GroupElement) -> Option<&PdoCoefficient> {
        self.terms.get(&self.group.element(g.0))
    }

    pub fn bandwidth(&self) -> usize {
        self.terms.values().map(PdoCoefficient::bandwidth).max().unwrap_or(0)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if (self.rank_in, self.rank_out) != (other.rank_in, other.rank_out) {
            return Err(WorkbenchError::RankMismatch("cannot add operators of different ranks".into()));
        }
        if self.order != other.order {
            return Err(WorkbenchError::InvalidOperator("cannot add operators of different orders".into()));
        }
        let terms = self.terms.iter().chain(other.terms.iter()).map(|(g, c)| (*g, c.clone()));
        Self::new(self.group.clone(), self.rank_in, self.rank_out, self.order, terms)
    }

    pub fn scale(&self, s: C64) -> Self {
        let terms: Vec<_> = self.terms.iter().map(|(g, c)| (*g, c.scale(s))).collect();
        Self::new(self.group.clone(), self.rank_in, self.rank_out, self.order, terms).expect("scaling keeps shapes")
    }

    /// Straight-line homotopy `(1 − t) self + t other`.
    pub fn lerp(&self, other: &Self, t: f64) -> Result<Self> {
        self.scale(C64::new(1.0 - t, 0.0)).add(&other.scale(C64::new(t, 0.0)))
    }

    /// Block-diagonal sum `self ⊕ other`.
    pub fn direct_sum(&self, other: &Self) -> Result<Self> {
        if self.group != other.group {
            return Err(WorkbenchError::InvalidOperator("direct sum over different groups".into()));
        }
        if self.order != other.order {
            return Err(WorkbenchError::InvalidOperator("direct sum of different orders".into()));
        }
        let rin = self.rank_in + other.rank_in;
        let rout = self.rank_out + other.rank_out;
        let mut keys: Vec<GroupElement> = self.terms.keys().chain(other.terms.keys()).copied().collect();
        keys.sort();
        keys.dedup();
        let mut terms = Vec::new();
        for g in keys {
            let mut c = PdoCoefficient::zeros(self.order, rout, rin);
            if let Some(a) = self.terms.get(&g) {
                for i in 0..a.rows() {
                    for j in 0..a.cols() {
                        c.set_entry(i, j, a.entry(i, j).clone());
                    }
                }
            }
            if let Some(b) = other.terms.get(&g) {
                for i in 0..b.rows() {
                    for j in 0..b.cols() {
                        c.set_entry(self.rank_out + i, self.rank_in + j, b.entry(i, j).clone());
                    }
                }
            }
            terms.push((g, c));
        }
        Self::new(self.group.clone(), rin, rout, self.order, terms)
    }

    /// Decay of `‖D_g‖` against the envelope `c·max‖D‖·(1 + |g|)^{-p}`.
    pub fn decay_report(&self, exponent: f64, constant: f64) -> DecayReport {
        let weights: Vec<(i64, usize, f64)> = self
            .terms
            .iter()
            .map(|(g, c)| (g.0, self.group.word_length(*g), c.weight()))
            .collect();
        let wmax = weights.iter().map(|w| w.2).fold(0.0, f64::max);
        let within_envelope = weights
            .iter()
            .all(|&(_, len, w)| w <= constant * wmax * (1.0 + len as f64).powf(-exponent) * (1.0 + 1e-12));
        DecayReport {
            weights,
            exponent,
            constant,
            within_envelope,
        }
    }
}

/// Matrix of `D` from modes `|k| ≤ n_in` to modes `|r| ≤ n_out`.
///
/// With `n_out ≥ n_in + bandwidth` this is the exact restriction of `D` to
/// the span of the input modes.
pub fn assemble_rect(d: &ShiftOperator, n_in: usize, n_out: usize) -> CMatrix {
    let mut m = CMatrix::zeros(d.rank_out * modes(n_out), d.rank_in * modes(n_in));
    for (g, c) in &d.terms {
        let mut b = c.block(n_in, n_out);
        apply_shift_rows(&mut b, d.group.angle(*g), d.rank_out, n_out);
        m += b;
    }
    m
}

/// Square truncation `Σ_g shift_matrix(g) · quantize(D_g)`.
pub fn assemble(d: &ShiftOperator, n: usize) -> TruncatedOperator {
    TruncatedOperator {
        cutoff_in: n,
        cutoff_out: n,
        matrix: assemble_rect(d, n, n),
    }
}

/// Crossed-product composition `d1 ∘ d2`.
pub fn compose(d1: &ShiftOperator, d2: &ShiftOperator) -> Result<ShiftOperator> {
    if d2.rank_out != d1.rank_in {
        return Err(WorkbenchError::RankMismatch(format!(
            "target rank {} of the right factor differs from source rank {} of the left factor",
            d2.rank_out, d1.rank_in
        )));
    }
    if d1.group != d2.group {
        return Err(WorkbenchError::InvalidOperator("composition over different groups".into()));
    }
    let group = &d1.group;
    let mut terms = Vec::new();
    for (g, a) in &d1.terms {
        for (h, b) in &d2.terms {
            // T_g a T_h b = T_{gh} (T_h⁻¹ a T_h) b and T_h⁻¹ a T_h = a ∘ h.
            let conj = a.translate(group.angle(*h));
            terms.push((group.compose(*g, *h), conj.compose(b)?));
        }
    }
    ShiftOperator::new(group.clone(), d2.rank_in, d1.rank_out, d1.order + d2.order, terms)
}

/// Uniform interface for operators that can be restricted to Fourier modes.
pub trait ModeOperator {
    fn rank_in(&self) -> usize;
    fn rank_out(&self) -> usize;
    fn order(&self) -> i32;
    /// Largest mode displacement.
    fn bandwidth(&self) -> usize;
    fn block(&self, n_in: usize, n_out: usize) -> CMatrix;
}

impl ModeOperator for ShiftOperator {
    fn rank_in(&self) -> usize {
        self.rank_in
    }
    fn rank_out(&self) -> usize {
        self.rank_out
    }
    fn order(&self) -> i32 {
        self.order
    }
    fn bandwidth(&self) -> usize {
        ShiftOperator::bandwidth(self)
    }
    fn block(&self, n_in: usize, n_out: usize) -> CMatrix {
        assemble_rect(self, n_in, n_out)
    }
}

/// The formal adjoint of a mode operator.
pub struct Adjoint<'a, T: ModeOperator + ?Sized>(pub &'a T);

impl<T: ModeOperator + ?Sized> ModeOperator for Adjoint<'_, T> {
    fn rank_in(&self) -> usize {
        self.0.rank_out()
    }
    fn rank_out(&self) -> usize {
        self.0.rank_in()
    }
    fn order(&self) -> i32 {
        self.0.order()
    }
    fn bandwidth(&self) -> usize {
        self.0.bandwidth()
    }
    fn block(&self, n_in: usize, n_out: usize) -> CMatrix {
        self.0.block(n_out, n_in).adjoint()
    }
}

/// `⟨k⟩^p = (1 + k²)^{p/2}` for each mode of `ranks` blocks of `|k| ≤ n`.
pub fn sobolev_weights(n: usize, ranks: usize, p: f64) -> Vec<f64> {
    let one_block: Vec<f64> = (-(n as i64)..=(n as i64))
        .map(|k| (1.0 + (k * k) as f64).powf(p / 2.0))
        .collect();
    (0..ranks).flat_map(|_| one_block.iter().copied()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SobolevEstimate {
    /// `(cutoff, ‖D‖_{H^s → H^{s−m}} estimate)`.
    pub history: Vec<(usize, f64)>,
    pub constant: f64,
    pub pass: bool,
}

/// Empirical `H^s → H^{s−m}` norm of `D`.
///
/// The norm of the exact restriction to modes `|k| ≤ N` is estimated by power
/// iteration started from a random trigonometric polynomial, at `N` and `2N`;
/// the check passes when the two estimates agree within 10%.
pub fn sobolev_bound_check(d: &ShiftOperator, s: f64, n: usize, rng: &mut impl Rng) -> SobolevEstimate {
    let mut history = Vec::new();
    for cutoff in [n, 2 * n] {
        let n_out = cutoff + d.bandwidth();
        let mut a = assemble_rect(d, cutoff, n_out);
        let w_in = sobolev_weights(cutoff, d.rank_in, -s);
        let w_out = sobolev_weights(n_out, d.rank_out, s - d.order as f64);
        for (j, w) in w_in.iter().enumerate() {
            a.column_mut(j).scale_mut(*w);
        }
        for (i, w) in w_out.iter().enumerate() {
            a.row_mut(i).scale_mut(*w);
        }
        let start = DVector::from_fn(a.ncols(), |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        history.push((cutoff, max_singular_value(&a, &start, 200)));
    }
    let (a, b) = (history[0].1, history[1].1);
    let pass = b > 0.0 && (a - b).abs() <= 0.1 * b;
    SobolevEstimate {
        constant: b,
        history,
        pass,
    }
}
