//! Principal symbols in the crossed product `C^∞(S*S¹) ⋊ Γ`.
//!
//! Rotations act trivially in the fibres of `S*S¹ = {±1} × S¹`, so the algebra
//! splits into one copy of `C^∞(S¹, Mat) ⋊ Γ` per sheet. A [`CrossedElement`]
//! is a finite sum `Σ_g T_g a_g(x)` with trigonometric-polynomial matrices
//! `a_g`, multiplied by `(T_g a)(T_h b) = T_{gh} (a∘h) b`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, WorkbenchError};
use crate::group_model::{GroupElement, GroupSpec, Sheet};
use crate::linalg::{min_singular_value, CMatrix};
use crate::shift_ops::{modes, ModeOperator, ShiftOperator};
use crate::trig::{PolyMatrix, C64};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossedElement {
    rows: usize,
    cols: usize,
    terms: BTreeMap<GroupElement, PolyMatrix>,
}

/// Mass removed by window and band truncation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Discarded {
    pub window: f64,
    pub band: f64,
}

impl Discarded {
    pub fn total(&self) -> f64 {
        self.window + self.band
    }

    pub fn absorb(&mut self, other: Discarded) {
        self.window += other.window;
        self.band += other.band;
    }
}

impl CrossedElement {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            terms: BTreeMap::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_terms(n, n, [(GroupElement::IDENTITY, PolyMatrix::identity(n))])
    }

    /// The pure shift `T_g` on `C^n`.
    pub fn shift(g: GroupElement, n: usize) -> Self {
        Self::from_terms(n, n, [(g, PolyMatrix::identity(n))])
    }

    pub fn from_terms(rows: usize, cols: usize, terms: impl IntoIterator<Item = (GroupElement, PolyMatrix)>) -> Self {
        let mut out = Self::zeros(rows, cols);
        for (g, a) in terms {
            assert_eq!((a.rows(), a.cols()), (rows, cols), "term shape");
            out.accumulate(g, &a);
        }
        out
    }

    fn accumulate(&mut self, g: GroupElement, a: &PolyMatrix) {
        if a.is_zero() {
            return;
        }
        let merged = match self.terms.remove(&g) {
            Some(prev) => prev.add(a),
            None => a.clone(),
        };
        if !merged.is_zero() {
            self.terms.insert(g, merged);
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn terms(&self) -> &BTreeMap<GroupElement, PolyMatrix> {
        &self.terms
    }

    pub fn get(&self, g: GroupElement) -> Option<&PolyMatrix> {
        self.terms.get(&g)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn bandwidth(&self) -> usize {
        self.terms.values().map(PolyMatrix::bandwidth).max().unwrap_or(0)
    }

    /// `Σ_g ‖a_g‖_W`, an upper bound for the norm in every representation.
    pub fn wiener_norm(&self) -> f64 {
        self.terms.values().map(PolyMatrix::wiener_norm).sum()
    }

    /// Largest word length in the support.
    pub fn window_radius(&self, group: &GroupSpec) -> usize {
        self.terms.keys().map(|g| group.word_length(*g)).max().unwrap_or(0)
    }

    pub fn scale(&self, s: C64) -> Self {
        let mut out = Self::zeros(self.rows, self.cols);
        for (g, a) in &self.terms {
            out.accumulate(*g, &a.scale(s));
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "crossed element shapes");
        let mut out = self.clone();
        for (g, a) in &other.terms {
            out.accumulate(*g, a);
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(C64::new(-1.0, 0.0)))
    }

    pub fn multiply(&self, other: &Self, group: &GroupSpec) -> Result<Self> {
        if self.cols != other.rows {
            return Err(WorkbenchError::RankMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for (h, b) in &other.terms {
            let alpha = group.angle(*h);
            for (g, a) in &self.terms {
                out.accumulate(group.compose(*g, *h), &a.translate(alpha).mul(b));
            }
        }
        Ok(out)
    }

    /// `(T_g a)* = T_{g⁻¹} (a*∘g⁻¹)`.
    pub fn adjoint(&self, group: &GroupSpec) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for (g, a) in &self.terms {
            let gi = group.inverse(*g);
            out.accumulate(gi, &a.adjoint().translate(group.angle(gi)));
        }
        out
    }

    /// Drops group terms beyond `radius` and frequencies beyond `band`.
    pub fn truncate(&mut self, group: &GroupSpec, radius: Option<usize>, band: Option<usize>) -> Discarded {
        let mut d = Discarded::default();
        if let Some(r) = radius {
            self.terms.retain(|g, a| {
                if group.word_length(*g) > r {
                    d.window += a.wiener_norm();
                    false
                } else {
                    true
                }
            });
        }
        if let Some(b) = band {
            for a in self.terms.values_mut() {
                d.band += a.truncate_band(b);
            }
            self.terms.retain(|_, a| !a.is_zero());
        }
        d
    }

    /// Removes Fourier coefficients of modulus at most `tol`.
    pub fn prune(&mut self, tol: f64) -> f64 {
        let dropped = self.terms.values_mut().map(|a| a.prune(tol)).sum();
        self.terms.retain(|_, a| !a.is_zero());
        dropped
    }

    /// Matrix of the action on `L²(S¹, C^cols)` from modes `|k| ≤ n_in` to `|r| ≤ n_out`.
    pub fn block(&self, group: &GroupSpec, n_in: usize, n_out: usize) -> CMatrix {
        let (bi, bo) = (modes(n_in), modes(n_out));
        let mut m = CMatrix::zeros(self.rows * bo, self.cols * bi);
        for (g, a) in &self.terms {
            let alpha = group.angle(*g);
            for i in 0..self.rows {
                for j in 0..self.cols {
                    for (f, c) in a.get(i, j).iter() {
                        if c == C64::new(0.0, 0.0) {
                            continue;
                        }
                        for k in -(n_in as i64)..=(n_in as i64) {
                            let r = k + f;
                            if r.unsigned_abs() as usize > n_out {
                                continue;
                            }
                            let ph = C64::from_polar(1.0, -(r as f64) * alpha);
                            m[(i * bo + (r + n_out as i64) as usize, j * bi + (k + n_in as i64) as usize)] += c * ph;
                        }
                    }
                }
            }
        }
        m
    }
}

/// `σ(D) = Σ_g T_{∂g} σ(D_g)`, one crossed element per sheet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossedSymbol {
    group: GroupSpec,
    order: i32,
    sheets: [CrossedElement; 2],
}

impl CrossedSymbol {
    pub fn new(group: GroupSpec, order: i32, plus: CrossedElement, minus: CrossedElement) -> Result<Self> {
        if (plus.rows, plus.cols) != (minus.rows, minus.cols) {
            return Err(WorkbenchError::RankMismatch("sheets have different shapes".into()));
        }
        Ok(Self {
            group,
            order,
            sheets: [plus, minus],
        })
    }

    /// The same element on both sheets.
    pub fn uniform(group: GroupSpec, e: CrossedElement) -> Self {
        Self {
            group,
            order: 0,
            sheets: [e.clone(), e],
        }
    }

    pub fn identity(group: GroupSpec, n: usize) -> Self {
        Self::uniform(group, CrossedElement::identity(n))
    }

    pub fn group(&self) -> &GroupSpec {
        &self.group
    }

    pub fn order(&self) -> i32 {
        self.order
    }

    pub fn rows(&self) -> usize {
        self.sheets[0].rows
    }

    pub fn cols(&self) -> usize {
        self.sheets[0].cols
    }

    pub fn sheet(&self, s: Sheet) -> &CrossedElement {
        &self.sheets[s.index()]
    }

    pub fn sheets(&self) -> &[CrossedElement; 2] {
        &self.sheets
    }

    pub fn wiener_norm(&self) -> f64 {
        self.sheets.iter().map(CrossedElement::wiener_norm).fold(0.0, f64::max)
    }

    pub fn bandwidth(&self) -> usize {
        self.sheets.iter().map(CrossedElement::bandwidth).max().unwrap_or(0)
    }

    pub fn window_radius(&self) -> usize {
        self.sheets.iter().map(|e| e.window_radius(&self.group)).max().unwrap_or(0)
    }

    fn map(&self, f: impl Fn(&CrossedElement) -> CrossedElement) -> Self {
        Self {
            group: self.group.clone(),
            order: self.order,
            sheets: [f(&self.sheets[0]), f(&self.sheets[1])],
        }
    }

    pub fn scale(&self, s: C64) -> Self {
        self.map(|e| e.scale(s))
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            group: self.group.clone(),
            order: self.order,
            sheets: [self.sheets[0].add(&other.sheets[0]), self.sheets[1].add(&other.sheets[1])],
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(C64::new(-1.0, 0.0)))
    }

    pub fn adjoint(&self) -> Self {
        self.map(|e| e.adjoint(&self.group))
    }

    pub fn truncate(&mut self, radius: Option<usize>, band: Option<usize>) -> Discarded {
        let mut d = Discarded::default();
        for e in self.sheets.iter_mut() {
            d.absorb(e.truncate(&self.group, radius, band));
        }
        d
    }
}

/// Principal symbol of `D` restricted to the cosphere.
pub fn symbol_of(d: &ShiftOperator) -> CrossedSymbol {
    let mut plus = CrossedElement::zeros(d.rank_out(), d.rank_in());
    let mut minus = CrossedElement::zeros(d.rank_out(), d.rank_in());
    for (g, c) in d.terms() {
        let [p, m] = c.principal_symbol();
        plus.accumulate(*g, &p);
        minus.accumulate(*g, &m);
    }
    CrossedSymbol {
        group: d.group().clone(),
        order: d.order(),
        sheets: [plus, minus],
    }
}

/// A product with the discarded window mass.
#[derive(Clone, Debug, PartialEq)]
pub struct Windowed {
    pub symbol: CrossedSymbol,
    pub discarded: Discarded,
}

/// Exact product `s1 · s2`.
pub fn crossed_multiply(s1: &CrossedSymbol, s2: &CrossedSymbol) -> Result<CrossedSymbol> {
    if s1.group != s2.group {
        return Err(WorkbenchError::InvalidOperator("symbols over different groups".into()));
    }
    Ok(CrossedSymbol {
        group: s1.group.clone(),
        order: s1.order + s2.order,
        sheets: [
            s1.sheets[0].multiply(&s2.sheets[0], &s1.group)?,
            s1.sheets[1].multiply(&s2.sheets[1], &s1.group)?,
        ],
    })
}

/// Product re-truncated to group elements of word length at most `radius`.
pub fn crossed_multiply_windowed(s1: &CrossedSymbol, s2: &CrossedSymbol, radius: usize) -> Result<Windowed> {
    let mut symbol = crossed_multiply(s1, s2)?;
    let discarded = symbol.truncate(Some(radius), None);
    Ok(Windowed { symbol, discarded })
}

/// Square representation on two Fourier-truncated copies of the circle.
pub fn represent(s: &CrossedSymbol, n: usize) -> CMatrix {
    represent_rect(s, n, n)
}

/// Block-diagonal (sheet `+`, sheet `−`) representation from modes `|k| ≤ n_in` to `|r| ≤ n_out`.
pub fn represent_rect(s: &CrossedSymbol, n_in: usize, n_out: usize) -> CMatrix {
    let a = s.sheets[0].block(&s.group, n_in, n_out);
    let b = s.sheets[1].block(&s.group, n_in, n_out);
    let mut m = CMatrix::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    m.view_mut((0, 0), a.shape()).copy_from(&a);
    m.view_mut(a.shape(), b.shape()).copy_from(&b);
    m
}

/// One sheet of a symbol viewed as an order-zero mode operator.
pub struct SheetOperator<'a> {
    pub element: &'a CrossedElement,
    pub group: &'a GroupSpec,
}

impl ModeOperator for SheetOperator<'_> {
    fn rank_in(&self) -> usize {
        self.element.cols
    }
    fn rank_out(&self) -> usize {
        self.element.rows
    }
    fn order(&self) -> i32 {
        0
    }
    fn bandwidth(&self) -> usize {
        self.element.bandwidth()
    }
    fn block(&self, n_in: usize, n_out: usize) -> CMatrix {
        self.element.block(self.group, n_in, n_out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Elliptic,
    NotElliptic,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EllipticityCertificate {
    pub s_min: f64,
    /// `(N, s_min(N))` over the schedule.
    pub history: Vec<(usize, f64)>,
    /// Window radius `G` of the symbol.
    pub window: usize,
    pub tolerance: f64,
    /// `s_min` at the smallest cutoff over `s_min` at the largest.
    pub decay_ratio: f64,
    pub verdict: Verdict,
}

pub const DEFAULT_ELLIPTIC_SCHEDULE: [usize; 4] = [16, 32, 64, 128];
const DRIFT_LIMIT: f64 = 0.05;
const DECAY_LIMIT: f64 = 10.0;

/// Lower bound of `s` on the span of modes `|k| ≤ n`, over both sheets and
/// for both `s` and `s*`.
///
/// The restriction is computed exactly (rows up to `n + bandwidth`), so the
/// value decreases monotonically to the true lower bound as `n` grows.
pub fn lower_bound_at(s: &CrossedSymbol, n: usize) -> f64 {
    let adj = s.adjoint();
    let mut m = f64::INFINITY;
    for sym in [s, &adj] {
        for e in sym.sheets.iter() {
            let b = e.bandwidth();
            m = m.min(min_singular_value(&e.block(&s.group, n, n + b)));
        }
    }
    m
}

pub fn is_elliptic(s: &CrossedSymbol, tol: f64) -> EllipticityCertificate {
    is_elliptic_with(s, tol, &DEFAULT_ELLIPTIC_SCHEDULE)
}

pub fn is_elliptic_with(s: &CrossedSymbol, tol: f64, schedule: &[usize]) -> EllipticityCertificate {
    let mut sched = schedule.to_vec();
    sched.sort_unstable();
    sched.dedup();
    let history: Vec<(usize, f64)> = sched.iter().map(|&n| (n, lower_bound_at(s, n))).collect();
    let last = history.last().map(|h| h.1).unwrap_or(0.0);
    let first = history.first().map(|h| h.1).unwrap_or(0.0);
    let decay_ratio = if last > 0.0 { first / last } else { f64::INFINITY };
    let verdict = if history.is_empty() || last <= tol || decay_ratio >= DECAY_LIMIT {
        Verdict::NotElliptic
    } else if history.len() >= 2 {
        let prev = history[history.len() - 2].1;
        if prev > tol && (prev - last).abs() <= DRIFT_LIMIT * last {
            Verdict::Elliptic
        } else {
            Verdict::Inconclusive
        }
    } else {
        Verdict::Inconclusive
    };
    EllipticityCertificate {
        s_min: last,
        history,
        window: s.window_radius(),
        tolerance: tol,
        decay_ratio,
        verdict,
    }
}

/// Fourier coefficients below this modulus are dropped during inversion.
const PRUNE_TOL: f64 = 1e-17;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InverseOptions {
    /// Word-length window kept after each product.
    pub window: usize,
    /// Fourier band kept after each product.
    pub band: usize,
    pub max_iterations: usize,
}

impl Default for InverseOptions {
    fn default() -> Self {
        Self {
            window: 24,
            band: 32,
            max_iterations: 80,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InverseResult {
    pub inverse: CrossedSymbol,
    /// `max(‖r s − 1‖_W, ‖s r − 1‖_W)`.
    pub residual: f64,
    pub iterations: usize,
    pub discarded: Discarded,
    /// `(|g|, Σ_{|h| = |g|} ‖r_h‖_W)`, the decay profile of the inverse.
    pub decay: Vec<(usize, f64)>,
}

fn two_sided_residual(s: &CrossedSymbol, r: &CrossedSymbol) -> Result<f64> {
    let id_l = CrossedSymbol::identity(s.group.clone(), s.cols());
    let id_r = CrossedSymbol::identity(s.group.clone(), s.rows());
    let a = crossed_multiply(r, s)?.sub(&id_l).wiener_norm();
    let b = crossed_multiply(s, r)?.sub(&id_r).wiener_norm();
    Ok(a.max(b))
}

pub fn invert(s: &CrossedSymbol, tol: f64) -> Result<InverseResult> {
    invert_with(s, tol, &InverseOptions::default())
}

/// Newton–Schulz iteration `r ← 2r − r s r` from `r₀ = s*/‖s‖_W²`, truncated
/// to the window and band after every product.
pub fn invert_with(s: &CrossedSymbol, tol: f64, opts: &InverseOptions) -> Result<InverseResult> {
    if s.rows() != s.cols() {
        return Err(WorkbenchError::RankMismatch("only square symbols can be inverted".into()));
    }
    let w = s.wiener_norm();
    if w == 0.0 {
        return Err(WorkbenchError::Inversion("zero symbol".into()));
    }
    let mut discarded = Discarded::default();
    let mut r = s.adjoint().scale(C64::new(1.0 / (w * w), 0.0));
    r.order = -s.order;
    discarded.absorb(r.truncate(Some(opts.window), Some(opts.band)));
    let mut residual = two_sided_residual(s, &r)?;
    let mut best = (residual, r.clone());
    let mut iterations = 0;
    let mut stalled = 0;
    while residual > tol && iterations < opts.max_iterations {
        let mut sr = crossed_multiply(s, &r)?;
        discarded.absorb(sr.truncate(Some(opts.window), Some(opts.band)));
        let mut rsr = crossed_multiply(&r, &sr)?;
        discarded.absorb(rsr.truncate(Some(opts.window), Some(opts.band)));
        let mut next = r.scale(C64::new(2.0, 0.0)).sub(&rsr);
        next.order = -s.order;
        for e in next.sheets.iter_mut() {
            discarded.band += e.prune(PRUNE_TOL);
        }
        r = next;
        iterations += 1;
        residual = two_sided_residual(s, &r)?;
        if residual < best.0 {
            stalled = 0;
            best = (residual, r.clone());
        } else {
            stalled += 1;
        }
        if stalled >= 3 {
            break;
        }
    }
    let (residual, inverse) = best;
    if residual > tol {
        return Err(WorkbenchError::Inversion(format!(
            "residual {residual:.3e} above tolerance {tol:.1e} with window {} and band {}",
            opts.window, opts.band
        )));
    }
    let mut decay: BTreeMap<usize, f64> = BTreeMap::new();
    for e in inverse.sheets.iter() {
        for (g, a) in e.terms() {
            *decay.entry(inverse.group.word_length(*g)).or_default() += a.wiener_norm();
        }
    }
    Ok(InverseResult {
        inverse,
        residual,
        iterations,
        discarded,
        decay: decay.into_iter().collect(),
    })
}
