//! Noncommutative differential forms `Λ*(X, End E)_Γ` on the torus
//! `X = 2B*S¹` with coordinates `(x, β)`.
//!
//! An [`NCForm`] is a finite sum `Σ_g T_g ω_g`. Each `ω_g` has parts of degree
//! 0, 1 (`dx`, `dβ`) and 2 (`dx∧dβ`), and each part is an `r × r` matrix of
//! functions sampled on a uniform grid. Products follow
//! `(T_g a)(T_h b) = T_{gh} (h*a) ∧ b` where `h*` is pullback by the rotation
//! `x ↦ x + α_h`; derivatives are spectral in both variables.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use nalgebra::DMatrix;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Result, WorkbenchError};
use crate::group_model::{fixed_set, haar_average, ConjugacyTable, FixedSetKind, GroupElement, GroupSpec, HAAR_DEFAULT_POINTS};
use crate::trig::C64;

pub const DEFAULT_GRID: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub nb: usize,
}

impl Grid {
    pub fn new(nx: usize, nb: usize) -> Result<Self> {
        if nx < 4 || nb < 4 || !nx.is_multiple_of(2) || !nb.is_multiple_of(2) {
            return Err(WorkbenchError::GridMismatch(format!("grid sizes must be even and at least 4, got {nx}x{nb}")));
        }
        Ok(Self { nx, nb })
    }

    pub fn square(n: usize) -> Result<Self> {
        Self::new(n, n)
    }

    pub fn len(&self) -> usize {
        self.nx * self.nb
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x(&self, ix: usize) -> f64 {
        TAU * ix as f64 / self.nx as f64
    }

    pub fn beta(&self, jb: usize) -> f64 {
        TAU * jb as f64 / self.nb as f64
    }

    /// Iterates `(flat index, x, β)`.
    pub fn points(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        (0..self.nb).flat_map(move |jb| (0..self.nx).map(move |ix| (jb * self.nx + ix, self.x(ix), self.beta(jb))))
    }
}

fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

/// Signed frequency of FFT bin `m` of a length-`n` transform; `None` at Nyquist.
fn freq(m: usize, n: usize) -> Option<f64> {
    if 2 * m == n {
        None
    } else if 2 * m < n {
        Some(m as f64)
    } else {
        Some(m as f64 - n as f64)
    }
}

/// Applies a Fourier multiplier along the contiguous axis (`x`) of every row.
/// `mult(n)` gets the signed frequency, or `None` at Nyquist.
fn filter_rows(data: &mut [C64], n: usize, mult: impl Fn(Option<f64>) -> C64) {
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let factors: Vec<C64> = (0..n).map(|m| mult(freq(m, n)) / n as f64).collect();
    for row in data.chunks_mut(n) {
        let buf: &mut [Complex<f64>] = row;
        fwd.process(buf);
        for (v, f) in buf.iter_mut().zip(&factors) {
            *v *= f;
        }
        inv.process(buf);
    }
}

/// Applies a Fourier multiplier along the strided axis (`β`) of a `nb × nx` block.
fn filter_cols(data: &mut [C64], nx: usize, nb: usize, mult: impl Fn(Option<f64>) -> C64) {
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(nb);
    let inv = planner.plan_fft_inverse(nb);
    let factors: Vec<C64> = (0..nb).map(|m| mult(freq(m, nb)) / nb as f64).collect();
    let mut buf = vec![zero(); nb];
    for block in data.chunks_mut(nx * nb) {
        for ix in 0..nx {
            for jb in 0..nb {
                buf[jb] = block[jb * nx + ix];
            }
            fwd.process(&mut buf);
            for (v, f) in buf.iter_mut().zip(&factors) {
                *v *= f;
            }
            inv.process(&mut buf);
            for jb in 0..nb {
                block[jb * nx + ix] = buf[jb];
            }
        }
    }
}

/// Pullback `f(x) ↦ f(x + α)` of every row: an exact roll when `α` is a
/// whole number of cells, otherwise a Fourier phase shift.
fn translate_rows(data: &mut [C64], nx: usize, alpha: f64) {
    let cells = alpha * nx as f64 / TAU;
    let rounded = cells.round();
    if (cells - rounded).abs() < 1e-9 {
        let s = (rounded as i64).rem_euclid(nx as i64) as usize;
        if s != 0 {
            for row in data.chunks_mut(nx) {
                row.rotate_left(s);
            }
        }
        return;
    }
    let nyq = nx as f64 / 2.0;
    filter_rows(data, nx, |n| match n {
        Some(n) => C64::from_polar(1.0, n * alpha),
        None => C64::new((nyq * alpha).cos(), 0.0),
    });
}

/// An `r × r` matrix of grid functions, stored entry-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MatField {
    rank: usize,
    grid: Grid,
    data: Vec<C64>,
}

impl MatField {
    pub fn zeros(grid: Grid, rank: usize) -> Self {
        Self {
            rank,
            grid,
            data: vec![zero(); rank * rank * grid.len()],
        }
    }

    pub fn identity(grid: Grid, rank: usize) -> Self {
        Self::scalar_fn(grid, rank, |_, _| C64::new(1.0, 0.0))
    }

    /// `f(x, β)` times the identity matrix.
    pub fn scalar_fn(grid: Grid, rank: usize, f: impl Fn(f64, f64) -> C64) -> Self {
        let mut m = Self::zeros(grid, rank);
        for (p, x, b) in grid.points() {
            let v = f(x, b);
            for i in 0..rank {
                m.data[(i * rank + i) * grid.len() + p] = v;
            }
        }
        m
    }

    pub fn from_fn(grid: Grid, rank: usize, f: impl Fn(f64, f64) -> DMatrix<C64>) -> Self {
        let mut m = Self::zeros(grid, rank);
        for (p, x, b) in grid.points() {
            let v = f(x, b);
            assert_eq!(v.shape(), (rank, rank), "matrix field shape");
            for i in 0..rank {
                for j in 0..rank {
                    m.data[(i * rank + j) * grid.len() + p] = v[(i, j)];
                }
            }
        }
        m
    }

    /// The same matrix at every point.
    pub fn constant(grid: Grid, m: &DMatrix<C64>) -> Self {
        Self::from_fn(grid, m.nrows(), |_, _| m.clone())
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn entry(&self, i: usize, j: usize) -> &[C64] {
        let len = self.grid.len();
        &self.data[(i * self.rank + j) * len..(i * self.rank + j + 1) * len]
    }

    pub fn entry_mut(&mut self, i: usize, j: usize) -> &mut [C64] {
        let len = self.grid.len();
        &mut self.data[(i * self.rank + j) * len..(i * self.rank + j + 1) * len]
    }

    /// The matrix at flat grid index `p`.
    pub fn at(&self, p: usize) -> DMatrix<C64> {
        let len = self.grid.len();
        DMatrix::from_fn(self.rank, self.rank, |i, j| self.data[(i * self.rank + j) * len + p])
    }

    /// Copies an `(rank_src)`-field into the block starting at `(r0, c0)`.
    pub fn set_block(&mut self, r0: usize, c0: usize, src: &MatField) {
        for i in 0..src.rank {
            for j in 0..src.rank {
                self.entry_mut(r0 + i, c0 + j).copy_from_slice(src.entry(i, j));
            }
        }
    }

    /// The `size × size` block starting at `(r0, c0)`.
    pub fn block(&self, r0: usize, c0: usize, size: usize) -> MatField {
        let mut out = MatField::zeros(self.grid, size);
        for i in 0..size {
            for j in 0..size {
                out.entry_mut(i, j).copy_from_slice(self.entry(r0 + i, c0 + j));
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.add_assign(other);
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a -= b;
        }
        out
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            rank: self.rank,
            grid: self.grid,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// Pointwise matrix product.
    pub fn mul(&self, other: &Self) -> Self {
        let r = self.rank;
        let len = self.grid.len();
        let mut out = Self::zeros(self.grid, r);
        for i in 0..r {
            for k in 0..r {
                let a = &self.data[(i * r + k) * len..(i * r + k + 1) * len];
                if a.iter().all(|v| *v == zero()) {
                    continue;
                }
                for j in 0..r {
                    let b = &other.data[(k * r + j) * len..(k * r + j + 1) * len];
                    let o = &mut out.data[(i * r + j) * len..(i * r + j + 1) * len];
                    for p in 0..len {
                        o[p] += a[p] * b[p];
                    }
                }
            }
        }
        out
    }

    /// Pointwise conjugate transpose.
    pub fn adjoint(&self) -> Self {
        let mut out = Self::zeros(self.grid, self.rank);
        for i in 0..self.rank {
            for j in 0..self.rank {
                let src: Vec<C64> = self.entry(j, i).iter().map(|v| v.conj()).collect();
                out.entry_mut(i, j).copy_from_slice(&src);
            }
        }
        out
    }

    pub fn translate_x(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        if alpha != 0.0 {
            translate_rows(&mut out.data, self.grid.nx, alpha);
        }
        out
    }

    pub fn deriv_x(&self) -> Self {
        let mut out = self.clone();
        filter_rows(&mut out.data, self.grid.nx, |n| match n {
            Some(n) => C64::new(0.0, n),
            None => zero(),
        });
        out
    }

    pub fn deriv_beta(&self) -> Self {
        let mut out = self.clone();
        filter_cols(&mut out.data, self.grid.nx, self.grid.nb, |n| match n {
            Some(n) => C64::new(0.0, n),
            None => zero(),
        });
        out
    }

    /// Periodic Gaussian smoothing in `β` with standard deviation `cells` grid cells.
    pub fn smooth_beta(&self, cells: f64) -> Self {
        let mut out = self.clone();
        let h = TAU / self.grid.nb as f64;
        let nyq = self.grid.nb as f64 / 2.0;
        filter_cols(&mut out.data, self.grid.nx, self.grid.nb, |n| {
            let n = n.unwrap_or(nyq);
            C64::new((-0.5 * (cells * h * n).powi(2)).exp(), 0.0)
        });
        out
    }

    /// Fiberwise trace.
    pub fn trace(&self) -> Vec<C64> {
        let len = self.grid.len();
        let mut out = vec![zero(); len];
        for i in 0..self.rank {
            for (o, v) in out.iter_mut().zip(self.entry(i, i)) {
                *o += v;
            }
        }
        out
    }

    /// Largest pointwise Frobenius norm.
    pub fn sup_norm(&self) -> f64 {
        let len = self.grid.len();
        let mut acc = vec![0.0; len];
        for e in self.data.chunks(len) {
            for (a, v) in acc.iter_mut().zip(e) {
                *a += v.norm_sqr();
            }
        }
        acc.into_iter().fold(0.0, f64::max).sqrt()
    }

    /// Largest magnitude of the 2D Fourier coefficients with `max(|n_x|, |n_β|) ≥ cut`,
    /// relative to the largest coefficient: a smoothness diagnostic.
    pub fn spectral_tail(&self, cut: usize) -> f64 {
        let (nx, nb) = (self.grid.nx, self.grid.nb);
        let mut spec = self.data.clone();
        let mut planner = FftPlanner::<f64>::new();
        let fx = planner.plan_fft_forward(nx);
        let fb = planner.plan_fft_forward(nb);
        let mut buf = vec![zero(); nb];
        let (mut top, mut tail) = (0.0f64, 0.0f64);
        for block in spec.chunks_mut(nx * nb) {
            for row in block.chunks_mut(nx) {
                fx.process(row);
            }
            for ix in 0..nx {
                for jb in 0..nb {
                    buf[jb] = block[jb * nx + ix];
                }
                fb.process(&mut buf);
                let kx = freq(ix, nx).unwrap_or(nx as f64 / 2.0).abs() as usize;
                for (jb, v) in buf.iter().enumerate() {
                    let kb = freq(jb, nb).unwrap_or(nb as f64 / 2.0).abs() as usize;
                    let m = v.norm();
                    top = top.max(m);
                    if kx.max(kb) >= cut {
                        tail = tail.max(m);
                    }
                }
            }
        }
        if top == 0.0 {
            0.0
        } else {
            tail / top
        }
    }
}

/// Part indices of a form on the torus.
pub const DEG0: usize = 0;
pub const DX: usize = 1;
pub const DB: usize = 2;
pub const DXDB: usize = 3;
pub const PART_DEGREE: [usize; 4] = [0, 1, 1, 2];

/// `a_0 + a_x dx + a_β dβ + a_2 dx∧dβ` with matrix-field coefficients; absent parts are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct FormCoeff {
    pub parts: [Option<MatField>; 4],
}

/// Sign and target part of `(basis i) ∧ (basis j)`, `None` when it vanishes.
fn wedge(i: usize, j: usize) -> Option<(f64, usize)> {
    match (i, j) {
        (DEG0, k) | (k, DEG0) => Some((1.0, k)),
        (DX, DB) => Some((1.0, DXDB)),
        (DB, DX) => Some((-1.0, DXDB)),
        _ => None,
    }
}

impl FormCoeff {
    pub fn zero() -> Self {
        Self {
            parts: [None, None, None, None],
        }
    }

    pub fn degree0(m: MatField) -> Self {
        Self::single(DEG0, m)
    }

    pub fn single(part: usize, m: MatField) -> Self {
        let mut f = Self::zero();
        f.parts[part] = Some(m);
        f
    }

    pub fn is_zero(&self) -> bool {
        self.parts.iter().all(Option::is_none)
    }

    pub fn part(&self, k: usize) -> Option<&MatField> {
        self.parts[k].as_ref()
    }

    fn map(&self, f: impl Fn(&MatField) -> MatField) -> Self {
        Self {
            parts: [
                self.parts[0].as_ref().map(&f),
                self.parts[1].as_ref().map(&f),
                self.parts[2].as_ref().map(&f),
                self.parts[3].as_ref().map(&f),
            ],
        }
    }

    fn accumulate(&mut self, part: usize, m: MatField) {
        match &mut self.parts[part] {
            Some(prev) => prev.add_assign(&m),
            slot @ None => *slot = Some(m),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (k, p) in other.parts.iter().enumerate() {
            if let Some(m) = p {
                out.accumulate(k, m.clone());
            }
        }
        out
    }

    pub fn scale(&self, s: C64) -> Self {
        self.map(|m| m.scale(s))
    }

    pub fn translate_x(&self, alpha: f64) -> Self {
        if alpha == 0.0 {
            return self.clone();
        }
        self.map(|m| m.translate_x(alpha))
    }

    /// Graded wedge product with matrix multiplication in the fibres.
    pub fn wedge(&self, other: &Self) -> Self {
        let mut out = Self::zero();
        for (i, a) in self.parts.iter().enumerate() {
            let Some(a) = a else { continue };
            for (j, b) in other.parts.iter().enumerate() {
                let Some(b) = b else { continue };
                if let Some((sign, k)) = wedge(i, j) {
                    let prod = a.mul(b);
                    out.accumulate(k, if sign < 0.0 { prod.scale(C64::new(-1.0, 0.0)) } else { prod });
                }
            }
        }
        out
    }

    pub fn d(&self) -> Self {
        let mut out = Self::zero();
        if let Some(f) = &self.parts[DEG0] {
            out.accumulate(DX, f.deriv_x());
            out.accumulate(DB, f.deriv_beta());
        }
        if let Some(f) = &self.parts[DB] {
            out.accumulate(DXDB, f.deriv_x());
        }
        if let Some(f) = &self.parts[DX] {
            out.accumulate(DXDB, f.deriv_beta().scale(C64::new(-1.0, 0.0)));
        }
        out
    }

    /// Keeps the parts of the given degree.
    pub fn degree_part(&self, deg: usize) -> Self {
        let mut out = Self::zero();
        for k in 0..4 {
            if PART_DEGREE[k] == deg {
                out.parts[k] = self.parts[k].clone();
            }
        }
        out
    }

    pub fn sup_norm(&self) -> f64 {
        self.parts.iter().flatten().map(MatField::sup_norm).sum()
    }

    /// Pointwise adjoint of each part.
    pub fn adjoint(&self) -> Self {
        self.map(MatField::adjoint)
    }
}

/// `Σ_g T_g ω_g` over a window of group elements.
#[derive(Clone, Debug, PartialEq)]
pub struct NCForm {
    group: GroupSpec,
    rank: usize,
    grid: Grid,
    window: Option<usize>,
    terms: BTreeMap<GroupElement, FormCoeff>,
    discarded: f64,
}

impl NCForm {
    pub fn zero(group: GroupSpec, rank: usize, grid: Grid, window: Option<usize>) -> Self {
        Self {
            group,
            rank,
            grid,
            window,
            terms: BTreeMap::new(),
            discarded: 0.0,
        }
    }

    pub fn unit(group: GroupSpec, rank: usize, grid: Grid, window: Option<usize>) -> Self {
        let mut a = Self::zero(group, rank, grid, window);
        a.insert(GroupElement::IDENTITY, FormCoeff::degree0(MatField::identity(grid, rank)));
        a
    }

    /// An empty form with the same group, rank, grid and window.
    pub fn like(&self) -> Self {
        Self::zero(self.group.clone(), self.rank, self.grid, self.window)
    }

    /// Adds `T_g ω` to the form.
    pub fn insert(&mut self, g: GroupElement, w: FormCoeff) {
        if w.is_zero() {
            return;
        }
        let g = self.group.element(g.0);
        let merged = match self.terms.remove(&g) {
            Some(prev) => prev.add(&w),
            None => w,
        };
        self.terms.insert(g, merged);
    }

    pub fn group(&self) -> &GroupSpec {
        &self.group
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn window(&self) -> Option<usize> {
        self.window
    }

    pub fn terms(&self) -> &BTreeMap<GroupElement, FormCoeff> {
        &self.terms
    }

    pub fn get(&self, g: GroupElement) -> Option<&FormCoeff> {
        self.terms.get(&g)
    }

    /// Wiener mass dropped by window truncation in the products that built this form.
    pub fn discarded(&self) -> f64 {
        self.discarded
    }

    fn check(&self, other: &Self) -> Result<()> {
        if self.rank != other.rank || self.grid != other.grid {
            return Err(WorkbenchError::GridMismatch(format!(
                "rank {} on {}x{} vs rank {} on {}x{}",
                self.rank, self.grid.nx, self.grid.nb, other.rank, other.grid.nx, other.grid.nb
            )));
        }
        if self.group != other.group {
            return Err(WorkbenchError::GridMismatch("forms over different groups".into()));
        }
        Ok(())
    }

    fn map(&self, f: impl Fn(&FormCoeff) -> FormCoeff) -> Self {
        let mut out = self.like();
        out.discarded = self.discarded;
        for (g, w) in &self.terms {
            out.insert(*g, f(w));
        }
        out
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check(other)?;
        let mut out = self.clone();
        out.discarded += other.discarded;
        for (g, w) in &other.terms {
            out.insert(*g, w.clone());
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(C64::new(-1.0, 0.0)))
    }

    pub fn scale(&self, s: C64) -> Self {
        self.map(|w| w.scale(s))
    }

    pub fn degree_part(&self, deg: usize) -> Self {
        self.map(|w| w.degree_part(deg))
    }

    /// Degrees present in the form.
    pub fn degrees(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self
            .terms
            .values()
            .flat_map(|w| (0..4).filter(|&k| w.parts[k].is_some()).map(|k| PART_DEGREE[k]))
            .collect();
        d.sort_unstable();
        d.dedup();
        d
    }

    /// `Σ_g Σ_parts sup |ω_g|`.
    pub fn norm(&self) -> f64 {
        self.terms.values().map(FormCoeff::sup_norm).sum()
    }

    /// `(T_g ω)* = T_{g⁻¹} (g⁻¹)*ω*` with pointwise adjoints (meaningful in degree 0).
    pub fn adjoint(&self) -> Self {
        let mut out = self.like();
        out.discarded = self.discarded;
        for (g, w) in &self.terms {
            let gi = self.group.inverse(*g);
            out.insert(gi, w.adjoint().translate_x(self.group.angle(gi)));
        }
        out
    }

    /// Drops group terms with norm at most `tol`, adding them to the discarded mass.
    pub fn prune_terms(&mut self, tol: f64) {
        let mut dropped = 0.0;
        self.terms.retain(|_, w| {
            let n = w.sup_norm();
            if n <= tol {
                dropped += n;
                false
            } else {
                true
            }
        });
        self.discarded += dropped;
    }

    /// Left multiplication by a field at the identity element.
    pub fn left_mul_field(&self, m: &MatField) -> Self {
        self.map(|w| FormCoeff::degree0(m.clone()).wedge(w))
    }
}

/// Crossed product with graded wedge, re-truncated to the window.
pub fn nc_product(a: &NCForm, b: &NCForm) -> Result<NCForm> {
    a.check(b)?;
    let group = &a.group;
    let window = match (a.window, b.window) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, y) => x.or(y),
    };
    let mut out = NCForm::zero(group.clone(), a.rank, a.grid, window);
    out.discarded = a.discarded + b.discarded;
    for (h, bw) in &b.terms {
        let alpha = group.angle(*h);
        for (g, aw) in &a.terms {
            let f = group.compose(*g, *h);
            if let Some(r) = window {
                if group.word_length(f) > r {
                    out.discarded += aw.sup_norm() * bw.sup_norm();
                    continue;
                }
            }
            out.insert(f, aw.translate_x(alpha).wedge(bw));
        }
    }
    Ok(out)
}

/// Product of several forms, left to right.
pub fn nc_product_all(factors: &[&NCForm]) -> Result<NCForm> {
    let (first, rest) = factors
        .split_first()
        .ok_or_else(|| WorkbenchError::GridMismatch("empty product".into()))?;
    rest.iter().try_fold((*first).clone(), |acc, f| nc_product(&acc, f))
}

/// Exterior derivative applied coefficientwise.
pub fn nc_d(a: &NCForm) -> NCForm {
    a.map(FormCoeff::d)
}

/// `[a, b] = ab − (−1)^{|a||b|} ba`, extended bilinearly over degrees.
pub fn supercommutator(a: &NCForm, b: &NCForm) -> Result<NCForm> {
    let mut out = a.like();
    for da in a.degrees() {
        let ah = a.degree_part(da);
        for db in b.degrees() {
            let bh = b.degree_part(db);
            let ab = nc_product(&ah, &bh)?;
            let ba = nc_product(&bh, &ah)?;
            let sign = if (da * db) % 2 == 1 { 1.0 } else { -1.0 };
            out = out.add(&ab)?.add(&ba.scale(C64::new(sign, 0.0)))?;
        }
    }
    Ok(out)
}

/// A scalar form on the torus, parts indexed like [`FormCoeff`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarForm {
    pub grid: Grid,
    pub parts: [Vec<C64>; 4],
}

impl ScalarForm {
    pub fn zero(grid: Grid) -> Self {
        let z = vec![zero(); grid.len()];
        Self {
            grid,
            parts: [z.clone(), z.clone(), z.clone(), z],
        }
    }

    fn as_field(&self, k: usize) -> MatField {
        MatField {
            rank: 1,
            grid: self.grid,
            data: self.parts[k].clone(),
        }
    }

    pub fn d(&self) -> ScalarForm {
        let mut f = FormCoeff::zero();
        for k in 0..4 {
            f.parts[k] = Some(self.as_field(k));
        }
        let df = f.d();
        let mut out = ScalarForm::zero(self.grid);
        for k in 0..4 {
            if let Some(m) = df.part(k) {
                out.parts[k] = m.data.clone();
            }
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for k in 0..4 {
            for (a, b) in out.parts[k].iter_mut().zip(&other.parts[k]) {
                *a += b;
            }
        }
        out
    }

    pub fn scale(&self, s: C64) -> Self {
        let mut out = self.clone();
        for p in out.parts.iter_mut() {
            for v in p.iter_mut() {
                *v *= s;
            }
        }
        out
    }

    pub fn sup_norm(&self) -> f64 {
        self.parts.iter().flatten().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// `∫ f dx dβ` of one part by the trapezoid rule.
    pub fn integral(&self, k: usize) -> C64 {
        let s: C64 = self.parts[k].iter().sum();
        s * (TAU * TAU / self.grid.len() as f64)
    }
}

/// `τ(a)`: one form per conjugacy class with nonempty fixed set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceValue {
    pub classes: BTreeMap<i64, ScalarForm>,
    /// Degree-0 values at isolated fixed points, per class.
    #[serde(default)]
    pub points: BTreeMap<i64, Vec<C64>>,
}

impl TraceValue {
    pub fn identity_part(&self) -> Option<&ScalarForm> {
        self.classes.get(&0)
    }

    pub fn sup_norm(&self) -> f64 {
        self.classes.values().map(ScalarForm::sup_norm).fold(0.0, f64::max)
    }
}

/// The closed graded trace: fiberwise trace of `ω_{g₀}` on `X_{g₀}`,
/// averaged over the closure of the centralizer.
pub fn trace_tau(a: &NCForm, table: &ConjugacyTable) -> Result<TraceValue> {
    trace_tau_with(a, table, HAAR_DEFAULT_POINTS)
}

/// [`trace_tau`] with an explicit starting Haar quadrature size.
pub fn trace_tau_with(a: &NCForm, table: &ConjugacyTable, haar_points: usize) -> Result<TraceValue> {
    let mut classes = BTreeMap::new();
    let grid = a.grid;
    let len = grid.len();
    for class in &table.classes {
        let g0 = class.representative;
        match fixed_set(g0, &a.group).kind {
            FixedSetKind::Empty => continue,
            FixedSetKind::IsolatedPoints(_) => {
                return Err(WorkbenchError::GridMismatch("isolated fixed points carry no torus form".into()));
            }
            FixedSetKind::WholeManifold => {}
        }
        let Some(w) = a.terms.get(&g0) else {
            classes.insert(g0.0, ScalarForm::zero(grid));
            continue;
        };
        let mut flat = vec![zero(); 4 * len];
        for k in 0..4 {
            if let Some(m) = w.part(k) {
                flat[k * len..(k + 1) * len].copy_from_slice(&m.trace());
            }
        }
        let (nx, nyq) = (grid.nx, grid.nx as f64 / 2.0);
        let mut spec = flat;
        let mut planner = FftPlanner::<f64>::new();
        let fwd = planner.plan_fft_forward(nx);
        let inv = planner.plan_fft_inverse(nx);
        for row in spec.chunks_mut(nx) {
            fwd.process(row);
        }
        let pullback = |t: f64| -> Vec<C64> {
            let factors: Vec<C64> = (0..nx)
                .map(|m| match freq(m, nx) {
                    Some(n) => C64::from_polar(1.0 / nx as f64, n * t),
                    None => C64::new((nyq * t).cos() / nx as f64, 0.0),
                })
                .collect();
            let mut out = spec.clone();
            for row in out.chunks_mut(nx) {
                for (v, f) in row.iter_mut().zip(&factors) {
                    *v *= f;
                }
                inv.process(row);
            }
            out
        };
        let avg = haar_average(pullback, &class.centralizer, haar_points)?;
        let mut form = ScalarForm::zero(grid);
        for k in 0..4 {
            form.parts[k] = avg[k * len..(k + 1) * len].to_vec();
        }
        classes.insert(g0.0, form);
    }
    Ok(TraceValue {
        classes,
        points: BTreeMap::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> Grid {
        Grid::square(32).unwrap()
    }

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn random_field(rng: &mut ChaCha8Rng, g: Grid, rank: usize, band: i64) -> MatField {
        let mut coeffs = Vec::new();
        for _ in 0..rank * rank {
            let mut e = Vec::new();
            for nx in -band..=band {
                for nb in -band..=band {
                    e.push((nx, nb, C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) / (1.0 + (nx * nx + nb * nb) as f64)));
                }
            }
            coeffs.push(e);
        }
        MatField::from_fn(g, rank, |x, b| {
            DMatrix::from_fn(rank, rank, |i, j| {
                coeffs[i * rank + j]
                    .iter()
                    .map(|(n, m, v)| v * C64::from_polar(1.0, *n as f64 * x + *m as f64 * b))
                    .sum()
            })
        })
    }

    fn random_form(rng: &mut ChaCha8Rng, group: &GroupSpec, rank: usize, elems: &[i64], degrees: &[usize]) -> NCForm {
        let mut a = NCForm::zero(group.clone(), rank, grid(), None);
        for &g in elems {
            let mut w = FormCoeff::zero();
            for &k in degrees {
                w.parts[k] = Some(random_field(rng, grid(), rank, 3));
            }
            a.insert(GroupElement(g), w);
        }
        a
    }

    #[test]
    fn unit_and_shift_products() {
        let g = GroupSpec::finite_cyclic(4, vec![1, 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_form(&mut rng, &g, 2, &[0, 1, 3], &[DEG0, DX, DXDB]);
        let u = NCForm::unit(g.clone(), 2, grid(), None);
        assert!(nc_product(&a, &u).unwrap().sub(&a).unwrap().norm() < 1e-14);
        assert!(nc_product(&u, &a).unwrap().sub(&a).unwrap().norm() < 1e-14);

        let shift = |k: i64| {
            let mut s = NCForm::zero(g.clone(), 1, grid(), None);
            s.insert(GroupElement(k), FormCoeff::degree0(MatField::identity(grid(), 1)));
            s
        };
        let p = nc_product(&shift(1), &shift(2)).unwrap();
        assert!(p.sub(&shift(3)).unwrap().norm() < 1e-15);
    }

    #[test]
    fn one_forms_anticommute() {
        let g = GroupSpec::golden();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_form(&mut rng, &g, 1, &[0], &[DX, DB]);
        let b = random_form(&mut rng, &g, 1, &[0], &[DX, DB]);
        let ab = nc_product(&a, &b).unwrap();
        let ba = nc_product(&b, &a).unwrap();
        assert!(ab.add(&ba).unwrap().norm() < 1e-13);
    }

    #[test]
    fn exterior_derivative_examples() {
        let g = GroupSpec::golden();
        let mut c1 = NCForm::zero(g.clone(), 1, grid(), None);
        c1.insert(GroupElement(0), FormCoeff::degree0(MatField::scalar_fn(grid(), 1, |_, _| c(3.0))));
        assert!(nc_d(&c1).norm() < 1e-14);

        let mut s = NCForm::zero(g.clone(), 1, grid(), None);
        s.insert(GroupElement(2), FormCoeff::degree0(MatField::scalar_fn(grid(), 1, |x, _| c(x.sin()))));
        let ds = nc_d(&s);
        let want = MatField::scalar_fn(grid(), 1, |x, _| c(x.cos()));
        let got = ds.get(GroupElement(2)).unwrap();
        assert!(got.part(DX).unwrap().sub(&want).sup_norm() < 1e-12);
        assert!(got.part(DB).unwrap().sup_norm() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_form(&mut rng, &g, 2, &[0, 1], &[DEG0, DX, DB]);
        assert!(nc_d(&nc_d(&a)).norm() < 1e-11);
    }

    #[test]
    fn d_is_a_graded_derivation() {
        let g = GroupSpec::golden();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (da, parts) in [(0usize, vec![DEG0]), (1, vec![DX, DB])] {
            let a = random_form(&mut rng, &g, 2, &[0, -1], &parts);
            let b = random_form(&mut rng, &g, 2, &[0, 2], &[DEG0, DB]);
            let lhs = nc_d(&nc_product(&a, &b).unwrap());
            let sign = if da % 2 == 0 { 1.0 } else { -1.0 };
            let rhs = nc_product(&nc_d(&a), &b)
                .unwrap()
                .add(&nc_product(&a, &nc_d(&b)).unwrap().scale(c(sign)))
                .unwrap();
            assert!(lhs.sub(&rhs).unwrap().norm() < 1e-10);
        }
    }

    #[test]
    fn product_is_associative() {
        let g = GroupSpec::golden();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_form(&mut rng, &g, 2, &[0, 1], &[DEG0, DX]);
        let b = random_form(&mut rng, &g, 2, &[-1, 3], &[DEG0, DB]);
        let cc = random_form(&mut rng, &g, 2, &[0, 2], &[DEG0]);
        let l = nc_product(&nc_product(&a, &b).unwrap(), &cc).unwrap();
        let r = nc_product(&a, &nc_product(&b, &cc).unwrap()).unwrap();
        assert!(l.sub(&r).unwrap().norm() < 1e-10 * (1.0 + l.norm()));
    }

    #[test]
    fn supercommutator_examples() {
        let g = GroupSpec::finite_cyclic(3, vec![1, 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_form(&mut rng, &g, 2, &[0, 1], &[DX, DB]);
        let b = random_form(&mut rng, &g, 2, &[2], &[DX]);
        let u = NCForm::unit(g.clone(), 2, grid(), None);
        assert!(supercommutator(&a, &u).unwrap().norm() < 1e-14);
        let direct = nc_product(&a, &b).unwrap().add(&nc_product(&b, &a).unwrap()).unwrap();
        assert!(supercommutator(&a, &b).unwrap().sub(&direct).unwrap().norm() < 1e-12);
    }

    #[test]
    fn trace_examples() {
        let dense = GroupSpec::golden();
        let table = ConjugacyTable::build(&dense, 2);
        let u = NCForm::unit(dense.clone(), 1, grid(), None);
        let t = trace_tau(&u, &table).unwrap();
        assert_eq!(t.classes.len(), 1);
        let d0 = &t.identity_part().unwrap().parts[DEG0];
        assert!(d0.iter().all(|v| (v - c(1.0)).norm() < 1e-12), "{:?}", &d0[..4]);

        let mut off = NCForm::zero(dense.clone(), 1, grid(), None);
        off.insert(GroupElement(1), FormCoeff::degree0(MatField::identity(grid(), 1)));
        assert!(trace_tau(&off, &table).unwrap().sup_norm() == 0.0);

        let mut cosx = NCForm::zero(dense, 1, grid(), None);
        cosx.insert(GroupElement(0), FormCoeff::degree0(MatField::scalar_fn(grid(), 1, |x, _| c(x.cos()))));
        assert!(trace_tau(&cosx, &table).unwrap().sup_norm() < 1e-12);
    }

    #[test]
    fn trace_vanishes_on_supercommutators() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for group in [GroupSpec::golden(), GroupSpec::finite_cyclic(4, vec![1, 3]).unwrap()] {
            let table = ConjugacyTable::build(&group, 3);
            let a = random_form(&mut rng, &group, 2, &[0, 1, -1], &[DEG0, DX]);
            let b = random_form(&mut rng, &group, 2, &[0, 1, -1], &[DEG0, DB]);
            let t = trace_tau(&supercommutator(&a, &b).unwrap(), &table).unwrap();
            assert!(t.sup_norm() <= 1e-9 * a.norm() * b.norm());
        }
    }
}
