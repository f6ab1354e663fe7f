//! Symbol projection, curvature, Chern character and localized Todd values.
//!
//! For an elliptic symbol `σ: E → F` with inverse `σ⁻¹` the projection over
//! `E ⊕ F` on the torus `2B*S¹ ∋ (x, β)` is
//!
//! ```text
//!        ┌ (1 + sin β)·1      σ⁻¹(ξ)·|cos β| ┐
//! p = ½ ·│                                   │ ,   ξ = sign cos β,
//!        └ σ(ξ)·|cos β|       (1 − sin β)·1  ┘
//! ```
//!
//! with `σ`, `σ⁻¹` taken as crossed-product elements, so `p² = p` holds
//! whenever `σ⁻¹ σ = σ σ⁻¹ = 1`. It is only Lipschitz across `cos β = 0`;
//! it is smoothed in `β` and then pushed back onto the idempotents with
//! `p ← 3p² − 2p³`.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WorkbenchError};
use crate::group_model::{ConjugacyTable, FixedSet, FixedSetKind, GroupElement, Sheet, HAAR_DEFAULT_POINTS};
use crate::nc_forms::{nc_d, nc_product, nc_product_all, trace_tau_with, FormCoeff, Grid, MatField, NCForm, ScalarForm, TraceValue, DEG0, DXDB};
use crate::symbol_calc::CrossedSymbol;
use crate::trig::{PolyMatrix, C64};

pub const DEFAULT_MOLLIFIER_CELLS: f64 = 3.0;
pub const DEFAULT_IDEMPOTENT_TOL: f64 = 1e-10;
pub const DEFAULT_CLOSED_TOL: f64 = 1e-8;
const MAX_CUBIC_STEPS: usize = 60;
const TERM_PRUNE_TOL: f64 = 1e-16;

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionField {
    pub form: NCForm,
    /// `‖p² − p‖`.
    pub defect: f64,
    /// `‖p* − p‖`; zero only when the symbol is unitary.
    pub self_adjoint_defect: f64,
    /// Largest relative 2D Fourier coefficient beyond a quarter of the grid.
    pub spectral_tail: f64,
    pub mollifier_cells: Option<f64>,
    pub iterations: usize,
    /// `‖p − p_raw‖` after restoration.
    pub distance_to_raw: f64,
}

fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

fn defect_of(p: &NCForm) -> Result<f64> {
    Ok(nc_product(p, p)?.sub(p)?.norm())
}

fn diagnose(form: NCForm, mollifier_cells: Option<f64>, iterations: usize, distance_to_raw: f64) -> Result<ProjectionField> {
    let defect = defect_of(&form)?;
    let self_adjoint_defect = form.adjoint().sub(&form)?.norm();
    let cut = form.grid().nx.min(form.grid().nb) / 4;
    let spectral_tail = form
        .terms()
        .values()
        .filter_map(|w| w.part(DEG0))
        .map(|m| m.spectral_tail(cut))
        .fold(0.0, f64::max);
    Ok(ProjectionField {
        form,
        defect,
        self_adjoint_defect,
        spectral_tail,
        mollifier_cells,
        iterations,
        distance_to_raw,
    })
}

/// Samples one block `½·a_g(x, ξ(β))·|cos β|` of a sheet symbol on the grid.
fn sample_off_diagonal(grid: Grid, plus: Option<&PolyMatrix>, minus: Option<&PolyMatrix>) -> MatField {
    let n = plus.or(minus).map(|m| m.rows()).unwrap_or(0);
    let sample = |m: Option<&PolyMatrix>| -> Vec<DMatrix<C64>> {
        (0..grid.nx)
            .map(|ix| match m {
                Some(m) => m.eval(grid.x(ix)),
                None => DMatrix::zeros(n, n),
            })
            .collect()
    };
    let (sp, sm) = (sample(plus), sample(minus));
    let mut out = MatField::zeros(grid, n);
    for jb in 0..grid.nb {
        let b = grid.beta(jb);
        let c = b.cos();
        let vals = if c >= 0.0 { &sp } else { &sm };
        let w = 0.5 * c.abs();
        for ix in 0..grid.nx {
            let p = jb * grid.nx + ix;
            for i in 0..n {
                for j in 0..n {
                    out.entry_mut(i, j)[p] = vals[ix][(i, j)] * w;
                }
            }
        }
    }
    out
}

/// The raw projection sampled on the grid, windowed like the inverse.
pub fn build_projection(s: &CrossedSymbol, s_inv: &CrossedSymbol, grid: Grid, window: Option<usize>) -> Result<ProjectionField> {
    let n = s.rows();
    if s.cols() != n || s_inv.rows() != n || s_inv.cols() != n {
        return Err(WorkbenchError::RankMismatch("projection needs square symbol and inverse of equal rank".into()));
    }
    let group = s.group().clone();
    let mut p = NCForm::zero(group, 2 * n, grid, window);

    let mut diag = MatField::zeros(grid, 2 * n);
    diag.set_block(0, 0, &MatField::scalar_fn(grid, n, |_, b| C64::new(0.5 * (1.0 + b.sin()), 0.0)));
    diag.set_block(n, n, &MatField::scalar_fn(grid, n, |_, b| C64::new(0.5 * (1.0 - b.sin()), 0.0)));
    p.insert(GroupElement::IDENTITY, FormCoeff::degree0(diag));

    let place = |p: &mut NCForm, sym: &CrossedSymbol, r0: usize, c0: usize| {
        let (plus, minus) = (sym.sheet(Sheet::Plus), sym.sheet(Sheet::Minus));
        let mut keys: Vec<GroupElement> = plus.terms().keys().chain(minus.terms().keys()).copied().collect();
        keys.sort();
        keys.dedup();
        for g in keys {
            let block = sample_off_diagonal(grid, plus.get(g), minus.get(g));
            let mut full = MatField::zeros(grid, 2 * n);
            full.set_block(r0, c0, &block);
            p.insert(g, FormCoeff::degree0(full));
        }
    };
    place(&mut p, s_inv, 0, n);
    place(&mut p, s, n, 0);
    diagnose(p, None, 0, 0.0)
}

/// Runs `p ← 3p² − 2p³` until `‖p² − p‖ ≤ tol`.
pub fn idempotentize(p: &ProjectionField, tol: f64) -> Result<ProjectionField> {
    let mut q = p.form.clone();
    let mut defect = defect_of(&q)?;
    let mut iterations = 0;
    let mut best = defect;
    let mut stalled = 0;
    while defect > tol {
        if iterations >= MAX_CUBIC_STEPS || stalled >= 2 {
            return Err(WorkbenchError::Idempotent(format!(
                "cubic iteration stalled at defect {defect:.3e} after {iterations} steps"
            )));
        }
        let q2 = nc_product(&q, &q)?;
        let q3 = nc_product(&q2, &q)?;
        q = q2.scale(C64::new(3.0, 0.0)).sub(&q3.scale(C64::new(2.0, 0.0)))?;
        q.prune_terms(TERM_PRUNE_TOL);
        iterations += 1;
        defect = defect_of(&q)?;
        if defect < 0.5 * best {
            best = defect;
            stalled = 0;
        } else {
            stalled += 1;
        }
    }
    let distance = q.sub(&p.form)?.norm();
    diagnose(q, p.mollifier_cells, iterations, distance)
}

/// Gaussian smoothing in `β` (width in grid cells) followed by [`idempotentize`];
/// fails unless the result stays within `½` of the raw projection.
pub fn mollify_and_idempotentize(p: &ProjectionField, tol: f64, cells: f64) -> Result<ProjectionField> {
    let mut smooth = p.form.like();
    for (g, w) in p.form.terms() {
        let mut sw = FormCoeff::zero();
        for k in 0..4 {
            sw.parts[k] = w.part(k).map(|m| m.smooth_beta(cells));
        }
        smooth.insert(*g, sw);
    }
    let mut start = diagnose(smooth, Some(cells), 0, 0.0)?;
    start.mollifier_cells = Some(cells);
    let mut out = idempotentize(&start, tol)?;
    out.distance_to_raw = out.form.sub(&p.form)?.norm();
    if out.distance_to_raw >= 0.5 {
        return Err(WorkbenchError::Idempotent(format!(
            "restored projection is {:.3} away from the raw one",
            out.distance_to_raw
        )));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvatureForm {
    pub form: NCForm,
    /// `‖pΩp − Ω‖`.
    pub range_defect: f64,
}

/// `Ω = p(dp dp + dp A + dA − A dp + A p A)p`, the curvature of
/// `∇ = p∘(d + A)∘p` on the range of `p` (`A = 0` by default).
pub fn curvature(p: &ProjectionField, connection: Option<&NCForm>, tol: f64) -> Result<CurvatureForm> {
    if p.defect > tol {
        return Err(WorkbenchError::Idempotent(format!(
            "idempotency defect {:.3e} exceeds {tol:.1e}",
            p.defect
        )));
    }
    let pf = &p.form;
    let dp = nc_d(pf);
    let mut inner = nc_product(&dp, &dp)?;
    if let Some(a) = connection {
        let da = nc_d(a);
        let dpa = nc_product(&dp, a)?;
        let adp = nc_product(a, &dp)?;
        let apa = nc_product_all(&[a, pf, a])?;
        inner = inner.add(&dpa)?.add(&da)?.sub(&adp)?.add(&apa)?;
    }
    let omega = nc_product_all(&[pf, &inner, pf])?;
    let pop = nc_product_all(&[pf, &omega, pf])?;
    let range_defect = pop.sub(&omega)?.norm();
    Ok(CurvatureForm { form: omega, range_defect })
}

/// `∇u = p((d + A)u)` for `u` in the range of `p`.
pub fn covariant_derivative(p: &NCForm, connection: Option<&NCForm>, u: &NCForm) -> Result<NCForm> {
    let mut du = nc_d(u);
    if let Some(a) = connection {
        du = du.add(&nc_product(a, u)?)?;
    }
    nc_product(p, &du)
}

/// Largest `‖∇²u − Ωu‖ / ‖u‖` over the sections `u = p v`.
pub fn curvature_residual(p: &NCForm, connection: Option<&NCForm>, omega: &NCForm, sections: &[NCForm]) -> Result<f64> {
    let mut worst = 0.0f64;
    for v in sections {
        let u = nc_product(p, v)?;
        let nabla2 = covariant_derivative(p, connection, &covariant_derivative(p, connection, &u)?)?;
        let ou = nc_product(omega, &u)?;
        let scale = u.norm().max(f64::MIN_POSITIVE);
        worst = worst.max(nabla2.sub(&ou)?.norm() / scale);
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChernCharacter {
    pub value: TraceValue,
    /// `‖d ch‖_∞` over all classes.
    pub closedness: f64,
}

/// `ch p = τ(p) − τ(Ω)/2πi`; the exponential series stops at degree two on the torus.
pub fn chern_character(p: &ProjectionField, omega: &CurvatureForm, table: &ConjugacyTable, closed_tol: f64) -> Result<ChernCharacter> {
    chern_character_with(p, omega, table, closed_tol, HAAR_DEFAULT_POINTS)
}

pub fn chern_character_with(
    p: &ProjectionField,
    omega: &CurvatureForm,
    table: &ConjugacyTable,
    closed_tol: f64,
    haar_points: usize,
) -> Result<ChernCharacter> {
    let t0 = trace_tau_with(&p.form, table, haar_points)?;
    let t2 = trace_tau_with(&omega.form, table, haar_points)?;
    let factor = C64::new(0.0, 1.0 / TAU);
    let mut classes = BTreeMap::new();
    for (g, f0) in &t0.classes {
        let f2 = t2.classes.get(g).cloned().unwrap_or_else(|| ScalarForm::zero(f0.grid));
        // −1/(2πi) = i/(2π)
        classes.insert(*g, f0.add(&f2.scale(factor)));
    }
    let value = TraceValue {
        classes,
        points: t0.points.clone(),
    };
    let closedness = value.classes.values().map(|f| f.d().sup_norm()).fold(0.0, f64::max);
    if closedness > closed_tol {
        return Err(WorkbenchError::NotClosed(closedness));
    }
    Ok(ChernCharacter { value, closedness })
}

impl ChernCharacter {
    /// `∫ ch₂` over the torus for the identity class.
    pub fn top_integral(&self) -> C64 {
        self.value.identity_part().map(|f| f.integral(DXDB)).unwrap_or_else(zero)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LocalizedTodd {
    /// Fixed-point-free class.
    Empty,
    /// Whole-manifold fixed set: the constant Todd form.
    Constant(f64),
    /// `1/det(1 − dg₀*)` at each isolated fixed point.
    Points(Vec<f64>),
}

/// Elementary symmetric functions `tr Λ^k A`, `k = 0..=n`, by Faddeev–LeVerrier.
pub fn exterior_traces(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut e = vec![1.0];
    let mut m = DMatrix::<f64>::identity(n, n);
    for k in 1..=n {
        let am = a * &m;
        let ck = -am.trace() / k as f64;
        // det(λ − A) = Σ c_k λ^{n−k} with c_k = (−1)^k e_k
        e.push(if k % 2 == 0 { ck } else { -ck });
        m = am + DMatrix::identity(n, n) * ck;
    }
    e
}

/// `det(1 − A) = Σ_k (−1)^k tr Λ^k A`.
pub fn lambda_minus_one(a: &DMatrix<f64>) -> f64 {
    exterior_traces(a)
        .iter()
        .enumerate()
        .map(|(k, e)| if k % 2 == 0 { *e } else { -e })
        .sum()
}

pub fn localized_todd(fixed: &FixedSet) -> Result<LocalizedTodd> {
    match &fixed.kind {
        FixedSetKind::Empty => Ok(LocalizedTodd::Empty),
        FixedSetKind::WholeManifold => Ok(LocalizedTodd::Constant(1.0)),
        FixedSetKind::IsolatedPoints(points) => points
            .iter()
            .map(|pt| {
                let det = lambda_minus_one(&pt.normal_differential);
                if det.abs() < 1e-12 {
                    Err(WorkbenchError::DegenerateFixedPoint(det))
                } else {
                    Ok(1.0 / det)
                }
            })
            .collect::<Result<Vec<f64>>>()
            .map(LocalizedTodd::Points),
    }
}

/// Planar rotation matrix.
pub fn rotation(alpha: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[alpha.cos(), -alpha.sin(), alpha.sin(), alpha.cos()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group_model::{GroupSpec, IsolatedPoint};
    use crate::nc_forms::trace_tau;
    use crate::symbol_calc::{CrossedElement, CrossedSymbol};
    use crate::trig::TrigPoly;
    use std::f64::consts::PI;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn scalar_sym(group: GroupSpec, plus: TrigPoly, minus: TrigPoly) -> CrossedSymbol {
        let el = |p: TrigPoly| CrossedElement::from_terms(1, 1, [(GroupElement(0), PolyMatrix::from_fn(1, 1, |_, _| p.clone()))]);
        CrossedSymbol::new(group, 0, el(plus), el(minus)).unwrap()
    }

    fn grid() -> Grid {
        Grid::square(64).unwrap()
    }

    #[test]
    fn raw_projection_values() {
        let g = GroupSpec::golden();
        let one = CrossedSymbol::identity(g.clone(), 1);
        let p = build_projection(&one, &one, grid(), None).unwrap();
        let f = p.form.get(GroupElement(0)).unwrap().part(DEG0).unwrap();
        let gr = grid();
        // β = π/2 is index nb/4, β = 3π/2 is 3nb/4
        let top = f.at(gr.nb / 4 * gr.nx);
        let bottom = f.at(3 * gr.nb / 4 * gr.nx);
        assert!((top[(0, 0)] - c(1.0)).norm() < 1e-15 && top[(1, 1)].norm() < 1e-15 && top[(0, 1)].norm() < 1e-15);
        assert!(bottom[(0, 0)].norm() < 1e-15 && (bottom[(1, 1)] - c(1.0)).norm() < 1e-15);
        assert!(p.defect < 1e-14);
        for (idx, _, b) in gr.points() {
            let m = f.at(idx);
            let want = DMatrix::from_row_slice(2, 2, &[c(1.0 + b.sin()), c(b.cos().abs()), c(b.cos().abs()), c(1.0 - b.sin())]) * c(0.5);
            assert!((m - want).norm() < 1e-15);
        }
    }

    #[test]
    fn idempotent_input_is_a_fixed_point() {
        let g = GroupSpec::golden();
        let one = CrossedSymbol::identity(g, 1);
        let p = build_projection(&one, &one, grid(), None).unwrap();
        let q = idempotentize(&p, 1e-10).unwrap();
        assert_eq!(q.iterations, 0);
        assert_eq!(q.form, p.form);
    }

    #[test]
    fn mollified_bott_projection_restores_quickly() {
        let g = GroupSpec::golden();
        let one = CrossedSymbol::identity(g, 1);
        let p = build_projection(&one, &one, Grid::square(128).unwrap(), None).unwrap();
        let q = mollify_and_idempotentize(&p, 1e-12, DEFAULT_MOLLIFIER_CELLS).unwrap();
        assert!(q.defect < 1e-12);
        assert!(q.iterations <= 3, "{} steps", q.iterations);
        assert!(q.distance_to_raw < 0.5);
    }

    #[test]
    fn beta_only_projection_is_flat_in_top_degree() {
        let g = GroupSpec::golden();
        let one = CrossedSymbol::identity(g.clone(), 1);
        let p = build_projection(&one, &one, grid(), None).unwrap();
        let q = mollify_and_idempotentize(&p, 1e-12, DEFAULT_MOLLIFIER_CELLS).unwrap();
        let om = curvature(&q, None, 1e-10).unwrap();
        assert!(om.form.norm() < 1e-10);

        let table = ConjugacyTable::build(&g, 0);
        let ch = chern_character(&q, &om, &table, 1e-8).unwrap();
        assert!(ch.top_integral().norm() < 1e-10);
        let d0 = &ch.value.identity_part().unwrap().parts[DEG0];
        assert!(d0.iter().all(|v| (v - c(1.0)).norm() < 1e-10));
    }

    #[test]
    fn constant_projection_has_zero_curvature() {
        let g = GroupSpec::golden();
        let gr = grid();
        let mut m = DMatrix::zeros(2, 2);
        m[(0, 0)] = c(1.0);
        let mut form = NCForm::zero(g.clone(), 2, gr, None);
        form.insert(GroupElement(0), FormCoeff::degree0(MatField::constant(gr, &m)));
        let p = diagnose(form, None, 0, 0.0).unwrap();
        let om = curvature(&p, None, 1e-12).unwrap();
        assert!(om.form.norm() == 0.0);
        let ch = chern_character(&p, &om, &ConjugacyTable::build(&g, 0), 1e-8).unwrap();
        assert!(ch.value.identity_part().unwrap().parts[DEG0].iter().all(|v| (v - c(1.0)).norm() < 1e-15));
        assert!(ch.top_integral().norm() == 0.0);
    }

    #[test]
    fn winding_symbol_curvature_integrates_to_an_integer() {
        let g = GroupSpec::golden();
        let s = scalar_sym(g.clone(), TrigPoly::monomial(1, c(1.0)), TrigPoly::constant(c(1.0)));
        let si = scalar_sym(g.clone(), TrigPoly::monomial(-1, c(1.0)), TrigPoly::constant(c(1.0)));
        let p = build_projection(&s, &si, grid(), None).unwrap();
        let q = mollify_and_idempotentize(&p, 1e-11, DEFAULT_MOLLIFIER_CELLS).unwrap();
        let om = curvature(&q, None, 1e-10).unwrap();
        assert!(om.range_defect < 1e-9);
        let table = ConjugacyTable::build(&g, 0);
        let tau = trace_tau(&om.form, &table).unwrap();
        let integral = tau.identity_part().unwrap().integral(DXDB);
        let k = integral / C64::new(0.0, -TAU);
        assert!((k - c(k.re.round())).norm() < 1e-6, "{integral}");
        assert!(k.re.round().abs() == 1.0);
    }

    #[test]
    fn todd_values() {
        let g = GroupSpec::golden();
        let whole = crate::group_model::fixed_set(GroupElement(0), &g);
        assert_eq!(localized_todd(&whole).unwrap(), LocalizedTodd::Constant(1.0));
        for (alpha, det) in [(PI / 3.0, 1.0), (PI / 2.0, 2.0), (PI, 4.0)] {
            assert!((lambda_minus_one(&rotation(alpha)) - det).abs() < 1e-12);
            let fs = FixedSet::isolated(
                GroupElement(1),
                vec![IsolatedPoint {
                    coords: vec![0.0, 0.0],
                    normal_differential: rotation(alpha),
                }],
            );
            match localized_todd(&fs).unwrap() {
                LocalizedTodd::Points(v) => assert!((v[0] - 1.0 / det).abs() < 1e-12),
                other => panic!("{other:?}"),
            }
        }
        let degenerate = FixedSet::isolated(
            GroupElement(1),
            vec![IsolatedPoint {
                coords: vec![0.0],
                normal_differential: rotation(0.0),
            }],
        );
        assert!(matches!(localized_todd(&degenerate), Err(WorkbenchError::DegenerateFixedPoint(_))));
    }

    #[test]
    fn exterior_traces_of_diagonal() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 3.0, 5.0]));
        let e = exterior_traces(&a);
        assert_eq!(e.len(), 4);
        assert!((e[1] - 10.0).abs() < 1e-12 && (e[2] - 31.0).abs() < 1e-12 && (e[3] - 30.0).abs() < 1e-12);
    }
}
