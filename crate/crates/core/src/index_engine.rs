//! The cohomological side of the index theorem and its reconciliation with
//! the analytic index.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::chern_index::{
    build_projection, chern_character_with, curvature, localized_todd, mollify_and_idempotentize, LocalizedTodd,
    DEFAULT_CLOSED_TOL, DEFAULT_IDEMPOTENT_TOL, DEFAULT_MOLLIFIER_CELLS,
};
use crate::error::{Result, WorkbenchError};
use crate::fredholm::{index_history, IndexEstimate, DEFAULT_SCHEDULE, DEFAULT_SV_TOL};
use crate::group_model::{fixed_set, ConjugacyTable, GroupSpec, HAAR_DEFAULT_POINTS};
use crate::nc_forms::{Grid, TraceValue, DEFAULT_GRID, DXDB};
use crate::shift_ops::ShiftOperator;
use crate::symbol_calc::{
    invert_with, is_elliptic_with, symbol_of, Discarded, EllipticityCertificate, InverseOptions, Verdict,
    DEFAULT_ELLIPTIC_SCHEDULE,
};
use crate::trig::C64;

/// Orientation of `2B*S¹` relative to `dx∧dβ`, fixed once so that
/// multiplication by `e^{ix}` on the `+` sheet has index `−1`.
pub const ORIENTATION_SIGN: f64 = 1.0;

/// Largest distance to an integer that may still be rounded.
pub const ROUNDING_GUARD: f64 = 0.25;
pub const MAX_IMAGINARY: f64 = 1e-6;
pub const MAX_INTEGER_DISTANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineOptions {
    pub grid: usize,
    /// Word-length window `G` for dense groups.
    pub window: usize,
    /// Fourier band kept in the symbol inverse.
    pub inverse_band: usize,
    pub inverse_tol: f64,
    pub idempotent_tol: f64,
    pub mollifier_cells: f64,
    pub closed_tol: f64,
    pub elliptic_tol: f64,
    pub elliptic_schedule: Vec<usize>,
    pub schedule: Vec<usize>,
    pub sv_tol: f64,
    pub haar_points: usize,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            grid: DEFAULT_GRID,
            window: 32,
            inverse_band: 64,
            inverse_tol: 1e-9,
            idempotent_tol: DEFAULT_IDEMPOTENT_TOL,
            mollifier_cells: DEFAULT_MOLLIFIER_CELLS,
            closed_tol: DEFAULT_CLOSED_TOL,
            elliptic_tol: 1e-6,
            elliptic_schedule: DEFAULT_ELLIPTIC_SCHEDULE.to_vec(),
            schedule: DEFAULT_SCHEDULE.to_vec(),
            sv_tol: DEFAULT_SV_TOL,
            haar_points: HAAR_DEFAULT_POINTS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pairing {
    pub value: C64,
    /// Contribution of each conjugacy class, keyed by representative label.
    pub contributions: BTreeMap<i64, C64>,
}

/// `⟨ch · Td, [2B*M; Γ]⟩`: torus quadrature for whole-manifold classes, point
/// sums for isolated fixed points, zero for fixed-point-free classes.
pub fn pair_fundamental(ch: &TraceValue, todd: &BTreeMap<i64, LocalizedTodd>, table: &ConjugacyTable) -> Pairing {
    let mut contributions = BTreeMap::new();
    for class in &table.classes {
        let g0 = class.representative.0;
        let c = match todd.get(&g0) {
            Some(LocalizedTodd::Constant(t)) => ch
                .classes
                .get(&g0)
                .map(|f| f.integral(DXDB) * (ORIENTATION_SIGN * t))
                .unwrap_or_default(),
            Some(LocalizedTodd::Points(ts)) => ch
                .points
                .get(&g0)
                .map(|vals| vals.iter().zip(ts).map(|(v, t)| v * *t).sum())
                .unwrap_or_default(),
            Some(LocalizedTodd::Empty) | None => C64::new(0.0, 0.0),
        };
        contributions.insert(g0, c);
    }
    Pairing {
        value: contributions.values().sum(),
        contributions,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub imaginary: f64,
    pub integer_distance: f64,
    pub inverse: f64,
    pub idempotent_defect: f64,
    pub curvature_range_defect: f64,
    pub closedness: f64,
    pub discarded_inverse: Discarded,
    pub discarded_forms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub ellipticity: EllipticityCertificate,
    pub inverse_iterations: usize,
    /// `(|g|, mass)` profile of the symbol inverse.
    pub inverse_decay: Vec<(usize, f64)>,
    pub self_adjoint_defect: f64,
    pub spectral_tail: f64,
    pub cubic_iterations: usize,
    pub distance_to_raw: f64,
    pub orientation_sign: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexReport {
    pub cohomological: C64,
    pub rounded: i64,
    pub contributions: BTreeMap<i64, C64>,
    pub analytic: IndexEstimate,
    pub agreement: bool,
    pub residuals: Residuals,
    pub diagnostics: Diagnostics,
    pub options: PipelineOptions,
}

/// Everything up to the Chern character, shared by [`cohomological_index`]
/// and the diagnostic checks.
pub struct Pipeline {
    pub certificate: EllipticityCertificate,
    pub inverse: crate::symbol_calc::InverseResult,
    pub projection: crate::chern_index::ProjectionField,
    pub curvature: crate::chern_index::CurvatureForm,
    pub chern: crate::chern_index::ChernCharacter,
    pub table: ConjugacyTable,
}

fn window_for(group: &GroupSpec, opts: &PipelineOptions) -> Option<usize> {
    if group.is_finite() {
        None
    } else {
        Some(opts.window)
    }
}

pub fn run_pipeline(d: &ShiftOperator, opts: &PipelineOptions) -> Result<Pipeline> {
    let sym = symbol_of(d);
    let certificate = is_elliptic_with(&sym, opts.elliptic_tol, &opts.elliptic_schedule);
    if certificate.verdict != Verdict::Elliptic {
        return Err(WorkbenchError::NotElliptic(Box::new(certificate)));
    }
    let group = d.group();
    let window = window_for(group, opts);
    let inverse = invert_with(
        &sym,
        opts.inverse_tol,
        &InverseOptions {
            window: window.unwrap_or(usize::MAX),
            band: opts.inverse_band,
            ..InverseOptions::default()
        },
    )?;
    let grid = Grid::square(opts.grid)?;
    let raw = build_projection(&sym, &inverse.inverse, grid, window)?;
    let projection = mollify_and_idempotentize(&raw, opts.idempotent_tol, opts.mollifier_cells)?;
    let curvature = curvature(&projection, None, opts.idempotent_tol)?;
    let radius = group.order().map(|q| q as usize).unwrap_or(0);
    let table = ConjugacyTable::build(group, radius);
    let chern = chern_character_with(&projection, &curvature, &table, opts.closed_tol, opts.haar_points)?;
    Ok(Pipeline {
        certificate,
        inverse,
        projection,
        curvature,
        chern,
        table,
    })
}

/// Rounds a pairing value, refusing anything farther than [`ROUNDING_GUARD`]
/// from an integer.
pub fn round_index(value: C64) -> Result<i64> {
    let r = value.re.round();
    let distance = (value.re - r).abs();
    if distance > ROUNDING_GUARD || !value.re.is_finite() {
        return Err(WorkbenchError::NotNearInteger { value: value.re, distance });
    }
    Ok(r as i64)
}

/// Full pipeline plus the analytic oracle.
pub fn cohomological_index(d: &ShiftOperator, opts: &PipelineOptions) -> Result<IndexReport> {
    cohomological_index_with(d, opts, None)
}

/// [`cohomological_index`] reusing an analytic estimate computed elsewhere.
pub fn cohomological_index_with(d: &ShiftOperator, opts: &PipelineOptions, analytic: Option<IndexEstimate>) -> Result<IndexReport> {
    let pipe = run_pipeline(d, opts)?;
    let mut todd = BTreeMap::new();
    for class in &pipe.table.classes {
        todd.insert(class.representative.0, localized_todd(&fixed_set(class.representative, d.group()))?);
    }
    let pairing = pair_fundamental(&pipe.chern.value, &todd, &pipe.table);
    let rounded = round_index(pairing.value)?;
    let analytic = analytic.unwrap_or_else(|| index_history(d, &opts.schedule, opts.sv_tol));
    let imaginary = pairing.value.im.abs();
    let integer_distance = (pairing.value.re - rounded as f64).abs();
    let agreement = analytic.stable
        && analytic.index == rounded
        && imaginary <= MAX_IMAGINARY
        && integer_distance <= MAX_INTEGER_DISTANCE;
    Ok(IndexReport {
        cohomological: pairing.value,
        rounded,
        contributions: pairing.contributions,
        analytic,
        agreement,
        residuals: Residuals {
            imaginary,
            integer_distance,
            inverse: pipe.inverse.residual,
            idempotent_defect: pipe.projection.defect,
            curvature_range_defect: pipe.curvature.range_defect,
            closedness: pipe.chern.closedness,
            discarded_inverse: pipe.inverse.discarded,
            discarded_forms: pipe.curvature.form.discarded(),
        },
        diagnostics: Diagnostics {
            ellipticity: pipe.certificate,
            inverse_iterations: pipe.inverse.iterations,
            inverse_decay: pipe.inverse.decay.clone(),
            self_adjoint_defect: pipe.projection.self_adjoint_defect,
            spectral_tail: pipe.projection.spectral_tail,
            cubic_iterations: pipe.projection.iterations,
            distance_to_raw: pipe.projection.distance_to_raw,
            orientation_sign: ORIENTATION_SIGN,
        },
        options: opts.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group_model::GroupElement;
    use crate::nc_forms::ScalarForm;
    use crate::shift_ops::{ElementaryPdo, PdoCoefficient, SheetPair};
    use crate::trig::TrigPoly;
    use std::f64::consts::TAU;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn fast() -> PipelineOptions {
        PipelineOptions {
            grid: 64,
            schedule: vec![16, 32, 64],
            elliptic_schedule: vec![16, 32, 64],
            ..PipelineOptions::default()
        }
    }

    fn winding(group: GroupSpec, k: i64) -> ShiftOperator {
        ShiftOperator::new(
            group,
            1,
            1,
            0,
            [(
                GroupElement(0),
                PdoCoefficient::scalar(ElementaryPdo::new(0, SheetPair::new(TrigPoly::monomial(k, c(1.0)), TrigPoly::constant(c(1.0))))),
            )],
        )
        .unwrap()
    }

    #[test]
    fn pairing_of_constant_top_form() {
        let g = GroupSpec::golden();
        let grid = Grid::square(16).unwrap();
        let mut f = ScalarForm::zero(grid);
        f.parts[DXDB] = vec![c(0.5); grid.len()];
        let mut classes = BTreeMap::new();
        classes.insert(0, f);
        let table = ConjugacyTable::build(&g, 1);
        let mut todd = BTreeMap::new();
        for cl in &table.classes {
            todd.insert(cl.representative.0, localized_todd(&fixed_set(cl.representative, &g)).unwrap());
        }
        let p = pair_fundamental(&TraceValue { classes, points: BTreeMap::new() }, &todd, &table);
        assert!((p.value - c(0.5 * TAU * TAU * ORIENTATION_SIGN)).norm() < 1e-12);
        assert_eq!(p.contributions[&1], c(0.0));
        assert_eq!(p.contributions[&-1], c(0.0));

        let zero = TraceValue {
            classes: [(0, ScalarForm::zero(grid))].into_iter().collect(),
            points: BTreeMap::new(),
        };
        assert_eq!(pair_fundamental(&zero, &todd, &table).value, c(0.0));
    }

    #[test]
    fn rounding_guard() {
        assert_eq!(round_index(C64::new(2.1, 0.0)).unwrap(), 2);
        assert!(matches!(round_index(C64::new(2.4, 0.0)), Err(WorkbenchError::NotNearInteger { .. })));
    }

    #[test]
    fn identity_and_winding() {
        let g = GroupSpec::golden();
        let r = cohomological_index(&ShiftOperator::identity(g.clone(), 1), &fast()).unwrap();
        assert_eq!(r.rounded, 0);
        assert!(r.agreement);
        for k in [-1, 1] {
            let r = cohomological_index(&winding(g.clone(), k), &fast()).unwrap();
            assert_eq!(r.rounded, -k, "{:?}", r.cohomological);
            assert!(r.agreement, "{r:?}");
        }
    }
}
