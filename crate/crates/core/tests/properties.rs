mod common;

use std::f64::consts::TAU;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{c, load_config, random_form};
use shift_index::chern_index::{chern_character, curvature, ChernCharacter, ProjectionField};
use shift_index::fredholm::{index_history, DEFAULT_SCHEDULE};
use shift_index::group_model::{
    circle_distance, codifferential_action, fixed_set, growth_census, haar_average, ClosureGroup, ConjugacyTable,
    GroupElement, GroupSpec,
};
use shift_index::index_engine::{cohomological_index, run_pipeline, PipelineOptions};
use shift_index::nc_forms::{
    nc_d, nc_product, trace_tau, FormCoeff, Grid, MatField, NCForm, DB, DEG0, DX, DXDB,
};
use shift_index::shift_ops::{
    assemble, compose, shift_matrix, Adjoint, ElementaryPdo, PdoCoefficient, SheetPair, ShiftOperator,
};
use shift_index::symbol_calc::{crossed_multiply, invert, represent, symbol_of};
use shift_index::trig::{TrigPoly, C64};
use shift_index::workbench::{emit_config, parse_config};

const SCHEDULE: [usize; 3] = [32, 64, 128];
const SV_TOL: f64 = 1e-7;

fn z(q: u64) -> GroupSpec {
    match q {
        2 => GroupSpec::finite_cyclic(2, vec![1]).unwrap(),
        _ => GroupSpec::finite_cyclic(q, vec![1, q as i64 - 1]).unwrap(),
    }
}

fn poly(lo: i64, coeffs: &[(f64, f64)]) -> TrigPoly {
    TrigPoly::from_coeffs(lo, coeffs.iter().map(|&(re, im)| C64::new(re, im)).collect())
}

fn wave(k: i64) -> TrigPoly {
    TrigPoly::monomial(k, c(1.0))
}

fn scalar(order: i32, plus: TrigPoly, minus: TrigPoly) -> PdoCoefficient {
    PdoCoefficient::scalar(ElementaryPdo::new(order, SheetPair::new(plus, minus)))
}

/// `e^{ikx}` on the `+` sheet and `1` on the `−` sheet, plus `ε T_g (a + b cos x)`;
/// elliptic with index `−k` while `|ε|(|a| + |b|) < 1`.
fn perturbed_winding(group: &GroupSpec, k: i64, eps: f64, a: f64, b: f64) -> ShiftOperator {
    let bump = poly(-1, &[(b / 2.0, 0.0), (a, 0.0), (b / 2.0, 0.0)]).scale(c(eps));
    ShiftOperator::new(
        group.clone(),
        1,
        1,
        0,
        [
            (GroupElement::IDENTITY, scalar(0, wave(k), wave(0))),
            (GroupElement(1), scalar(0, bump.clone(), bump)),
        ],
    )
    .unwrap()
}

fn random_operator(group: &GroupSpec, coeffs: &[(f64, f64)]) -> ShiftOperator {
    let terms = coeffs.chunks(3).enumerate().map(|(g, ch)| {
        let p = poly(-1, ch);
        let m = p.translate(0.3);
        (group.element(g as i64), scalar(0, p, m))
    });
    ShiftOperator::new(group.clone(), 1, 1, 0, terms).unwrap()
}

fn max_entry(m: &nalgebra::DMatrix<C64>) -> f64 {
    m.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

fn coeff() -> impl Strategy<Value = (f64, f64)> {
    (-1.0..1.0f64, -1.0..1.0f64)
}

fn fast_options(grid: usize) -> PipelineOptions {
    PipelineOptions {
        grid,
        schedule: SCHEDULE.to_vec(),
        elliptic_schedule: vec![16, 32, 64],
        ..PipelineOptions::default()
    }
}

fn ch_difference(a: &ChernCharacter, b: &ChernCharacter) -> f64 {
    let mut worst = 0.0f64;
    for (g, fa) in &a.value.classes {
        let fb = &b.value.classes[g];
        worst = worst.max(fa.add(&fb.scale(c(-1.0))).sup_norm());
    }
    worst
}

fn with_form(p: &ProjectionField, form: NCForm) -> ProjectionField {
    let defect = nc_product(&form, &form).unwrap().sub(&form).unwrap().norm();
    ProjectionField {
        form,
        defect,
        ..p.clone()
    }
}

fn pad_with_zero(p: &NCForm, extra: usize) -> NCForm {
    let rank = p.rank() + extra;
    let mut out = NCForm::zero(p.group().clone(), rank, p.grid(), p.window());
    for (g, w) in p.terms() {
        let mut big = FormCoeff::zero();
        for k in [DEG0, DX, DB, DXDB] {
            if let Some(m) = w.part(k) {
                let mut z = MatField::zeros(p.grid(), rank);
                z.set_block(0, 0, m);
                big.parts[k] = Some(z);
            }
        }
        out.insert(*g, big);
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn word_length_is_inversion_symmetric(g in -500i64..500, q in 2u64..12) {
        let dense = GroupSpec::golden();
        let e = GroupElement(g);
        prop_assert_eq!(dense.word_length(e), dense.word_length(dense.inverse(e)));
        let fin = z(q);
        let e = fin.element(g);
        prop_assert_eq!(fin.word_length(e), fin.word_length(fin.inverse(e)));
    }

    #[test]
    fn growth_is_nondecreasing_and_bounded(q in 2u64..40, kmax in 1usize..80) {
        for spec in [GroupSpec::golden(), z(q)] {
            let census = growth_census(&spec, kmax);
            prop_assert!(census.counts.windows(2).all(|w| w[0] <= w[1]));
            for (k, &n) in census.counts.iter().enumerate() {
                prop_assert!(n <= 2 * k + 1);
            }
        }
    }

    #[test]
    fn haar_average_kills_nonconstant_modes(
        modes in proptest::collection::vec((1i64..40, coeff()), 1..6),
        q in 2u64..16,
    ) {
        let f = |t: f64| -> C64 {
            modes.iter().map(|&(n, (re, im))| C64::new(re, im) * C64::from_polar(1.0, n as f64 * t)).sum()
        };
        let avg = haar_average(f, &ClosureGroup::Circle, 64).unwrap();
        prop_assert!(avg.norm() < 1e-12, "{avg}");
        let cyclic: Vec<_> = modes.iter().filter(|(n, _)| n % q as i64 != 0).collect();
        let g = |t: f64| -> C64 {
            cyclic.iter().map(|&&(n, (re, im))| C64::new(re, im) * C64::from_polar(1.0, n as f64 * t)).sum()
        };
        let avg = haar_average(g, &ClosureGroup::Cyclic(q), 64).unwrap();
        prop_assert!(avg.norm() < 1e-12, "{avg}");
    }

    #[test]
    fn codifferential_is_an_action(g in -50i64..50, h in -50i64..50, x in 0.0..TAU, beta in 0.0..TAU) {
        let spec = GroupSpec::golden();
        let (eg, eh) = (GroupElement(g), GroupElement(h));
        let gh = codifferential_action(spec.compose(eg, eh), &spec).on_double(x, beta);
        let (hx, hb) = codifferential_action(eh, &spec).on_double(x, beta);
        let nested = codifferential_action(eg, &spec).on_double(hx, hb);
        prop_assert!(circle_distance(gh.0 - nested.0) < 1e-12);
        prop_assert_eq!(gh.1, nested.1);
        let id = codifferential_action(spec.identity(), &spec).on_double(x, beta);
        prop_assert!(circle_distance(id.0 - x) < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn assemble_is_linear(
        c1 in proptest::collection::vec(coeff(), 6),
        c2 in proptest::collection::vec(coeff(), 6),
        s in coeff(),
    ) {
        let group = z(4);
        let (d1, d2) = (random_operator(&group, &c1), random_operator(&group, &c2));
        let s = C64::new(s.0, s.1);
        let n = 12;
        let lhs = assemble(&d1.scale(s).add(&d2).unwrap(), n).matrix;
        let rhs = assemble(&d1, n).matrix * s + assemble(&d2, n).matrix;
        prop_assert!(max_entry(&(lhs - rhs)) < 1e-12);
    }

    #[test]
    fn finite_shifts_are_unitary_of_finite_order(q in 2u64..9, g in 0i64..9, n in 1usize..20) {
        let group = z(q);
        let t = shift_matrix(group.element(g), n, &group).matrix;
        let id = nalgebra::DMatrix::<C64>::identity(t.nrows(), t.ncols());
        prop_assert!(max_entry(&(t.adjoint() * &t - &id)) < 1e-12);
        let mut power = id.clone();
        for _ in 0..q {
            power = &t * power;
        }
        prop_assert!(max_entry(&(power - id)) < 1e-12);
    }

    #[test]
    fn composition_is_associative(
        c1 in proptest::collection::vec(coeff(), 6),
        c2 in proptest::collection::vec(coeff(), 6),
        c3 in proptest::collection::vec(coeff(), 6),
    ) {
        for group in [z(4), GroupSpec::golden()] {
            let (a, b, d) = (random_operator(&group, &c1), random_operator(&group, &c2), random_operator(&group, &c3));
            let left = compose(&compose(&a, &b).unwrap(), &d).unwrap();
            let right = compose(&a, &compose(&b, &d).unwrap()).unwrap();
            prop_assert!(max_entry(&(assemble(&left, 10).matrix - assemble(&right, 10).matrix)) < 1e-10);
        }
    }

    #[test]
    fn symbol_map_is_multiplicative(
        c1 in proptest::collection::vec(coeff(), 6),
        c2 in proptest::collection::vec(coeff(), 6),
    ) {
        for group in [z(4), GroupSpec::golden()] {
            let (a, b) = (random_operator(&group, &c1), random_operator(&group, &c2));
            let prod = symbol_of(&compose(&a, &b).unwrap());
            let sprod = crossed_multiply(&symbol_of(&a), &symbol_of(&b)).unwrap();
            prop_assert!(max_entry(&(represent(&prod, 10) - represent(&sprod, 10))) < 1e-10);
        }
    }

    #[test]
    fn representation_intertwines_products(
        c1 in proptest::collection::vec(coeff(), 6),
        c2 in proptest::collection::vec(coeff(), 6),
    ) {
        let group = z(4);
        let (a, b) = (symbol_of(&random_operator(&group, &c1)), symbol_of(&random_operator(&group, &c2)));
        let ab = crossed_multiply(&a, &b).unwrap();
        let n = 12;
        let big = n + a.bandwidth() + b.bandwidth();
        let full = represent(&a, big) * represent(&b, big);
        let rows: Vec<usize> = (0..2).flat_map(|s| (big - n..=big + n).map(move |k| s * (2 * big + 1) + k)).collect();
        let central = full.select_rows(&rows).select_columns(&rows);
        prop_assert!(max_entry(&(central - represent(&ab, n))) < 1e-12);
    }

    #[test]
    fn double_inverse_returns_the_symbol(k in -2i64..=2, eps in -0.4..0.4f64, a in -0.5..0.5f64, b in -0.5..0.5f64) {
        let group = z(2);
        let s = symbol_of(&perturbed_winding(&group, k, eps, a, b));
        let tol = 1e-9;
        let inv = invert(&s, tol).unwrap();
        let back = invert(&inv.inverse, tol).unwrap();
        prop_assert!(max_entry(&(represent(&back.inverse, 16) - represent(&s, 16))) < 10.0 * tol);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn analytic_index_is_additive_multiplicative_and_odd(
        k1 in -2i64..=2, k2 in -2i64..=2,
        e1 in -0.4..0.4f64, e2 in -0.4..0.4f64,
        a in -0.5..0.5f64, b in -0.5..0.5f64,
    ) {
        let group = z(2);
        let d1 = perturbed_winding(&group, k1, e1, a, b);
        let d2 = perturbed_winding(&group, k2, e2, b, a);
        let idx = |d: &ShiftOperator| {
            let est = index_history(d, &SCHEDULE, SV_TOL);
            assert!(est.stable, "{est:?}");
            est.index
        };
        prop_assert_eq!(idx(&d1), -k1);
        prop_assert_eq!(idx(&d1.direct_sum(&d2).unwrap()), -k1 - k2);
        prop_assert_eq!(idx(&compose(&d1, &d2).unwrap()), -k1 - k2);
        let adj = index_history(&Adjoint(&d1), &SCHEDULE, SV_TOL);
        prop_assert!(adj.stable);
        prop_assert_eq!(adj.index, k1);
    }

    #[test]
    fn lower_order_terms_do_not_change_the_index(
        k in -2i64..=2,
        eps in -0.4..0.4f64,
        lower in proptest::collection::vec(coeff(), 3),
    ) {
        let group = z(2);
        let principal = |lo: Vec<SheetPair>| {
            PdoCoefficient::scalar(ElementaryPdo::new(1, SheetPair::new(wave(k), TrigPoly::constant(c(1.0)))).with_lower(lo))
        };
        let shifted = scalar(1, TrigPoly::constant(c(eps)), TrigPoly::constant(c(eps)));
        let build = |lo: Vec<SheetPair>| {
            ShiftOperator::new(group.clone(), 1, 1, 1, [(GroupElement::IDENTITY, principal(lo)), (GroupElement(1), shifted.clone())]).unwrap()
        };
        let bare = index_history(&build(vec![]), &DEFAULT_SCHEDULE, SV_TOL);
        let pert = index_history(&build(vec![SheetPair::uniform(poly(-1, &lower))]), &DEFAULT_SCHEDULE, SV_TOL);
        prop_assert!(bare.stable && pert.stable, "{bare:?} {pert:?}");
        prop_assert_eq!(bare.index, pert.index);
    }

    #[test]
    fn product_is_associative_and_d_is_a_graded_derivation(seed in any::<u64>(), dense in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = Grid::square(16).unwrap();
        let (group, window, elems) = if dense {
            (GroupSpec::golden(), Some(4), vec![-1, 0, 2])
        } else {
            (z(4), None, vec![0, 1, 3])
        };
        let a = random_form(&mut rng, &group, 2, grid, window, &elems, &[DEG0, DX], 1.0);
        let b = random_form(&mut rng, &group, 2, grid, window, &elems, &[DEG0, DB], 1.0);
        let e = random_form(&mut rng, &group, 2, grid, window, &elems, &[DEG0], 1.0);
        let left = nc_product(&nc_product(&a, &b).unwrap(), &e).unwrap();
        let right = nc_product(&a, &nc_product(&b, &e).unwrap()).unwrap();
        prop_assert!(left.sub(&right).unwrap().norm() < 1e-10);

        for (deg, sign) in [(0, 1.0), (1, -1.0)] {
            let ad = a.degree_part(deg);
            let lhs = nc_d(&nc_product(&ad, &b).unwrap());
            let rhs = nc_product(&nc_d(&ad), &b).unwrap().add(&nc_product(&ad, &nc_d(&b)).unwrap().scale(c(sign))).unwrap();
            prop_assert!(lhs.sub(&rhs).unwrap().norm() < 1e-9 * (1.0 + lhs.norm()));
        }
    }

    #[test]
    fn config_round_trips(
        window in 1usize..64,
        grid_half in 4usize..128,
        base in 3u32..7,
        tol_exp in -14i32..-3,
        coeffs in proptest::collection::vec(coeff(), 3),
        seed in any::<u64>(),
    ) {
        let mut cfg = load_config("z4_shift.toml");
        cfg.numerics.window = window;
        cfg.numerics.grid = 2 * grid_half;
        cfg.numerics.schedule = (0..3).map(|i| 1usize << (base + i)).collect();
        cfg.numerics.sv_tol = 10f64.powi(tol_exp);
        cfg.numerics.mollifier_cells = coeffs[0].0.abs() + 0.5;
        cfg.run.seed = seed;
        let text = emit_config(&cfg);
        let back = parse_config(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(emit_config(&back), text);
    }
}

#[test]
fn trace_is_closed_under_the_grassmann_connection() {
    let cfg = load_config("z2_shift.toml");
    let d = cfg.shift_operator().unwrap();
    let opts = fast_options(128);
    let pipe = run_pipeline(&d, &opts).unwrap();
    let p = &pipe.projection.form;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for parts in [vec![DEG0], vec![DX, DB]] {
        let b = random_form(&mut rng, p.group(), p.rank(), p.grid(), p.window(), &[0, 1], &parts, 0.3);
        let a = nc_product(&nc_product(p, &b).unwrap(), p).unwrap();
        let lhs = trace_tau(&a, &pipe.table).unwrap();
        let nabla_a = nc_product(&nc_product(p, &nc_d(&a)).unwrap(), p).unwrap();
        let rhs = trace_tau(&nabla_a, &pipe.table).unwrap();
        for (g, f) in &lhs.classes {
            let diff = f.d().add(&rhs.classes[g].scale(c(-1.0))).sup_norm();
            assert!(diff < 1e-8, "class {g}: {diff:.2e}");
        }
    }
}

#[test]
fn chern_character_ignores_zero_padding_and_unitary_conjugation() {
    for name in ["z2_shift.toml", "z4_shift.toml"] {
        let cfg = load_config(name);
        let d = cfg.shift_operator().unwrap();
        let opts = fast_options(64);
        let pipe = run_pipeline(&d, &opts).unwrap();
        let p = &pipe.projection;

        let padded = with_form(p, pad_with_zero(&p.form, 2));
        let om = curvature(&padded, None, opts.idempotent_tol).unwrap();
        let ch = chern_character(&padded, &om, &pipe.table, opts.closed_tol).unwrap();
        let diff = ch_difference(&ch, &pipe.chern);
        assert!(diff < 1e-9, "{name}: padding moved ch by {diff:.2e}");

        let (rank, grid, window) = (p.form.rank(), p.form.grid(), p.form.window());
        let theta = 0.7f64;
        let u = nalgebra::DMatrix::from_fn(rank, rank, |i, j| {
            if rank == 1 {
                C64::from_polar(1.0, theta)
            } else {
                let (co, si) = (C64::new(theta.cos(), 0.0), C64::new(theta.sin(), 0.0));
                match (i, j) {
                    (0, 0) | (1, 1) => co,
                    (0, 1) => -si,
                    (1, 0) => si,
                    _ => C64::new(if i == j { 1.0 } else { 0.0 }, 0.0),
                }
            }
        });
        let mut uf = NCForm::zero(p.form.group().clone(), rank, grid, window);
        uf.insert(GroupElement::IDENTITY, FormCoeff::degree0(MatField::constant(grid, &u)));
        let conj = nc_product(&nc_product(&uf, &p.form).unwrap(), &uf.adjoint()).unwrap();
        let q = with_form(p, conj);
        let om = curvature(&q, None, opts.idempotent_tol).unwrap();
        let ch = chern_character(&q, &om, &pipe.table, opts.closed_tol).unwrap();
        let diff = ch_difference(&ch, &pipe.chern);
        assert!(diff < 1e-9, "{name}: conjugation moved ch by {diff:.2e}");
    }
}

#[test]
fn fixed_point_free_classes_contribute_exactly_zero() {
    for name in ["z2_shift.toml", "z4_shift.toml", "dense_shift.toml"] {
        let cfg = load_config(name);
        let d = cfg.shift_operator().unwrap();
        let group = d.group().clone();
        let report = cohomological_index(&d, &cfg.numerics.pipeline()).unwrap();
        let table = ConjugacyTable::build(&group, 4);
        for class in &table.classes {
            if fixed_set(class.representative, &group).is_empty() {
                let v = report.contributions.get(&class.representative.0).copied().unwrap_or_default();
                assert_eq!(v, C64::new(0.0, 0.0), "{name}: class {}", class.representative.0);
            }
        }
    }
}

#[test]
fn doubling_resolution_keeps_the_integer_and_shrinks_residuals() {
    let cfg = load_config("dense_shift.toml");
    let d = cfg.shift_operator().unwrap();
    let coarse = PipelineOptions {
        grid: 64,
        window: 8,
        schedule: vec![32, 64, 128],
        ..cfg.numerics.pipeline()
    };
    let fine = PipelineOptions {
        grid: 128,
        window: 16,
        schedule: vec![64, 128, 256],
        ..cfg.numerics.pipeline()
    };
    let a = cohomological_index(&d, &coarse).unwrap();
    let b = cohomological_index(&d, &fine).unwrap();
    assert!(a.agreement && b.agreement);
    assert_eq!(a.rounded, b.rounded);
    assert_eq!(a.analytic.index, b.analytic.index);
    let floor = 1e-12;
    let ra = &a.residuals;
    let rb = &b.residuals;
    assert!(rb.discarded_forms <= ra.discarded_forms + floor, "{} vs {}", rb.discarded_forms, ra.discarded_forms);
    assert!(
        rb.discarded_inverse.total() <= ra.discarded_inverse.total() + floor,
        "{:?} vs {:?}",
        rb.discarded_inverse,
        ra.discarded_inverse
    );
    assert!(rb.integer_distance <= ra.integer_distance.max(1e-10));
}
