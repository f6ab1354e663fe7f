//! Experiment orchestration behind the `workbench` command line.

pub mod config;

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::WorkbenchError;
use crate::fredholm::{index_history, IndexEstimate};
use crate::group_model::{
    continued_fraction, convergent_denominators, diophantine_sweep, growth_census, ClosureGroup, DiophantineSweep,
    GroupKind, GroupSpec, GrowthCensus,
};
use crate::index_engine::{cohomological_index_with, IndexReport, PipelineOptions};
use crate::shift_ops::{sobolev_bound_check, DecayReport, ShiftOperator, SobolevEstimate};
use crate::symbol_calc::{is_elliptic_with, symbol_of, EllipticityCertificate, Verdict};

pub use config::{emit_config, parse_config, Command, ConfigError, ExperimentConfig, Knob};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_NOT_ELLIPTIC: i32 = 3;
pub const EXIT_UNSTABLE: i32 = 4;
pub const EXIT_DISAGREEMENT: i32 = 5;

const SOBOLEV_ORDER: f64 = 1.0;
const SOBOLEV_CUTOFF: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Status {
    pub exit_code: i32,
    pub outcome: String,
    /// Pipeline stage that failed, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub kind: GroupKind,
    pub theta: f64,
    pub order: Option<u64>,
    pub generators: Vec<i64>,
    pub closure: ClosureGroup,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub continued_fraction: Vec<i64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub convergent_denominators: Vec<i64>,
    pub growth: GrowthCensus,
    /// Finite groups: the ball reached the whole group.
    pub saturated: bool,
    pub diophantine: DiophantineSweep,
    pub hypotheses_hold: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: usize,
    pub analytic: Option<i64>,
    pub cohomological: Option<i64>,
    pub imaginary: f64,
    pub integer_distance: f64,
    /// Reciprocal of the smallest singular-value gap.
    pub kernel_separation: f64,
    pub residual: f64,
    pub agreement: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub knob: Knob,
    pub rows: Vec<SweepRow>,
    pub consistent: bool,
    /// Residuals never grow by more than 0.1% plus the floor along the sweep.
    pub residuals_shrink: bool,
}

/// Residuals below this are treated as round-off in the sweep monotonicity check.
pub const SWEEP_RESIDUAL_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub command: Command,
    pub seed: u64,
    pub status: Status,
    pub config: ExperimentConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group: Option<GroupReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ellipticity: Option<EllipticityCertificate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub analytic: Option<IndexEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub index: Option<IndexReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decay: Option<DecayReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sobolev: Option<SobolevEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepTable>,
}

/// Pipeline stage that raises each kind of error.
pub fn stage_of(e: &WorkbenchError) -> &'static str {
    match e {
        WorkbenchError::InvalidGroup(_) | WorkbenchError::IdentityElement | WorkbenchError::TooFewQuadraturePoints(_) => {
            "group_model"
        }
        WorkbenchError::InvalidOperator(_) | WorkbenchError::RankMismatch(_) | WorkbenchError::CutoffTooSmall { .. } => {
            "shift_ops"
        }
        WorkbenchError::NotElliptic(_) => "is_elliptic",
        WorkbenchError::Inversion(_) => "invert",
        WorkbenchError::GridMismatch(_) => "nc_forms",
        WorkbenchError::Idempotent(_) => "mollify_and_idempotentize",
        WorkbenchError::NotClosed(_) => "chern_character",
        WorkbenchError::DegenerateFixedPoint(_) => "localized_todd",
        WorkbenchError::Unstable(_) => "numerical_index",
        WorkbenchError::NotNearInteger { .. } => "pair_fundamental",
        WorkbenchError::Config(_) => "parse_config",
    }
}

pub fn exit_code_of(e: &WorkbenchError) -> i32 {
    match e {
        WorkbenchError::Config(_) => EXIT_PARSE,
        WorkbenchError::NotElliptic(_) => EXIT_NOT_ELLIPTIC,
        WorkbenchError::Unstable(_)
        | WorkbenchError::Inversion(_)
        | WorkbenchError::Idempotent(_)
        | WorkbenchError::NotClosed(_)
        | WorkbenchError::NotNearInteger { .. } => EXIT_UNSTABLE,
        _ => EXIT_OTHER,
    }
}

fn ok(outcome: &str) -> Status {
    Status {
        exit_code: EXIT_OK,
        outcome: outcome.into(),
        stage: None,
        message: None,
    }
}

fn failed(e: &WorkbenchError) -> Status {
    Status {
        exit_code: exit_code_of(e),
        outcome: match exit_code_of(e) {
            EXIT_NOT_ELLIPTIC => "not elliptic".into(),
            EXIT_UNSTABLE => "unstable numerics".into(),
            _ => "error".into(),
        },
        stage: Some(stage_of(e).into()),
        message: Some(e.to_string()),
    }
}

fn status(exit_code: i32, outcome: &str, stage: &str, message: String) -> Status {
    Status {
        exit_code,
        outcome: outcome.into(),
        stage: Some(stage.into()),
        message: Some(message),
    }
}

pub fn group_report(spec: &GroupSpec, cfg: &ExperimentConfig) -> GroupReport {
    let n = &cfg.numerics;
    let growth = growth_census(spec, n.growth_kmax);
    let diophantine = diophantine_sweep(spec, n.diophantine_kmax, n.diophantine_c, n.diophantine_n);
    let (cf, conv) = match spec.kind() {
        GroupKind::DenseRotation => {
            let cf = continued_fraction(spec.theta(), cfg.group.cf_depth.unwrap_or(crate::group_model::DEFAULT_CF_DEPTH));
            let conv = convergent_denominators(&cf);
            (cf, conv)
        }
        GroupKind::FiniteCyclic => (Vec::new(), Vec::new()),
    };
    let saturated = match spec.order() {
        Some(q) => growth.counts.last().copied() == Some(q as usize),
        None => false,
    };
    let hypotheses_hold = diophantine.all_satisfied
        && match spec.order() {
            Some(_) => saturated,
            None => growth.degree == 1,
        };
    GroupReport {
        kind: spec.kind(),
        theta: spec.theta(),
        order: spec.order(),
        generators: spec.generators().to_vec(),
        closure: spec.closure(),
        continued_fraction: cf,
        convergent_denominators: conv,
        growth,
        saturated,
        diophantine,
        hypotheses_hold,
    }
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    opts: PipelineOptions,
    report: Report,
}

impl Ctx<'_> {
    fn operator(&mut self) -> Option<ShiftOperator> {
        match self.cfg.shift_operator() {
            Ok(d) => Some(d),
            Err(e) => {
                self.report.status = failed(&e);
                None
            }
        }
    }

    /// Certificate; `false` unless the symbol is certified elliptic.
    fn certify(&mut self, d: &ShiftOperator) -> bool {
        let cert = is_elliptic_with(&symbol_of(d), self.opts.elliptic_tol, &self.opts.elliptic_schedule);
        let verdict = cert.verdict;
        let msg = format!("s_min = {:.3e}, decay ratio {:.3e}", cert.s_min, cert.decay_ratio);
        self.report.ellipticity = Some(cert);
        match verdict {
            Verdict::Elliptic => true,
            Verdict::NotElliptic => {
                self.report.status = status(EXIT_NOT_ELLIPTIC, "not elliptic", "is_elliptic", msg);
                false
            }
            Verdict::Inconclusive => {
                self.report.status = status(EXIT_UNSTABLE, "unstable numerics", "is_elliptic", format!("inconclusive: {msg}"));
                false
            }
        }
    }
}

fn run_check_group(ctx: &mut Ctx) {
    match ctx.cfg.group_spec() {
        Ok(spec) => {
            let g = group_report(&spec, ctx.cfg);
            ctx.report.status = if g.hypotheses_hold {
                ok("hypotheses hold")
            } else {
                status(EXIT_OTHER, "hypotheses fail", "group_model", "growth or Diophantine check failed".into())
            };
            ctx.report.group = Some(g);
        }
        Err(e) => ctx.report.status = failed(&e),
    }
}

fn run_ellipticity(ctx: &mut Ctx) {
    if let Some(d) = ctx.operator() {
        if ctx.certify(&d) {
            ctx.report.status = ok("elliptic");
        }
    }
}

fn run_index(ctx: &mut Ctx, gate: bool) {
    let Some(d) = ctx.operator() else { return };
    ctx.report.decay = Some(d.decay_report(ctx.cfg.numerics.decay_exponent, ctx.cfg.numerics.decay_constant));
    if !ctx.certify(&d) {
        return;
    }
    let analytic = index_history(&d, &ctx.opts.schedule, ctx.opts.sv_tol);
    if gate {
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.report.seed);
        ctx.report.sobolev = Some(sobolev_bound_check(&d, SOBOLEV_ORDER, SOBOLEV_CUTOFF, &mut rng));
        if !analytic.stable {
            let detail: Vec<String> = analytic
                .steps
                .iter()
                .map(|s| format!("N={}: {} (gap {:.1e})", s.cutoff, s.index, s.gap))
                .collect();
            ctx.report.status = status(EXIT_UNSTABLE, "unstable numerics", "numerical_index", detail.join(", "));
            ctx.report.analytic = Some(analytic);
            return;
        }
    }
    match cohomological_index_with(&d, &ctx.opts, Some(analytic.clone())) {
        Ok(r) => {
            ctx.report.status = if !gate || r.agreement {
                ok(if r.agreement { "agreement" } else { "computed" })
            } else {
                status(
                    EXIT_DISAGREEMENT,
                    "index disagreement",
                    "cohomological_index",
                    format!("cohomological {} vs analytic {}", r.rounded, r.analytic.index),
                )
            };
            ctx.report.index = Some(r);
        }
        Err(e) => {
            ctx.report.analytic = Some(analytic);
            ctx.report.status = failed(&e);
        }
    }
}

fn apply_knob(opts: &PipelineOptions, knob: Knob, v: usize) -> PipelineOptions {
    let mut o = opts.clone();
    match knob {
        Knob::Cutoff => o.schedule = vec![(v / 4).max(1), (v / 2).max(2), v],
        Knob::Grid => o.grid = v,
        Knob::Window => o.window = v,
        Knob::InverseBand => o.inverse_band = v,
    }
    o
}

fn run_sweep(ctx: &mut Ctx) {
    let Some(sw) = ctx.cfg.run.sweep.clone() else {
        ctx.report.status = status(EXIT_PARSE, "error", "parse_config", "sweep needs a [run.sweep] section".into());
        return;
    };
    let Some(d) = ctx.operator() else { return };
    if !ctx.certify(&d) {
        return;
    }
    let mut rows = Vec::new();
    let mut first_error = None;
    for &v in &sw.values {
        let opts = apply_knob(&ctx.opts, sw.knob, v);
        let row = match cohomological_index_with(&d, &opts, None) {
            Ok(r) => {
                let kernel_separation = 1.0 / r.analytic.min_gap();
                SweepRow {
                    value: v,
                    analytic: Some(r.analytic.index),
                    cohomological: Some(r.rounded),
                    imaginary: r.residuals.imaginary,
                    integer_distance: r.residuals.integer_distance,
                    kernel_separation,
                    residual: r.residuals.imaginary.max(r.residuals.integer_distance).max(kernel_separation),
                    agreement: r.agreement,
                    error: None,
                }
            }
            Err(e) => {
                first_error.get_or_insert_with(|| failed(&e));
                SweepRow {
                    value: v,
                    analytic: None,
                    cohomological: None,
                    imaginary: f64::NAN,
                    integer_distance: f64::NAN,
                    kernel_separation: f64::NAN,
                    residual: f64::NAN,
                    agreement: false,
                    error: Some(format!("{}: {e}", stage_of(&e))),
                }
            }
        };
        rows.push(row);
    }
    let consistent = rows.iter().all(|r| r.agreement && r.cohomological == rows[0].cohomological);
    let residuals_shrink = rows
        .windows(2)
        .all(|w| w[1].residual <= w[0].residual * (1.0 + 1e-3) + SWEEP_RESIDUAL_FLOOR);
    ctx.report.status = match first_error {
        Some(s) => s,
        None if consistent => ok("consistent"),
        None => status(EXIT_DISAGREEMENT, "index disagreement", "sweep", "integers differ along the sweep".into()),
    };
    ctx.report.sweep = Some(SweepTable {
        knob: sw.knob,
        rows,
        consistent,
        residuals_shrink,
    });
}

/// Runs one command; the report is a pure function of `(cfg, command, seed)`.
pub fn run(cfg: &ExperimentConfig, command: Command, seed: u64) -> Report {
    let mut ctx = Ctx {
        cfg,
        opts: cfg.numerics.pipeline(),
        report: Report {
            command,
            seed,
            status: ok("ok"),
            config: cfg.clone(),
            group: None,
            ellipticity: None,
            analytic: None,
            index: None,
            decay: None,
            sobolev: None,
            sweep: None,
        },
    };
    match command {
        Command::CheckGroup => run_check_group(&mut ctx),
        Command::Ellipticity => run_ellipticity(&mut ctx),
        Command::Index => run_index(&mut ctx, false),
        Command::Verify => run_index(&mut ctx, true),
        Command::Sweep => run_sweep(&mut ctx),
    }
    ctx.report
}

fn sci(x: f64) -> String {
    format!("{x:.3e}")
}

impl Report {
    pub fn exit_code(&self) -> i32 {
        self.status.exit_code
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Plain delimited sweep table.
    pub fn sweep_table(&self) -> Option<String> {
        let t = self.sweep.as_ref()?;
        let mut s = String::from("value,analytic,cohomological,imaginary,integer_distance,kernel_separation,residual,agreement\n");
        let int = |v: Option<i64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &t.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.value,
                int(r.analytic),
                int(r.cohomological),
                sci(r.imaginary),
                sci(r.integer_distance),
                sci(r.kernel_separation),
                sci(r.residual),
                r.agreement
            );
        }
        Some(s)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "command: {}", self.command.name());
        let _ = writeln!(s, "seed: {}", self.seed);
        let g = &self.config.group;
        match g.kind {
            config::GroupKindName::Dense => {
                let theta = g.theta.as_ref().and_then(|t| t.value().ok()).unwrap_or(crate::group_model::GOLDEN_THETA);
                let _ = writeln!(s, "group: dense rotations, theta = {theta:.16}");
            }
            config::GroupKindName::Finite => {
                let _ = writeln!(s, "group: finite cyclic of order {}", g.order.unwrap_or(0));
            }
        }
        let op = &self.config.operator;
        let _ = writeln!(
            s,
            "operator: order {}, rank {} -> {}, {} terms",
            op.order,
            op.rank_in,
            op.rank_out,
            op.terms.len()
        );
        if let Some(gr) = &self.group {
            let _ = writeln!(
                s,
                "growth: fitted slope {:.3}, degree {}, |B(k)| at k = {}: {}{}",
                gr.growth.fitted_slope,
                gr.growth.degree,
                gr.growth.counts.len() - 1,
                gr.growth.counts.last().copied().unwrap_or(0),
                if gr.saturated { " (saturated)" } else { "" }
            );
            let _ = writeln!(
                s,
                "diophantine: min margin {} at g = {} over |g| <= {}, all satisfied: {}",
                sci(gr.diophantine.min_margin),
                gr.diophantine.argmin,
                gr.diophantine.kmax,
                gr.diophantine.all_satisfied
            );
            if !gr.continued_fraction.is_empty() {
                let _ = writeln!(s, "continued fraction: {:?}", gr.continued_fraction);
            }
        }
        if let Some(c) = &self.ellipticity {
            let hist: Vec<String> = c.history.iter().map(|(n, v)| format!("N={n}: {}", sci(*v))).collect();
            let _ = writeln!(
                s,
                "ellipticity: {:?}, s_min {}, decay ratio {}, window {} ({})",
                c.verdict,
                sci(c.s_min),
                sci(c.decay_ratio),
                c.window,
                hist.join(", ")
            );
        }
        let analytic = self.index.as_ref().map(|r| &r.analytic).or(self.analytic.as_ref());
        if let Some(a) = analytic {
            let steps: Vec<String> = a
                .steps
                .iter()
                .map(|st| format!("N={}: {} - {} = {} (gap {})", st.cutoff, st.kernel, st.cokernel, st.index, sci(st.gap)))
                .collect();
            let _ = writeln!(s, "analytic index: {} stable: {} ({})", a.index, a.stable, steps.join("; "));
        }
        if let Some(r) = &self.index {
            let _ = writeln!(
                s,
                "cohomological index: {:.12} {:+.3e}i -> {}",
                r.cohomological.re, r.cohomological.im, r.rounded
            );
            let contrib: Vec<String> = r
                .contributions
                .iter()
                .map(|(g, c)| format!("<{g}>: {:.12}", c.re))
                .collect();
            let _ = writeln!(s, "contributions: {}", contrib.join(", "));
            let _ = writeln!(s, "agreement: {} (cohomological {} = analytic {})", r.agreement, r.rounded, r.analytic.index);
            let res = &r.residuals;
            let _ = writeln!(
                s,
                "residuals: imaginary {}, integer distance {}, inverse {}, idempotent {}, curvature range {}, closedness {}",
                sci(res.imaginary),
                sci(res.integer_distance),
                sci(res.inverse),
                sci(res.idempotent_defect),
                sci(res.curvature_range_defect),
                sci(res.closedness)
            );
            let _ = writeln!(
                s,
                "discarded: inverse window {}, inverse band {}, forms {}",
                sci(res.discarded_inverse.window),
                sci(res.discarded_inverse.band),
                sci(res.discarded_forms)
            );
        }
        if let Some(d) = &self.decay {
            let _ = writeln!(s, "decay envelope (p = {}, c = {}): {}", d.exponent, d.constant, d.within_envelope);
        }
        if let Some(so) = &self.sobolev {
            let _ = writeln!(s, "sobolev bound: {} (constant {})", so.pass, sci(so.constant));
        }
        if let Some(t) = self.sweep_table() {
            let _ = writeln!(s, "sweep over {:?}:", self.sweep.as_ref().map(|t| t.knob).unwrap_or(Knob::Cutoff));
            s.push_str(&t);
        }
        let _ = write!(s, "status: {} (exit {})", self.status.outcome, self.status.exit_code);
        if let Some(stage) = &self.status.stage {
            let _ = write!(s, " in {stage}");
        }
        if let Some(m) = &self.status.message {
            let _ = write!(s, ": {m}");
        }
        s.push('\n');
        s
    }

    /// Writes `report.json`, `report.txt` and, for sweeps, `sweep.csv`.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.to_json())?;
        std::fs::write(dir.join("report.txt"), self.to_text())?;
        if let Some(t) = self.sweep_table() {
            std::fs::write(dir.join("sweep.csv"), t)?;
        }
        Ok(())
    }
}
