//! Experiment configuration: a TOML document with `[group]`, `[operator]`,
//! `[numerics]` and `[run]` sections. Unknown keys are rejected everywhere.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::chern_index::{DEFAULT_CLOSED_TOL, DEFAULT_IDEMPOTENT_TOL, DEFAULT_MOLLIFIER_CELLS};
use crate::fredholm::{DEFAULT_SCHEDULE, DEFAULT_SV_TOL};
use crate::group_model::{GroupElement, GroupSpec, DEFAULT_CF_DEPTH, GOLDEN_THETA, HAAR_DEFAULT_POINTS};
use crate::index_engine::PipelineOptions;
use crate::nc_forms::DEFAULT_GRID;
use crate::shift_ops::{ElementaryPdo, PdoCoefficient, PdoEntry, SheetPair, ShiftOperator};
use crate::symbol_calc::DEFAULT_ELLIPTIC_SCHEDULE;
use crate::trig::{TrigPoly, C64};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub group: GroupSection,
    pub operator: OperatorSection,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupKindName {
    Dense,
    Finite,
}

/// `theta = 0.618…` or `theta = { cf = [0], period = [1] }`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Theta {
    Decimal(f64),
    ContinuedFraction(CfTheta),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CfTheta {
    pub cf: Vec<i64>,
    /// Partial quotients repeated forever after `cf`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub period: Vec<i64>,
}

const CF_EXPANSION: usize = 64;

impl Theta {
    pub fn value(&self) -> Result<f64, String> {
        match self {
            Theta::Decimal(t) => Ok(*t),
            Theta::ContinuedFraction(c) => {
                if c.cf.is_empty() {
                    return Err("continued fraction needs at least one quotient".into());
                }
                let mut q: Vec<i64> = c.cf.clone();
                if !c.period.is_empty() {
                    while q.len() < CF_EXPANSION {
                        q.extend_from_slice(&c.period);
                    }
                }
                if q.iter().skip(1).any(|&a| a <= 0) {
                    return Err("partial quotients after the first must be positive".into());
                }
                let mut x = 0.0f64;
                for &a in q.iter().skip(1).rev() {
                    x = 1.0 / (a as f64 + x);
                }
                Ok(q[0] as f64 + x)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSection {
    pub kind: GroupKindName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Theta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generators: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cf_depth: Option<usize>,
}

impl GroupSection {
    pub fn build(&self) -> crate::Result<GroupSpec> {
        let gens = self.generators.clone().unwrap_or_else(|| vec![1, -1]);
        match self.kind {
            GroupKindName::Dense => {
                let theta = match &self.theta {
                    Some(t) => t.value().map_err(crate::WorkbenchError::InvalidGroup)?,
                    None => GOLDEN_THETA,
                };
                GroupSpec::dense_rotation_with_depth(theta, gens, self.cf_depth.unwrap_or(DEFAULT_CF_DEPTH))
            }
            GroupKindName::Finite => GroupSpec::finite_cyclic(self.order.unwrap_or(0), gens),
        }
    }
}

/// A coefficient, real (`0.5`) or complex (`[re, im]`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coeff {
    Real(f64),
    Complex([f64; 2]),
}

impl Coeff {
    pub fn value(self) -> C64 {
        match self {
            Coeff::Real(r) => C64::new(r, 0.0),
            Coeff::Complex([re, im]) => C64::new(re, im),
        }
    }
}

/// Fourier coefficients keyed by frequency; TOML keys are strings (`"-1" = 0.5`).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FreqMap(pub BTreeMap<i64, Coeff>);

impl FreqMap {
    pub fn poly(&self) -> TrigPoly {
        TrigPoly::from_map(&self.0.iter().map(|(k, c)| (*k, c.value())).collect())
    }
}

impl Serialize for FreqMap {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let m: BTreeMap<String, Coeff> = self.0.iter().map(|(k, c)| (k.to_string(), *c)).collect();
        m.serialize(s)
    }
}

impl<'de> Deserialize<'de> for FreqMap {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = BTreeMap::<String, Coeff>::deserialize(d)?;
        raw.into_iter()
            .map(|(k, c)| {
                k.trim()
                    .parse::<i64>()
                    .map(|k| (k, c))
                    .map_err(|_| de::Error::custom(format!("frequency key `{k}` is not an integer")))
            })
            .collect::<Result<BTreeMap<_, _>, _>>()
            .map(FreqMap)
    }
}

/// One symbol layer: either `uniform`, or `plus` and `minus` per sheet.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SheetSymbols {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uniform: Option<FreqMap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plus: Option<FreqMap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minus: Option<FreqMap>,
}

impl SheetSymbols {
    fn pair(&self) -> Result<SheetPair, String> {
        match (&self.uniform, &self.plus, &self.minus) {
            (Some(u), None, None) => Ok(SheetPair::uniform(u.poly())),
            (None, p, m) => Ok(SheetPair::new(
                p.as_ref().map(FreqMap::poly).unwrap_or_else(TrigPoly::zero),
                m.as_ref().map(FreqMap::poly).unwrap_or_else(TrigPoly::zero),
            )),
            _ => Err("`uniform` cannot be combined with `plus`/`minus`".into()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorTerm {
    /// Group element label `g` of the shift `T_g`.
    pub element: i64,
    #[serde(default)]
    pub row: usize,
    #[serde(default)]
    pub col: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uniform: Option<FreqMap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plus: Option<FreqMap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minus: Option<FreqMap>,
    /// Lower-order symbols, one order down per entry.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lower: Vec<SheetSymbols>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSection {
    #[serde(default)]
    pub order: i32,
    #[serde(default = "one")]
    pub rank_in: usize,
    #[serde(default = "one")]
    pub rank_out: usize,
    #[serde(default)]
    pub terms: Vec<OperatorTerm>,
}

impl OperatorTerm {
    pub fn principal(&self) -> SheetSymbols {
        SheetSymbols {
            uniform: self.uniform.clone(),
            plus: self.plus.clone(),
            minus: self.minus.clone(),
        }
    }
}

fn one() -> usize {
    1
}

impl OperatorSection {
    pub fn build(&self, group: GroupSpec) -> crate::Result<ShiftOperator> {
        let invalid = crate::WorkbenchError::InvalidOperator;
        let mut coeffs: BTreeMap<i64, PdoCoefficient> = BTreeMap::new();
        for (i, t) in self.terms.iter().enumerate() {
            if t.row >= self.rank_out || t.col >= self.rank_in {
                return Err(invalid(format!(
                    "term {i}: entry ({}, {}) outside a {}x{} coefficient",
                    t.row, t.col, self.rank_out, self.rank_in
                )));
            }
            let principal = t.principal().pair().map_err(|e| invalid(format!("term {i}: {e}")))?;
            let lower = t
                .lower
                .iter()
                .map(SheetSymbols::pair)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| invalid(format!("term {i}: {e}")))?;
            let f = ElementaryPdo::new(self.order, principal).with_lower(lower);
            let mut c = PdoCoefficient::zeros(self.order, self.rank_out, self.rank_in);
            c.set_entry(t.row, t.col, PdoEntry::elementary(f));
            let g = group.element(t.element).0;
            let merged = match coeffs.remove(&g) {
                Some(prev) => prev.add(&c)?,
                None => c,
            };
            coeffs.insert(g, merged);
        }
        ShiftOperator::new(
            group,
            self.rank_in,
            self.rank_out,
            self.order,
            coeffs.into_iter().map(|(g, c)| (GroupElement(g), c)),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Numerics {
    /// Cutoffs `N` for the analytic index.
    pub schedule: Vec<usize>,
    pub elliptic_schedule: Vec<usize>,
    /// Word-length window `G`.
    pub window: usize,
    pub inverse_band: usize,
    pub grid: usize,
    pub sv_tol: f64,
    pub elliptic_tol: f64,
    pub inverse_tol: f64,
    pub idempotent_tol: f64,
    pub closed_tol: f64,
    /// Gaussian mollifier width in grid cells.
    pub mollifier_cells: f64,
    pub haar_points: usize,
    pub diophantine_c: f64,
    pub diophantine_n: f64,
    pub diophantine_kmax: i64,
    pub growth_kmax: usize,
    /// Envelope `‖D_g‖ ≤ c·max‖D‖·(1 + |g|)^{-p}` for the coefficient decay report.
    pub decay_exponent: f64,
    pub decay_constant: f64,
}

impl Default for Numerics {
    fn default() -> Self {
        let p = PipelineOptions::default();
        Self {
            schedule: DEFAULT_SCHEDULE.to_vec(),
            elliptic_schedule: DEFAULT_ELLIPTIC_SCHEDULE.to_vec(),
            window: p.window,
            inverse_band: p.inverse_band,
            grid: DEFAULT_GRID,
            sv_tol: DEFAULT_SV_TOL,
            elliptic_tol: p.elliptic_tol,
            inverse_tol: p.inverse_tol,
            idempotent_tol: DEFAULT_IDEMPOTENT_TOL,
            closed_tol: DEFAULT_CLOSED_TOL,
            mollifier_cells: DEFAULT_MOLLIFIER_CELLS,
            haar_points: HAAR_DEFAULT_POINTS,
            diophantine_c: 0.05,
            diophantine_n: 2.0,
            diophantine_kmax: 10_000,
            growth_kmax: 64,
            decay_exponent: 6.0,
            decay_constant: 64.0,
        }
    }
}

impl Numerics {
    pub fn pipeline(&self) -> PipelineOptions {
        PipelineOptions {
            grid: self.grid,
            window: self.window,
            inverse_band: self.inverse_band,
            inverse_tol: self.inverse_tol,
            idempotent_tol: self.idempotent_tol,
            mollifier_cells: self.mollifier_cells,
            closed_tol: self.closed_tol,
            elliptic_tol: self.elliptic_tol,
            elliptic_schedule: self.elliptic_schedule.clone(),
            schedule: self.schedule.clone(),
            sv_tol: self.sv_tol,
            haar_points: self.haar_points,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    CheckGroup,
    Ellipticity,
    Index,
    Verify,
    Sweep,
}

impl Command {
    pub const ALL: [Command; 5] = [
        Command::CheckGroup,
        Command::Ellipticity,
        Command::Index,
        Command::Verify,
        Command::Sweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::CheckGroup => "check-group",
            Command::Ellipticity => "ellipticity",
            Command::Index => "index",
            Command::Verify => "verify",
            Command::Sweep => "sweep",
        }
    }

    pub fn parse(s: &str) -> Option<Command> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

/// Numeric knob varied by `sweep`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Knob {
    /// Largest analytic cutoff `N`; the schedule becomes `N/4, N/2, N`.
    Cutoff,
    Grid,
    Window,
    InverseBand,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub knob: Knob,
    pub values: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

/// One problem found while reading a config.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigIssue {
    /// Dotted key path, empty when unknown.
    pub key: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(l) = self.line {
            write!(f, "line {l}: ")?;
        }
        if self.key.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.key, self.message)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError(pub Vec<ConfigIssue>);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

/// Line of `key = …` inside `[section]` (or `[[section]]`), 1-based.
fn locate(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut section_line = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if current == section && section_line.is_none() {
                section_line = Some(i + 1);
            }
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim().trim_matches('"') == key {
                    return Some(i + 1);
                }
            }
        }
    }
    if key.is_empty() {
        section_line
    } else {
        None
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn validate(cfg: &ExperimentConfig, text: &str) -> Vec<ConfigIssue> {
    let mut issues = Vec::new();
    let push = |issues: &mut Vec<ConfigIssue>, section: &str, key: &str, message: String| {
        let full = if key.is_empty() {
            section.to_string()
        } else {
            format!("{section}.{key}")
        };
        issues.push(ConfigIssue {
            key: full,
            line: locate(text, section, key).or_else(|| locate(text, section, "")),
            message,
        });
    };

    let g = &cfg.group;
    match g.kind {
        GroupKindName::Dense => {
            if g.order.is_some() {
                push(&mut issues, "group", "order", "only finite groups take an order".into());
            }
            if let Some(t) = &g.theta {
                if let Err(e) = t.value() {
                    push(&mut issues, "group", "theta", e);
                }
            }
        }
        GroupKindName::Finite => {
            match g.order {
                None => push(&mut issues, "group", "order", "finite groups need an order".into()),
                Some(0) => push(&mut issues, "group", "order", "must be at least 1".into()),
                _ => {}
            }
            if g.theta.is_some() {
                push(&mut issues, "group", "theta", "finite groups take no theta".into());
            }
        }
    }
    if let Err(e) = g.build() {
        if issues.is_empty() {
            let msg = e.to_string();
            let key = if msg.contains("theta") && g.theta.is_some() {
                "theta"
            } else if msg.contains("generator") && g.generators.is_some() {
                "generators"
            } else {
                ""
            };
            push(&mut issues, "group", key, msg);
        }
    }

    let n = &cfg.numerics;
    for (key, v) in [
        ("sv_tol", n.sv_tol),
        ("elliptic_tol", n.elliptic_tol),
        ("inverse_tol", n.inverse_tol),
        ("idempotent_tol", n.idempotent_tol),
        ("closed_tol", n.closed_tol),
        ("mollifier_cells", n.mollifier_cells),
        ("diophantine_c", n.diophantine_c),
        ("decay_exponent", n.decay_exponent),
        ("decay_constant", n.decay_constant),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            push(&mut issues, "numerics", key, format!("must be positive, got {v}"));
        }
    }
    if !(n.diophantine_n >= 0.0 && n.diophantine_n.is_finite()) {
        push(&mut issues, "numerics", "diophantine_n", format!("must be non-negative, got {}", n.diophantine_n));
    }
    for (key, s) in [("schedule", &n.schedule), ("elliptic_schedule", &n.elliptic_schedule)] {
        if s.is_empty() {
            push(&mut issues, "numerics", key, "must not be empty".into());
        } else if s.windows(2).any(|w| w[0] >= w[1]) {
            push(&mut issues, "numerics", key, format!("must be strictly increasing, got {s:?}"));
        } else if s[0] == 0 {
            push(&mut issues, "numerics", key, "cutoffs must be positive".into());
        }
    }
    if n.grid < 8 || !n.grid.is_multiple_of(2) {
        push(&mut issues, "numerics", "grid", format!("must be an even size of at least 8, got {}", n.grid));
    }
    for (key, v) in [
        ("window", n.window),
        ("inverse_band", n.inverse_band),
        ("growth_kmax", n.growth_kmax),
    ] {
        if v == 0 {
            push(&mut issues, "numerics", key, "must be positive".into());
        }
    }
    if n.haar_points < 4 {
        push(&mut issues, "numerics", "haar_points", format!("must be at least 4, got {}", n.haar_points));
    }
    if n.diophantine_kmax < 1 {
        push(&mut issues, "numerics", "diophantine_kmax", "must be positive".into());
    }

    let op = &cfg.operator;
    if op.rank_in == 0 || op.rank_out == 0 {
        push(&mut issues, "operator", "", "ranks must be positive".into());
    }
    if op.order < 0 {
        push(&mut issues, "operator", "order", format!("must be non-negative, got {}", op.order));
    }
    if issues.is_empty() {
        if let Ok(group) = g.build() {
            if let Err(e) = op.build(group) {
                push(&mut issues, "operator", "terms", e.to_string());
            }
        }
    }

    if let Some(s) = &cfg.run.sweep {
        if s.values.is_empty() {
            push(&mut issues, "run.sweep", "values", "must not be empty".into());
        } else if s.values.windows(2).any(|w| w[0] >= w[1]) {
            push(&mut issues, "run.sweep", "values", format!("must be strictly increasing, got {:?}", s.values));
        }
    }
    issues
}

/// Parses and validates a config; every problem carries its key and line.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
        ConfigError(vec![ConfigIssue {
            key: String::new(),
            line: e.span().map(|s| line_of_offset(text, s.start)),
            message: e.message().trim().to_string(),
        }])
    })?;
    let issues = validate(&cfg, text);
    if issues.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError(issues))
    }
}

pub fn emit_config(cfg: &ExperimentConfig) -> String {
    toml::to_string(cfg).expect("config is always representable as TOML")
}

impl ExperimentConfig {
    pub fn group_spec(&self) -> crate::Result<GroupSpec> {
        self.group.build()
    }

    pub fn shift_operator(&self) -> crate::Result<ShiftOperator> {
        self.operator.build(self.group.build()?)
    }
}
