//! The acting group: rotations of the circle.
//!
//! Two concrete groups are modelled. A *dense rotation* group is generated by
//! the rotation through `2πθ` with `θ` irrational, so its closure is all of
//! `U(1)`; a *finite cyclic* group of order `q` rotates by multiples of `2π/q`.
//! Elements are integer labels `k`; composition is addition (mod `q`).
//!
//! Both groups are abelian, so every conjugacy class is a singleton and every
//! centralizer is the whole closure group. The conjugacy table still carries
//! the full (representative, members, centralizer, coset) structure that the
//! trace on crossed-product forms is written against.

use std::collections::{BTreeSet, VecDeque};
use std::f64::consts::{PI, TAU};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WorkbenchError};

/// `(√5 − 1)/2`, the golden-mean rotation number.
pub const GOLDEN_THETA: f64 = 0.618_033_988_749_894_9;

/// Depth to which a rotation number must have a non-terminating continued
/// fraction to be accepted as irrational.
pub const DEFAULT_CF_DEPTH: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupKind {
    DenseRotation,
    FiniteCyclic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupElement(pub i64);

impl GroupElement {
    pub const IDENTITY: GroupElement = GroupElement(0);

    pub fn label(self) -> i64 {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    kind: GroupKind,
    theta: f64,
    order: u64,
    generators: Vec<i64>,
}

impl GroupSpec {
    pub fn dense_rotation(theta: f64, generators: Vec<i64>) -> Result<Self> {
        Self::dense_rotation_with_depth(theta, generators, DEFAULT_CF_DEPTH)
    }

    pub fn dense_rotation_with_depth(theta: f64, generators: Vec<i64>, depth: usize) -> Result<Self> {
        if !theta.is_finite() {
            return Err(WorkbenchError::InvalidGroup(format!("theta = {theta} is not finite")));
        }
        let cf = continued_fraction(theta, depth);
        if cf.len() <= depth {
            return Err(WorkbenchError::InvalidGroup(format!(
                "theta = {theta} looks rational: continued fraction {cf:?} terminates before depth {depth}"
            )));
        }
        let spec = Self {
            kind: GroupKind::DenseRotation,
            theta: theta.rem_euclid(1.0),
            order: 0,
            generators,
        };
        spec.check_generators()?;
        Ok(spec)
    }

    pub fn finite_cyclic(order: u64, generators: Vec<i64>) -> Result<Self> {
        if order == 0 {
            return Err(WorkbenchError::InvalidGroup("order must be at least 1".into()));
        }
        let spec = Self {
            kind: GroupKind::FiniteCyclic,
            theta: 0.0,
            order,
            generators: generators.into_iter().map(|g| g.rem_euclid(order as i64)).collect(),
        };
        spec.check_generators()?;
        Ok(spec)
    }

    /// The golden-mean rotation group with generators `{±1}`.
    pub fn golden() -> Self {
        Self::dense_rotation(GOLDEN_THETA, vec![1, -1]).expect("golden mean is irrational")
    }

    fn check_generators(&self) -> Result<()> {
        if self.generators.is_empty() {
            return Err(WorkbenchError::InvalidGroup("generator list is empty".into()));
        }
        let set: BTreeSet<i64> = self.generators.iter().map(|&g| self.element(g).0).collect();
        for &g in &set {
            let inv = self.inverse(GroupElement(g)).0;
            if !set.contains(&inv) {
                return Err(WorkbenchError::InvalidGroup(format!(
                    "generator set is not symmetric: {g} present but its inverse {inv} is not"
                )));
            }
        }
        if self.kind == GroupKind::DenseRotation && set.iter().all(|&g| g == 0) {
            return Err(WorkbenchError::InvalidGroup("generators only contain the identity".into()));
        }
        Ok(())
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Group order, `None` for the dense (infinite) group.
    pub fn order(&self) -> Option<u64> {
        match self.kind {
            GroupKind::FiniteCyclic => Some(self.order),
            GroupKind::DenseRotation => None,
        }
    }

    pub fn generators(&self) -> &[i64] {
        &self.generators
    }

    pub fn is_finite(&self) -> bool {
        self.kind == GroupKind::FiniteCyclic
    }

    pub fn identity(&self) -> GroupElement {
        GroupElement::IDENTITY
    }

    /// Canonical element for a label (reduced mod the order when finite).
    pub fn element(&self, label: i64) -> GroupElement {
        match self.kind {
            GroupKind::FiniteCyclic => GroupElement(label.rem_euclid(self.order as i64)),
            GroupKind::DenseRotation => GroupElement(label),
        }
    }

    pub fn compose(&self, a: GroupElement, b: GroupElement) -> GroupElement {
        self.element(a.0 + b.0)
    }

    pub fn inverse(&self, a: GroupElement) -> GroupElement {
        self.element(-a.0)
    }

    /// Rotation angle in `[0, 2π)`.
    pub fn angle(&self, g: GroupElement) -> f64 {
        let turns = match self.kind {
            GroupKind::FiniteCyclic => g.0.rem_euclid(self.order as i64) as f64 / self.order as f64,
            GroupKind::DenseRotation => (g.0 as f64 * self.theta).rem_euclid(1.0),
        };
        TAU * turns
    }

    /// Minimum length of a word in the generators representing `g`.
    pub fn word_length(&self, g: GroupElement) -> usize {
        let g = self.element(g.0);
        if g.0 == 0 {
            return 0;
        }
        let unit = self.generators.iter().all(|s| s.abs() == 1);
        match self.kind {
            GroupKind::DenseRotation if unit => g.0.unsigned_abs() as usize,
            GroupKind::DenseRotation => {
                // Words commute, so some shortest word keeps its partial sums
                // within one generator of the segment [min(0,k), max(0,k)].
                let m = self.generators.iter().map(|s| s.abs()).max().unwrap_or(1);
                let lo = g.0.min(0) - m;
                let hi = g.0.max(0) + m;
                self.bfs_distance(g, |e| e.0 >= lo && e.0 <= hi)
            }
            GroupKind::FiniteCyclic => self.bfs_distance(g, |_| true),
        }
    }

    fn bfs_distance(&self, target: GroupElement, admissible: impl Fn(GroupElement) -> bool) -> usize {
        let mut seen = BTreeSet::from([0i64]);
        let mut queue = VecDeque::from([(GroupElement::IDENTITY, 0usize)]);
        while let Some((e, d)) = queue.pop_front() {
            for &s in &self.generators {
                let next = self.compose(e, self.element(s));
                if next == target {
                    return d + 1;
                }
                if admissible(next) && seen.insert(next.0) {
                    queue.push_back((next, d + 1));
                }
            }
        }
        // Unreachable for finite cyclic groups only when the generators do not
        // generate; report the target as infinitely far.
        usize::MAX
    }

    /// All elements of word length at most `radius`, sorted by label.
    pub fn ball(&self, radius: usize) -> Vec<GroupElement> {
        let mut seen = BTreeSet::from([0i64]);
        let mut frontier = vec![GroupElement::IDENTITY];
        for _ in 0..radius {
            let mut next = Vec::new();
            for e in &frontier {
                for &s in &self.generators {
                    let n = self.compose(*e, self.element(s));
                    if seen.insert(n.0) {
                        next.push(n);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        seen.into_iter().map(GroupElement).collect()
    }

    pub fn closure(&self) -> ClosureGroup {
        match self.kind {
            GroupKind::DenseRotation => ClosureGroup::Circle,
            GroupKind::FiniteCyclic => ClosureGroup::Cyclic(self.order),
        }
    }
}

/// Partial quotients of `x`, stopping early when the expansion terminates
/// (remainder within `1e-9` of an integer).
pub fn continued_fraction(x: f64, depth: usize) -> Vec<i64> {
    let mut out = Vec::new();
    let mut r = x;
    for _ in 0..=depth {
        let a = r.floor();
        out.push(a as i64);
        let frac = r - a;
        if frac < 1e-9 || 1.0 - frac < 1e-9 {
            if 1.0 - frac < 1e-9 {
                *out.last_mut().unwrap() += 1;
            }
            break;
        }
        r = 1.0 / frac;
    }
    out
}

/// Convergent denominators `q_n` of a continued fraction `[a0; a1, a2, ...]`.
pub fn convergent_denominators(cf: &[i64]) -> Vec<i64> {
    let (mut q_prev, mut q) = (0i64, 1i64);
    let mut out = vec![1];
    for &a in cf.iter().skip(1) {
        let next = a * q + q_prev;
        q_prev = q;
        q = next;
        out.push(q);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthCensus {
    /// `counts[k] = #{g : |g| ≤ k}` for `k = 0..=kmax`.
    pub counts: Vec<usize>,
    /// Least-squares slope of `log count` against `log k` on the upper half of the range.
    pub fitted_slope: f64,
    pub degree: u32,
}

pub fn growth_census(spec: &GroupSpec, kmax: usize) -> GrowthCensus {
    let kmax = kmax.max(1);
    let mut seen = BTreeSet::from([0i64]);
    let mut frontier = vec![GroupElement::IDENTITY];
    let mut counts = vec![1usize];
    for _ in 1..=kmax {
        let mut next = Vec::new();
        for e in &frontier {
            for &s in spec.generators() {
                let n = spec.compose(*e, spec.element(s));
                if seen.insert(n.0) {
                    next.push(n);
                }
            }
        }
        frontier = next;
        counts.push(seen.len());
    }

    let start = (kmax / 2).max(1);
    let pts: Vec<(f64, f64)> = (start..=kmax)
        .map(|k| ((k as f64).ln(), (counts[k] as f64).ln()))
        .collect();
    let fitted_slope = if pts.len() < 2 {
        0.0
    } else {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    };
    GrowthCensus {
        counts,
        fitted_slope,
        degree: fitted_slope.round().max(0.0) as u32,
    }
}

/// Distance on the unit circle between the angle `a` and `0`.
pub fn circle_distance(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    r.min(TAU - r)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiophantineMargin {
    pub margin: f64,
    pub satisfied: bool,
}

/// Checks `dist(g(x), x) ≥ C |g|^{-N} dist(x, fix g)` for a circle rotation.
///
/// A rotation moves every point by the same distance and has no fixed
/// points, so `dist(x, fix g) = 1` and the estimate reduces to
/// `dist(angle, 0) · |g|^N ≥ C`.
pub fn diophantine_margin(spec: &GroupSpec, g: GroupElement, c: f64, n: f64) -> Result<DiophantineMargin> {
    let g = spec.element(g.0);
    if g == spec.identity() {
        return Err(WorkbenchError::IdentityElement);
    }
    let len = spec.word_length(g) as f64;
    let margin = circle_distance(spec.angle(g)) * len.powf(n);
    Ok(DiophantineMargin {
        margin,
        satisfied: margin >= c,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiophantineSweep {
    pub kmax: i64,
    pub min_margin: f64,
    pub argmin: i64,
    pub all_satisfied: bool,
}

/// Sweeps the nonidentity labels `±1..=±kmax` (all nonidentity elements for a
/// finite group).
pub fn diophantine_sweep(spec: &GroupSpec, kmax: i64, c: f64, n: f64) -> DiophantineSweep {
    let labels: Vec<i64> = match spec.order() {
        Some(q) => (1..q as i64).collect(),
        None => (1..=kmax).flat_map(|k| [k, -k]).collect(),
    };
    let mut best = (f64::INFINITY, 0i64);
    let mut all = true;
    for k in labels {
        let m = diophantine_margin(spec, GroupElement(k), c, n).expect("nonidentity");
        all &= m.satisfied;
        if m.margin < best.0 {
            best = (m.margin, k);
        }
    }
    DiophantineSweep {
        kmax,
        min_margin: best.0,
        argmin: best.1,
        all_satisfied: all,
    }
}

/// The closure `Γ̄` (and centralizers inside it) for the modelled groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClosureGroup {
    /// All rotations, `U(1)`.
    Circle,
    /// The finite rotation group of the given order.
    Cyclic(u64),
}

/// Values that can be averaged by [`haar_average`].
pub trait HaarValue: Clone {
    fn scaled(&self, w: f64) -> Self;
    fn add_assign(&mut self, other: &Self);
    fn distance(&self, other: &Self) -> f64;
}

impl HaarValue for f64 {
    fn scaled(&self, w: f64) -> Self {
        self * w
    }
    fn add_assign(&mut self, other: &Self) {
        *self += other;
    }
    fn distance(&self, other: &Self) -> f64 {
        (self - other).abs()
    }
}

impl HaarValue for Complex64 {
    fn scaled(&self, w: f64) -> Self {
        self * w
    }
    fn add_assign(&mut self, other: &Self) {
        *self += other;
    }
    fn distance(&self, other: &Self) -> f64 {
        (self - other).norm()
    }
}

impl HaarValue for Vec<Complex64> {
    fn scaled(&self, w: f64) -> Self {
        self.iter().map(|z| z * w).collect()
    }
    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.iter_mut().zip(other) {
            *a += b;
        }
    }
    fn distance(&self, other: &Self) -> f64 {
        self.iter()
            .zip(other)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

pub const HAAR_DEFAULT_POINTS: usize = 64;
const HAAR_TOL: f64 = 1e-10;
const HAAR_MAX_POINTS: usize = 1 << 16;

/// Normalized Haar average of `f` (a function of the rotation angle) over a
/// compact centralizer.
///
/// Over `U(1)` this is the trapezoidal rule, doubling the node count from
/// `points` until two successive values agree to `1e-10`; over a finite group
/// it is the exact average.
pub fn haar_average<V: HaarValue>(f: impl Fn(f64) -> V, group: &ClosureGroup, points: usize) -> Result<V> {
    if points < 4 {
        return Err(WorkbenchError::TooFewQuadraturePoints(points));
    }
    let trapezoid = |m: usize| {
        let w = 1.0 / m as f64;
        let mut acc = f(0.0).scaled(w);
        for j in 1..m {
            acc.add_assign(&f(TAU * j as f64 / m as f64).scaled(w));
        }
        acc
    };
    match *group {
        ClosureGroup::Cyclic(q) => Ok(trapezoid(q as usize)),
        ClosureGroup::Circle => {
            let mut m = points;
            let mut prev = trapezoid(m);
            while m < HAAR_MAX_POINTS {
                m *= 2;
                let next = trapezoid(m);
                if next.distance(&prev) < HAAR_TOL {
                    return Ok(next);
                }
                prev = next;
            }
            Ok(prev)
        }
    }
}

/// Left coset `Γ̄_{g0,g} = {h : h g0 h⁻¹ = g}`; for abelian groups it is the
/// centralizer itself (only when `g = g0`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosetDescriptor {
    pub member: GroupElement,
    /// Angle of a coset representative `h` with `h g0 h⁻¹ = g`.
    pub representative_angle: f64,
    pub centralizer: ClosureGroup,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConjugacyClass {
    pub representative: GroupElement,
    pub members: Vec<GroupElement>,
    pub centralizer: ClosureGroup,
    pub cosets: Vec<CosetDescriptor>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConjugacyTable {
    pub classes: Vec<ConjugacyClass>,
}

impl ConjugacyTable {
    /// Conjugacy classes of the elements with `|g| ≤ radius`.
    pub fn build(spec: &GroupSpec, radius: usize) -> Self {
        let centralizer = spec.closure();
        let classes = spec
            .ball(radius)
            .into_iter()
            .map(|g| ConjugacyClass {
                representative: g,
                members: vec![g],
                centralizer,
                cosets: vec![CosetDescriptor {
                    member: g,
                    representative_angle: 0.0,
                    centralizer,
                }],
            })
            .collect();
        Self { classes }
    }

    pub fn class_of(&self, g: GroupElement) -> Option<&ConjugacyClass> {
        self.classes.iter().find(|c| c.members.contains(&g))
    }
}

/// An isolated fixed point together with the differential of the group
/// element restricted to the normal space there.
#[derive(Clone, Debug, PartialEq)]
pub struct IsolatedPoint {
    pub coords: Vec<f64>,
    pub normal_differential: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FixedSetKind {
    Empty,
    WholeManifold,
    IsolatedPoints(Vec<IsolatedPoint>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixedSet {
    pub element: GroupElement,
    pub kind: FixedSetKind,
}

impl FixedSet {
    pub fn isolated(element: GroupElement, points: Vec<IsolatedPoint>) -> Self {
        Self {
            element,
            kind: FixedSetKind::IsolatedPoints(points),
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self.kind, FixedSetKind::Empty)
    }
}

/// Fixed points of a rotation of the circle (equally of its lifts to `S*S¹`
/// and `2B*S¹`, which act trivially in the fibers).
pub fn fixed_set(g: GroupElement, spec: &GroupSpec) -> FixedSet {
    let g = spec.element(g.0);
    let kind = if g == spec.identity() {
        FixedSetKind::WholeManifold
    } else {
        FixedSetKind::Empty
    };
    FixedSet { element: g, kind }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sheet {
    Plus,
    Minus,
}

impl Sheet {
    pub const BOTH: [Sheet; 2] = [Sheet::Plus, Sheet::Minus];

    pub fn sign(self) -> f64 {
        match self {
            Sheet::Plus => 1.0,
            Sheet::Minus => -1.0,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Sheet::Plus => 0,
            Sheet::Minus => 1,
        }
    }

    /// Sheet of the Fourier mode `k` (mode 0 counts as `+`).
    pub fn of_mode(k: i64) -> Sheet {
        if k >= 0 {
            Sheet::Plus
        } else {
            Sheet::Minus
        }
    }
}

/// The induced action `∂g` on `S*S¹ = {±1} × S¹` and on `2B*S¹ = S¹ × S¹`.
///
/// Rotations have unit derivative, so the fiber part is trivial and the
/// action is translation of the base coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodifferentialAction {
    pub angle: f64,
}

impl CodifferentialAction {
    pub fn then(self, inner: CodifferentialAction) -> CodifferentialAction {
        CodifferentialAction {
            angle: (self.angle + inner.angle).rem_euclid(TAU),
        }
    }

    pub fn on_cosphere(self, sheet: Sheet, x: f64) -> (Sheet, f64) {
        (sheet, (x + self.angle).rem_euclid(TAU))
    }

    pub fn on_double(self, x: f64, beta: f64) -> (f64, f64) {
        ((x + self.angle).rem_euclid(TAU), beta)
    }
}

pub fn codifferential_action(g: GroupElement, spec: &GroupSpec) -> CodifferentialAction {
    CodifferentialAction { angle: spec.angle(g) }
}

/// Half-turn angle, handy for finite-group tests.
pub const HALF_TURN: f64 = PI;
