//! Analytic index by singular-value counting.
//!
//! For each cutoff `N` the operator is restricted exactly to the modes
//! `|k| ≤ N` (rows up to `N + bandwidth`), with columns rescaled by `⟨k⟩^{-m}`
//! so that an elliptic operator of order `m` becomes bounded and bounded below
//! off its kernel. Kernel vectors then show up as singular values far below
//! the rest; the cokernel is counted the same way on the adjoint.

use serde::{Deserialize, Serialize};

use crate::error::{Result, WorkbenchError};
use crate::linalg::singular_values_padded;
use crate::shift_ops::{sobolev_weights, Adjoint, ModeOperator, ShiftOperator};
use crate::symbol_calc::{is_elliptic, symbol_of, Verdict};

pub const DEFAULT_SV_TOL: f64 = 1e-7;
pub const DEFAULT_SCHEDULE: [usize; 3] = [64, 128, 256];
pub const MIN_GAP: f64 = 1e3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexStep {
    pub cutoff: usize,
    pub kernel: usize,
    pub cokernel: usize,
    pub index: i64,
    /// Smallest retained singular value over the largest discarded one.
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEstimate {
    /// Index at the largest cutoff.
    pub index: i64,
    pub steps: Vec<IndexStep>,
    pub sv_tol: f64,
    pub stable: bool,
    /// Symbol verdict when it was checked.
    pub symbol_verdict: Option<Verdict>,
}

impl IndexEstimate {
    pub fn min_gap(&self) -> f64 {
        self.steps.iter().map(|s| s.gap).fold(f64::INFINITY, f64::min)
    }

    pub fn schedule(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.cutoff).collect()
    }
}

/// Near-null dimension of `op` restricted to modes `|k| ≤ n`, with the gap.
fn null_count<T: ModeOperator + ?Sized>(op: &T, n: usize, sv_tol: f64) -> (usize, f64) {
    let mut m = op.block(n, n + op.bandwidth());
    let w = sobolev_weights(n, op.rank_in(), -(op.order() as f64));
    for (j, wj) in w.iter().enumerate() {
        m.column_mut(j).scale_mut(*wj);
    }
    let sv = singular_values_padded(&m);
    let smax = sv.first().copied().unwrap_or(0.0);
    let cut = sv_tol * smax;
    let small: Vec<f64> = sv.iter().copied().filter(|&s| s < cut).collect();
    let large_min = sv.iter().copied().filter(|&s| s >= cut).fold(f64::INFINITY, f64::min);
    let gap = match small.first() {
        Some(&s) if s > 0.0 => large_min / s,
        Some(_) => f64::INFINITY,
        None => large_min / cut,
    };
    (small.len(), gap)
}

/// Index at each cutoff; `stable` requires agreement over the three largest
/// cutoffs with every gap at least `10³`.
pub fn index_history<T: ModeOperator + ?Sized>(d: &T, schedule: &[usize], sv_tol: f64) -> IndexEstimate {
    let mut sched = schedule.to_vec();
    sched.sort_unstable();
    sched.dedup();
    let steps: Vec<IndexStep> = sched
        .iter()
        .map(|&n| {
            let (kernel, g1) = null_count(d, n, sv_tol);
            let (cokernel, g2) = null_count(&Adjoint(d), n, sv_tol);
            IndexStep {
                cutoff: n,
                kernel,
                cokernel,
                index: kernel as i64 - cokernel as i64,
                gap: g1.min(g2),
            }
        })
        .collect();
    let index = steps.last().map(|s| s.index).unwrap_or(0);
    let tail = &steps[steps.len().saturating_sub(3)..];
    let stable = tail.len() == 3 && tail.iter().all(|s| s.index == index && s.gap >= MIN_GAP);
    IndexEstimate {
        index,
        steps,
        sv_tol,
        stable,
        symbol_verdict: None,
    }
}

/// Stabilized index; fails with [`WorkbenchError::Unstable`] rather than
/// return an integer the history does not support.
pub fn numerical_index<T: ModeOperator + ?Sized>(d: &T, schedule: &[usize], sv_tol: f64) -> Result<IndexEstimate> {
    let est = index_history(d, schedule, sv_tol);
    if !est.stable {
        let detail: Vec<String> = est
            .steps
            .iter()
            .map(|s| format!("N={}: {} (gap {:.1e})", s.cutoff, s.index, s.gap))
            .collect();
        return Err(WorkbenchError::Unstable(detail.join(", ")));
    }
    Ok(est)
}

/// [`index_history`] with the symbol verdict attached.
pub fn checked_index(d: &ShiftOperator, schedule: &[usize], sv_tol: f64, elliptic_tol: f64) -> IndexEstimate {
    let verdict = is_elliptic(&symbol_of(d), elliptic_tol).verdict;
    let mut est = index_history(d, schedule, sv_tol);
    est.symbol_verdict = Some(verdict);
    if verdict != Verdict::Elliptic {
        est.stable = false;
    }
    est
}
