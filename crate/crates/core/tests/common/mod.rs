#![allow(dead_code)]

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::Rng;
use shift_index::group_model::{GroupElement, GroupSpec};
use shift_index::nc_forms::{FormCoeff, Grid, MatField, NCForm};
use shift_index::trig::C64;
use shift_index::workbench::{parse_config, ExperimentConfig};

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn load_config(name: &str) -> ExperimentConfig {
    let path = configs_dir().join(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    parse_config(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Smooth random matrix field with Fourier modes `|n|, |m| ≤ band`.
pub fn random_field(rng: &mut impl Rng, grid: Grid, rank: usize, band: i64) -> MatField {
    let coeffs: Vec<Vec<(i64, i64, C64)>> = (0..rank * rank)
        .map(|_| {
            let mut e = Vec::new();
            for n in -band..=band {
                for m in -band..=band {
                    let v = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) / (1.0 + (n * n + m * m) as f64);
                    e.push((n, m, v));
                }
            }
            e
        })
        .collect();
    MatField::from_fn(grid, rank, |x, b| {
        DMatrix::from_fn(rank, rank, |i, j| {
            coeffs[i * rank + j]
                .iter()
                .map(|(n, m, v)| v * C64::from_polar(1.0, *n as f64 * x + *m as f64 * b))
                .sum()
        })
    })
}

/// Random form with a term at each of `elems`, carrying the given parts.
pub fn random_form(
    rng: &mut impl Rng,
    group: &GroupSpec,
    rank: usize,
    grid: Grid,
    window: Option<usize>,
    elems: &[i64],
    parts: &[usize],
    scale: f64,
) -> NCForm {
    let mut a = NCForm::zero(group.clone(), rank, grid, window);
    for &g in elems {
        let mut w = FormCoeff::zero();
        for &k in parts {
            w.parts[k] = Some(random_field(rng, grid, rank, 3).scale(c(scale)));
        }
        a.insert(GroupElement(g), w);
    }
    a
}
