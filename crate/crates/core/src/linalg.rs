use nalgebra::DMatrix;

use crate::trig::C64;

pub type CMatrix = DMatrix<C64>;

/// Singular values in decreasing order, padded with zeros up to the number
/// of columns so that a wide matrix reports its forced kernel.
pub fn singular_values_padded(m: &CMatrix) -> Vec<f64> {
    let mut sv: Vec<f64> = if m.nrows() == 0 || m.ncols() == 0 {
        Vec::new()
    } else {
        m.clone().singular_values().iter().copied().collect()
    };
    sv.sort_by(|a, b| b.total_cmp(a));
    sv.resize(m.ncols(), 0.0);
    sv
}

/// Smallest singular value of `m` viewed as a map on its column space.
pub fn min_singular_value(m: &CMatrix) -> f64 {
    singular_values_padded(m).last().copied().unwrap_or(0.0)
}

/// Largest singular value by power iteration on `m^H m`.
pub fn max_singular_value(m: &CMatrix, start: &nalgebra::DVector<C64>, iters: usize) -> f64 {
    let mut v = start.clone();
    let n = v.norm();
    if n == 0.0 {
        return 0.0;
    }
    v /= C64::new(n, 0.0);
    let mut est = 0.0;
    for _ in 0..iters {
        let w = m * &v;
        let u = m.adjoint() * &w;
        let nu = u.norm();
        if nu == 0.0 {
            return 0.0;
        }
        est = w.norm();
        v = u / C64::new(nu, 0.0);
    }
    est
}

/// Max-modulus entry norm.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}
