//! Brute-force reference values for single band-matrix entries.
//!
//! This path shares nothing with the element-pair assembly beyond the mesh:
//! the double integral is rewritten in the shift `z = x − y` as
//!
//! ```text
//! 2 ∫_{|z| ∈ band, z > 0} z^{−1−2s} G(z) dz,
//! G(z) = ∫_0^{1−z} (φ_i(y+z) − φ_i(y)) (φ_j(y+z) − φ_j(y)) dy,
//! ```
//!
//! `G` is computed exactly (piecewise quadratic in `y`, two-point Gauss per
//! piece) and the outer integral adaptively. On the piece touching `z = 0` the
//! substitution `z = b·w^p` with `p ≥ 2/(1−s)` grades the nodes toward the
//! singularity and leaves an integrand that behaves like `w³` or smoother.

use crate::fem::Mesh1D;
use crate::quadrature::{adaptive, Estimate, Rule};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct OracleOptions {
    pub rule: Rule,
    /// Absolute tolerance on the entry.
    pub abs_tol: f64,
    /// Relative tolerance; the looser of the two is used.
    pub rel_tol: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            rule: Rule::GaussKronrod,
            abs_tol: 1e-12,
            rel_tol: 1e-12,
        }
    }
}

/// Reference value of `(A)_{ij}` restricted to distances in `band`.
pub fn oracle_entry(
    mesh: &Mesh1D,
    band: (f64, f64),
    s: f64,
    i: usize,
    j: usize,
    opts: &OracleOptions,
) -> Result<Estimate> {
    let (t_lo, t_hi) = band;
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::InvalidArgument(format!("order s must lie in (0,1), got {s}")));
    }
    if !(t_lo >= 0.0 && t_lo < t_hi) {
        return Err(Error::InvalidArgument(format!("invalid band ({t_lo}, {t_hi})")));
    }
    let n = mesh.n_nodes();
    if i >= n || j >= n {
        return Err(Error::InvalidArgument(format!("node index out of range: ({i}, {j})")));
    }
    let h = mesh.h();
    let z_lo = t_lo;
    let z_hi = t_hi.min(1.0);
    if z_lo >= z_hi {
        return Ok(Estimate { value: 0.0, error: 0.0 });
    }

    // Split the z-range where G changes polynomial form (multiples of h).
    let mut cuts = vec![z_lo];
    let first = (z_lo / h).floor() as usize + 1;
    for k in first.. {
        let z = k as f64 * h;
        if z >= z_hi * (1.0 - 1e-14) {
            break;
        }
        if z > z_lo * (1.0 + 1e-14) {
            cuts.push(z);
        }
    }
    cuts.push(z_hi);

    let integrand = |z: f64| -> f64 {
        if z <= 0.0 {
            return 0.0;
        }
        2.0 * z.powf(-1.0 - 2.0 * s) * shifted_overlap(mesh, i, j, z)
    };

    // A rough first pass fixes the scale for the relative tolerance.
    let coarse: f64 = cuts
        .windows(2)
        .map(|w| piece_integral(Rule::GaussKronrod, w[0], w[1], s, 1e-6, &integrand))
        .collect::<Result<Vec<_>>>()
        .map(|v| v.iter().map(|e| e.value).sum())
        .unwrap_or(1.0);
    let tol = opts.abs_tol.max(opts.rel_tol * coarse.abs()).max(1e-300);
    let per_piece = tol / (cuts.len() - 1) as f64;

    let mut value = 0.0;
    let mut error = 0.0;
    for w in cuts.windows(2) {
        let est = piece_integral(opts.rule, w[0], w[1], s, per_piece, &integrand)?;
        value += est.value;
        error += est.error;
    }
    Ok(Estimate { value, error })
}

fn piece_integral(rule: Rule, a: f64, b: f64, s: f64, tol: f64, f: &impl Fn(f64) -> f64) -> Result<Estimate> {
    if a > 0.0 {
        return adaptive(rule, a, b, tol, f);
    }
    let p = (2.0 / (1.0 - s)).ceil().max(2.0);
    adaptive(rule, 0.0, 1.0, tol, |w| {
        if w <= 0.0 {
            return 0.0;
        }
        let z = b * w.powf(p);
        f(z) * b * p * w.powf(p - 1.0)
    })
}

/// `G(z)` for `z > 0`, exact up to rounding.
fn shifted_overlap(mesh: &Mesh1D, i: usize, j: usize, z: f64) -> f64 {
    let h = mesh.h();
    let n_el = mesh.n_elements();
    let y_max = 1.0 - z;
    if y_max <= 0.0 {
        return 0.0;
    }
    let mut pts: Vec<f64> = Vec::with_capacity(2 * mesh.n_nodes() + 2);
    pts.push(0.0);
    pts.push(y_max);
    for &x in mesh.nodes() {
        for y in [x, x - z] {
            if y > 0.0 && y < y_max {
                pts.push(y);
            }
        }
    }
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();

    let g = 0.5 / 3f64.sqrt();
    let elem = |x: f64| ((x / h).floor() as usize).min(n_el - 1);
    let mut total = 0.0;
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let mid = 0.5 * (a + b);
        let ey = elem(mid);
        let ez = elem(mid + z);
        let jump = |node: usize, y: f64| -> f64 {
            if ey == ez {
                hat_slope(mesh, node, ey) * z
            } else {
                hat_on(mesh, node, ez, y + z) - hat_on(mesh, node, ey, y)
            }
        };
        let half = 0.5 * (b - a);
        for y in [mid - half * 2.0 * g, mid + half * 2.0 * g] {
            total += half * jump(i, y) * jump(j, y);
        }
    }
    total
}

/// Slope of hat `i` on element `e` (`[x_e, x_{e+1}]`).
fn hat_slope(mesh: &Mesh1D, i: usize, e: usize) -> f64 {
    if i == e + 1 {
        1.0 / mesh.h()
    } else if i == e {
        -1.0 / mesh.h()
    } else {
        0.0
    }
}

/// Hat `i` restricted to element `e`, as a linear function of `x`.
fn hat_on(mesh: &Mesh1D, i: usize, e: usize, x: f64) -> f64 {
    let left = mesh.nodes()[e];
    let at_left = if i == e { 1.0 } else { 0.0 };
    at_left + hat_slope(mesh, i, e) * (x - left)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disjoint_supports_outside_band_vanish() {
        let mesh = Mesh1D::new(9).unwrap();
        // Hats 0 and 8 overlap nothing; for distances below h the cross
        // terms φ_0(x)φ_8(y) cannot contribute either.
        let est = oracle_entry(&mesh, (0.0, 0.1), 0.5, 0, 8, &OracleOptions::default()).unwrap();
        assert_eq!(est.value, 0.0);
    }

    #[test]
    fn symmetric_in_indices() {
        let mesh = Mesh1D::new(9).unwrap();
        let o = OracleOptions::default();
        for (i, j) in [(2, 3), (1, 6), (0, 4)] {
            let a = oracle_entry(&mesh, (0.05, 0.6), 0.3, i, j, &o).unwrap().value;
            let b = oracle_entry(&mesh, (0.05, 0.6), 0.3, j, i, &o).unwrap().value;
            assert!((a - b).abs() <= 1e-13 * a.abs().max(1e-12));
        }
    }

    #[test]
    fn interior_diagonal_is_positive_and_rules_agree() {
        let mesh = Mesh1D::new(9).unwrap();
        let gk = oracle_entry(&mesh, (0.0, 1.0), 0.5, 4, 4, &OracleOptions::default()).unwrap();
        assert!(gk.value > 0.0);
        let simpson = OracleOptions {
            rule: Rule::Simpson,
            abs_tol: 1e-8,
            rel_tol: 1e-8,
        };
        let sp = oracle_entry(&mesh, (0.0, 1.0), 0.5, 4, 4, &simpson).unwrap();
        assert!(
            (gk.value - sp.value).abs() <= 1e-6 * gk.value,
            "{} vs {}",
            gk.value,
            sp.value
        );
    }

    #[test]
    fn rejects_bad_arguments() {
        let mesh = Mesh1D::new(5).unwrap();
        let o = OracleOptions::default();
        assert!(oracle_entry(&mesh, (0.5, 0.2), 0.5, 0, 0, &o).is_err());
        assert!(oracle_entry(&mesh, (0.0, 1.0), 1.0, 0, 0, &o).is_err());
        assert!(oracle_entry(&mesh, (0.0, 1.0), 0.5, 5, 0, &o).is_err());
    }
}
