//! Distance-dependent weights and the discrete weighted nonlocal seminorm.
//!
//! A weight `σ` is piecewise constant on a partition of the distance range
//! `(0, d)`. The weighted seminorm of a P1 function `u` is
//!
//! ```text
//! |u|²_{σ,s} = ∬ (u(x) − u(y))² σ(|x − y|) / |x − y|^{1+2s} dx dy
//!            = Σ_k σ_k uᵀ A_k u
//! ```
//!
//! where `A_k` restricts the double integral to the `k`-th distance band.

mod assembly;
pub mod oracle;
mod poly;

pub use assembly::{CheckReport, NonlocalTensor};

use crate::optimizer::BoxBounds;
use crate::{Error, Result};

/// Partition `0 = t_0 < t_1 < … < t_n = d` of the distance range.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightGrid {
    breakpoints: Vec<f64>,
}

impl WeightGrid {
    /// `n_pieces` equal pieces on `(0, diameter)`.
    pub fn uniform(n_pieces: usize, diameter: f64) -> Result<Self> {
        if n_pieces == 0 {
            return Err(Error::InvalidArgument("weight grid needs at least one piece".into()));
        }
        if !(diameter > 0.0 && diameter.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid diameter {diameter}")));
        }
        let mut breakpoints: Vec<f64> = (0..=n_pieces).map(|k| diameter * k as f64 / n_pieces as f64).collect();
        breakpoints[n_pieces] = diameter;
        Ok(Self { breakpoints })
    }

    /// Grid from explicit breakpoints; must start at 0 and increase strictly.
    pub fn from_breakpoints(breakpoints: Vec<f64>) -> Result<Self> {
        if breakpoints.len() < 2 || breakpoints[0] != 0.0 {
            return Err(Error::InvalidArgument(
                "breakpoints must start at 0 and contain at least two entries".into(),
            ));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) || !breakpoints.iter().all(|t| t.is_finite()) {
            return Err(Error::InvalidArgument("breakpoints must increase strictly".into()));
        }
        Ok(Self { breakpoints })
    }

    pub fn n_pieces(&self) -> usize {
        self.breakpoints.len() - 1
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn diameter(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    /// `(t_{k}, t_{k+1})` for zero-based piece `k`.
    pub fn piece(&self, k: usize) -> (f64, f64) {
        (self.breakpoints[k], self.breakpoints[k + 1])
    }

    pub fn widths(&self) -> Vec<f64> {
        self.breakpoints.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn midpoints(&self) -> Vec<f64> {
        self.breakpoints.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }
}

/// Parameters of the admissible set: `0 ≤ σ ≤ γ₂` on `(0, d)` and `σ ≥ γ₁` on
/// `(0, δ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Admissible {
    pub gamma1: f64,
    pub gamma2: f64,
    pub delta: f64,
}

impl Admissible {
    pub fn new(gamma1: f64, gamma2: f64, delta: f64) -> Result<Self> {
        if !(gamma1 > 0.0 && gamma1 <= gamma2 && gamma2.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < gamma1 <= gamma2, got gamma1={gamma1}, gamma2={gamma2}"
            )));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidArgument(format!("delta must be positive, got {delta}")));
        }
        Ok(Self { gamma1, gamma2, delta })
    }

    /// Per-piece bounds on `grid`. A piece is bounded below by `γ₁` whenever
    /// it overlaps `(0, δ)` with positive length.
    pub fn bounds(&self, grid: &WeightGrid) -> BoxBounds {
        let lower = (0..grid.n_pieces())
            .map(|k| if grid.piece(k).0 < self.delta { self.gamma1 } else { 0.0 })
            .collect();
        let upper = vec![self.gamma2; grid.n_pieces()];
        BoxBounds::new(lower, upper).expect("gamma1 <= gamma2 by construction")
    }
}

/// A piecewise-constant weight known to lie in the admissible set.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    grid: WeightGrid,
    values: Vec<f64>,
    admissible: Admissible,
}

impl WeightVector {
    /// Validates `values` against the bounds (with a relative slack of 1e-12).
    pub fn new(grid: WeightGrid, values: Vec<f64>, admissible: Admissible) -> Result<Self> {
        crate::error::check_len(grid.n_pieces(), values.len())?;
        let bounds = admissible.bounds(&grid);
        for (k, &v) in values.iter().enumerate() {
            let lo = bounds.lower()[k];
            let hi = bounds.upper()[k];
            let slack = 1e-12 * hi.max(1.0);
            if !v.is_finite() || v < lo - slack || v > hi + slack {
                return Err(Error::Infeasible(format!("piece {k}: value {v} outside [{lo}, {hi}]")));
            }
        }
        Ok(Self {
            grid,
            values,
            admissible,
        })
    }

    /// Constant weight `σ ≡ value`.
    pub fn constant(grid: WeightGrid, value: f64, admissible: Admissible) -> Result<Self> {
        let n = grid.n_pieces();
        Self::new(grid, vec![value; n], admissible)
    }

    pub fn grid(&self) -> &WeightGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn admissible(&self) -> Admissible {
        self.admissible
    }

    pub fn bounds(&self) -> BoxBounds {
        self.admissible.bounds(&self.grid)
    }

    /// `∫_0^d σ`.
    pub fn integral(&self) -> f64 {
        self.values.iter().zip(self.grid.widths()).map(|(v, w)| v * w).sum()
    }

    /// Evaluate the step function at distance `t`; pieces are closed on the
    /// left.
    pub fn at(&self, t: f64) -> f64 {
        let bp = self.grid.breakpoints();
        let k = bp.partition_point(|&b| b <= t).saturating_sub(1);
        self.values[k.min(self.values.len() - 1)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid() {
        let g = WeightGrid::uniform(4, 1.0).unwrap();
        assert_eq!(g.breakpoints(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(g.widths(), vec![0.25; 4]);
        assert!(WeightGrid::uniform(0, 1.0).is_err());
        assert!(WeightGrid::from_breakpoints(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(WeightGrid::from_breakpoints(vec![0.1, 1.0]).is_err());
    }

    #[test]
    fn bounds_follow_delta() {
        let g = WeightGrid::uniform(4, 1.0).unwrap();
        let adm = Admissible::new(0.1, 10.0, 0.3).unwrap();
        let b = adm.bounds(&g);
        assert_eq!(b.lower(), &[0.1, 0.1, 0.0, 0.0]);
        assert_eq!(b.upper(), &[10.0; 4]);
        let adm = Admissible::new(0.1, 10.0, 1.0).unwrap();
        assert_eq!(adm.bounds(&g).lower(), &[0.1; 4]);
        assert!(Admissible::new(2.0, 1.0, 1.0).is_err());
        assert!(Admissible::new(0.0, 1.0, 1.0).is_err());
        assert!(Admissible::new(0.1, 1.0, 0.0).is_err());
    }

    #[test]
    fn weight_vector_rejects_infeasible() {
        let g = WeightGrid::uniform(4, 1.0).unwrap();
        let adm = Admissible::new(0.1, 10.0, 0.3).unwrap();
        assert!(WeightVector::new(g.clone(), vec![0.1, 0.2, 0.0, 10.0], adm).is_ok());
        assert!(WeightVector::new(g.clone(), vec![0.05, 0.2, 0.0, 1.0], adm).is_err());
        assert!(WeightVector::new(g.clone(), vec![0.1, 0.2, -0.01, 1.0], adm).is_err());
        assert!(WeightVector::new(g.clone(), vec![0.1, 0.2, 0.0, 10.5], adm).is_err());
        assert!(WeightVector::new(g, vec![0.1; 3], adm).is_err());
    }

    #[test]
    fn step_function_lookup() {
        let g = WeightGrid::uniform(4, 1.0).unwrap();
        let adm = Admissible::new(0.1, 10.0, 1.0).unwrap();
        let w = WeightVector::new(g, vec![1.0, 2.0, 3.0, 4.0], adm).unwrap();
        assert_eq!(w.at(0.0), 1.0);
        assert_eq!(w.at(0.3), 2.0);
        assert_eq!(w.at(1.0), 4.0);
        assert!((w.integral() - 2.5).abs() < 1e-15);
    }
}
