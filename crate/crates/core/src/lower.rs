//! The lower-level problem
//!
//! ```text
//! min_u ‖S u − y_δ‖²_{L²} + |u|²_{σ,s}
//! ```
//!
//! solved through its normal equations `(B + L(σ)) u = Sᵀ M y_δ` with
//! `B = Sᵀ M S`. `B` is SPD because `S` is injective, so `B + L(σ)` is SPD for
//! every nonnegative weight.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::check_len;
use crate::fem::ForwardSystem;
use crate::nonlocal::{NonlocalTensor, WeightVector};
use crate::{Error, NodalVector, Result};

/// Weight-independent part of the normal equations, shared by all samples.
#[derive(Debug, Clone)]
pub struct LowerOperator {
    forward: ForwardSystem,
    tensor: NonlocalTensor,
    /// `S = (ρK + M)⁻¹ M`
    forward_matrix: DMatrix<f64>,
    /// `M S`
    mass_forward: DMatrix<f64>,
    /// `B = Sᵀ M S`
    normal: DMatrix<f64>,
}

impl LowerOperator {
    pub fn new(forward: ForwardSystem, tensor: NonlocalTensor) -> Result<Self> {
        check_len(forward.n(), tensor.mesh().n_nodes())?;
        if forward.mesh() != tensor.mesh() {
            return Err(Error::InvalidArgument(
                "forward system and tensor use different meshes".into(),
            ));
        }
        let forward_matrix = forward.forward_matrix();
        let mass_forward = forward.mass() * &forward_matrix;
        let b = forward_matrix.transpose() * &mass_forward;
        let normal = (&b + b.transpose()) * 0.5;
        Ok(Self {
            forward,
            tensor,
            forward_matrix,
            mass_forward,
            normal,
        })
    }

    pub fn forward(&self) -> &ForwardSystem {
        &self.forward
    }

    pub fn tensor(&self) -> &NonlocalTensor {
        &self.tensor
    }

    pub fn n(&self) -> usize {
        self.forward.n()
    }

    /// `B = Sᵀ M S`.
    pub fn normal_matrix(&self) -> &DMatrix<f64> {
        &self.normal
    }

    pub fn forward_matrix(&self) -> &DMatrix<f64> {
        &self.forward_matrix
    }

    /// `Sᵀ M y` for every column of `y`.
    pub fn rhs(&self, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_len(self.n(), y.nrows())?;
        Ok(self.mass_forward.tr_mul(y))
    }

    /// `B + L(σ)` for raw, nonnegative piece values.
    pub fn system_matrix(&self, sigma: &[f64]) -> Result<DMatrix<f64>> {
        if let Some(k) = sigma.iter().position(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Infeasible(format!("weight piece {k} is negative or not finite")));
        }
        Ok(&self.normal + self.tensor.operator_raw(sigma)?)
    }

    /// Cholesky factor of `B + L(σ)`.
    pub fn factor(&self, sigma: &[f64]) -> Result<Cholesky<f64, Dyn>> {
        Cholesky::new(self.system_matrix(sigma)?).ok_or(Error::Factorization("B + L(sigma) is not positive definite"))
    }

    /// `Sᵀ M y_δ` for one measurement, bundled with the operator.
    pub fn system(&self, y_delta: &NodalVector) -> Result<LowerSystem<'_>> {
        check_len(self.n(), y_delta.len())?;
        let rhs_base = self.mass_forward.tr_mul(y_delta);
        Ok(LowerSystem {
            op: self,
            y_delta: y_delta.clone(),
            rhs_base,
        })
    }
}

/// The normal equations of one lower-level problem.
#[derive(Debug, Clone)]
pub struct LowerSystem<'a> {
    op: &'a LowerOperator,
    y_delta: NodalVector,
    rhs_base: NodalVector,
}

impl<'a> LowerSystem<'a> {
    pub fn operator(&self) -> &'a LowerOperator {
        self.op
    }

    pub fn rhs_base(&self) -> &NodalVector {
        &self.rhs_base
    }

    pub fn y_delta(&self) -> &NodalVector {
        &self.y_delta
    }

    /// The unique minimizer `u(σ)`.
    pub fn solve(&self, sigma: &WeightVector) -> Result<NodalVector> {
        self.solve_raw(sigma.values())
    }

    pub fn solve_raw(&self, sigma: &[f64]) -> Result<NodalVector> {
        Ok(self.op.factor(sigma)?.solve(&self.rhs_base))
    }

    /// `‖S u − y_δ‖²_{L²} + uᵀ L(σ) u`.
    pub fn objective(&self, sigma: &WeightVector, u: &NodalVector) -> Result<f64> {
        check_len(self.op.n(), u.len())?;
        let r = &self.op.forward_matrix * u - &self.y_delta;
        let misfit = self.op.forward.l2_norm_sq(&r)?;
        Ok(misfit + self.op.tensor.seminorm_sq(sigma, u)?)
    }

    /// `‖(B + L(σ)) u − Sᵀ M y_δ‖` (Euclidean).
    pub fn residual_norm(&self, sigma: &WeightVector, u: &NodalVector) -> Result<f64> {
        check_len(self.op.n(), u.len())?;
        let a = self.op.system_matrix(sigma.values())?;
        Ok((a * u - &self.rhs_base).norm())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::Mesh1D;
    use crate::nonlocal::{Admissible, WeightGrid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize, s: f64) -> LowerOperator {
        let mesh = Mesh1D::new(n).unwrap();
        let fwd = ForwardSystem::assemble(&mesh, 0.1).unwrap();
        let grid = WeightGrid::uniform(n + 1, 1.0).unwrap();
        let t = NonlocalTensor::assemble(&mesh, &grid, s).unwrap();
        LowerOperator::new(fwd, t).unwrap()
    }

    fn weight(op: &LowerOperator, rng: &mut ChaCha8Rng) -> WeightVector {
        let adm = Admissible::new(0.1, 10.0, 1.0).unwrap();
        let grid = op.tensor().grid().clone();
        let vals = (0..grid.n_pieces()).map(|_| rng.random_range(0.1..10.0)).collect();
        WeightVector::new(grid, vals, adm).unwrap()
    }

    #[test]
    fn normal_matrix_properties() {
        let op = setup(17, 0.4);
        let b = op.normal_matrix();
        assert!((b - b.transpose()).amax() <= 1e-12 * b.amax());
        let one = NodalVector::from_element(17, 1.0);
        assert!(((b * &one).dot(&one) - 1.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let v = NodalVector::from_fn(17, |_, _| rng.random_range(-1.0..1.0));
            let sv = op.forward().apply_forward(&v).unwrap();
            let direct = op.forward().l2_norm_sq(&sv).unwrap();
            assert!(((b * &v).dot(&v) - direct).abs() <= 1e-12 * direct.max(1e-300));
        }
        let sys = op.system(&NodalVector::zeros(17)).unwrap();
        assert_eq!(sys.rhs_base().amax(), 0.0);
        assert!(op.system(&NodalVector::zeros(3)).is_err());
    }

    #[test]
    fn exact_constant_data_is_recovered() {
        let op = setup(17, 0.6);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = NodalVector::from_element(17, 1.7);
        let y = op.forward().apply_forward(&c).unwrap();
        let sys = op.system(&y).unwrap();
        let sigma = weight(&op, &mut rng);
        let u = sys.solve(&sigma).unwrap();
        assert!((&u - &c).amax() < 1e-10);
        // Rounding in uᵀ L u for a constant u of size O(1).
        assert!(sys.objective(&sigma, &u).unwrap().abs() < 1e-11);
        let zero = op.system(&NodalVector::zeros(17)).unwrap().solve(&sigma).unwrap();
        assert_eq!(zero.amax(), 0.0);
    }

    #[test]
    fn solution_matches_lu_and_is_optimal() {
        let op = setup(17, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..3 {
            let sigma = weight(&op, &mut rng);
            let y = NodalVector::from_fn(17, |_, _| rng.random_range(-1.0..1.0));
            let sys = op.system(&y).unwrap();
            let u = sys.solve(&sigma).unwrap();
            assert!(sys.residual_norm(&sigma, &u).unwrap() <= 1e-10 * sys.rhs_base().norm());
            let lu = op
                .system_matrix(sigma.values())
                .unwrap()
                .lu()
                .solve(sys.rhs_base())
                .unwrap();
            assert!((&u - &lu).amax() <= 1e-10 * u.amax());
            let best = sys.objective(&sigma, &u).unwrap();
            assert!(best <= op.forward().l2_norm_sq(&y).unwrap());
            for _ in 0..100 {
                let v = NodalVector::from_fn(17, |_, _| rng.random_range(-1e-3..1e-3));
                assert!(sys.objective(&sigma, &(&u + v)).unwrap() >= best);
            }
        }
    }

    #[test]
    fn negative_weight_is_rejected() {
        let op = setup(9, 0.5);
        let mut sigma = vec![1.0; 10];
        sigma[3] = -0.5;
        assert!(matches!(op.system_matrix(&sigma), Err(Error::Infeasible(_))));
    }
}
