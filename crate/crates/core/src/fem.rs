//! Equidistant linear Lagrange elements on `Ω = (0, 1)` and the forward map
//! of the Neumann problem `−ρ y'' + y = u`.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::check_len;
use crate::{Error, NodalVector, Result};

/// Uniform grid `0 = x_1 < … < x_N = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh1D {
    nodes: Vec<f64>,
    h: f64,
}

impl Mesh1D {
    pub fn new(n_nodes: usize) -> Result<Self> {
        if n_nodes < 2 {
            return Err(Error::InvalidArgument(format!(
                "a mesh needs at least 2 nodes, got {n_nodes}"
            )));
        }
        let n_el = (n_nodes - 1) as f64;
        let nodes = (0..n_nodes).map(|j| j as f64 / n_el).collect();
        Ok(Self { nodes, h: 1.0 / n_el })
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_elements(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Element width.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Length of the domain.
    pub fn measure(&self) -> f64 {
        1.0
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(&self, f: impl Fn(f64) -> f64) -> NodalVector {
        NodalVector::from_iterator(self.n_nodes(), self.nodes.iter().map(|&x| f(x)))
    }

    /// Value of the `i`-th hat function at `x ∈ [0, 1]`.
    pub fn hat(&self, i: usize, x: f64) -> f64 {
        (1.0 - (x - self.nodes[i]).abs() / self.h).max(0.0)
    }
}

/// Mass and stiffness matrices together with the factorized Helmholtz
/// operator `ρK + M`.
#[derive(Debug, Clone)]
pub struct ForwardSystem {
    mesh: Mesh1D,
    rho: f64,
    mass: DMatrix<f64>,
    stiffness: DMatrix<f64>,
    helmholtz: Cholesky<f64, Dyn>,
}

impl ForwardSystem {
    /// Assemble consistent P1 mass and stiffness; Neumann conditions are
    /// natural, so no boundary rows are touched.
    pub fn assemble(mesh: &Mesh1D, rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidArgument(format!("rho must be positive, got {rho}")));
        }
        let n = mesh.n_nodes();
        let h = mesh.h();
        let mut mass = DMatrix::zeros(n, n);
        let mut stiffness = DMatrix::zeros(n, n);
        let local_mass = [[h / 3.0, h / 6.0], [h / 6.0, h / 3.0]];
        let local_stiff = [[1.0 / h, -1.0 / h], [-1.0 / h, 1.0 / h]];
        for e in 0..mesh.n_elements() {
            for a in 0..2 {
                for b in 0..2 {
                    mass[(e + a, e + b)] += local_mass[a][b];
                    stiffness[(e + a, e + b)] += local_stiff[a][b];
                }
            }
        }
        let helmholtz = Cholesky::new(&stiffness * rho + &mass)
            .ok_or(Error::Factorization("rho*K + M is not positive definite"))?;
        Ok(Self {
            mesh: mesh.clone(),
            rho,
            mass,
            stiffness,
            helmholtz,
        })
    }

    pub fn mesh(&self) -> &Mesh1D {
        &self.mesh
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn mass(&self) -> &DMatrix<f64> {
        &self.mass
    }

    pub fn stiffness(&self) -> &DMatrix<f64> {
        &self.stiffness
    }

    pub fn n(&self) -> usize {
        self.mesh.n_nodes()
    }

    /// `y = S u`, i.e. the solution of `(ρK + M) y = M u`.
    pub fn apply_forward(&self, u: &NodalVector) -> Result<NodalVector> {
        check_len(self.n(), u.len())?;
        Ok(self.helmholtz.solve(&(&self.mass * u)))
    }

    /// Column-wise forward map of a matrix of nodal vectors.
    pub fn apply_forward_matrix(&self, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_len(self.n(), u.nrows())?;
        Ok(self.helmholtz.solve(&(&self.mass * u)))
    }

    /// Explicit forward matrix `S = (ρK + M)⁻¹ M`.
    pub fn forward_matrix(&self) -> DMatrix<f64> {
        self.helmholtz.solve(&self.mass)
    }

    /// `L²(Ω)` inner product `uᵀ M v`.
    pub fn l2_inner(&self, u: &NodalVector, v: &NodalVector) -> Result<f64> {
        check_len(self.n(), u.len())?;
        check_len(self.n(), v.len())?;
        Ok((&self.mass * v).dot(u))
    }

    pub fn l2_norm_sq(&self, u: &NodalVector) -> Result<f64> {
        self.l2_inner(u, u)
    }

    /// Mean of `u` with respect to the `L²` inner product.
    pub fn mean(&self, u: &NodalVector) -> Result<f64> {
        let one = NodalVector::from_element(self.n(), 1.0);
        Ok(self.l2_inner(u, &one)? / self.mesh.measure())
    }
}
