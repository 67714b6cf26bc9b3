//! Numerical self-checks: assembly against the quadrature oracle, structural
//! invariants of `L(σ)`, the two-sided seminorm bounds, and the adjoint
//! gradient against finite differences.
//!
//! Each check returns a report with the worst observed quantity and a pass
//! flag against the tolerance it was run with.

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::datagen::{make_dataset, Case, NoiseModel};
use crate::fem::{ForwardSystem, Mesh1D};
use crate::lower::LowerOperator;
use crate::nonlocal::oracle::{oracle_entry, OracleOptions};
use crate::nonlocal::{Admissible, NonlocalTensor, WeightGrid, WeightVector};
use crate::reduced::{ReducedProblem, RegularizerParams};
use crate::{par, NodalVector, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    /// Worst value of the checked quantity (an error or a slack).
    pub worst: f64,
    pub tolerance: f64,
    pub samples: usize,
    pub pass: bool,
}

/// Random admissible weight with values in `[lo, hi] ∩ bounds`.
pub fn random_weight(rng: &mut impl Rng, grid: &WeightGrid, adm: Admissible, lo: f64, hi: f64) -> Result<WeightVector> {
    let b = adm.bounds(grid);
    let vals = (0..grid.n_pieces())
        .map(|k| {
            let a = lo.max(b.lower()[k]);
            let c = hi.min(b.upper()[k]).max(a);
            if c > a {
                rng.random_range(a..=c)
            } else {
                a
            }
        })
        .collect();
    WeightVector::new(grid.clone(), vals, adm)
}

/// Compare every entry of every `A_k` with the oracle. An entry passes if
/// `|a − o| ≤ rel_tol·|o| + abs_floor`.
pub fn oracle_sweep(n_nodes: usize, s: f64, n_pieces: usize, rel_tol: f64, abs_floor: f64) -> Result<CheckOutcome> {
    let mesh = Mesh1D::new(n_nodes)?;
    let grid = WeightGrid::uniform(n_pieces, 1.0)?;
    let tensor = NonlocalTensor::assemble(&mesh, &grid, s)?;
    let opts = OracleOptions {
        abs_tol: 1e-3 * abs_floor,
        rel_tol: 1e-3 * rel_tol,
        ..Default::default()
    };
    let mut jobs = Vec::new();
    for k in 0..n_pieces {
        for i in 0..n_nodes {
            for j in i..n_nodes {
                jobs.push((k, i, j));
            }
        }
    }
    let errs = par::try_map(&jobs, |&(k, i, j)| -> Result<(f64, bool)> {
        let o = oracle_entry(&mesh, grid.piece(k), s, i, j, &opts)?.value;
        let a = tensor.matrices()[k][(i, j)];
        let diff = (a - o).abs();
        let rel = if diff == 0.0 {
            0.0
        } else {
            diff / o.abs().max(abs_floor / rel_tol)
        };
        Ok((rel, diff <= rel_tol * o.abs() + abs_floor))
    })?;
    Ok(CheckOutcome {
        name: format!("assembly_vs_oracle(n_nodes={n_nodes}, s={s}, pieces={n_pieces})"),
        worst: errs.iter().map(|e| e.0).fold(0.0, f64::max),
        tolerance: rel_tol,
        samples: errs.len(),
        pass: errs.iter().all(|e| e.1),
    })
}

/// Symmetry, `L(σ)·1 = 0`, one-dimensional kernel and SPD `B + L(σ)` for
/// random admissible weights. `worst` is the largest relative violation.
pub fn structural_sweep(
    op: &LowerOperator,
    adm: Admissible,
    n_weights: usize,
    seed: u64,
    tol: f64,
) -> Result<CheckOutcome> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let grid = op.tensor().grid().clone();
    let n = op.n();
    let one = NodalVector::from_element(n, 1.0);
    let mut worst: f64 = 0.0;
    let mut pass = true;
    for _ in 0..n_weights {
        let w = random_weight(&mut rng, &grid, adm, 0.0, adm.gamma2)?;
        let l = op.tensor().operator(&w)?;
        let scale = l.amax();
        let asym = (&l - l.transpose()).amax() / scale;
        let null = (&l * &one).amax() / scale;
        let eig = SymmetricEigen::new(l.clone()).eigenvalues;
        let mut ev: Vec<f64> = eig.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        let lam_max = ev[n - 1];
        let psd = (-ev[0] / lam_max).max(0.0);
        let gap_ok = ev[1] > tol * lam_max;
        let spd_ok = op.factor(w.values()).is_ok();
        worst = worst.max(asym).max(null).max(psd);
        pass &= asym <= tol && null <= tol && psd <= tol && gap_ok && spd_ok;
    }
    Ok(CheckOutcome {
        name: format!("structural_invariants(n_nodes={n}, s={})", op.tensor().s()),
        worst,
        tolerance: tol,
        samples: n_weights,
        pass,
    })
}

/// Both seminorm bounds for random `u` and admissible `σ`; `worst` is the
/// smallest relative slack.
pub fn norm_equivalence_sweep(
    tensor: &NonlocalTensor,
    adm: Admissible,
    n_pairs: usize,
    seed: u64,
    tol: f64,
) -> Result<CheckOutcome> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n = tensor.mesh().n_nodes();
    let mut worst = f64::INFINITY;
    for _ in 0..n_pairs {
        let w = random_weight(&mut rng, tensor.grid(), adm, 0.0, adm.gamma2)?;
        let u = NodalVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        worst = worst.min(tensor.check_norm_equivalence(&w, &u)?.min_slack());
    }
    Ok(CheckOutcome {
        name: format!("norm_equivalence(n_nodes={n}, s={})", tensor.s()),
        worst,
        tolerance: -tol,
        samples: n_pairs,
        pass: worst >= -tol,
    })
}

/// Adjoint gradient vs fourth-order central differences on a one-sample
/// objective; `worst` is the largest `‖g_fd − g‖ / ‖g‖`.
pub fn gradient_sweep(op: &LowerOperator, case: Case, n_weights: usize, seed: u64, tol: f64) -> Result<CheckOutcome> {
    let adm = Admissible::new(0.1, 10.0, op.tensor().grid().diameter())?;
    let grid = op.tensor().grid().clone();
    let data = make_dataset(case, 1, &NoiseModel::default(), op.forward(), seed)?;
    let reg = RegularizerParams::new(1e-4, 1e-8, grid.widths())?;
    let problem = ReducedProblem::new(
        op,
        &crate::datagen::Dataset::y_delta_matrix(&data.samples),
        &crate::datagen::Dataset::u_true_matrix(&data.samples),
        reg,
    )?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_add(17));
    let mut worst: f64 = 0.0;
    for _ in 0..n_weights {
        let w = random_weight(&mut rng, &grid, adm, 0.2, 5.0)?;
        let g = problem.gradient(&w)?.grad;
        let x = w.values().to_vec();
        // F is O(1) while single entries of the gradient can be O(1e-6), so
        // small steps lose everything to cancellation; use a wide
        // fourth-order stencil instead.
        let fd = par::map_range(x.len(), |k| -> Result<f64> {
            let h = 1e-3 * x[k];
            let mut p = x.clone();
            let mut at = |t: f64| {
                p[k] = x[k] + t * h;
                problem.value_raw(&p)
            };
            let (f1, fm1, f2, fm2) = (at(1.0)?, at(-1.0)?, at(2.0)?, at(-2.0)?);
            Ok((8.0 * (f1 - fm1) - (f2 - fm2)) / (12.0 * h))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let num: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = g.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst = worst.max(num / den);
    }
    Ok(CheckOutcome {
        name: format!("gradient_fd(case={case}, n_nodes={}, s={})", op.n(), op.tensor().s()),
        worst,
        tolerance: tol,
        samples: n_weights,
        pass: worst <= tol,
    })
}

/// Helper for the sweeps: operator on the default `n_nodes + 1` piece grid.
pub fn default_operator(n_nodes: usize, s: f64, rho: f64) -> Result<LowerOperator> {
    let mesh = Mesh1D::new(n_nodes)?;
    let grid = WeightGrid::uniform(n_nodes + 1, 1.0)?;
    let tensor = NonlocalTensor::assemble(&mesh, &grid, s)?;
    LowerOperator::new(ForwardSystem::assemble(&mesh, rho)?, tensor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_sweeps_pass() {
        let op = default_operator(9, 0.5, 0.1).unwrap();
        let adm = Admissible::new(0.1, 10.0, 1.0).unwrap();
        assert!(structural_sweep(&op, adm, 3, 1, 1e-10).unwrap().pass);
        assert!(norm_equivalence_sweep(op.tensor(), adm, 20, 2, 1e-10).unwrap().pass);
        let g = gradient_sweep(&op, Case::A, 1, 3, 1e-5).unwrap();
        assert!(g.pass, "{g:?}");
    }
}
