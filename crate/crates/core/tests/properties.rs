use nalgebra::DMatrix;
use proptest::prelude::*;

use nlreg::datagen::{make_dataset, read_dataset_csv, split_batches, write_dataset_csv, Case, NoiseModel};
use nlreg::fem::{ForwardSystem, Mesh1D};
use nlreg::nonlocal::{Admissible, NonlocalTensor, WeightGrid, WeightVector};
use nlreg::optimizer::{phi_residual, project_box, BoxBounds};
use nlreg::NodalVector;

fn bounds(n: usize) -> BoxBounds {
    let mut lo = vec![0.0; n];
    lo[0] = 0.1;
    BoxBounds::new(lo, vec![10.0; n]).unwrap()
}

proptest! {
    #[test]
    fn projection_is_idempotent_and_feasible(v in prop::collection::vec(-20.0f64..20.0, 1..12)) {
        let b = bounds(v.len());
        let p = project_box(&v, &b);
        prop_assert!(b.contains(&p));
        prop_assert_eq!(project_box(&p, &b), p);
    }

    #[test]
    fn phi_vanishes_iff_first_order_condition(
        x in prop::collection::vec(0.0f64..10.0, 1..8),
        g in prop::collection::vec(-5.0f64..5.0, 8),
        c in 0.1f64..5.0,
    ) {
        let b = bounds(x.len());
        let x = project_box(&x, &b);
        let g = &g[..x.len()];
        let phi = phi_residual(&x, g, &b, c);
        for k in 0..x.len() {
            // Stationary on piece k iff g_k (v − x_k) ≥ 0 for every feasible v.
            let stationary = (g[k] == 0.0)
                || (g[k] > 0.0 && x[k] == b.lower()[k])
                || (g[k] < 0.0 && x[k] == b.upper()[k]);
            prop_assert_eq!(phi[k] == 0.0, stationary, "k={} x={} g={} phi={}", k, x[k], g[k], phi[k]);
        }
    }

    #[test]
    fn weight_bounds_are_enforced(vals in prop::collection::vec(-1.0f64..12.0, 6)) {
        let grid = WeightGrid::uniform(6, 1.0).unwrap();
        let adm = Admissible::new(0.1, 10.0, 0.3).unwrap();
        let b = adm.bounds(&grid);
        let ok = b.contains(&vals);
        prop_assert_eq!(WeightVector::new(grid, vals, adm).is_ok(), ok);
    }

    #[test]
    fn seminorm_is_shift_invariant_and_homogeneous(
        u in prop::collection::vec(-1.0f64..1.0, 7),
        shift in -3.0f64..3.0,
        scale in -2.0f64..2.0,
    ) {
        let mesh = Mesh1D::new(7).unwrap();
        let grid = WeightGrid::uniform(5, 1.0).unwrap();
        let t = NonlocalTensor::assemble(&mesh, &grid, 0.4).unwrap();
        let w = WeightVector::new(grid, vec![0.5, 2.0, 1.0, 7.0, 0.2], Admissible::new(0.1, 10.0, 0.1).unwrap()).unwrap();
        let u = NodalVector::from_vec(u);
        let base = t.seminorm_sq(&w, &u).unwrap();
        let shifted = t.seminorm_sq(&w, &u.add_scalar(shift)).unwrap();
        let scaled = t.seminorm_sq(&w, &(&u * scale)).unwrap();
        prop_assert!(base >= 0.0);
        prop_assert!((shifted - base).abs() <= 1e-12 * (1.0 + base));
        prop_assert!((scaled - scale * scale * base).abs() <= 1e-12 * (1.0 + base));
    }
}

#[test]
fn bands_sum_to_full_range_operator() {
    let mesh = Mesh1D::new(12).unwrap();
    let grid = WeightGrid::uniform(7, 1.0).unwrap();
    let t = NonlocalTensor::assemble(&mesh, &grid, 0.7).unwrap();
    let sum = t.matrices().iter().fold(DMatrix::zeros(12, 12), |acc, a| acc + a);
    let err = (&sum - t.full_range()).amax() / t.full_range().amax();
    assert!(err <= 1e-13, "{err}");
}

/// Poincaré–Wirtinger: `‖u − ū‖² ≤ C |u|²_{H^s}` with a constant that does
/// not blow up under refinement.
#[test]
fn wirtinger_constant_is_mesh_stable() {
    let mut constants = Vec::new();
    for n in [9, 17, 33] {
        let mesh = Mesh1D::new(n).unwrap();
        let grid = WeightGrid::uniform(1, 1.0).unwrap();
        let t = NonlocalTensor::assemble(&mesh, &grid, 0.5).unwrap();
        let fwd = ForwardSystem::assemble(&mesh, 0.1).unwrap();
        let m = fwd.mass();
        // Largest ratio ‖u − ū‖²_M / uᵀAu = 1 / (second generalized eigenvalue).
        let chol = m.clone().cholesky().unwrap();
        let l_inv = chol.l().try_inverse().unwrap();
        let sym = &l_inv * t.full_range() * l_inv.transpose();
        let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        assert!(ev[0].abs() <= 1e-9 * ev[n - 1], "kernel eigenvalue {}", ev[0]);
        assert!(ev[1] > 0.0);
        constants.push(1.0 / ev[1]);

        let u = mesh.interpolate(|x| (3.0 * x).sin() + x * x);
        let mean = fwd.mean(&u).unwrap();
        let dev = fwd.l2_norm_sq(&u.add_scalar(-mean)).unwrap();
        assert!(dev <= constants.last().unwrap() * t.sobolev_seminorm_sq(&u).unwrap() * (1.0 + 1e-12));
    }
    let (lo, hi) = constants
        .iter()
        .fold((f64::MAX, 0.0f64), |(a, b), &c| (a.min(c), b.max(c)));
    assert!(hi / lo < 1.5, "{constants:?}");
}

#[test]
fn datasets_are_pure_functions_of_seed() {
    let mesh = Mesh1D::new(16).unwrap();
    let fwd = ForwardSystem::assemble(&mesh, 0.1).unwrap();
    let a = make_dataset(Case::B, 5, &NoiseModel::default(), &fwd, 42).unwrap();
    let b = make_dataset(Case::B, 5, &NoiseModel::default(), &fwd, 42).unwrap();
    let c = make_dataset(Case::B, 5, &NoiseModel::default(), &fwd, 43).unwrap();
    assert_eq!(a.samples, b.samples);
    assert_ne!(a.samples[0].y_delta, c.samples[0].y_delta);

    let mut buf = Vec::new();
    write_dataset_csv(&a, &mesh, &mut buf).unwrap();
    let back = read_dataset_csv(std::io::Cursor::new(&buf)).unwrap();
    assert_eq!(back.samples, a.samples);
    assert_eq!(back.seed, 42);
}

#[test]
fn noise_is_standard_normal_at_the_dataset_level() {
    let mesh = Mesh1D::new(101).unwrap();
    let fwd = ForwardSystem::assemble(&mesh, 0.1).unwrap();
    let noise = NoiseModel::default();
    let ds = make_dataset(Case::A, 200, &noise, &fwd, 7).unwrap();
    let ymax = ds.samples.iter().map(|s| s.y_true.amax()).fold(0.0, f64::max);
    let level = noise.epsilon * ymax;
    let xi: Vec<f64> = ds
        .samples
        .iter()
        .flat_map(|s| (&s.y_delta - &s.y_true).iter().map(|v| v / level).collect::<Vec<_>>())
        .collect();
    let n = xi.len() as f64;
    assert!(n >= 1e4);
    let mean = xi.iter().sum::<f64>() / n;
    let var = xi.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    assert!(mean.abs() <= 5.0 / n.sqrt(), "mean {mean}");
    assert!((var - 1.0).abs() <= 0.1, "var {var}");
}

#[test]
fn batches_partition_the_samples() {
    let mesh = Mesh1D::new(8).unwrap();
    let fwd = ForwardSystem::assemble(&mesh, 0.1).unwrap();
    let ds = make_dataset(Case::A, 12, &NoiseModel::default(), &fwd, 0).unwrap();
    let b = split_batches(&ds.samples, 4).unwrap();
    assert_eq!(b.len(), 4);
    assert!(b.iter().all(|x| x.len() == 3));
    assert_eq!(b[2][0].sample_id, 6);
    assert!(split_batches(&ds.samples, 5).is_err());
}
