mod common;

use nalgebra::{DMatrix, DVector};
use spindot::experiment::{build_kernel_for, reconstruct_svd};
use spindot::svd::{tsvd_solve, LinearSystem};

#[test]
fn full_rank_matches_ridge_normal_equations() {
    let c = common::small_config();
    let kernel = build_kernel_for(&c).unwrap();
    let x_true = DVector::from_fn(kernel.n_cells(), |i, _| if i % 7 == 3 { 0.1 } else { 0.0 });
    let a = &kernel.k / kernel.delta_mu_a_max;
    let phi = &a * &x_true;
    let system = LinearSystem::new(a.clone(), phi.clone()).unwrap();
    let rank = system.max_rank();
    let sol = tsvd_solve(&system, rank).unwrap();
    let x = DVector::from_column_slice(&sol.x);
    assert!((&a * &x - &phi).norm() <= 1e-8 * phi.norm());

    let aat = &a * a.transpose();
    let ridge = 1e-12 * aat.trace() / rank as f64;
    let y = (aat + DMatrix::identity(rank, rank) * ridge).cholesky().unwrap().solve(&phi);
    let oracle = a.transpose() * y;
    assert!((&x - &oracle).norm() <= 1e-6 * oracle.norm(), "sigma {:?}", sol.singular_values);
}

#[test]
fn zero_data_gives_zero_maps() {
    let c = common::small_config();
    let kernel = build_kernel_for(&c).unwrap();
    let maps = reconstruct_svd(&c, &kernel, &vec![0.0; kernel.n_pairs()]).unwrap();
    assert_eq!(maps.len(), 2);
    assert!(maps.iter().all(|m| m.values.iter().all(|&v| v == 0.0)));
}

#[test]
fn residual_shrinks_with_rank() {
    let c = common::small_config();
    let kernel = build_kernel_for(&c).unwrap();
    let phi: Vec<f64> = (0..kernel.n_pairs()).map(|p| 0.01 * (p as f64 + 1.0).sqrt()).collect();
    let system = LinearSystem::from_kernel(&kernel, &phi).unwrap();
    let mut last = f64::INFINITY;
    for k in 1..=system.max_rank() {
        let x = DVector::from_vec(tsvd_solve(&system, k).unwrap().x);
        let r = (&system.a * x - &system.rhs).norm();
        assert!(r <= last * (1.0 + 1e-9));
        last = r;
    }
}
