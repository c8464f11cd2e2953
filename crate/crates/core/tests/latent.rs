//! PCA basis fitting: orthonormality, subspace recovery measured by
//! principal angles, explained-variance ordering, and projection
//! round-trips.

use approx::assert_relative_eq;
use ndarray::{Array1, Array2, Axis};
use ndarray_linalg::SVD;
use rand::Rng;

use romda::grid_obs::GridSpec;
use romda::latent::fit_basis;
use romda::rng::chacha_stream;
use romda::Error;

type Grid = GridSpec<f64>;

fn test_grid() -> Grid {
    Grid::with_dims(6, 5, 4)
}

// Random orthonormal d x r frame from a seeded Gaussian draw + QR by
// classical Gram-Schmidt (test-local, independent of the crate's MGS).
fn random_frame(d: usize, r: usize, seed: u64) -> Array2<f64> {
    let mut rng = chacha_stream(seed, 0);
    let mut q = Array2::<f64>::zeros((d, r));
    for j in 0..r {
        let mut v = Array1::from_iter((0..d).map(|_| rng.random_range(-1.0..1.0)));
        for k in 0..j {
            let proj = q.column(k).dot(&v);
            v = v - proj * &q.column(k).to_owned();
        }
        let norm = v.dot(&v).sqrt();
        q.column_mut(j).assign(&(v / norm));
    }
    q
}

// Low-rank snapshot matrix mu + L z with decaying latent amplitudes.
fn synthetic_snapshots(grid: &Grid, r_true: usize, m: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
    let d = grid.d();
    let lift = random_frame(d, r_true, seed);
    let mut rng = chacha_stream(seed, 1);
    let mut snaps = Array2::<f64>::zeros((d, m));
    for k in 0..m {
        let z = Array1::from_iter(
            (0..r_true).map(|i| rng.random_range(-1.0..1.0) * 10.0 / (i + 1) as f64),
        );
        let col = lift.dot(&z) + 5.0;
        snaps.column_mut(k).assign(&col);
    }
    (snaps, lift)
}

// Largest principal angle between the column spaces of two orthonormal
// frames, via the sine formulation ||(I - A A') B||_2, which stays accurate
// for angles far below sqrt(machine epsilon) where acos saturates.
fn max_principal_angle(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let residual = b - &a.dot(&a.t().dot(b));
    let (_, s, _) = residual.svd(false, false).unwrap();
    let smax = s.iter().cloned().fold(0.0f64, f64::max);
    smax.min(1.0).asin()
}

#[test]
fn recovers_lift_subspace_of_noise_free_data() {
    let grid = test_grid();
    let (snaps, lift) = synthetic_snapshots(&grid, 4, 40, 11);
    let basis = fit_basis(snaps.view(), 4, grid).unwrap();
    let angle = max_principal_angle(&basis.w, &lift);
    assert!(angle < 1e-8, "principal angle {angle} too large");
}

#[test]
fn columns_are_orthonormal() {
    let grid = test_grid();
    let (snaps, _) = synthetic_snapshots(&grid, 5, 30, 3);
    let basis = fit_basis(snaps.view(), 5, grid).unwrap();
    let gram = basis.w.t().dot(&basis.w);
    for i in 0..5 {
        for j in 0..5 {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((gram[(i, j)] - want).abs() < 1e-12, "W'W[{i},{j}] = {}", gram[(i, j)]);
        }
    }
}

#[test]
fn mean_field_is_column_mean() {
    let grid = test_grid();
    let (snaps, _) = synthetic_snapshots(&grid, 3, 20, 5);
    let basis = fit_basis(snaps.view(), 3, grid).unwrap();
    let mu = snaps.mean_axis(Axis(1)).unwrap();
    for i in 0..mu.len() {
        assert_relative_eq!(basis.mu0[i], mu[i], max_relative = 1e-12);
    }
}

#[test]
fn explained_fractions_are_sorted_and_bounded() {
    let grid = test_grid();
    let (snaps, _) = synthetic_snapshots(&grid, 6, 50, 8);
    let basis = fit_basis(snaps.view(), 6, grid).unwrap();
    assert_eq!(basis.explained.len(), 6);
    let total: f64 = basis.explained.iter().sum();
    assert!(total <= 1.0 + 1e-12);
    assert!(total > 0.99, "six modes must capture a rank-6 signal, got {total}");
    for pair in basis.explained.windows(2) {
        assert!(pair[0] >= pair[1] - 1e-15, "explained fractions must be non-increasing");
    }
}

#[test]
fn projection_roundtrip_is_exact_in_subspace() {
    let grid = test_grid();
    let (snaps, _) = synthetic_snapshots(&grid, 4, 25, 21);
    let basis = fit_basis(snaps.view(), 4, grid).unwrap();
    // Any training snapshot lies in the affine span: project then
    // reconstruct must return it.
    for k in [0usize, 7, 24] {
        let x = snaps.column(k).to_owned();
        let z = basis.project(x.view()).unwrap();
        let back = basis.reconstruct(z.view()).unwrap();
        for i in 0..x.len() {
            assert!((back[i] - x[i]).abs() < 1e-9, "component {i} off by {}", back[i] - x[i]);
        }
    }
}

#[test]
fn project_series_matches_columnwise_project() {
    let grid = test_grid();
    let (snaps, _) = synthetic_snapshots(&grid, 3, 15, 2);
    let basis = fit_basis(snaps.view(), 3, grid).unwrap();
    let series = basis.project_series(snaps.view()).unwrap();
    assert_eq!(series.dim(), (3, 15));
    for k in 0..15 {
        let z = basis.project(snaps.column(k)).unwrap();
        for i in 0..3 {
            assert_relative_eq!(series[(i, k)], z[i], max_relative = 1e-12);
        }
    }
}

#[test]
fn latent_scale_matches_gram_eigenvalues() {
    // Latent training series variance equals the PCA eigenvalue: the std of
    // mode i is sqrt(lambda_i / (m - 1)) times sqrt(m - 1), i.e. projecting
    // the centered data onto mode i gives sum of squares lambda_i.
    let grid = test_grid();
    let (snaps, _) = synthetic_snapshots(&grid, 3, 30, 17);
    let basis = fit_basis(snaps.view(), 3, grid).unwrap();
    let z = basis.project_series(snaps.view()).unwrap();
    let total_sq: f64 = {
        let mu = snaps.mean_axis(Axis(1)).unwrap();
        let mut acc = 0.0;
        for col in snaps.axis_iter(Axis(1)) {
            let c = &col - &mu;
            acc += c.dot(&c);
        }
        acc
    };
    for i in 0..3 {
        let row = z.row(i);
        let ss: f64 = row.dot(&row);
        assert_relative_eq!(ss / total_sq, basis.explained[i], max_relative = 1e-9);
    }
}

#[test]
fn rank_larger_than_data_is_an_error() {
    let grid = test_grid();
    let (snaps, _) = synthetic_snapshots(&grid, 2, 5, 1);
    assert!(matches!(
        fit_basis(snaps.view(), 6, grid.clone()),
        Err(Error::RankTooLarge { r: 6, max: 5 })
    ));
    assert!(matches!(
        fit_basis(snaps.view(), 0, grid),
        Err(Error::InsufficientData(_))
    ));
}

#[test]
fn rank_beyond_signal_rank_is_degenerate() {
    let grid = test_grid();
    let (snaps, _) = synthetic_snapshots(&grid, 2, 20, 4);
    // Signal rank is 2; asking for 4 modes must fail loudly, not return
    // noise directions.
    assert!(matches!(
        fit_basis(snaps.view(), 4, grid),
        Err(Error::DegenerateData(_))
    ));
}

#[test]
fn constant_snapshots_are_degenerate() {
    let grid = test_grid();
    let snaps = Array2::<f64>::from_elem((grid.d(), 8), -11.5);
    assert!(matches!(
        fit_basis(snaps.view(), 1, grid),
        Err(Error::DegenerateData(_))
    ));
}

#[test]
fn nonfinite_snapshots_are_rejected() {
    let grid = test_grid();
    let (mut snaps, _) = synthetic_snapshots(&grid, 2, 10, 6);
    snaps[(3, 4)] = f64::NAN;
    assert!(matches!(
        fit_basis(snaps.view(), 2, grid),
        Err(Error::NonFinite(_))
    ));
}

#[test]
fn grid_dimension_mismatch_is_rejected() {
    let grid = test_grid();
    let snaps = Array2::<f64>::zeros((7, 10));
    assert!(matches!(
        fit_basis(snaps.view(), 2, grid),
        Err(Error::DimensionMismatch(_))
    ));
}
