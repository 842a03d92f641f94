use super::*;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(n: usize, dim: usize, center: &[f64], scale: f64, seed: u64) -> Vec<f64> {
    let mut rng = seed::rng(seed);
    (0..n)
        .flat_map(|_| {
            (0..dim)
                .map(|d| center[d] + scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect::<Vec<f64>>()
        })
        .collect()
}

fn clusters(centers: &[[f64; 2]], per: usize, seed: u64) -> DMatrix<f64> {
    let mut data = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        data.extend(gaussian(per, 2, center, 1.0, seed + c as u64));
    }
    DMatrix::from_row_slice(centers.len() * per, 2, &data)
}

fn naive_ll(m: &GmmModel, x: &[f64]) -> f64 {
    let mut total = 0.0;
    for j in 0..m.n_components() {
        let mut dens = m.weights()[j];
        for (d, &xd) in x.iter().enumerate() {
            let var = m.variance(j, d);
            dens *= (-(xd - m.means()[(j, d)]).powi(2) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt();
        }
        total += dens;
    }
    total.ln()
}

fn random_model(k: usize, dim: usize, cov: CovarianceType, seed: u64) -> GmmModel {
    let mut rng = seed::rng(seed);
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let weights = raw.iter().map(|w| w / s).collect();
    let means = DMatrix::from_fn(k, dim, |_, _| rng.random_range(-2.0..2.0));
    let cols = if cov == CovarianceType::Diagonal { dim } else { 1 };
    let variances = DMatrix::from_fn(k, cols, |_, _| rng.random_range(0.3..2.0));
    GmmModel::new(cov, weights, means, variances).unwrap()
}

#[test]
fn single_spherical_component_is_closed_form() {
    let flat = gaussian(500, 3, &[1.0, -2.0, 0.5], 1.5, 3);
    let x = DMatrix::from_row_slice(500, 3, &flat);
    let m = fit_gmm(&x, 1, CovarianceType::Spherical, 0, &EmParams::default()).unwrap();
    let mean = x.row_mean();
    let mut var = 0.0;
    for i in 0..500 {
        var += (x.row(i) - &mean).norm_squared();
    }
    var /= 1500.0;
    for d in 0..3 {
        assert!((m.means()[(0, d)] - mean[d]).abs() < 1e-9);
    }
    assert!((m.variances()[(0, 0)] - var).abs() < 1e-9);
    assert!((m.weights()[0] - 1.0).abs() < 1e-12);
}

#[test]
fn single_diagonal_component_is_closed_form() {
    let flat = gaussian(300, 2, &[0.0, 5.0], 2.0, 4);
    let x = DMatrix::from_row_slice(300, 2, &flat);
    let m = fit_gmm(&x, 1, CovarianceType::Diagonal, 0, &EmParams::default()).unwrap();
    for d in 0..2 {
        let col = x.column(d);
        let mu = col.mean();
        let var = col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 300.0;
        assert!((m.means()[(0, d)] - mu).abs() < 1e-9);
        assert!((m.variances()[(0, d)] - var).abs() < 1e-9);
    }
}

#[test]
fn two_clusters_are_recovered() {
    let mut data = gaussian(300, 2, &[-10.0, 0.0], 1.0, 1);
    data.extend(gaussian(100, 2, &[10.0, 0.0], 1.0, 2));
    let x = DMatrix::from_row_slice(400, 2, &data);
    let m = fit_gmm(&x, 2, CovarianceType::Diagonal, 11, &EmParams::default()).unwrap();
    let (left, right) = if m.means()[(0, 0)] < 0.0 { (0, 1) } else { (1, 0) };
    assert!((m.means()[(left, 0)] + 10.0).abs() < 0.2);
    assert!((m.means()[(right, 0)] - 10.0).abs() < 0.3);
    assert!((m.weights()[left] - 0.75).abs() < 1e-6);
    assert!((m.weights()[right] - 0.25).abs() < 1e-6);
}

#[test]
fn repeated_point_hits_variance_floor() {
    let x = DMatrix::from_row_slice(5, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
    for cov in [CovarianceType::Spherical, CovarianceType::Diagonal] {
        let m = fit_gmm(&x, 1, cov, 0, &EmParams::default()).unwrap();
        assert!(m.variances().iter().all(|&v| v == VARIANCE_FLOOR));
        let ll = m.log_likelihood(&[1.0, 2.0]).unwrap();
        assert!(ll.is_finite());
    }
}

#[test]
fn standard_normal_density_at_mode() {
    let m = GmmModel::new(
        CovarianceType::Diagonal,
        vec![1.0],
        DMatrix::zeros(1, 2),
        DMatrix::from_element(1, 2, 1.0),
    )
    .unwrap();
    let expected = -(2.0 * PI).ln();
    assert!((m.log_likelihood(&[0.0, 0.0]).unwrap() - expected).abs() < 1e-12);
    assert!((expected + 1.837877).abs() < 1e-6);
    let batch = m.score_samples(&DMatrix::zeros(1, 2)).unwrap();
    assert!((batch[0] - expected).abs() < 1e-12);
}

#[test]
fn log_sum_exp_edge_cases() {
    assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
    assert!((log_sum_exp(&[0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
    assert!((log_sum_exp(&[-1000.0, -1000.0]) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
    assert!((log_sum_exp(&[1000.0, f64::NEG_INFINITY]) - 1000.0).abs() < 1e-12);
}

#[test]
fn too_many_components_and_bad_input() {
    let x = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]);
    assert!(matches!(
        fit_gmm(&x, 4, CovarianceType::Spherical, 0, &EmParams::default()),
        Err(Error::TooManyComponents {
            components: 4,
            samples: 3
        })
    ));
    assert!(fit_gmm(&x, 0, CovarianceType::Spherical, 0, &EmParams::default()).is_err());
    let bad = DMatrix::from_row_slice(2, 1, &[0.0, f64::NAN]);
    assert!(matches!(
        fit_gmm(&bad, 1, CovarianceType::Spherical, 0, &EmParams::default()),
        Err(Error::NonFinite { row: 1, column: 0 })
    ));
}

#[test]
fn blob_round_trip() {
    for cov in [CovarianceType::Spherical, CovarianceType::Diagonal] {
        let m = random_model(3, 4, cov, 9);
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..4], GMM_MAGIC);
        assert_eq!(GmmModel::from_bytes(&bytes).unwrap(), m);
        assert!(GmmModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}

#[test]
fn selection_ties_prefer_small_spherical() {
    // Every cell separates perfectly, so all mean D-EERs are zero.
    let bonafide = DMatrix::from_row_slice(40, 2, &gaussian(40, 2, &[0.0, 0.0], 1.0, 5));
    let attack = DMatrix::from_row_slice(40, 2, &gaussian(40, 2, &[100.0, 100.0], 1.0, 6));
    let cfg = SelectionConfig {
        k_grid: vec![1, 2, 4],
        ..SelectionConfig::default()
    };
    let report = cross_validate(&bonafide, &attack, &cfg, None).unwrap();
    assert!(report.grid.iter().all(|c| c.mean_deer == Some(0.0)));
    assert_eq!(report.chosen_components, 1);
    assert_eq!(report.chosen_cov_type, CovarianceType::Spherical);
    assert_eq!(report.grid.len(), 6);
}

#[test]
fn selection_finds_multimodal_structure() {
    // Attacks sit between bonafide clusters: one component covers them.
    let bonafide = clusters(&[[-8.0, 0.0], [8.0, 0.0], [0.0, 12.0]], 80, 21);
    let attack = clusters(&[[0.0, 4.0], [-4.0, 6.0], [4.0, 6.0]], 40, 31);
    let cfg = SelectionConfig {
        k_grid: vec![1, 2, 4, 8],
        seed: 3,
        ..SelectionConfig::default()
    };
    let (model, report) = select_gmm(&bonafide, &attack, &cfg).unwrap();
    assert!(report.chosen_components >= 3, "{report:?}");
    assert_eq!(model.n_components(), report.chosen_components);
    let one = report.cell(1, CovarianceType::Spherical).unwrap().mean_deer.unwrap();
    let chosen = report
        .cell(report.chosen_components, report.chosen_cov_type)
        .unwrap()
        .mean_deer
        .unwrap();
    assert!(chosen < one);
}

#[test]
fn selection_without_attacks_falls_back() {
    let bonafide = DMatrix::from_row_slice(20, 2, &gaussian(20, 2, &[0.0, 0.0], 1.0, 8));
    let attack = DMatrix::zeros(0, 2);
    let (model, report) = select_gmm(&bonafide, &attack, &SelectionConfig::default()).unwrap();
    assert!(report.fallback.is_some());
    assert_eq!(model.n_components(), 1);
    assert_eq!(model.cov_type(), CovarianceType::Spherical);
}

#[test]
fn selection_rejects_tiny_attack_sets() {
    let bonafide = DMatrix::from_row_slice(20, 2, &gaussian(20, 2, &[0.0, 0.0], 1.0, 8));
    let attack = DMatrix::from_row_slice(2, 2, &[5.0, 5.0, 6.0, 6.0]);
    assert!(matches!(
        cross_validate(&bonafide, &attack, &SelectionConfig::default(), None),
        Err(Error::InsufficientSamples { needed: 4, got: 2 })
    ));
}

#[test]
fn oversized_cells_are_skipped() {
    let bonafide = DMatrix::from_row_slice(12, 2, &gaussian(12, 2, &[0.0, 0.0], 1.0, 8));
    let attack = DMatrix::from_row_slice(8, 2, &gaussian(8, 2, &[9.0, 0.0], 1.0, 9));
    let report = cross_validate(&bonafide, &attack, &SelectionConfig::default(), None).unwrap();
    let big = report.cell(16, CovarianceType::Diagonal).unwrap();
    assert!(big.skipped.is_some() && big.mean_deer.is_none());
    assert!(report.chosen_components <= 9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn batched_matches_naive(k in 1usize..4, dim in 1usize..5, diag in any::<bool>(), seed in any::<u64>()) {
        let cov = if diag { CovarianceType::Diagonal } else { CovarianceType::Spherical };
        let m = random_model(k, dim, cov, seed);
        let mut rng = seed::rng(seed ^ 1);
        let x = DMatrix::from_fn(10, dim, |_, _| rng.random_range(-3.0..3.0));
        let batch = m.score_samples(&x).unwrap();
        for i in 0..10 {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            let naive = naive_ll(&m, &row);
            prop_assert!((m.log_likelihood(&row).unwrap() - naive).abs() < 1e-10);
            prop_assert!((batch[i] - naive).abs() < 1e-9 * (1.0 + naive.abs()));
        }
    }

    #[test]
    fn em_is_monotone(k in 1usize..6, diag in any::<bool>(), seed in any::<u64>()) {
        let cov = if diag { CovarianceType::Diagonal } else { CovarianceType::Spherical };
        let x = clusters(&[[-3.0, 0.0], [3.0, 1.0], [0.0, 4.0]], 30, seed % 1000);
        let fit = fit_gmm_traced(&x, k, cov, seed, &EmParams { tol: 0.0, max_iter: 60 }).unwrap();
        let t = &fit.log_likelihood_trace;
        for i in 1..t.len() {
            if fit.reseeded_at == Some(i) {
                continue;
            }
            prop_assert!(t[i] >= t[i - 1] - 1e-9, "step {} fell {} -> {}", i, t[i - 1], t[i]);
        }
        let s: f64 = fit.model.weights().iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn permutation_invariant_likelihood(seed in any::<u64>()) {
        let m = random_model(3, 2, CovarianceType::Diagonal, seed);
        let order = [2usize, 0, 1];
        let permuted = GmmModel::new(
            CovarianceType::Diagonal,
            order.iter().map(|&j| m.weights()[j]).collect(),
            m.means().select_rows(order.iter()),
            m.variances().select_rows(order.iter()),
        ).unwrap();
        let x = [0.3, -1.2];
        prop_assert!((m.log_likelihood(&x).unwrap() - permuted.log_likelihood(&x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn spherical_equals_expanded_diagonal(seed in any::<u64>()) {
        let m = random_model(3, 3, CovarianceType::Spherical, seed);
        let d = m.to_diagonal();
        let x = [0.5, 1.0, -0.7];
        prop_assert!((m.log_likelihood(&x).unwrap() - d.log_likelihood(&x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn fitting_is_deterministic(seed in any::<u64>()) {
        let x = clusters(&[[0.0, 0.0], [5.0, 5.0]], 20, 4);
        let a = fit_gmm(&x, 3, CovarianceType::Diagonal, seed, &EmParams::default()).unwrap();
        let b = fit_gmm(&x, 3, CovarianceType::Diagonal, seed, &EmParams::default()).unwrap();
        prop_assert_eq!(a.to_bytes(), b.to_bytes());
    }
}
