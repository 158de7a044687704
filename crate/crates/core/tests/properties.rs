use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use spikeshift::kernel::{coefficients, coefficients_expanded, GKernel, MomentInputs};
use spikeshift::mp::{self, Spike};
use spikeshift::quantile::{build_grid_covariance, order_statistic, GridSpec};
use spikeshift::rng::stream_rng;
use spikeshift::sim::Histogram;
use spikeshift::spectrum::{centered_sup, eigen_path_with, path_difference_sup, DataMatrix, Solver};

/// `(α, y, t)` with `α` supercritical at `t` by a visible margin.
fn supercritical() -> impl Strategy<Value = (f64, f64, f64)> {
    (0.05f64..0.95, 0.1f64..=1.0, 0.05f64..20.0).prop_map(|(y, t, gap)| (1.0 + (y / t).sqrt() + gap, y, t))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

proptest! {
    #[test]
    fn stieltjes_dual_and_linkage_identities((a, y, t) in supercritical()) {
        let l = mp::phi(a, y, t).unwrap();
        let m = mp::m_stieltjes(a, y, t).unwrap();
        prop_assert!(rel(1.0 / m, t - y - l - l * y * m) < 1e-10);
        let md = mp::m_dual(a, y, t).unwrap();
        prop_assert!(rel(md, -(1.0 - y / t) / l + (y / t) * m) < 1e-10);
        prop_assert!(rel(mp::m1(a, y, t).unwrap(), -1.0 - l * m) < 1e-10);
    }

    #[test]
    fn invert_phi_round_trips((a, y, _t) in supercritical()) {
        let l = mp::phi_n(a, y, 1.0).unwrap();
        prop_assert!(rel(mp::invert_phi(l, y).unwrap(), a) < 1e-10);
    }

    #[test]
    fn phi_is_increasing_in_time((a, y, t) in supercritical(), dt in 0.0f64..0.5) {
        let later = (t + dt).min(1.0);
        prop_assert!(mp::phi(a, y, later).unwrap() >= mp::phi(a, y, t).unwrap());
    }

    #[test]
    fn omega_is_tau_plus_psi_and_matches_expanded(
        (a, y, _) in supercritical(), gap in 0.5f64..5.0, s in 0.3f64..=1.0, t in 0.3f64..=1.0
    ) {
        // both spikes supercritical at the earliest time 0.3
        let a = a.max(1.0 + (y / 0.3).sqrt() + 0.05);
        let k = Spike::new(a + gap, 1).unwrap();
        let kp = Spike::new(a, 2).unwrap();
        let c = coefficients(s, t, &k, &kp, y).unwrap();
        let e = coefficients_expanded(s, t, &k, &kp, y).unwrap();
        prop_assert_eq!(c.omega, c.tau + c.psi);
        prop_assert!((c.omega - e.omega).abs() <= 1e-8 * c.omega.abs().max(1.0));
        prop_assert!((c.theta - e.theta).abs() <= 1e-8 * c.theta.abs().max(1.0));
        let swapped = coefficients(t, s, &kp, &k, y).unwrap();
        prop_assert!(rel(swapped.theta, c.theta) < 1e-12);
    }

    #[test]
    fn kernel_symmetric_and_psd_on_grids(y in 0.1f64..0.9, t0 in 0.1f64..0.5, base in 0.2f64..3.0, points in 2usize..40) {
        let a3 = 1.0 + (y / t0).sqrt() + base;
        let alphas = [a3 + 8.0, a3 + 2.0, a3];
        let g = GKernel::new(&alphas, y, t0, &MomentInputs::gaussian_diagonal(&alphas).unwrap()).unwrap();
        let (s, t) = (t0 + 0.3 * (1.0 - t0), 1.0);
        prop_assert_eq!(g.eval(0, 1, s, t).unwrap(), g.eval(1, 0, t, s).unwrap());
        let grid = GridSpec::uniform(t0, points).unwrap();
        let cov = build_grid_covariance(&g, &grid).unwrap();
        let c = &cov.matrix;
        let max_diag = c.diagonal().max();
        let min_eig = c.symmetric_eigenvalues().min();
        prop_assert!(min_eig >= -1e-8 * max_diag, "{min_eig} vs {max_diag}");
        prop_assert!(c.diagonal().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn order_statistic_monotone_in_level(mut v in prop::collection::vec(-100.0f64..100.0, 1..200), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        v.sort_by(f64::total_cmp);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(order_statistic(&v, lo) <= order_statistic(&v, hi));
    }

    #[test]
    fn histogram_counts_everything(v in prop::collection::vec(-50.0f64..50.0, 1..300), bins in 1usize..50) {
        let h = Histogram::from_values(&v, bins).unwrap();
        prop_assert_eq!(h.counts.iter().sum::<usize>(), v.len());
        prop_assert_eq!(h.edges.len(), bins + 1);
        prop_assert!(h.edges.windows(2).all(|w| w[0] < w[1]));
    }
}

fn gaussian_data(n: usize, scales: &[f64], seed: u64) -> DataMatrix {
    let mut rng = stream_rng(seed, 0);
    let d = scales.len();
    let rows: Vec<f64> = (0..n * d).map(|i| scales[i % d] * rng.sample::<f64, _>(StandardNormal)).collect();
    DataMatrix::new(DMatrix::from_row_slice(n, d, &rows)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn iterative_path_matches_dense(seed in 0u64..1000, n in 30usize..90, d in 20usize..80, k in 1usize..4) {
        let mut scales = vec![1.0; d];
        scales[0] = 3.0;
        scales[1] = 2.0;
        let data = gaussian_data(n, &scales, seed);
        let dense = eigen_path_with(&data, 0.25, k, Solver::Dense).unwrap();
        let iter = eigen_path_with(&data, 0.25, k, Solver::Iterative).unwrap();
        for m in dense.jump_indices() {
            for j in 0..k {
                let (a, b) = (dense.at(m)[j], iter.at(m)[j]);
                prop_assert!((a - b).abs() <= 1e-7 * dense.at(m)[0].max(1.0), "m={m} j={j}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn sup_dominates_every_jump_and_ignores_sign(seed in 0u64..1000, n in 20usize..60) {
        let data = gaussian_data(n, &[3.0, 2.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0], seed);
        let alphas = [9.0, 4.0];
        let y = 6.0 / n as f64;
        let path = eigen_path_with(&data, 0.2, 2, Solver::Auto).unwrap();
        let sup = centered_sup(&path, &alphas, y, 0.2).unwrap();
        for m in path.jump_indices() {
            let t = (m as f64 / n as f64).max(0.2);
            let mut total = 0.0;
            for j in 0..2 {
                let dev = path.at(m)[j] - mp::phi_n(alphas[j], y, t).unwrap();
                let v = n as f64 * dev * dev;
                prop_assert!(v <= sup.per_spike[j].value * (1.0 + 1e-12));
                total += v;
            }
            prop_assert!(total <= sup.sum.value * (1.0 + 1e-12));
        }
        prop_assert!(sup.max.value <= sup.sum.value * (1.0 + 1e-12));
        let neg = eigen_path_with(&data.negated(), 0.2, 2, Solver::Auto).unwrap();
        prop_assert_eq!(centered_sup(&neg, &alphas, y, 0.2).unwrap(), sup);
    }

    #[test]
    fn difference_sup_is_symmetric(seed in 0u64..1000, n in 20usize..50, n0 in 20usize..50) {
        let scales = [3.0, 2.0, 1.0, 1.0, 1.0];
        let a = eigen_path_with(&gaussian_data(n, &scales, seed), 0.3, 2, Solver::Auto).unwrap();
        let b = eigen_path_with(&gaussian_data(n0, &scales, seed + 7), 0.3, 2, Solver::Auto).unwrap();
        let ab = path_difference_sup(&a, &b, 0.3).unwrap();
        let ba = path_difference_sup(&b, &a, 0.3).unwrap();
        // both scale by the first argument's n
        let ratio = n as f64 / n0 as f64;
        prop_assert!(rel(ab.max.value, ratio * ba.max.value) < 1e-12);
        prop_assert!(rel(ab.sum.value, ratio * ba.sum.value) < 1e-12);
        prop_assert!(ab.max.value >= 0.0);
    }
}
