use proptest::prelude::*;
use regpd::graph::{
    barbell, erdos_renyi, lattice8, laplacian_weights, lazy_metropolis, watts_strogatz, ConsensusMatrix, GraphTopology,
};

/// Cyclic Jacobi eigenvalue iteration for a symmetric matrix.
#[allow(clippy::needless_range_loop)]
fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

fn sigma2_oracle(w: &ConsensusMatrix) -> f64 {
    let n = w.n();
    let rows = (0..n).map(|i| (0..n).map(|j| w.get(i, j)).collect()).collect();
    let mut s: Vec<f64> = jacobi_eigenvalues(rows).into_iter().map(f64::abs).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s[1]
}

fn assert_valid_mixing(w: &ConsensusMatrix, g: &GraphTopology, dominant: bool) {
    let n = w.n();
    assert_eq!(n, g.n());
    for i in 0..n {
        let row: f64 = (0..n).map(|j| w.get(i, j)).sum();
        let col: f64 = (0..n).map(|j| w.get(j, i)).sum();
        assert!((row - 1.0).abs() <= 1e-12, "row {i} sums to {row}");
        assert!((col - 1.0).abs() <= 1e-12, "column {i} sums to {col}");
        let mut off = 0.0;
        for j in 0..n {
            let v = w.get(i, j);
            assert!(v >= 0.0);
            if i != j {
                assert_eq!(v > 0.0, g.has_edge(i, j), "support mismatch at ({i},{j})");
                assert_eq!(v, w.get(j, i));
                off += v;
            }
        }
        if dominant {
            assert!(w.get(i, i) >= off - 1e-15, "row {i} not diagonally dominant");
        }
    }
}

fn family_graph(family: u8, size: usize, seed: u64) -> GraphTopology {
    match family {
        0 => {
            let n = size.max(8);
            let k = (2 * (1 + seed as usize % 4)).min((n - 2) & !1);
            watts_strogatz(n, k, 0.1, seed).unwrap()
        }
        1 => {
            let n = size.max(4);
            let p = (3.0 * (n as f64).ln() / n as f64).min(1.0);
            erdos_renyi(n, p, seed).unwrap()
        }
        2 => {
            let rows = 2 + seed as usize % 5;
            lattice8(rows, (size / rows).max(2)).unwrap()
        }
        _ => {
            let n = 2 * (size / 2).max(2);
            barbell(n, 1 + seed as usize % (n / 2)).unwrap()
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mixing_matrices_are_doubly_stochastic_on_the_graph(family in 0u8..4, size in 4usize..120, seed in 0u64..1000) {
        let g = family_graph(family, size, seed);
        assert_valid_mixing(&lazy_metropolis(&g), &g, true);
        assert_valid_mixing(&laplacian_weights(&g).unwrap(), &g, false);
    }

    #[test]
    fn sigma2_matches_jacobi_oracle(family in 0u8..4, size in 4usize..50, seed in 0u64..1000) {
        let g = family_graph(family, size, seed);
        for w in [lazy_metropolis(&g), laplacian_weights(&g).unwrap()] {
            let oracle = sigma2_oracle(&w);
            prop_assert!((w.sigma2() - oracle).abs() <= 1e-9, "{} vs {}", w.sigma2(), oracle);
            prop_assert!(w.sigma2() < 1.0);
        }
    }

    #[test]
    fn lazy_metropolis_gap_is_within_71_n_squared(family in 0u8..4, size in 4usize..200, seed in 0u64..1000) {
        let g = family_graph(family, size, seed);
        let w = lazy_metropolis(&g);
        let n = g.n() as f64;
        prop_assert!(1.0 / w.spectral_gap() <= 71.0 * n * n);
    }

    #[test]
    fn generators_are_deterministic(n in 10usize..80, seed in 0u64..1000) {
        prop_assert_eq!(watts_strogatz(n, 4, 0.3, seed).unwrap(), watts_strogatz(n, 4, 0.3, seed).unwrap());
        prop_assert_eq!(erdos_renyi(n, 0.3, seed).unwrap(), erdos_renyi(n, 0.3, seed).unwrap());
    }
}

#[test]
fn jacobi_oracle_on_a_known_spectrum() {
    let a = vec![vec![2.0, 1.0], vec![1.0, 2.0]];
    let mut e = jacobi_eigenvalues(a);
    e.sort_by(f64::total_cmp);
    assert!((e[0] - 1.0).abs() < 1e-14 && (e[1] - 3.0).abs() < 1e-14);
}

#[test]
fn complete_graph_laplacian_weights_average_in_one_step() {
    let g = GraphTopology::from_edges(5, (0..5).flat_map(|i| (i + 1..5).map(move |j| (i, j)))).unwrap();
    let w = laplacian_weights(&g).unwrap();
    for i in 0..5 {
        for j in 0..5 {
            assert!((w.get(i, j) - 0.2).abs() < 1e-15);
        }
    }
    assert!(w.sigma2() < 1e-12);
}

#[test]
fn default_graph_has_the_expected_shape() {
    let g = watts_strogatz(100, 20, 0.02, 7).unwrap();
    assert_eq!(g.edge_count(), 1000);
    assert!(g.degrees().iter().all(|&d| d >= 1));
}
