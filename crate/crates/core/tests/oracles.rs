//! Cross-checks against nalgebra and finite differences.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use subdeq::deq::{build_layer, preset_layer, random_input, LayerPreset};
use subdeq::graph::{
    erdos_renyi, normalized_adjacency, normalized_adjacency_sparse, propagate, random_injection, AdjacencyMode,
    GraphPropagationConfig, Variant,
};
use subdeq::metric::normalize;
use subdeq::numerics::{random_fill, solve_dense, Matrix, PNorm, RngSpec, Sampler};
use subdeq::solver::{solve, SolverConfig};

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

#[test]
fn matmul_and_dense_solve_match_nalgebra() {
    for seed in 0..5 {
        let a = random_fill(7, 5, RngSpec::normal(seed)).unwrap();
        let b = random_fill(5, 4, RngSpec::normal(seed + 100)).unwrap();
        let ours = a.matmul(&b).unwrap();
        let theirs = to_na(&a) * to_na(&b);
        for i in 0..7 {
            for j in 0..4 {
                assert!((ours.get(i, j) - theirs[(i, j)]).abs() < 1e-12);
            }
        }

        let sq = random_fill(6, 6, RngSpec::normal(seed + 200)).unwrap();
        let rhs = random_fill(6, 1, RngSpec::normal(seed + 300)).unwrap().into_vec();
        let x = solve_dense(&sq, &rhs).unwrap();
        let xr = to_na(&sq).lu().solve(&DVector::from_vec(rhs)).unwrap();
        for (u, v) in x.iter().zip(xr.iter()) {
            assert!((u - v).abs() < 1e-9 * (1.0 + v.abs()), "{u} vs {v}");
        }
    }
}

#[test]
fn normalized_fixed_point_is_perron_vector() {
    // z -> Az/|Az|_2 with A symmetric and positive converges to the top eigenvector.
    let n = 12;
    let b = random_fill(n, n, RngSpec::uniform(7)).unwrap();
    let a = Matrix::from_fn(n, n, |i, j| b.get(i, j) + b.get(j, i) + 0.1);
    let p = PNorm::Finite(2.0);
    let r = solve(|z: &[f64]| normalize(&a.matvec(z)?, p), &vec![1.0; n], &SolverConfig::with_tol(1e-13)).unwrap();
    assert!(r.converged);

    let eig = SymmetricEigen::new(to_na(&a));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].abs().total_cmp(&eig.eigenvalues[i].abs()));
    let v = eig.eigenvectors.column(order[0]);
    let sign = v.sum().signum();
    for i in 0..n {
        assert!((r.z_star[i] - sign * v[i]).abs() < 1e-10, "component {i}");
    }
    let ratio = eig.eigenvalues[order[1]].abs() / eig.eigenvalues[order[0]].abs();
    let rate = r.estimated_rate.unwrap();
    assert!((rate - ratio).abs() < 0.05, "rate {rate} vs eigenvalue ratio {ratio}");
}

#[test]
fn sparse_and_dense_adjacency_agree() {
    for mode in [AdjacencyMode::RowStochastic, AdjacencyMode::Symmetric] {
        let g = erdos_renyi(30, 0.2, 3).unwrap();
        let dense = normalized_adjacency(&g, mode);
        let sparse = normalized_adjacency_sparse(&g, mode).to_dense();
        assert_eq!(dense, sparse);
        let na = to_na(&dense);
        match mode {
            AdjacencyMode::RowStochastic => {
                for i in 0..30 {
                    assert!((dense.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
            AdjacencyMode::Symmetric => {
                assert!((&na - na.transpose()).abs().max() < 1e-15);
                let rho = SymmetricEigen::new(na).eigenvalues.abs().max();
                assert!(rho <= 1.0 + 1e-12, "spectral radius {rho}");
            }
        }
    }
}

#[test]
fn linear_propagation_solves_the_resolvent() {
    for (mode, alpha) in [(AdjacencyMode::RowStochastic, 0.2), (AdjacencyMode::Symmetric, 0.1)] {
        let g = erdos_renyi(60, 0.08, 17).unwrap();
        let f = random_injection(60, 4, 18);
        let cfg = GraphPropagationConfig {
            alpha,
            variant: Variant::Linear,
            adjacency_mode: mode,
            injection: f.clone(),
            solver: SolverConfig { max_iter: 10_000, ..SolverConfig::with_tol(1e-14) },
        };
        let (z, rep) = propagate(&g, &cfg).unwrap();
        assert!(rep.converged);
        let a = to_na(&normalized_adjacency(&g, mode));
        let exact = (DMatrix::identity(60, 60) - a * (1.0 - alpha)).lu().solve(&(to_na(&f) * alpha)).unwrap();
        for i in 0..60 {
            for j in 0..4 {
                assert!((z.get(i, j) - exact[(i, j)]).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn implicit_gradients_match_differences_for_other_norms() {
    let (n, d) = (16, 6);
    let solver = SolverConfig { max_iter: 10_000, ..SolverConfig::with_tol(1e-11) };
    for (preset, p) in [
        (LayerPreset::ShiftedTanh, PNorm::Finite(1.0)),
        (LayerPreset::PositivePowerTanh, PNorm::Finite(3.0)),
        (LayerPreset::PositiveShiftedTanh, PNorm::Infinity),
    ] {
        let cfg = preset_layer(preset, n, d, p, 5).unwrap();
        let layer = build_layer(&cfg).unwrap();
        let mut s = Sampler::new(6);
        let c: Vec<f64> = (0..n).map(|_| s.normal()).collect();
        let x = random_input(d, 7);
        let z = layer.forward(&x, &solver).unwrap();
        let g = layer.ift_gradient(&x, &z.z_star, &c).unwrap();
        let loss = |xx: &[f64]| -> f64 {
            let r = layer.forward(xx, &solver).unwrap();
            r.z_star.iter().zip(&c).map(|(a, b)| a * b).sum()
        };
        let h = 1e-5;
        for k in 0..d {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let fd = (loss(&xp) - loss(&xm)) / (2.0 * h);
            let rel = (fd - g.dx[k]).abs() / fd.abs().max(g.dx[k].abs()).max(1e-8);
            assert!(rel < 1e-4, "{preset:?} {p:?} dx[{k}]: analytic {} vs fd {fd}", g.dx[k]);
        }
    }
}

#[test]
fn batch_forward_matches_single_columns() {
    let layer = build_layer(&preset_layer(LayerPreset::ShiftedTanh, 20, 8, PNorm::Finite(2.0), 1).unwrap()).unwrap();
    let xs = Matrix::from_columns(&(0..5).map(|j| random_input(8, 10 + j)).collect::<Vec<_>>()).unwrap();
    let cfg = SolverConfig::with_tol(1e-12);
    let (z, rep) = layer.forward_batch(&xs, &cfg).unwrap();
    assert!(rep.converged);
    for j in 0..5 {
        let single = layer.forward(&xs.column(j), &cfg).unwrap();
        for (u, v) in z.column(j).iter().zip(&single.z_star) {
            assert!((u - v).abs() < 1e-10);
        }
    }
}
