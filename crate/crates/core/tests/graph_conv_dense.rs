use pvcgn::model::{graph_conv, GraphConvParams, ModelGraphs};
use pvcgn::{CsrMatrix, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix<f64> {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

/// Row-stochastic sparse graph, or `None` for a masked graph.
fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> Option<CsrMatrix<f64>> {
    if rng.random_bool(0.15) {
        return None;
    }
    let mut t = Vec::new();
    for i in 0..n {
        let picks: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.4)).collect();
        let w: Vec<f64> = picks.iter().map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = w.iter().sum();
        t.extend(picks.into_iter().zip(w).map(|(j, w)| (i, j, w / s)));
    }
    Some(CsrMatrix::from_triplets(n, t).unwrap())
}

fn dense_oracle(x: &Matrix<f64>, g: &ModelGraphs<f64>, p: &GraphConvParams<Matrix<f64>>) -> Matrix<f64> {
    let mut out = x.matmul(&p.theta_l).unwrap();
    for (w, theta) in [(&g.physical, &p.theta_p), (&g.similarity, &p.theta_s), (&g.correlation, &p.theta_c)] {
        if let Some(w) = w {
            out.add_assign(&w.to_dense().matmul(x).unwrap().matmul(theta).unwrap());
        }
    }
    out
}

#[test]
fn sparse_convolution_matches_dense_products() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let n = rng.random_range(1..=16);
        let (din, dout) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let g = ModelGraphs::from_matrices(n, random_graph(&mut rng, n), random_graph(&mut rng, n), random_graph(&mut rng, n))
            .unwrap();
        let mut k = || random_matrix(&mut rng, din, dout);
        let p = GraphConvParams { theta_l: k(), theta_p: k(), theta_s: k(), theta_c: k() };
        let x = random_matrix(&mut rng, n, din);
        let got = graph_conv(&x, &g, &p).unwrap();
        let want = dense_oracle(&x, &g, &p);
        let scale = want.as_slice().iter().fold(1e-300f64, |m, v| m.max(v.abs()));
        assert!(got.max_abs_diff(&want) / scale <= 1e-10);
    }
}

#[test]
fn convolution_is_linear_in_the_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 7;
    let g = ModelGraphs::from_matrices(n, random_graph(&mut rng, n), random_graph(&mut rng, n), random_graph(&mut rng, n))
        .unwrap();
    let mut k = || random_matrix(&mut rng, 3, 4);
    let p = GraphConvParams { theta_l: k(), theta_p: k(), theta_s: k(), theta_c: k() };
    let (a, b) = (random_matrix(&mut rng, n, 3), random_matrix(&mut rng, n, 3));
    let mut ab = a.clone();
    ab.add_assign(&b);
    let mut sum = graph_conv(&a, &g, &p).unwrap();
    sum.add_assign(&graph_conv(&b, &g, &p).unwrap());
    assert!(graph_conv(&ab, &g, &p).unwrap().max_abs_diff(&sum) < 1e-12);
}
