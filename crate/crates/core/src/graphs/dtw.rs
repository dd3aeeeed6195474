use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[inline]
fn point_cost<T: Scalar>(a: &[T; 2], b: &[T; 2]) -> T {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

/// Unconstrained dynamic time warping between two sequences of 2-vectors
/// with Euclidean point cost. Returns the cumulative cost of the cheapest
/// monotone alignment using match, insertion and deletion steps.
pub fn dtw_distance<T: Scalar>(a: &[[T; 2]], b: &[[T; 2]]) -> Result<T> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Argument("dtw needs two nonempty sequences".into()));
    }
    // Two rolling rows over b; row 0 of the lattice is +inf except the origin.
    let inf = T::infinity();
    let mut prev = vec![inf; b.len() + 1];
    let mut cur = vec![inf; b.len() + 1];
    prev[0] = T::zero();
    for pa in a {
        cur[0] = inf;
        for (j, pb) in b.iter().enumerate() {
            let best = prev[j].min(prev[j + 1]).min(cur[j]);
            cur[j + 1] = point_cost(pa, pb) + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[b.len()])
}

/// Pairwise distance matrix with a zero diagonal. Only the upper triangle
/// is computed; the result is exactly symmetric.
pub fn dtw_matrix(series: &[Vec<[f64; 2]>]) -> Result<Vec<Vec<f64>>> {
    use rayon::prelude::*;
    let n = series.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let dists: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| dtw_distance(&series[i], &series[j]))
        .collect::<Result<_>>()?;
    let mut out = vec![vec![0.0; n]; n];
    for (&(i, j), d) in pairs.iter().zip(dists) {
        out[i][j] = d;
        out[j][i] = d;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Memo-free recursion over every warping path.
    fn oracle(a: &[[f64; 2]], b: &[[f64; 2]], i: usize, j: usize) -> f64 {
        let c = point_cost(&a[i], &b[j]);
        match (i, j) {
            (0, 0) => c,
            (0, _) => c + oracle(a, b, 0, j - 1),
            (_, 0) => c + oracle(a, b, i - 1, 0),
            _ => c + oracle(a, b, i - 1, j).min(oracle(a, b, i, j - 1)).min(oracle(a, b, i - 1, j - 1)),
        }
    }

    #[test]
    fn basic_cases() {
        let a = [[1.0, 2.0], [3.0, 1.0], [0.5, 0.5]];
        assert_eq!(dtw_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(dtw_distance(&[[0.0, 0.0]], &[[3.0, 4.0]]).unwrap(), 5.0);
        assert!(dtw_distance::<f64>(&[], &a).is_err());
        // warping absorbs a repeated point
        let b = [[1.0, 2.0], [1.0, 2.0], [3.0, 1.0], [0.5, 0.5]];
        assert_eq!(dtw_distance(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn generic_over_f32() {
        let d = dtw_distance::<f32>(&[[0.0, 0.0], [1.0, 1.0]], &[[3.0, 4.0]]).unwrap();
        assert!((d - (5.0 + 13f32.sqrt())).abs() < 1e-5);
    }

    fn seq() -> impl Strategy<Value = Vec<[f64; 2]>> {
        prop::collection::vec(prop::array::uniform2(-5.0f64..5.0), 1..8)
    }

    proptest! {
        #[test]
        fn equals_recursive_oracle_and_is_symmetric(a in seq(), b in seq()) {
            let d = dtw_distance(&a, &b).unwrap();
            prop_assert_eq!(d, oracle(&a, &b, a.len() - 1, b.len() - 1));
            prop_assert_eq!(d, dtw_distance(&b, &a).unwrap());
            prop_assert!(d >= 0.0);
        }
    }

    #[test]
    fn matrix_is_symmetric_with_zero_diagonal() {
        let s: Vec<Vec<[f64; 2]>> = (0..4).map(|i| (0..6).map(|t| [(i * t) as f64, t as f64]).collect()).collect();
        let m = dtw_matrix(&s).unwrap();
        for i in 0..4 {
            assert_eq!(m[i][i], 0.0);
            for j in 0..4 {
                assert_eq!(m[i][j], m[j][i]);
                assert_eq!(m[i][j], dtw_distance(&s[i], &s[j]).unwrap());
            }
        }
    }
}
