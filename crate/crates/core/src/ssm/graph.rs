//! Random geometric graphs and the partial-observation measurement matrix.

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

const NEIGHBOURS: usize = 3;

/// Weighted 3-nearest-neighbour graph on `n` uniform points in the unit
/// square, scaled to unit spectral norm.
pub fn build_geometric_graph(n: usize, rng: &mut Rng) -> Result<Matrix> {
    if n < 4 {
        return Err(Error::Config(format!("geometric graph needs at least 4 nodes, got {n}")));
    }
    let points: Vec<[f64; 2]> = (0..n).map(|_| [rng.uniform(), rng.uniform()]).collect();
    knn_graph(&points, NEIGHBOURS)
}

/// `k`-nearest-neighbour adjacency over fixed points. An edge is kept when
/// either endpoint selects the other.
pub fn knn_graph(points: &[[f64; 2]], k: usize) -> Result<Matrix> {
    let n = points.len();
    let dist2 = |i: usize, j: usize| {
        let dx = points[i][0] - points[j][0];
        let dy = points[i][1] - points[j][1];
        dx * dx + dy * dy
    };
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        others.sort_by(|&p, &q| dist2(i, p).total_cmp(&dist2(i, q)).then(p.cmp(&q)));
        for &j in others.iter().take(k) {
            let w = (-dist2(i, j)).exp();
            a[(i, j)] = w;
            a[(j, i)] = w;
        }
    }
    let norm = a.spectral_norm();
    if !(norm > 0.0) {
        return Err(Error::Numerical("graph has no edges".into()));
    }
    Ok(a.scale(1.0 / norm))
}

/// `[I_{M×M} | I_{M×(N−M)}]` divided by its spectral norm.
pub fn build_measurement_matrix(n: usize, m: usize) -> Result<Matrix> {
    if m == 0 || m > n {
        return Err(Error::Config(format!("measurement dimension {m} must lie in 1..={n}")));
    }
    let mut c = Matrix::zeros(m, n);
    for i in 0..m {
        c[(i, i)] = 1.0;
        if m + i < n {
            c[(i, m + i)] = 1.0;
        }
    }
    let norm = c.spectral_norm();
    Ok(c.scale(1.0 / norm))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graph_invariants() {
        for n in [4, 10, 25] {
            let a = build_geometric_graph(n, &mut Rng::new(n as u64)).unwrap();
            assert!((a.spectral_norm() - 1.0).abs() < 1e-10);
            assert!(a.is_symmetric(0.0));
            assert!((0..n).all(|i| a[(i, i)] == 0.0));
        }
        assert!(matches!(build_geometric_graph(3, &mut Rng::new(0)), Err(Error::Config(_))));
    }

    #[test]
    fn two_points_give_a_single_edge() {
        let a = knn_graph(&[[0.1, 0.2], [0.7, 0.9]], NEIGHBOURS).unwrap();
        let expect = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(a.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn measurement_matrix_examples() {
        assert_eq!(build_measurement_matrix(3, 3).unwrap(), Matrix::identity(3));
        let c = build_measurement_matrix(4, 2).unwrap();
        let r = 0.5f64.sqrt();
        let expect = Matrix::from_rows(&[vec![r, 0.0, r, 0.0], vec![0.0, r, 0.0, r]]).unwrap();
        assert!(c.max_abs_diff(&expect) < 1e-12);
        for (n, m) in [(10, 8), (7, 3), (5, 1)] {
            assert!((build_measurement_matrix(n, m).unwrap().spectral_norm() - 1.0).abs() < 1e-10);
        }
        assert!(matches!(build_measurement_matrix(2, 3), Err(Error::Config(_))));
    }
}
