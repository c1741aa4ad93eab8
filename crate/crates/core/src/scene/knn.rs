use crate::error::{Error, Result};

/// For every point, the indices of its `k` nearest other points, nearest first.
/// Equal distances resolve to the lower index.
pub fn knn_neighbors(positions: &[[f64; 3]], k: usize) -> Result<Vec<Vec<usize>>> {
    let n = positions.len();
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    if k >= n {
        return Err(Error::invalid(format!("k = {k} requires more than {n} points")));
    }
    let mut out = Vec::with_capacity(n);
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for (i, p) in positions.iter().enumerate() {
        order.clear();
        order.extend(positions.iter().enumerate().filter(|&(j, _)| j != i).map(|(j, q)| {
            let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
            (d2, j)
        }));
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        order.select_nth_unstable_by(k - 1, cmp);
        let mut head = order[..k].to_vec();
        head.sort_by(cmp);
        out.push(head.into_iter().map(|(_, j)| j).collect());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(points: &[[f64; 3]], k: usize) -> Vec<Vec<usize>> {
        points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut all: Vec<(f64, usize)> = points
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(j, q)| (((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt(), j))
                    .collect();
                all.sort_by(|a, b| a.partial_cmp(b).unwrap());
                all.into_iter().take(k).map(|(_, j)| j).collect()
            })
            .collect()
    }

    #[test]
    fn collinear_points() {
        let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]];
        assert_eq!(knn_neighbors(&pts, 1).unwrap(), vec![vec![1], vec![0], vec![1]]);
        let two = knn_neighbors(&pts, 2).unwrap();
        assert_eq!(two, vec![vec![1, 2], vec![0, 2], vec![1, 0]]);
    }

    #[test]
    fn k_must_be_below_n() {
        let pts = [[0.0; 3], [1.0, 0.0, 0.0]];
        assert!(knn_neighbors(&pts, 2).is_err());
        assert!(knn_neighbors(&pts, 0).is_err());
    }

    #[test]
    fn ties_prefer_lower_index() {
        let pts = [[0.0; 3], [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        assert_eq!(knn_neighbors(&pts, 2).unwrap()[0], vec![1, 2]);
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [6usize, 50, 200] {
            let pts: Vec<[f64; 3]> = (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect();
            for k in [1, 5.min(n - 1)] {
                assert_eq!(knn_neighbors(&pts, k).unwrap(), brute_force(&pts, k));
            }
        }
    }
}
