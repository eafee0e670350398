//! Two-means clustering with k-means++ seeding.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::Matrix;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Result of a k-means run over the rows of a matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub iterations: usize,
}

/// k-means++ seeding: first centroid uniform, later ones with probability
/// proportional to squared distance from the nearest chosen centroid.
/// Returns `None` when fewer than `k` distinct rows exist.
pub fn plus_plus_seeds(rows: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Option<Vec<Vec<f64>>> {
    let n = rows.rows();
    if n < k || k == 0 {
        return None;
    }
    let mut centroids = vec![rows.row(rng.random_range(0..n)).to_vec()];
    let mut nearest: Vec<f64> = rows.iter_rows().map(|r| sq_dist(r, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        if total <= 0.0 {
            return None;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, &d) in nearest.iter().enumerate() {
            if d > 0.0 && target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        // guard against rounding at the tail landing on a zero-weight row
        while nearest[pick] <= 0.0 {
            pick -= 1;
        }
        let c = rows.row(pick).to_vec();
        for (d, r) in nearest.iter_mut().zip(rows.iter_rows()) {
            *d = d.min(sq_dist(r, &c));
        }
        centroids.push(c);
    }
    Some(centroids)
}

fn assign(rows: &Matrix, centroids: &[Vec<f64>], assignment: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (slot, row) in assignment.iter_mut().zip(rows.iter_rows()) {
        let mut best = (0, f64::INFINITY);
        for (k, c) in centroids.iter().enumerate() {
            let d = sq_dist(row, c);
            if d < best.1 {
                best = (k, d);
            }
        }
        *slot = best.0;
        inertia += best.1;
    }
    inertia
}

/// Lloyd iterations from k-means++ seeds. Stops after `max_iters` rounds or
/// once the relative inertia change drops to `tol`. Returns `None` when the
/// rows cannot support `k` clusters.
pub fn kmeans(
    rows: &Matrix,
    k: usize,
    max_iters: usize,
    tol: f64,
    rng: &mut ChaCha8Rng,
) -> Option<Clustering> {
    let mut centroids = plus_plus_seeds(rows, k, rng)?;
    let dim = rows.cols();
    let mut assignment = vec![0; rows.rows()];
    let mut inertia = assign(rows, &centroids, &mut assignment);
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, row) in assignment.iter().zip(rows.iter_rows()) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(row) {
                *s += v;
            }
        }
        for ((c, s), &count) in centroids.iter_mut().zip(sums).zip(&counts) {
            // an empty cluster keeps its previous centroid
            if count > 0 {
                *c = s.into_iter().map(|v| v / count as f64).collect();
            }
        }
        let next = assign(rows, &centroids, &mut assignment);
        let change = (inertia - next).abs() / inertia.max(f64::MIN_POSITIVE);
        inertia = next;
        if change <= tol {
            break;
        }
    }
    Some(Clustering {
        assignment,
        centroids,
        inertia,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn identical_rows_have_no_second_seed() {
        let m = Matrix::from_rows(&vec![vec![1.0, 1.0]; 5]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(kmeans(&m, 2, 10, 1e-6, &mut rng).is_none());
    }

    #[test]
    fn seeds_are_distinct_rows() {
        let m = Matrix::from_rows(&[vec![0.0], vec![0.0], vec![5.0]]);
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let seeds = plus_plus_seeds(&m, 2, &mut rng).unwrap();
            assert_ne!(seeds[0], seeds[1]);
        }
    }

    #[test]
    fn inertia_never_increases_over_iterations() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64).sin() * 3.0, (i * i % 7) as f64]).collect();
        let m = Matrix::from_rows(&rows);
        let mut previous = f64::INFINITY;
        for iters in 1..8 {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let c = kmeans(&m, 2, iters, 0.0, &mut rng).unwrap();
            assert!(c.inertia <= previous + 1e-9);
            previous = c.inertia;
        }
    }
}
