//! Lloyd's k-means with k-means++ seeding.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_LLOYD_ITERS: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub k: usize,
    /// Within-cluster sum of squared distances.
    pub inertia: f64,
    /// Clusters left without members at convergence.
    pub empty_clusters: Vec<usize>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansRuns {
    /// Lowest-inertia run (first one on ties).
    pub best: ClusterAssignment,
    pub runs: Vec<ClusterAssignment>,
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Random generator for repeat `r` of a run seeded with `seed`.
pub fn repeat_rng(seed: u64, r: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64);
    rng
}

fn plus_plus_seeds(data: ArrayView2<'_, f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = data.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(data.row(i), data.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random_range(0.0..total);
            let mut acc = 0.0;
            let mut pick = nearest.iter().rposition(|&d| d > 0.0).expect("total > 0");
            for (i, &d) in nearest.iter().enumerate() {
                acc += d;
                if d > 0.0 && target < acc {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // Every point coincides with a chosen center.
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(data.row(i), data.row(next)));
        }
    }
    data.select(ndarray::Axis(0), &chosen)
}

fn lloyd(data: ArrayView2<'_, f64>, k: usize, rng: &mut ChaCha8Rng) -> ClusterAssignment {
    let n = data.nrows();
    let mut centers = plus_plus_seeds(data, k, rng);
    let mut labels = vec![usize::MAX; n];
    let mut iterations = 0;
    loop {
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let best = (0..k)
                .map(|c| (sq_dist(data.row(i), centers.row(c)), c))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .expect("k >= 1")
                .1;
            if *label != best {
                *label = best;
                changed = true;
            }
        }
        iterations += 1;
        if !changed || iterations >= MAX_LLOYD_ITERS {
            break;
        }
        let mut sums = Array2::<f64>::zeros(centers.dim());
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            sums.row_mut(l).scaled_add(1.0, &data.row(i));
            counts[l] += 1;
        }
        for (c, &count) in counts.iter().enumerate() {
            if count > 0 {
                centers.row_mut(c).assign(&(&sums.row(c) / count as f64));
            }
        }
    }
    let mut counts = vec![0usize; k];
    let mut inertia = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        inertia += sq_dist(data.row(i), centers.row(l));
    }
    ClusterAssignment {
        labels,
        k,
        inertia,
        empty_clusters: (0..k).filter(|&c| counts[c] == 0).collect(),
        iterations,
    }
}

/// Runs `repeats` independent k-means fits. Each repeat draws from its own
/// stream of the seeded generator, so results do not depend on scheduling.
pub fn kmeans(data: ArrayView2<'_, f64>, k: usize, repeats: usize, seed: u64) -> Result<KMeansRuns> {
    if k == 0 || k > data.nrows() {
        return Err(Error::InvalidParameter(format!(
            "k must satisfy 1 <= k <= n = {}, got {k}",
            data.nrows()
        )));
    }
    if repeats == 0 {
        return Err(Error::InvalidParameter("repeats must be >= 1".into()));
    }
    let runs: Vec<ClusterAssignment> = (0..repeats)
        .into_par_iter()
        .map(|r| lloyd(data, k, &mut repeat_rng(seed, r)))
        .collect();
    let best = runs
        .iter()
        .fold(
            &runs[0],
            |best, run| if run.inertia < best.inertia { run } else { best },
        )
        .clone();
    Ok(KMeansRuns { best, runs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn separates_two_far_clouds() {
        // Two square clouds of side 2 around (0, 0) and (100, 100).
        let offsets = [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)];
        let mut rows = Vec::new();
        for center in [0.0, 100.0] {
            for (dx, dy) in offsets {
                rows.extend([center + dx, center + dy]);
            }
        }
        let data = Array2::from_shape_vec((8, 2), rows).unwrap();
        // Each point is at squared distance 2 from its cloud center.
        let analytic = 8.0 * 2.0;
        let out = kmeans(data.view(), 2, 10, 7).unwrap();
        for run in &out.runs {
            assert_eq!(
                run.labels[..4].iter().collect::<std::collections::HashSet<_>>().len(),
                1
            );
            assert_ne!(run.labels[0], run.labels[4]);
            assert!((run.inertia - analytic).abs() < 1e-9);
        }
    }

    #[test]
    fn one_point_per_cluster() {
        let data = array![[0.0, 1.0], [2.0, 3.0], [5.0, -1.0]];
        let out = kmeans(data.view(), 3, 4, 1).unwrap();
        for run in &out.runs {
            assert_eq!(run.inertia, 0.0);
            assert!(run.empty_clusters.is_empty());
        }
    }

    #[test]
    fn same_seed_same_runs() {
        let data = Array2::from_shape_fn((30, 3), |(i, j)| ((i * 7 + j * 13) % 11) as f64);
        assert_eq!(
            kmeans(data.view(), 3, 5, 9).unwrap(),
            kmeans(data.view(), 3, 5, 9).unwrap()
        );
    }

    #[test]
    fn k_larger_than_n() {
        assert!(kmeans(array![[0.0]].view(), 2, 1, 0).is_err());
    }
}
