use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{seeded, Rng};
use crate::tensor::Tensor;

pub const KMEANS_RESTARTS: usize = 20;
pub const KMEANS_MAX_ITERS: usize = 300;
/// Convergence threshold on the largest centroid displacement.
pub const KMEANS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Tensor,
    pub labels: Vec<usize>,
    /// Within-cluster sum of squared distances.
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], c: &[f64], k: usize, d: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for j in 0..k {
        let dist = sq_dist(x, &c[j * d..(j + 1) * d]);
        if dist < best.1 {
            best = (j, dist);
        }
    }
    best
}

fn plus_plus(z: &Tensor, k: usize, rng: &mut Rng) -> Vec<f64> {
    let (n, d) = (z.rows(), z.cols());
    let mut c = Vec::with_capacity(k * d);
    c.extend_from_slice(z.row(rng.random_range(0..n)));
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(z.row(i), &c[..d])).collect();
    for _ in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, w) in dist.iter().enumerate() {
                if r < *w {
                    pick = i;
                    break;
                }
                r -= w;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let start = c.len();
        c.extend_from_slice(z.row(pick));
        for (i, di) in dist.iter_mut().enumerate() {
            *di = di.min(sq_dist(z.row(i), &c[start..]));
        }
    }
    c
}

fn lloyd(z: &Tensor, mut c: Vec<f64>, k: usize) -> KMeans {
    let (n, d) = (z.rows(), z.cols());
    let mut labels = vec![0; n];
    let mut dists = vec![0.0; n];
    for _ in 0..KMEANS_MAX_ITERS {
        for i in 0..n {
            (labels[i], dists[i]) = nearest(z.row(i), &c, k, d);
        }
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for (s, v) in sums[labels[i] * d..(labels[i] + 1) * d].iter_mut().zip(z.row(i)) {
                *s += v;
            }
        }
        let mut shift = 0.0f64;
        for j in 0..k {
            let new: Vec<f64> = if counts[j] == 0 {
                // reseed an empty cluster at the point worst served so far
                let far = (0..n)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .expect("n > 0");
                dists[far] = 0.0;
                z.row(far).to_vec()
            } else {
                sums[j * d..(j + 1) * d].iter().map(|s| s / counts[j] as f64).collect()
            };
            shift = shift.max(sq_dist(&new, &c[j * d..(j + 1) * d]).sqrt());
            c[j * d..(j + 1) * d].copy_from_slice(&new);
        }
        if shift < KMEANS_TOL {
            break;
        }
    }
    let mut inertia = 0.0;
    for i in 0..n {
        let (l, dist) = nearest(z.row(i), &c, k, d);
        labels[i] = l;
        inertia += dist;
    }
    KMeans {
        centroids: Tensor::matrix(k, d, c).expect("k×d"),
        labels,
        inertia,
    }
}

/// k-means++ seeding followed by Lloyd iterations; the best of `restarts`
/// runs by inertia is returned.
pub fn kmeans_init(z: &Tensor, k: usize, restarts: usize, seed: u64) -> Result<KMeans> {
    if k == 0 || z.rows() < k {
        return Err(Error::Contract(format!(
            "k-means needs 0 < K <= N (K={k}, N={})",
            z.rows()
        )));
    }
    let mut rng = seeded(seed);
    let mut best: Option<KMeans> = None;
    for _ in 0..restarts.max(1) {
        let run = lloyd(z, plus_plus(z, k, &mut rng), k);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_equals_n() {
        let z = Tensor::from_rows(&[[0.0, 1.0], [4.0, 2.0], [-3.0, 7.0]]).unwrap();
        let km = kmeans_init(&z, 3, 5, 1).unwrap();
        assert_eq!(km.inertia, 0.0);
        let mut rows: Vec<Vec<f64>> = (0..3).map(|j| km.centroids.row(j).to_vec()).collect();
        rows.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(rows, vec![vec![-3.0, 7.0], vec![0.0, 1.0], vec![4.0, 2.0]]);
    }

    #[test]
    fn two_blobs_match_brute_force() {
        let pts = [0.0, 0.1, 0.2, 10.0, 10.1, 10.2];
        // exhaustive search over all 2-partitions
        let mut best = f64::INFINITY;
        for mask in 1u32..(1 << 6) - 1 {
            let mut cost = 0.0;
            for side in [true, false] {
                let g: Vec<f64> = (0..6).filter(|i| (mask >> i & 1 == 1) == side).map(|i| pts[i]).collect();
                let m = g.iter().sum::<f64>() / g.len() as f64;
                cost += g.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
            }
            best = best.min(cost);
        }
        let z = Tensor::matrix(6, 1, pts.to_vec()).unwrap();
        let km = kmeans_init(&z, 2, KMEANS_RESTARTS, 0).unwrap();
        assert!((km.inertia - best).abs() < 1e-12);
        let mut c = km.centroids.into_data();
        c.sort_by(f64::total_cmp);
        assert!((c[0] - 0.1).abs() < 1e-12 && (c[1] - 10.1).abs() < 1e-12);
    }

    #[test]
    fn seeded_and_guarded() {
        let z = Tensor::matrix(40, 2, (0..80).map(|v| ((v * 37) % 11) as f64).collect()).unwrap();
        assert_eq!(kmeans_init(&z, 4, 3, 9).unwrap(), kmeans_init(&z, 4, 3, 9).unwrap());
        assert!(matches!(kmeans_init(&z, 41, 1, 0), Err(Error::Contract(_))));
    }
}
