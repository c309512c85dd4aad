//! Student-t soft assignments, the sharpened target distribution, the KL
//! clustering objective and its closed-form gradients.

mod kmeans;

pub use kmeans::{kmeans_init, KMeans, KMEANS_MAX_ITERS, KMEANS_RESTARTS, KMEANS_TOL};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, TensorError, Var};

/// Student-t degrees of freedom used throughout.
pub const DOF: f64 = 1.0;

fn check_dims(z: &Tensor, mu: &Tensor) -> Result<()> {
    if z.cols() != mu.cols() {
        return Err(TensorError::Dimension {
            op: "soft_assign",
            lhs: z.shape().to_vec(),
            rhs: mu.shape().to_vec(),
        }
        .into());
    }
    Ok(())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `q_ij ∝ (1 + ‖z_i − μ_j‖²/α)^(−(α+1)/2)`, normalized over `j`.
pub fn soft_assign(z: &Tensor, mu: &Tensor, alpha: f64) -> Result<Tensor> {
    check_dims(z, mu)?;
    let (n, k) = (z.rows(), mu.rows());
    let expo = -(alpha + 1.0) / 2.0;
    let mut q = Vec::with_capacity(n * k);
    for i in 0..n {
        let start = q.len();
        for j in 0..k {
            q.push((1.0 + sq_dist(z.row(i), mu.row(j)) / alpha).powf(expo));
        }
        let s: f64 = q[start..].iter().sum();
        q[start..].iter_mut().for_each(|v| *v /= s);
    }
    Ok(Tensor::matrix(n, k, q)?)
}

/// `p_ij = (q_ij²/f_j) / Σ_j' (q_ij'²/f_j')` with soft frequencies `f_j = Σ_i q_ij`.
pub fn target_distribution(q: &Tensor) -> Tensor {
    let (n, k) = (q.rows(), q.cols());
    let mut f = vec![0.0; k];
    for i in 0..n {
        for (fj, v) in f.iter_mut().zip(q.row(i)) {
            *fj += v;
        }
    }
    let mut p = Vec::with_capacity(n * k);
    for i in 0..n {
        let start = p.len();
        for (v, fj) in q.row(i).iter().zip(&f) {
            p.push(if *fj > 0.0 { v * v / fj } else { 0.0 });
        }
        let s: f64 = p[start..].iter().sum();
        p[start..].iter_mut().for_each(|v| *v /= s);
    }
    Tensor::matrix(n, k, p).expect("shape preserved")
}

/// `Σ_i Σ_j p_ij log(p_ij / q_ij)` with `0·log 0 = 0`.
pub fn kl_loss(p: &Tensor, q: &Tensor) -> Result<f64> {
    if p.shape() != q.shape() {
        return Err(TensorError::Dimension {
            op: "kl_loss",
            lhs: p.shape().to_vec(),
            rhs: q.shape().to_vec(),
        }
        .into());
    }
    Ok(p
        .data()
        .iter()
        .zip(q.data())
        .map(|(&pv, &qv)| if pv > 0.0 { pv * (pv / qv).ln() } else { 0.0 })
        .sum())
}

/// Row-wise argmax, ties resolved toward the lowest index.
pub fn predict_labels(q: &Tensor) -> Vec<usize> {
    (0..q.rows())
        .map(|i| {
            let row = q.row(i);
            let mut best = 0;
            for (j, v) in row.iter().enumerate().skip(1) {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Fraction of positions where two labelings differ.
pub fn label_change_fraction(old: &[usize], new: &[usize]) -> f64 {
    let changed = old.iter().zip(new).filter(|(a, b)| a != b).count();
    changed as f64 / new.len().max(1) as f64
}

/// Closed-form gradient of the batch-summed encoder loss with respect to one
/// embedded point: `2 Σ_j (1+‖z_i−μ_j‖²)⁻¹ (p_ij−q_ij)(z_i−μ_j) + adv`, where
/// `adv` is the gradient of the adversarial term at `z_i` (pass zeros for the
/// pure KL part).
pub fn grad_le_z(z_i: &[f64], mu: &Tensor, p_row: &[f64], q_row: &[f64], adv: &[f64]) -> Vec<f64> {
    let mut g = adv.to_vec();
    for j in 0..mu.rows() {
        let mj = mu.row(j);
        let w = 2.0 * (p_row[j] - q_row[j]) / (1.0 + sq_dist(z_i, mj));
        for ((gd, zd), md) in g.iter_mut().zip(z_i).zip(mj) {
            *gd += w * (zd - md);
        }
    }
    g
}

/// Closed-form gradient of the summed KL loss with respect to centroid `j`:
/// `−2 Σ_i (1+‖z_i−μ_j‖²)⁻¹ (p_ij−q_ij)(z_i−μ_j)`.
pub fn grad_le_mu(z: &Tensor, mu: &Tensor, j: usize, p: &Tensor, q: &Tensor) -> Vec<f64> {
    let mj = mu.row(j);
    let mut g = vec![0.0; mu.cols()];
    for i in 0..z.rows() {
        let zi = z.row(i);
        let w = -2.0 * (p.at(i, j) - q.at(i, j)) / (1.0 + sq_dist(zi, mj));
        for ((gd, zd), md) in g.iter_mut().zip(zi).zip(mj) {
            *gd += w * (zd - md);
        }
    }
    g
}

/// How a per-sample loss is reduced over the batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

/// Records `Q(z, μ)` on the graph.
pub fn soft_assign_graph(g: &mut Graph<'_>, z: Var, mu: Var, alpha: f64) -> Result<Var> {
    let k = match g.shape(mu) {
        [k, _] => *k,
        s => return Err(Error::Contract(format!("centroids must be a matrix, got {s:?}"))),
    };
    let d2 = g.pairwise_sq_dist(z, mu)?;
    let t = g.scale(d2, 1.0 / alpha)?;
    let t = g.add_scalar(t, 1.0)?;
    let kern = g.powf(t, -(alpha + 1.0) / 2.0)?;
    let norm = g.sum_rows(kern)?;
    let norm = g.broadcast_cols(norm, k)?;
    Ok(g.div(kern, norm)?)
}

/// Records `KL(P‖Q)` with `P` held fixed.
pub fn kl_graph(g: &mut Graph<'_>, p: &Tensor, q: Var, reduction: Reduction) -> Result<Var> {
    if g.shape(q) != p.shape() {
        return Err(TensorError::Dimension {
            op: "kl_graph",
            lhs: p.shape().to_vec(),
            rhs: g.shape(q).to_vec(),
        }
        .into());
    }
    let entropy: f64 = p
        .data()
        .iter()
        .map(|&v| if v > 0.0 { v * v.ln() } else { 0.0 })
        .sum();
    let pv = g.constant(p.clone());
    let logq = g.log(q)?;
    let cross = g.mul(pv, logq)?;
    let cross = g.sum(cross)?;
    let neg = g.neg(cross)?;
    let kl = g.add_scalar(neg, entropy)?;
    Ok(match reduction {
        Reduction::Sum => kl,
        Reduction::Mean => g.scale(kl, 1.0 / p.rows() as f64)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn soft_assign_hand_value() {
        let z = Tensor::from_rows(&[[0.0, 0.0]]).unwrap();
        let mu = Tensor::from_rows(&[[1.0, 0.0], [3.0, 0.0]]).unwrap();
        let q = soft_assign(&z, &mu, 1.0).unwrap();
        assert!(close(q.at(0, 0), 5.0 / 6.0, 1e-15));
        assert!(close(q.at(0, 1), 1.0 / 6.0, 1e-15));
    }

    #[test]
    fn soft_assign_trivial_cases() {
        let z = Tensor::from_rows(&[[0.3, -1.0], [2.0, 2.0]]).unwrap();
        let one = Tensor::from_rows(&[[5.0, 5.0]]).unwrap();
        assert!(soft_assign(&z, &one, 1.0).unwrap().data().iter().all(|v| *v == 1.0));
        let z = Tensor::from_rows(&[[0.0, 0.0]]).unwrap();
        let sym = Tensor::from_rows(&[[1.0, 0.0], [-1.0, 0.0]]).unwrap();
        assert_eq!(soft_assign(&z, &sym, 1.0).unwrap().data(), &[0.5, 0.5]);
        assert!(soft_assign(&z, &Tensor::from_rows(&[[1.0]]).unwrap(), 1.0).is_err());
    }

    #[test]
    fn target_distribution_hand_value() {
        let q = Tensor::from_rows(&[[0.8, 0.2], [0.4, 0.6]]).unwrap();
        let p = target_distribution(&q);
        // f = (1.2, 0.8); row 0: (0.64/1.2, 0.04/0.8) = (0.5333, 0.05) → (0.9143, 0.0857)
        let expect = [[0.64 / 1.2, 0.04 / 0.8], [0.16 / 1.2, 0.36 / 0.8]];
        for (i, row) in expect.iter().enumerate() {
            let s = row[0] + row[1];
            for j in 0..2 {
                assert!(close(p.at(i, j), row[j] / s, 1e-15));
            }
        }
        assert!(close(p.at(0, 0), 0.9143, 1e-4));
        assert!(close(p.at(1, 1), 0.7714, 1e-4));
    }

    #[test]
    fn target_distribution_fixed_points() {
        let onehot = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(target_distribution(&onehot), onehot);
        let uniform = Tensor::full(vec![4, 3], 1.0 / 3.0);
        let p = target_distribution(&uniform);
        assert!(p.data().iter().all(|v| close(*v, 1.0 / 3.0, 1e-15)));
    }

    #[test]
    fn kl_hand_values() {
        let q = Tensor::from_rows(&[[0.5, 0.5]]).unwrap();
        assert_eq!(kl_loss(&q, &q).unwrap(), 0.0);
        let p = Tensor::from_rows(&[[1.0, 0.0]]).unwrap();
        assert!(close(kl_loss(&p, &q).unwrap(), std::f64::consts::LN_2, 1e-15));
    }

    #[test]
    fn labels_and_ties() {
        let q = Tensor::from_rows(&[[0.2, 0.8], [0.5, 0.5], [0.0, 1.0]]).unwrap();
        assert_eq!(predict_labels(&q), vec![1, 0, 1]);
        assert_eq!(label_change_fraction(&[0, 1, 1, 0], &[0, 1, 0, 0]), 0.25);
    }

    fn random_problem(seed: u64) -> (Tensor, Tensor, Tensor) {
        let mut rng = seeded(seed);
        let n = rng.random_range(2..=12);
        let d = rng.random_range(1..=6);
        let k = rng.random_range(2..=4);
        let z = Tensor::matrix(n, d, (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .unwrap();
        let mu = Tensor::matrix(k, d, (0..k * d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .unwrap();
        let q = soft_assign(&z, &mu, 1.0).unwrap();
        let p = target_distribution(&q);
        (z, mu, p)
    }

    #[test]
    fn closed_forms_match_autodiff() {
        for seed in 0..20 {
            let (z, mu, p) = random_problem(seed);
            let q = soft_assign(&z, &mu, 1.0).unwrap();
            let mut g = Graph::new();
            let zv = g.param(z.clone());
            let mv = g.param(mu.clone());
            let qv = soft_assign_graph(&mut g, zv, mv, 1.0).unwrap();
            for (a, b) in g.data(qv).iter().zip(q.data()) {
                assert!(close(*a, *b, 1e-14));
            }
            let kl = kl_graph(&mut g, &p, qv, Reduction::Sum).unwrap();
            assert!(close(g.scalar_value(kl), kl_loss(&p, &q).unwrap(), 1e-12));
            g.backward(kl).unwrap();
            let gz = g.grad(zv).unwrap().to_vec();
            let gm = g.grad(mv).unwrap().to_vec();
            let zero = vec![0.0; z.cols()];
            for i in 0..z.rows() {
                let a = grad_le_z(z.row(i), &mu, p.row(i), q.row(i), &zero);
                for (x, y) in a.iter().zip(&gz[i * z.cols()..(i + 1) * z.cols()]) {
                    assert!((x - y).abs() <= 1e-8 * y.abs().max(1e-8), "{x} vs {y}");
                }
            }
            for j in 0..mu.rows() {
                let a = grad_le_mu(&z, &mu, j, &p, &q);
                for (x, y) in a.iter().zip(&gm[j * mu.cols()..(j + 1) * mu.cols()]) {
                    assert!((x - y).abs() <= 1e-8 * y.abs().max(1e-8), "{x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn gradients_vanish_when_p_equals_q() {
        let (z, mu, _) = random_problem(3);
        let q = soft_assign(&z, &mu, 1.0).unwrap();
        let zero = vec![0.0; z.cols()];
        assert!(grad_le_z(z.row(0), &mu, q.row(0), q.row(0), &zero).iter().all(|v| *v == 0.0));
        assert!(grad_le_mu(&z, &mu, 0, &q, &q).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn centroid_gradient_mirrors_point_gradients() {
        let (z, mu, p) = random_problem(9);
        let q = soft_assign(&z, &mu, 1.0).unwrap();
        for j in 0..mu.rows() {
            let gm = grad_le_mu(&z, &mu, j, &p, &q);
            let mut sum = vec![0.0; z.cols()];
            for i in 0..z.rows() {
                let w = 2.0 * (p.at(i, j) - q.at(i, j)) / (1.0 + sq_dist(z.row(i), mu.row(j)));
                for d in 0..z.cols() {
                    sum[d] += w * (z.at(i, d) - mu.at(j, d));
                }
            }
            for (a, b) in gm.iter().zip(&sum) {
                assert!(close(*a, -b, 1e-12));
            }
        }
    }

    proptest! {
        #[test]
        fn distributions_are_row_stochastic(seed in 0u64..10_000) {
            let (z, mu, p) = random_problem(seed);
            let q = soft_assign(&z, &mu, 1.0).unwrap();
            for i in 0..q.rows() {
                prop_assert!((q.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(q.row(i).iter().all(|v| *v > 0.0 && *v < 1.0));
            }
            prop_assert!(kl_loss(&p, &q).unwrap() >= -1e-12);
        }

        #[test]
        fn labels_ignore_row_rescaling(seed in 0u64..1000, scale in 0.01f64..100.0) {
            let (z, mu, _) = random_problem(seed);
            let q = soft_assign(&z, &mu, 1.0).unwrap();
            let scaled = Tensor::new(q.shape().to_vec(), q.data().iter().map(|v| v * scale).collect()).unwrap();
            prop_assert_eq!(predict_labels(&q), predict_labels(&scaled));
        }

        #[test]
        fn sharpening_with_equal_frequencies(a in 0.05f64..0.95) {
            // mirrored rows give equal cluster frequencies
            let q = Tensor::from_rows(&[[a, 1.0 - a], [1.0 - a, a]]).unwrap();
            let p = target_distribution(&q);
            for i in 0..2 {
                let mq = q.row(i).iter().cloned().fold(0.0, f64::max);
                let mp = p.row(i).iter().cloned().fold(0.0, f64::max);
                prop_assert!(mp >= mq - 1e-15);
            }
        }
    }
}
