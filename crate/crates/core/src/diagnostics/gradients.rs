use rand::seq::index::sample;

use crate::cluster::Reduction;
use crate::error::{Error, Result};
use crate::losses::{baseline_loss, encoder_cluster_loss_terms, EncoderTerms};
use crate::nn::Networks;
use crate::rng::seeded;
use crate::tensor::Tensor;

/// Gradients whose norm falls below this are treated as absent.
pub const MIN_GRAD_NORM: f64 = 1e-15;

/// Cosine of the angle between two flat gradients, `None` when either is
/// numerically zero.
pub fn gradient_cosine(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "gradient lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na < MIN_GRAD_NORM || nb < MIN_GRAD_NORM {
        return Ok(None);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok(Some((dot / (na * nb)).clamp(-1.0, 1.0)))
}

/// One-hot target rows: the row of a sample of class `c` is hot at the
/// cluster that the optimal alignment maps onto `c` (`cluster_to_class` as
/// returned by [`align_clusters`](super::align_clusters)).
pub fn aligned_targets(y_true: &[usize], cluster_to_class: &[usize], k: usize) -> Result<Tensor> {
    let mut class_to_cluster = vec![None; cluster_to_class.len()];
    for (cluster, class) in cluster_to_class.iter().enumerate() {
        class_to_cluster[*class] = Some(cluster);
    }
    let mut data = vec![0.0; y_true.len() * k];
    for (i, y) in y_true.iter().enumerate() {
        match class_to_cluster.get(*y).copied().flatten() {
            Some(c) if c < k => data[i * k + c] = 1.0,
            _ => {
                return Err(Error::Contract(format!(
                    "class {y} has no matching cluster among {k}"
                )))
            }
        }
    }
    Ok(Tensor::matrix(y_true.len(), k, data)?)
}

fn encoder_grad(eval: crate::losses::LossEval, n: usize) -> Vec<f64> {
    eval.grads.encoder.unwrap_or_else(|| vec![0.0; n])
}

/// Encoder gradient of the batch-mean KL term against a target `p_rows`.
pub fn kl_encoder_grad(
    nets: &Networks,
    mu: &Tensor,
    x: &Tensor,
    p_rows: &Tensor,
    dof: f64,
) -> Result<Vec<f64>> {
    let (ev, _) =
        encoder_cluster_loss_terms(nets, mu, x, p_rows, dof, EncoderTerms::KL, Reduction::Mean)?;
    Ok(encoder_grad(ev, nets.encoder.num_params()))
}

/// Cosine between the encoder gradients of the KL loss under the current
/// targets and under aligned one-hot ground truth.
pub fn delta_fr(
    nets: &Networks,
    mu: &Tensor,
    x: &Tensor,
    p_rows: &Tensor,
    truth_rows: &Tensor,
    dof: f64,
) -> Result<Option<f64>> {
    let pseudo = kl_encoder_grad(nets, mu, x, p_rows, dof)?;
    let sup = kl_encoder_grad(nets, mu, x, truth_rows, dof)?;
    gradient_cosine(&pseudo, &sup)
}

/// The self-supervised term compared against the clustering term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelfSupervised {
    /// Full autoencoder reconstruction (IDEC).
    Reconstruction,
    /// The adversarial realism term of the encoder objective (ADEC).
    Adversarial,
}

/// Cosine between the encoder gradients of the KL term and of the
/// self-supervised term.
pub fn delta_fd(
    nets: &Networks,
    mu: &Tensor,
    x: &Tensor,
    p_rows: &Tensor,
    dof: f64,
    term: SelfSupervised,
) -> Result<Option<f64>> {
    let n = nets.encoder.num_params();
    let kl = kl_encoder_grad(nets, mu, x, p_rows, dof)?;
    let other = match term {
        SelfSupervised::Reconstruction => {
            encoder_grad(baseline_loss(nets, mu, x, p_rows, dof, 1.0, 0.0)?, n)
        }
        SelfSupervised::Adversarial => {
            let (ev, _) = encoder_cluster_loss_terms(
                nets,
                mu,
                x,
                p_rows,
                dof,
                EncoderTerms::ADVERSARIAL,
                Reduction::Mean,
            )?;
            encoder_grad(ev, n)
        }
    };
    gradient_cosine(&kl, &other)
}

/// Default number of coordinates probed when a parameter vector is large.
pub const FD_MIN_COORDS: usize = 200;

/// Largest relative error `|fd − g| / max(|g|, 1e-8)` between central
/// differences of `loss` at `params` and the supplied gradient. Vectors longer
/// than `max_coords` (at least 200) are probed on a seeded random subset.
pub fn finite_diff_check(
    mut loss: impl FnMut(&[f64]) -> Result<f64>,
    params: &[f64],
    grad: &[f64],
    h: f64,
    max_coords: usize,
    seed: u64,
) -> Result<f64> {
    if params.len() != grad.len() {
        return Err(Error::Contract(format!(
            "{} parameters but {} gradient entries",
            params.len(),
            grad.len()
        )));
    }
    let limit = max_coords.max(FD_MIN_COORDS);
    let coords: Vec<usize> = if params.len() <= limit {
        (0..params.len()).collect()
    } else {
        let mut v = sample(&mut seeded(seed), params.len(), limit).into_vec();
        v.sort_unstable();
        v
    };
    let mut p = params.to_vec();
    let mut worst = 0.0f64;
    for i in coords {
        let orig = p[i];
        p[i] = orig + h;
        let up = loss(&p)?;
        p[i] = orig - h;
        let down = loss(&p)?;
        p[i] = orig;
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - grad[i]).abs() / grad[i].abs().max(1e-8));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{soft_assign, target_distribution};
    use crate::diagnostics::align_clusters;
    use crate::nn::Architecture;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng as _;

    #[test]
    fn cosine_cases() {
        let a = [1.0, 2.0, -3.0];
        assert!((gradient_cosine(&a, &a).unwrap().unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((gradient_cosine(&a, &neg).unwrap().unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(gradient_cosine(&[1.0, 0.0], &[0.0, 2.0]).unwrap(), Some(0.0));
        assert_eq!(gradient_cosine(&a, &[0.0; 3]).unwrap(), None);
        assert!(gradient_cosine(&a, &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn cosine_bounded_and_scale_free(
            a in proptest::collection::vec(-3.0f64..3.0, 5),
            b in proptest::collection::vec(-3.0f64..3.0, 5),
            s in 0.001f64..1000.0,
        ) {
            if let Some(c) = gradient_cosine(&a, &b).unwrap() {
                prop_assert!((-1.0..=1.0).contains(&c));
                let bs: Vec<f64> = b.iter().map(|v| v * s).collect();
                let c2 = gradient_cosine(&a, &bs).unwrap().unwrap();
                prop_assert!((c - c2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn quadratic_finite_differences_are_exact() {
        let params = [0.3, -1.2, 2.0, 0.7];
        let grad: Vec<f64> = params.iter().enumerate().map(|(i, v)| 2.0 * (i as f64 + 1.0) * v).collect();
        let f = |p: &[f64]| -> Result<f64> {
            Ok(p.iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * v * v).sum())
        };
        assert!(finite_diff_check(f, &params, &grad, 1e-5, 200, 0).unwrap() < 1e-9);
    }

    fn setup() -> (Networks, Tensor, Tensor, Tensor) {
        let arch = Architecture {
            embed_dim: 2,
            ae_hidden: vec![6],
            adv_hidden: vec![5],
        };
        let nets = Networks::initialized(4, &arch, 3).unwrap();
        let mut rng = seeded(8);
        let x = Tensor::matrix(10, 4, (0..40).map(|_| rng.random_range(0.0..2.0)).collect()).unwrap();
        let mu = Tensor::matrix(2, 2, vec![0.3, 0.1, -0.2, -0.4]).unwrap();
        let z = nets.encoder.predict(&x).unwrap();
        let q = soft_assign(&z, &mu, 1.0).unwrap();
        (nets, x, mu, q)
    }

    #[test]
    fn fr_is_one_when_targets_are_the_truth() {
        let (nets, x, mu, q) = setup();
        let labels = crate::cluster::predict_labels(&q);
        let map = align_clusters(&labels, &labels).unwrap();
        let truth = aligned_targets(&labels, &map, 2).unwrap();
        let c = delta_fr(&nets, &mu, &x, &truth, &truth, 1.0).unwrap().unwrap();
        assert!((c - 1.0).abs() < 1e-12);
        // P = Q: no pseudo-supervised gradient
        assert_eq!(delta_fr(&nets, &mu, &x, &q, &truth, 1.0).unwrap(), None);
    }

    #[test]
    fn fd_is_defined_for_both_terms() {
        let (nets, x, mu, q) = setup();
        let p = target_distribution(&q);
        for term in [SelfSupervised::Reconstruction, SelfSupervised::Adversarial] {
            let c = delta_fd(&nets, &mu, &x, &p, 1.0, term).unwrap().unwrap();
            assert!((-1.0..=1.0).contains(&c));
        }
    }
}
