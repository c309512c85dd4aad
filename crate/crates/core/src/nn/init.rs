use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Activation, NetworkParams};

/// He-uniform weights for (leaky) ReLU layers, Glorot-uniform for linear and
/// sigmoid layers, zero biases. Reproducible from `seed`.
pub fn init_params(net: &mut NetworkParams, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..net.layers().len() {
        let l = net.layers()[i];
        let limit = match l.activation {
            Activation::Relu | Activation::LeakyRelu => (6.0 / l.in_dim as f64).sqrt(),
            Activation::Linear | Activation::Sigmoid => {
                (6.0 / (l.in_dim + l.out_dim) as f64).sqrt()
            }
        };
        for w in net.weight_mut(i) {
            *w = rng.random_range(-limit..limit);
        }
        net.bias_mut(i).fill(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_encoder, Architecture, LayerSpec, NetworkRole};

    #[test]
    fn same_seed_same_params_and_zero_biases() {
        let arch = Architecture {
            embed_dim: 4,
            ae_hidden: vec![8, 6],
            adv_hidden: vec![5],
        };
        let mut a = build_encoder(10, &arch).unwrap();
        let mut b = build_encoder(10, &arch).unwrap();
        init_params(&mut a, 42);
        init_params(&mut b, 42);
        assert_eq!(a.flatten(), b.flatten());
        for i in 0..a.layers().len() {
            assert!(a.bias(i).iter().all(|v| *v == 0.0));
        }
        init_params(&mut b, 43);
        assert_ne!(a.flatten(), b.flatten());
    }

    #[test]
    fn weight_mean_within_three_sigma_of_zero() {
        // one 1000×1000 ReLU layer: 10^6 draws from U(-L, L), sd = L/sqrt(3)
        let layer = LayerSpec {
            in_dim: 1000,
            out_dim: 1000,
            activation: Activation::Relu,
        };
        let mut net = NetworkParams::new(NetworkRole::Critic, vec![layer]).unwrap();
        init_params(&mut net, 7);
        let w = net.weight(0);
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let limit = (6.0f64 / 1000.0).sqrt();
        let sd_of_mean = limit / 3f64.sqrt() / n.sqrt();
        assert!(mean.abs() < 3.0 * sd_of_mean, "mean {mean} sd {sd_of_mean}");
        assert!(w.iter().all(|v| v.abs() <= limit));
    }
}
