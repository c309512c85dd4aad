//! Fully-connected networks (encoder, decoder, discriminator, critic) and
//! their optimizers.
//!
//! Every network keeps all of its parameters in one contiguous vector. The
//! canonical flatten order is layer by layer, weight matrix (row-major,
//! `in_dim × out_dim`) before bias. Gradient snapshots, optimizer buffers and
//! checkpoints all share this order.

mod init;
mod optim;

pub use init::init_params;
pub use optim::{step, OptimizerKind, OptimizerState};

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Linear,
    /// Leaky ReLU with slope [`LEAKY_SLOPE`].
    LeakyRelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn num_params(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetworkRole {
    Encoder,
    Decoder,
    Discriminator,
    Critic,
}

impl NetworkRole {
    pub fn name(self) -> &'static str {
        match self {
            NetworkRole::Encoder => "encoder",
            NetworkRole::Decoder => "decoder",
            NetworkRole::Discriminator => "discriminator",
            NetworkRole::Critic => "critic",
        }
    }
}

impl fmt::Display for NetworkRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Layer sizes shared by the four networks.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub embed_dim: usize,
    /// Hidden widths of the encoder; the decoder mirrors them.
    pub ae_hidden: Vec<usize>,
    /// Hidden widths of the discriminator and the critic.
    pub adv_hidden: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            embed_dim: 10,
            ae_hidden: vec![500, 500, 2000],
            adv_hidden: vec![500, 500],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    role: NetworkRole,
    layers: Vec<LayerSpec>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
}

/// Graph handles for one network's parameters inside a forward pass.
#[derive(Debug, Clone)]
pub struct Binding {
    vars: Vec<(Var, Var)>,
}

impl Binding {
    /// Whether backward delivered any gradient to these parameters.
    pub fn touched(&self, g: &Graph<'_>) -> bool {
        self.vars
            .iter()
            .any(|(w, b)| g.grad(*w).is_some() || g.grad(*b).is_some())
    }
}

impl NetworkParams {
    /// Zero-initialized network over the given layer chain.
    pub fn new(role: NetworkRole, layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Contract("network needs at least one layer".into()));
        }
        for l in &layers {
            if l.in_dim == 0 || l.out_dim == 0 {
                return Err(Error::Contract(format!("layer dims must be positive: {l:?}")));
            }
        }
        for w in layers.windows(2) {
            if w[0].out_dim != w[1].in_dim {
                return Err(Error::Contract(format!(
                    "layer chain broken: {} -> {}",
                    w[0].out_dim, w[1].in_dim
                )));
            }
        }
        let total = layers.iter().map(LayerSpec::num_params).sum();
        Ok(NetworkParams {
            role,
            layers,
            values: vec![0.0; total],
            grad: None,
        })
    }

    pub fn role(&self) -> NetworkRole {
        self.role
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn num_params(&self) -> usize {
        self.values.len()
    }

    /// All parameters in canonical order.
    pub fn flatten(&self) -> &[f64] {
        &self.values
    }

    pub fn flatten_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn offsets(&self, layer: usize) -> (usize, usize, usize) {
        let start: usize = self.layers[..layer].iter().map(LayerSpec::num_params).sum();
        let l = &self.layers[layer];
        let w_end = start + l.in_dim * l.out_dim;
        (start, w_end, w_end + l.out_dim)
    }

    pub fn weight(&self, layer: usize) -> &[f64] {
        let (s, w, _) = self.offsets(layer);
        &self.values[s..w]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let (_, w, e) = self.offsets(layer);
        &self.values[w..e]
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut [f64] {
        let (s, w, _) = self.offsets(layer);
        &mut self.values[s..w]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [f64] {
        let (_, w, e) = self.offsets(layer);
        &mut self.values[w..e]
    }

    /// `(name, shape, values)` per parameter tensor, canonical order.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            out.push((
                format!("{}.l{i}.w", self.role),
                vec![l.in_dim, l.out_dim],
                self.weight(i),
            ));
            out.push((format!("{}.l{i}.b", self.role), vec![l.out_dim], self.bias(i)));
        }
        out
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Adds a flat gradient (canonical order) into the pending gradient.
    pub fn accumulate_grad(&mut self, grad: &[f64]) -> Result<()> {
        if grad.len() != self.values.len() {
            return Err(Error::Contract(format!(
                "{} gradient length {} != {} parameters",
                self.role,
                grad.len(),
                self.values.len()
            )));
        }
        match &mut self.grad {
            Some(g) => g.iter_mut().zip(grad).for_each(|(a, b)| *a += b),
            None => self.grad = Some(grad.to_vec()),
        }
        Ok(())
    }

    pub(crate) fn take_grad(&mut self) -> Option<Vec<f64>> {
        self.grad.take()
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Records the forward pass on `g`. Frozen parameters enter as constants,
    /// so gradients can flow through the network to its input without
    /// reaching its weights.
    pub fn forward<'a>(
        &'a self,
        g: &mut Graph<'a>,
        x: Var,
        trainable: bool,
    ) -> Result<(Var, Binding)> {
        let rows = match g.shape(x) {
            [r, c] if *c == self.input_dim() => *r,
            other => {
                return Err(Error::Contract(format!(
                    "{} expects [_, {}] input, got {other:?}",
                    self.role,
                    self.input_dim()
                )))
            }
        };
        let mut h = x;
        let mut vars = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let (w, b) = if trainable {
                (
                    g.param_ref(&[l.in_dim, l.out_dim], self.weight(i))?,
                    g.param_ref(&[l.out_dim], self.bias(i))?,
                )
            } else {
                (
                    g.constant_ref(&[l.in_dim, l.out_dim], self.weight(i))?,
                    g.constant_ref(&[l.out_dim], self.bias(i))?,
                )
            };
            vars.push((w, b));
            let lin = g.matmul(h, w)?;
            let bias = g.broadcast_rows(b, rows)?;
            let pre = g.add(lin, bias)?;
            h = match l.activation {
                Activation::Relu => g.relu(pre)?,
                Activation::Sigmoid => g.sigmoid(pre)?,
                Activation::LeakyRelu => g.leaky_relu(pre, LEAKY_SLOPE)?,
                Activation::Linear => pre,
            };
        }
        Ok((h, Binding { vars }))
    }

    /// Flat gradient (canonical order) collected from a graph after backward.
    /// Parameters that received nothing contribute zeros.
    pub fn collect_grad(&self, g: &Graph<'_>, binding: &Binding) -> Vec<f64> {
        let mut out = vec![0.0; self.values.len()];
        for (i, (w, b)) in binding.vars.iter().enumerate() {
            let (s, wo, e) = self.offsets(i);
            if let Some(gw) = g.grad(*w) {
                out[s..wo].copy_from_slice(gw);
            }
            if let Some(gb) = g.grad(*b) {
                out[wo..e].copy_from_slice(gb);
            }
        }
        out
    }

    /// Inference without gradient tracking, processed in row chunks.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        const CHUNK: usize = 1024;
        let n = x.rows();
        let mut out = Vec::with_capacity(n * self.output_dim());
        let mut start = 0;
        while start < n {
            let end = (start + CHUNK).min(n);
            let cols = x.cols();
            let slice = &x.data()[start * cols..end * cols];
            let mut g = Graph::new();
            let xin = g.constant_ref(&[end - start, cols], slice)?;
            let (y, _) = self.forward(&mut g, xin, false)?;
            out.extend_from_slice(g.data(y));
            start = end;
        }
        Ok(Tensor::matrix(n, self.output_dim(), out)?)
    }
}

fn chain(dims: &[usize], hidden_act: Activation, last_act: Activation) -> Vec<LayerSpec> {
    let n = dims.len() - 1;
    (0..n)
        .map(|i| LayerSpec {
            in_dim: dims[i],
            out_dim: dims[i + 1],
            activation: if i + 1 == n { last_act } else { hidden_act },
        })
        .collect()
}

/// `n → hidden… → d`, ReLU on hidden layers, linear bottleneck.
pub fn build_encoder(input_dim: usize, arch: &Architecture) -> Result<NetworkParams> {
    let mut dims = vec![input_dim];
    dims.extend(&arch.ae_hidden);
    dims.push(arch.embed_dim);
    NetworkParams::new(
        NetworkRole::Encoder,
        chain(&dims, Activation::Relu, Activation::Linear),
    )
}

/// Mirror of the encoder: `d → …hidden → n`, linear output.
pub fn build_decoder(output_dim: usize, arch: &Architecture) -> Result<NetworkParams> {
    let mut dims = vec![arch.embed_dim];
    dims.extend(arch.ae_hidden.iter().rev());
    dims.push(output_dim);
    NetworkParams::new(
        NetworkRole::Decoder,
        chain(&dims, Activation::Relu, Activation::Linear),
    )
}

/// `n → adv_hidden… → 1` with leaky-ReLU hidden layers and a sigmoid output.
pub fn build_discriminator(input_dim: usize, arch: &Architecture) -> Result<NetworkParams> {
    let mut dims = vec![input_dim];
    dims.extend(&arch.adv_hidden);
    dims.push(1);
    NetworkParams::new(
        NetworkRole::Discriminator,
        chain(&dims, Activation::LeakyRelu, Activation::Sigmoid),
    )
}

/// Same body as the discriminator with an unbounded linear output.
pub fn build_critic(input_dim: usize, arch: &Architecture) -> Result<NetworkParams> {
    let mut dims = vec![input_dim];
    dims.extend(&arch.adv_hidden);
    dims.push(1);
    NetworkParams::new(
        NetworkRole::Critic,
        chain(&dims, Activation::LeakyRelu, Activation::Linear),
    )
}

/// The four networks of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct Networks {
    pub encoder: NetworkParams,
    pub decoder: NetworkParams,
    pub discriminator: NetworkParams,
    pub critic: NetworkParams,
}

impl Networks {
    pub fn build(input_dim: usize, arch: &Architecture) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Contract("input dimension must be positive".into()));
        }
        Ok(Networks {
            encoder: build_encoder(input_dim, arch)?,
            decoder: build_decoder(input_dim, arch)?,
            discriminator: build_discriminator(input_dim, arch)?,
            critic: build_critic(input_dim, arch)?,
        })
    }

    /// Builds and initializes all four networks from one seed.
    pub fn initialized(input_dim: usize, arch: &Architecture, seed: u64) -> Result<Self> {
        let mut nets = Networks::build(input_dim, arch)?;
        init_params(&mut nets.encoder, seed);
        init_params(&mut nets.decoder, seed.wrapping_add(1));
        init_params(&mut nets.discriminator, seed.wrapping_add(2));
        init_params(&mut nets.critic, seed.wrapping_add(3));
        Ok(nets)
    }

    pub fn embed_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn iter(&self) -> impl Iterator<Item = &NetworkParams> {
        [&self.encoder, &self.decoder, &self.discriminator, &self.critic].into_iter()
    }

    pub fn get_mut(&mut self, role: NetworkRole) -> &mut NetworkParams {
        match role {
            NetworkRole::Encoder => &mut self.encoder,
            NetworkRole::Decoder => &mut self.decoder,
            NetworkRole::Discriminator => &mut self.discriminator,
            NetworkRole::Critic => &mut self.critic,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Architecture {
        Architecture {
            embed_dim: 3,
            ae_hidden: vec![5, 4],
            adv_hidden: vec![6],
        }
    }

    #[test]
    fn default_sized_parameter_counts() {
        let arch = Architecture::default();
        // (784·500+500) + (500·500+500) + (500·2000+2000) + (2000·10+10)
        assert_eq!(build_encoder(784, &arch).unwrap().num_params(), 1_665_010);
        // (10·2000+2000) + (2000·500+500) + (500·500+500) + (500·784+784)
        assert_eq!(build_decoder(784, &arch).unwrap().num_params(), 1_665_784);
    }

    #[test]
    fn zero_params_give_zero_embedding_and_reconstruction() {
        let arch = small();
        let enc = build_encoder(7, &arch).unwrap();
        let dec = build_decoder(7, &arch).unwrap();
        let x = Tensor::full(vec![4, 7], 0.8);
        let z = enc.predict(&x).unwrap();
        assert_eq!(z.shape(), &[4, 3]);
        assert!(z.data().iter().all(|v| *v == 0.0));
        let xr = dec.predict(&z).unwrap();
        assert_eq!(xr.shape(), &[4, 7]);
        assert!(xr.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn discriminator_and_critic_outputs() {
        let arch = small();
        let d = build_discriminator(7, &arch).unwrap();
        let c = build_critic(7, &arch).unwrap();
        let x = Tensor::full(vec![3, 7], 2.0);
        let out = d.predict(&x).unwrap();
        assert_eq!(out.shape(), &[3, 1]);
        assert!(out.data().iter().all(|v| *v == 0.5));
        assert!(c.predict(&x).unwrap().data().iter().all(|v| *v == 0.0));

        let nets = Networks::initialized(7, &arch, 11).unwrap();
        for level in [0.0, 1.5, 3.0] {
            let x = Tensor::full(vec![5, 7], level);
            let out = nets.discriminator.predict(&x).unwrap();
            assert!(out.data().iter().all(|v| *v > 0.0 && *v < 1.0));
            assert!(nets.critic.predict(&x).unwrap().all_finite());
        }
    }

    #[test]
    fn encoder_decoder_preserve_batch_and_dim() {
        let nets = Networks::initialized(9, &small(), 3).unwrap();
        let x = Tensor::full(vec![6, 9], 0.1);
        let z = nets.encoder.predict(&x).unwrap();
        let xr = nets.decoder.predict(&z).unwrap();
        assert_eq!(xr.shape(), x.shape());
    }

    #[test]
    fn broken_chain_rejected() {
        let layers = vec![
            LayerSpec { in_dim: 3, out_dim: 4, activation: Activation::Relu },
            LayerSpec { in_dim: 5, out_dim: 1, activation: Activation::Linear },
        ];
        assert!(NetworkParams::new(NetworkRole::Critic, layers).is_err());
    }

    #[test]
    fn named_tensors_follow_flatten_order() {
        let enc = build_encoder(4, &small()).unwrap();
        let names: Vec<_> = enc.named_tensors().into_iter().map(|t| t.0).collect();
        assert_eq!(names[0], "encoder.l0.w");
        assert_eq!(names[1], "encoder.l0.b");
        let total: usize = enc.named_tensors().iter().map(|t| t.2.len()).sum();
        assert_eq!(total, enc.num_params());
    }
}
