//! Stage losses of the adversarial pipeline and the DEC/IDEC baselines.
//!
//! Every builder records its own graph, registers only its recipient
//! parameter groups as trainable and returns the scalar value together with
//! the gradients that reached each group. Groups that received nothing are
//! `None`.

use rand::Rng as _;

use crate::cluster::{kl_graph, soft_assign_graph, Reduction};
use crate::error::{Error, Result};
use crate::nn::{Binding, NetworkParams, Networks};
use crate::rng::Rng;
use crate::tensor::{Graph, Tensor, Var};

/// Lower bound on the argument of every `log` applied to a discriminator output.
pub const LOG_FLOOR: f64 = 1e-12;

/// Upper end of the per-sample interpolation coefficient draw.
pub const MAX_INTERP_ALPHA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Group {
    Encoder,
    Decoder,
    Discriminator,
    Critic,
    Centroids,
}

impl Group {
    pub const ALL: [Group; 5] = [
        Group::Encoder,
        Group::Decoder,
        Group::Discriminator,
        Group::Critic,
        Group::Centroids,
    ];
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Grads {
    pub encoder: Option<Vec<f64>>,
    pub decoder: Option<Vec<f64>>,
    pub discriminator: Option<Vec<f64>>,
    pub critic: Option<Vec<f64>>,
    pub centroids: Option<Vec<f64>>,
}

impl Grads {
    pub fn get(&self, group: Group) -> Option<&[f64]> {
        match group {
            Group::Encoder => self.encoder.as_deref(),
            Group::Decoder => self.decoder.as_deref(),
            Group::Discriminator => self.discriminator.as_deref(),
            Group::Critic => self.critic.as_deref(),
            Group::Centroids => self.centroids.as_deref(),
        }
    }

    /// Groups holding at least one non-zero gradient entry.
    pub fn nonzero_groups(&self) -> Vec<Group> {
        Group::ALL
            .into_iter()
            .filter(|g| self.get(*g).is_some_and(|v| v.iter().any(|x| *x != 0.0)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub grads: Grads,
}

/// Random quantities of one pretraining step: a per-row interpolation
/// coefficient and one mixing coefficient for the critic's real/reconstruction
/// blend.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationDraw {
    pub alpha: Vec<f64>,
    pub gamma_c: f64,
}

impl InterpolationDraw {
    pub fn new(alpha: Vec<f64>, gamma_c: f64) -> Result<Self> {
        if alpha.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::Contract("interpolation coefficients must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&gamma_c) {
            return Err(Error::Contract(format!("mixing coefficient {gamma_c} outside [0, 1]")));
        }
        Ok(InterpolationDraw { alpha, gamma_c })
    }

    /// `α_i ~ U(0, 0.5)` per row (or the fixed value), `γ_c ~ U(0, 1)`.
    pub fn sample(m: usize, rng: &mut Rng, fixed_alpha: Option<f64>) -> Self {
        let alpha = (0..m)
            .map(|_| match fixed_alpha {
                Some(a) => a,
                None => rng.random_range(0.0..=MAX_INTERP_ALPHA),
            })
            .collect();
        InterpolationDraw {
            alpha,
            gamma_c: rng.random_range(0.0..=1.0),
        }
    }
}

fn batch_rows(x: &Tensor) -> Result<usize> {
    match x.shape() {
        [m, _] if *m > 0 => Ok(*m),
        s => Err(Error::Contract(format!("batch must be a non-empty matrix, got {s:?}"))),
    }
}

fn collect(net: &NetworkParams, g: &Graph<'_>, bindings: &[&Binding]) -> Option<Vec<f64>> {
    let mut out: Option<Vec<f64>> = None;
    for b in bindings.iter().filter(|b| b.touched(g)) {
        let part = net.collect_grad(g, b);
        match &mut out {
            Some(acc) => acc.iter_mut().zip(&part).for_each(|(a, p)| *a += p),
            None => out = Some(part),
        }
    }
    out
}

/// Mean squared error over all entries, `Σ‖a_i − b_i‖² / (m·n)`.
fn mean_sq_error(g: &mut Graph<'_>, a: Var, b: Var) -> Result<Var> {
    let diff = g.sub(a, b)?;
    let sq = g.square(diff)?;
    Ok(g.mean(sq)?)
}

/// Mean over rows of `log(max(v, floor))` for an m×1 column.
fn mean_log(g: &mut Graph<'_>, v: Var) -> Result<Var> {
    let c = g.clamp_min(v, LOG_FLOOR)?;
    let l = g.log(c)?;
    Ok(g.mean(l)?)
}

/// Per-row `log(max(1 − v, floor))` for an m×1 column.
fn log_one_minus(g: &mut Graph<'_>, v: Var) -> Result<Var> {
    let neg = g.neg(v)?;
    let om = g.add_scalar(neg, 1.0)?;
    let c = g.clamp_min(om, LOG_FLOOR)?;
    Ok(g.log(c)?)
}

/// Detached tensors produced by the autoencoder step, reused by the critic.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainOutputs {
    pub xhat: Tensor,
    pub xhat_alpha: Tensor,
}

/// `mse(x, G(E(x))) + λ·mean C(G(α·E(x₁) + (1−α)·E(x₂)))²`, with `x₂` the
/// batch in reverse order. Recipients: encoder, decoder.
pub fn pretrain_ae_loss(
    nets: &Networks,
    x: &Tensor,
    draws: &InterpolationDraw,
    lambda: f64,
) -> Result<(LossEval, PretrainOutputs)> {
    let m = batch_rows(x)?;
    if draws.alpha.len() != m {
        return Err(Error::Contract(format!("{} draws for {m} rows", draws.alpha.len())));
    }
    if lambda < 0.0 {
        return Err(Error::Config(format!("λ must be non-negative, got {lambda}")));
    }
    let d = nets.embed_dim();
    let mut g = Graph::new();
    let xv = g.constant_ref(x.shape(), x.data())?;
    let (z, be) = nets.encoder.forward(&mut g, xv, true)?;
    let (xhat, bd0) = nets.decoder.forward(&mut g, z, true)?;
    let rec = mean_sq_error(&mut g, xv, xhat)?;

    let rev: Vec<usize> = (0..m).rev().collect();
    let z2 = g.gather_rows(z, &rev)?;
    let a = g.constant(Tensor::matrix(m, 1, draws.alpha.clone())?);
    let a = g.broadcast_cols(a, d)?;
    let delta = g.sub(z, z2)?;
    let delta = g.mul(a, delta)?;
    let z_alpha = g.add(z2, delta)?;
    let (xhat_alpha, bd1) = nets.decoder.forward(&mut g, z_alpha, true)?;
    let (c, _) = nets.critic.forward(&mut g, xhat_alpha, false)?;
    let c2 = g.square(c)?;
    let reg = g.mean(c2)?;
    let reg = g.scale(reg, lambda)?;
    let loss = g.add(rec, reg)?;
    g.backward(loss)?;

    let outputs = PretrainOutputs {
        xhat: g.value(xhat),
        xhat_alpha: g.value(xhat_alpha),
    };
    let grads = Grads {
        encoder: collect(&nets.encoder, &g, &[&be]),
        decoder: collect(&nets.decoder, &g, &[&bd0, &bd1]),
        ..Grads::default()
    };
    Ok((
        LossEval {
            value: g.scalar_value(loss),
            grads,
        },
        outputs,
    ))
}

/// `mean(C(x̂_α) − α)² + mean C(γ_c·x + (1−γ_c)·x̂)²` on detached inputs.
/// Recipient: critic.
pub fn critic_loss_from(
    critic: &NetworkParams,
    x: &Tensor,
    outputs: &PretrainOutputs,
    draws: &InterpolationDraw,
) -> Result<LossEval> {
    let m = batch_rows(x)?;
    if outputs.xhat.shape() != x.shape() || outputs.xhat_alpha.shape() != x.shape() {
        return Err(Error::Contract("critic inputs must match the batch shape".into()));
    }
    let gc = draws.gamma_c;
    let mix: Vec<f64> = x
        .data()
        .iter()
        .zip(outputs.xhat.data())
        .map(|(a, b)| gc * a + (1.0 - gc) * b)
        .collect();
    let mut g = Graph::new();
    let xa = g.constant_ref(x.shape(), outputs.xhat_alpha.data())?;
    let (ca, b0) = critic.forward(&mut g, xa, true)?;
    let target = g.constant(Tensor::matrix(m, 1, draws.alpha.clone())?);
    let diff = g.sub(ca, target)?;
    let diff = g.square(diff)?;
    let t1 = g.mean(diff)?;
    let xm = g.constant(Tensor::new(x.shape().to_vec(), mix)?);
    let (cm, b1) = critic.forward(&mut g, xm, true)?;
    let cm = g.square(cm)?;
    let t2 = g.mean(cm)?;
    let loss = g.add(t1, t2)?;
    g.backward(loss)?;
    Ok(LossEval {
        value: g.scalar_value(loss),
        grads: Grads {
            critic: collect(critic, &g, &[&b0, &b1]),
            ..Grads::default()
        },
    })
}

/// Critic loss with the autoencoder outputs recomputed from `nets`.
pub fn critic_loss(nets: &Networks, x: &Tensor, draws: &InterpolationDraw) -> Result<LossEval> {
    let (_, outputs) = pretrain_ae_loss(nets, x, draws, 0.0)?;
    critic_loss_from(&nets.critic, x, &outputs, draws)
}

/// Detached intermediates of the encoder step, reusable by the decoder and
/// discriminator steps at the same parameter state.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutputs {
    pub z: Tensor,
    pub xhat: Tensor,
    pub q: Tensor,
}

/// Which parts of the encoder objective to record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderTerms {
    pub kl: bool,
    pub adversarial: bool,
}

impl EncoderTerms {
    pub const FULL: EncoderTerms = EncoderTerms {
        kl: true,
        adversarial: true,
    };
    pub const KL: EncoderTerms = EncoderTerms {
        kl: true,
        adversarial: false,
    };
    pub const ADVERSARIAL: EncoderTerms = EncoderTerms {
        kl: false,
        adversarial: true,
    };
}

/// `KL(P‖Q) + Σ_i log(1 − D(G(E(x_i))))`, both reduced by `reduction`.
/// Recipients: encoder and centroids.
pub fn encoder_cluster_loss_terms(
    nets: &Networks,
    mu: &Tensor,
    x: &Tensor,
    p_rows: &Tensor,
    dof: f64,
    terms: EncoderTerms,
    reduction: Reduction,
) -> Result<(LossEval, EncoderOutputs)> {
    let m = batch_rows(x)?;
    if p_rows.rows() != m || p_rows.cols() != mu.rows() {
        return Err(Error::Contract(format!(
            "target rows {:?} do not match batch {m} × K {}",
            p_rows.shape(),
            mu.rows()
        )));
    }
    let mut g = Graph::new();
    let xv = g.constant_ref(x.shape(), x.data())?;
    let (z, be) = nets.encoder.forward(&mut g, xv, true)?;
    let muv = g.param_ref(mu.shape(), mu.data())?;
    let q = soft_assign_graph(&mut g, z, muv, dof)?;
    let (xhat, _) = nets.decoder.forward(&mut g, z, false)?;
    let kl = kl_graph(&mut g, p_rows, q, reduction)?;
    let loss = if terms.adversarial {
        let (dv, _) = nets.discriminator.forward(&mut g, xhat, false)?;
        let l = log_one_minus(&mut g, dv)?;
        let adv = match reduction {
            Reduction::Sum => g.sum(l)?,
            Reduction::Mean => g.mean(l)?,
        };
        if terms.kl {
            g.add(kl, adv)?
        } else {
            adv
        }
    } else {
        kl
    };
    g.backward(loss)?;
    let outputs = EncoderOutputs {
        z: g.value(z),
        xhat: g.value(xhat),
        q: g.value(q),
    };
    let grads = Grads {
        encoder: collect(&nets.encoder, &g, &[&be]),
        centroids: g.grad(muv).map(<[f64]>::to_vec),
        ..Grads::default()
    };
    Ok((
        LossEval {
            value: g.scalar_value(loss),
            grads,
        },
        outputs,
    ))
}

/// The encoder objective with batch-mean reduction.
pub fn encoder_cluster_loss(
    nets: &Networks,
    mu: &Tensor,
    x: &Tensor,
    p_rows: &Tensor,
    dof: f64,
) -> Result<(LossEval, EncoderOutputs)> {
    encoder_cluster_loss_terms(nets, mu, x, p_rows, dof, EncoderTerms::FULL, Reduction::Mean)
}

/// `mse(x, G(z))`, the per-entry mean squared error, with `z` held fixed. Recipient: decoder.
pub fn decoder_loss_from(decoder: &NetworkParams, x: &Tensor, z: &Tensor) -> Result<LossEval> {
    batch_rows(x)?;
    let mut g = Graph::new();
    let xv = g.constant_ref(x.shape(), x.data())?;
    let zv = g.constant_ref(z.shape(), z.data())?;
    let (xhat, bd) = decoder.forward(&mut g, zv, true)?;
    let loss = mean_sq_error(&mut g, xv, xhat)?;
    g.backward(loss)?;
    Ok(LossEval {
        value: g.scalar_value(loss),
        grads: Grads {
            decoder: collect(decoder, &g, &[&bd]),
            ..Grads::default()
        },
    })
}

/// `mse(x, G(detach E(x)))`. Recipient: decoder.
pub fn decoder_loss(nets: &Networks, x: &Tensor) -> Result<LossEval> {
    batch_rows(x)?;
    let mut g = Graph::new();
    let xv = g.constant_ref(x.shape(), x.data())?;
    let (z, be) = nets.encoder.forward(&mut g, xv, true)?;
    let zd = g.detach(z);
    let (xhat, bd) = nets.decoder.forward(&mut g, zd, true)?;
    let loss = mean_sq_error(&mut g, xv, xhat)?;
    g.backward(loss)?;
    Ok(LossEval {
        value: g.scalar_value(loss),
        grads: Grads {
            encoder: collect(&nets.encoder, &g, &[&be]),
            decoder: collect(&nets.decoder, &g, &[&bd]),
            ..Grads::default()
        },
    })
}

/// `V = mean log D(x) + mean log(1 − D(x̂))` on a detached `x̂`. The returned
/// value is `V`; the gradients are those of `−V`, so a descent step on them
/// ascends `V`. Recipient: discriminator.
pub fn discriminator_value_from(
    disc: &NetworkParams,
    x: &Tensor,
    xhat: &Tensor,
) -> Result<LossEval> {
    batch_rows(x)?;
    let mut g = Graph::new();
    let xv = g.constant_ref(x.shape(), x.data())?;
    let fv = g.constant_ref(xhat.shape(), xhat.data())?;
    let (dr, b0) = disc.forward(&mut g, xv, true)?;
    let (df, b1) = disc.forward(&mut g, fv, true)?;
    let real = mean_log(&mut g, dr)?;
    let fake = log_one_minus(&mut g, df)?;
    let fake = g.mean(fake)?;
    let v = g.add(real, fake)?;
    let neg = g.neg(v)?;
    g.backward(neg)?;
    Ok(LossEval {
        value: g.scalar_value(v),
        grads: Grads {
            discriminator: collect(disc, &g, &[&b0, &b1]),
            ..Grads::default()
        },
    })
}

/// Discriminator value with `x̂ = G(E(x))` recomputed through detached
/// encoder and decoder.
pub fn discriminator_value(nets: &Networks, x: &Tensor) -> Result<LossEval> {
    batch_rows(x)?;
    let mut g = Graph::new();
    let xv = g.constant_ref(x.shape(), x.data())?;
    let (z, be) = nets.encoder.forward(&mut g, xv, true)?;
    let (xhat, bd) = nets.decoder.forward(&mut g, z, true)?;
    let xhat_d = g.detach(xhat);
    let (dr, b0) = nets.discriminator.forward(&mut g, xv, true)?;
    let (df, b1) = nets.discriminator.forward(&mut g, xhat_d, true)?;
    let real = mean_log(&mut g, dr)?;
    let fake = log_one_minus(&mut g, df)?;
    let fake = g.mean(fake)?;
    let v = g.add(real, fake)?;
    let neg = g.neg(v)?;
    g.backward(neg)?;
    Ok(LossEval {
        value: g.scalar_value(v),
        grads: Grads {
            encoder: collect(&nets.encoder, &g, &[&be]),
            decoder: collect(&nets.decoder, &g, &[&bd]),
            discriminator: collect(&nets.discriminator, &g, &[&b0, &b1]),
            ..Grads::default()
        },
    })
}

/// Reconstruction, clustering term, or both, for the DEC/IDEC baselines:
/// `w_r·mse(x, G(E(x))) + w_c·KL_mean(P‖Q)`. Terms with zero weight are
/// not recorded. Recipients: encoder, plus decoder when `w_r > 0`, plus
/// centroids when `w_c > 0`.
pub fn baseline_loss(
    nets: &Networks,
    mu: &Tensor,
    x: &Tensor,
    p_rows: &Tensor,
    dof: f64,
    w_r: f64,
    w_c: f64,
) -> Result<LossEval> {
    batch_rows(x)?;
    let mut g = Graph::new();
    let xv = g.constant_ref(x.shape(), x.data())?;
    let (z, be) = nets.encoder.forward(&mut g, xv, true)?;
    let mut total: Option<Var> = None;
    let mut bd = None;
    let mut muv = None;
    if w_c != 0.0 {
        let mv = g.param_ref(mu.shape(), mu.data())?;
        let q = soft_assign_graph(&mut g, z, mv, dof)?;
        let kl = kl_graph(&mut g, p_rows, q, Reduction::Mean)?;
        total = Some(g.scale(kl, w_c)?);
        muv = Some(mv);
    }
    if w_r != 0.0 {
        let (xhat, b) = nets.decoder.forward(&mut g, z, true)?;
        let rec = mean_sq_error(&mut g, xv, xhat)?;
        let rec = g.scale(rec, w_r)?;
        total = Some(match total {
            Some(t) => g.add(t, rec)?,
            None => rec,
        });
        bd = Some(b);
    }
    let loss = total.ok_or_else(|| Error::Config("baseline loss with both weights zero".into()))?;
    g.backward(loss)?;
    Ok(LossEval {
        value: g.scalar_value(loss),
        grads: Grads {
            encoder: collect(&nets.encoder, &g, &[&be]),
            decoder: bd.and_then(|b| collect(&nets.decoder, &g, &[&b])),
            centroids: muv.and_then(|v| g.grad(v).map(<[f64]>::to_vec)),
            ..Grads::default()
        },
    })
}
