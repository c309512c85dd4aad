use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Linear autoencoder `z = A·x`, `x̂ = B·z` with a two-way partition of the
/// samples, used to check the k-means/reconstruction decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionInstance {
    /// N×n samples.
    pub x: Tensor,
    /// d×n encoder with orthonormal rows.
    pub a: Tensor,
    /// n×d decoder.
    pub b: Tensor,
    /// Cluster index (0 or 1) per sample.
    pub assign: Vec<usize>,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem1Report {
    pub l_k: f64,
    /// `Σ‖z_i − ẑ_i‖²` with `ẑ = A·B·z`.
    pub l_r_latent: f64,
    /// `Σ‖x_i − x̂_i‖²`.
    pub l_r_data: f64,
    pub j1: f64,
    pub j2: f64,
    pub j3: f64,
    /// `L_k + γ·L_r`, the data-space objective.
    pub l_dcn: f64,
    /// `(1+γ)J₁ − ½J₂ + γJ₃`.
    pub rhs: f64,
    /// Relative gap of the latent-space identity.
    pub residual_latent: f64,
    /// Relative gap with the data-space reconstruction; exact only when `d = n`.
    pub residual_data: f64,
}

fn to_dmatrix(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.data())
}

fn from_dmatrix(m: &DMatrix<f64>) -> Tensor {
    let mut data = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            data.push(m[(i, j)]);
        }
    }
    Tensor::matrix(m.nrows(), m.ncols(), data).expect("non-empty matrix")
}

fn gaussian(rows: usize, cols: usize, rng: &mut Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// d×n matrix with orthonormal rows.
pub fn random_semi_orthogonal(d: usize, n: usize, rng: &mut Rng) -> Result<Tensor> {
    if d == 0 || d > n {
        return Err(Error::Contract(format!("need 0 < d <= n, got d={d}, n={n}")));
    }
    let q = gaussian(n, d, rng).qr().q();
    Ok(from_dmatrix(&q.transpose()))
}

impl DecompositionInstance {
    pub fn random(n_samples: usize, n: usize, d: usize, gamma: f64, rng: &mut Rng) -> Result<Self> {
        if n_samples < 2 {
            return Err(Error::Contract("need at least two samples".into()));
        }
        let x = from_dmatrix(&gaussian(n_samples, n, rng));
        let a = random_semi_orthogonal(d, n, rng)?;
        let b = from_dmatrix(&gaussian(n, d, rng));
        let mut assign: Vec<usize> = (0..n_samples).map(|_| rng.random_range(0..2)).collect();
        assign[0] = 0;
        assign[1] = 1;
        let inst = DecompositionInstance {
            x,
            a,
            b,
            assign,
            gamma,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        let (d, n) = (self.a.rows(), self.a.cols());
        if self.x.cols() != n || self.b.shape() != [n, d] || self.assign.len() != self.x.rows() {
            return Err(Error::Contract("decomposition instance shapes are inconsistent".into()));
        }
        let a = to_dmatrix(&self.a);
        let gap = (&a * a.transpose() - DMatrix::identity(d, d)).abs().max();
        if gap >= 1e-10 {
            return Err(Error::Contract(format!("encoder rows are not orthonormal (gap {gap:e})")));
        }
        for c in 0..2 {
            if !self.assign.contains(&c) {
                return Err(Error::Contract(format!("cluster {c} is empty")));
            }
        }
        if self.assign.iter().any(|c| *c > 1) {
            return Err(Error::Contract("assignments must be 0 or 1".into()));
        }
        if self.gamma < 0.0 {
            return Err(Error::Contract("γ must be non-negative".into()));
        }
        Ok(())
    }
}

fn sq(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum()
}

/// Evaluates both sides of the decomposition
/// `L_k + γ·L_r = (1+γ)J₁ − ½J₂ + γJ₃`.
pub fn check_theorem1(inst: &DecompositionInstance) -> Result<Theorem1Report> {
    inst.validate()?;
    let x = to_dmatrix(&inst.x).transpose(); // n×N, columns are samples
    let a = to_dmatrix(&inst.a);
    let b = to_dmatrix(&inst.b);
    let z = &a * &x;
    let xhat = &b * &z;
    let zhat = &a * &xhat;
    let big_n = x.ncols();
    let col = |m: &DMatrix<f64>, i: usize| m.column(i).into_owned();

    let members: [Vec<usize>; 2] = [0, 1].map(|c| (0..big_n).filter(|i| inst.assign[*i] == c).collect());
    let counts = members.clone().map(|m| m.len() as f64);

    // L_k from cluster means
    let mut l_k = 0.0;
    for m in &members {
        let mean = m.iter().map(|i| col(&z, *i)).sum::<nalgebra::DVector<f64>>() / m.len() as f64;
        l_k += m.iter().map(|i| (col(&z, *i) - &mean).norm_squared()).sum::<f64>();
    }

    // pairwise distances d(C_a, C_b) = Σ_{i∈C_a} Σ_{j∈C_b} ‖z_i − z_j‖²
    let dist = |ca: &[usize], cb: &[usize]| -> f64 {
        let mut s = 0.0;
        for i in ca {
            for j in cb {
                s += (col(&z, *i) - col(&z, *j)).norm_squared();
            }
        }
        s
    };
    let d11 = dist(&members[0], &members[0]);
    let d22 = dist(&members[1], &members[1]);
    let d12 = dist(&members[0], &members[1]);
    let nf = big_n as f64;
    let (n1, n2) = (counts[0], counts[1]);
    let j1 = d12 / nf + d11 / (2.0 * nf) + d22 / (2.0 * nf);
    let j2 = n1 * n2 / nf * (2.0 * d12 / (n1 * n2) - d11 / (n1 * n1) - d22 / (n2 * n2));

    let zbar = z.column_mean();
    let mut j3 = 0.0;
    for i in 0..big_n {
        let dz = col(&z, i) - &zbar;
        let dh = col(&zhat, i) - &zbar;
        j3 += dh.norm_squared() - 2.0 * dz.dot(&dh);
    }

    let l_r_latent = sq((&z - &zhat).iter().copied());
    let l_r_data = sq((&x - &xhat).iter().copied());
    let g = inst.gamma;
    let rhs = (1.0 + g) * j1 - 0.5 * j2 + g * j3;
    let rel = |lhs: f64| (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-300);
    let l_dcn = l_k + g * l_r_data;
    Ok(Theorem1Report {
        l_k,
        l_r_latent,
        l_r_data,
        j1,
        j2,
        j3,
        l_dcn,
        rhs,
        residual_latent: rel(l_k + g * l_r_latent),
        residual_data: rel(l_dcn),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn random_instances_satisfy_latent_identity() {
        let mut rng = seeded(0);
        for t in 0..50 {
            let n = rng.random_range(2..=12);
            let d = rng.random_range(1..=n.min(6));
            let big_n = rng.random_range(2..=60);
            let gamma = [0.0, 0.5, 2.0][t % 3];
            let inst = DecompositionInstance::random(big_n, n, d, gamma, &mut rng).unwrap();
            let r = check_theorem1(&inst).unwrap();
            assert!(r.residual_latent < 1e-8, "{r:?}");
        }
    }

    #[test]
    fn orthogonal_endpoint() {
        let mut rng = seeded(1);
        let mut inst = DecompositionInstance::random(20, 5, 5, 0.7, &mut rng).unwrap();
        inst.b = inst.a.transpose();
        let r = check_theorem1(&inst).unwrap();
        assert!(r.l_r_data < 1e-20 && r.l_r_latent < 1e-20);
        assert!((r.j3 + r.j1).abs() < 1e-10 * r.j1);
        assert!((r.l_dcn - r.l_k).abs() < 1e-10 * r.l_k);
        assert!((r.l_k - (r.j1 - 0.5 * r.j2)).abs() < 1e-10 * r.l_k);
    }

    #[test]
    fn rejects_bad_instances() {
        let mut rng = seeded(2);
        let mut inst = DecompositionInstance::random(6, 3, 2, 1.0, &mut rng).unwrap();
        inst.assign = vec![0; 6];
        assert!(matches!(check_theorem1(&inst), Err(Error::Contract(_))));
        let mut inst = DecompositionInstance::random(6, 3, 2, 1.0, &mut rng).unwrap();
        inst.a = Tensor::full(vec![2, 3], 1.0);
        assert!(check_theorem1(&inst).is_err());
    }
}
