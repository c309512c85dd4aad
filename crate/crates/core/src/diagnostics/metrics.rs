use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Minimum-cost perfect assignment on a square cost matrix; `out[row] = col`.
/// Kuhn–Munkres with row/column potentials, O(K³).
pub fn hungarian(cost: &Tensor) -> Result<Vec<usize>> {
    let n = match cost.shape() {
        [r, c] if r == c => *r,
        s => return Err(Error::Contract(format!("assignment needs a square matrix, got {s:?}"))),
    };
    if !cost.all_finite() {
        return Err(Error::Contract("assignment cost must be finite".into()));
    }
    let a = |i: usize, j: usize| cost.at(i - 1, j - 1);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = a(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=n {
        out[p[j] - 1] = j - 1;
    }
    Ok(out)
}

fn check_pair(y_true: &[usize], y_pred: &[usize]) -> Result<()> {
    if y_true.is_empty() {
        return Err(Error::Contract("metrics need at least one sample".into()));
    }
    if y_true.len() != y_pred.len() {
        return Err(Error::Contract(format!(
            "label lengths differ: {} vs {}",
            y_true.len(),
            y_pred.len()
        )));
    }
    Ok(())
}

/// Optimal cluster→class mapping; `out[cluster] = class`. The table is padded
/// to a square of side `max(#classes, #clusters)`.
pub fn align_clusters(y_true: &[usize], y_pred: &[usize]) -> Result<Vec<usize>> {
    check_pair(y_true, y_pred)?;
    let k = y_true.iter().chain(y_pred).max().copied().unwrap_or(0) + 1;
    let mut w = vec![0.0; k * k];
    for (t, p) in y_true.iter().zip(y_pred) {
        w[p * k + t] += 1.0;
    }
    let top = w.iter().cloned().fold(0.0, f64::max);
    let cost = Tensor::matrix(k, k, w.iter().map(|c| top - c).collect())?;
    hungarian(&cost)
}

/// Clustering accuracy under the best one-to-one relabeling of `y_pred`.
pub fn accuracy(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    let map = align_clusters(y_true, y_pred)?;
    let hits = y_true
        .iter()
        .zip(y_pred)
        .filter(|(t, p)| map[**p] == **t)
        .count();
    Ok(hits as f64 / y_true.len() as f64)
}

/// Counts `[class][aligned cluster]`, where column `c` holds the cluster
/// mapped onto class `c`. Square of side `max(#classes, #clusters)`.
pub fn confusion(y_true: &[usize], y_pred: &[usize]) -> Result<Vec<Vec<usize>>> {
    let map = align_clusters(y_true, y_pred)?;
    let k = map.len();
    let mut table = vec![vec![0; k]; k];
    for (t, p) in y_true.iter().zip(y_pred) {
        table[*t][map[*p]] += 1;
    }
    Ok(table)
}

fn entropy(counts: &[f64], n: f64) -> f64 {
    counts
        .iter()
        .filter(|c| **c > 0.0)
        .map(|c| {
            let p = c / n;
            -p * p.ln()
        })
        .sum()
}

/// `I(U; V) / ((H(U) + H(V)) / 2)` in nats; 0 when the mutual information is 0.
pub fn nmi(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    check_pair(y_true, y_pred)?;
    let ku = y_true.iter().max().unwrap() + 1;
    let kv = y_pred.iter().max().unwrap() + 1;
    let n = y_true.len() as f64;
    let mut joint = vec![0.0; ku * kv];
    let mut cu = vec![0.0; ku];
    let mut cv = vec![0.0; kv];
    for (u, v) in y_true.iter().zip(y_pred) {
        joint[u * kv + v] += 1.0;
        cu[*u] += 1.0;
        cv[*v] += 1.0;
    }
    let mut mi = 0.0;
    for u in 0..ku {
        for v in 0..kv {
            let c = joint[u * kv + v];
            if c > 0.0 {
                mi += c / n * (c * n / (cu[u] * cv[v])).ln();
            }
        }
    }
    let denom = 0.5 * (entropy(&cu, n) + entropy(&cv, n));
    if mi <= 0.0 || denom <= 0.0 {
        return Ok(0.0);
    }
    Ok((mi / denom).clamp(0.0, 1.0))
}
