use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use super::state::{TrainState, KMEANS_STREAM};
use crate::cluster::{kmeans_init, predict_labels, soft_assign};
use crate::data::Dataset;
use crate::diagnostics::{accuracy, confusion, nmi};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Clustering quality of a checkpoint. Label-dependent fields are `None`
/// when the dataset carries no labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub n_samples: usize,
    pub n_clusters: usize,
    pub acc: Option<f64>,
    pub nmi: Option<f64>,
    pub sizes: Vec<usize>,
    /// `[class][aligned cluster]` counts.
    pub confusion: Option<Vec<Vec<usize>>>,
}

/// Scores `y_pred` (values below `k`) against optional ground truth.
pub fn report_for(y_pred: &[usize], k: usize, y_true: Option<&[usize]>) -> Result<EvalReport> {
    let mut sizes = vec![0usize; k];
    for &c in y_pred {
        if c >= k {
            return Err(Error::Contract(format!("cluster id {c} out of range for K = {k}")));
        }
        sizes[c] += 1;
    }
    let (acc, nmi_v, conf) = match y_true {
        Some(y) => (
            Some(accuracy(y, y_pred)?),
            Some(nmi(y, y_pred)?),
            Some(confusion(y, y_pred)?),
        ),
        None => (None, None, None),
    };
    Ok(EvalReport {
        n_samples: y_pred.len(),
        n_clusters: k,
        acc,
        nmi: nmi_v,
        sizes,
        confusion: conf,
    })
}

fn join(v: &[usize], sep: &str) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(sep)
}

fn split(s: &str, sep: char) -> Result<Vec<usize>> {
    s.split(sep)
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::Table { row: 0, detail: format!("bad count {v:?}") })
        })
        .collect()
}

impl EvalReport {
    /// `key,value` rows; sizes separated by `;`, confusion rows by `;` and
    /// cells by spaces.
    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:?}"));
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let rows = [
            ("key", "value".to_string()),
            ("n_samples", self.n_samples.to_string()),
            ("n_clusters", self.n_clusters.to_string()),
            ("acc", opt(self.acc)),
            ("nmi", opt(self.nmi)),
            ("sizes", join(&self.sizes, ";")),
            (
                "confusion",
                self.confusion.as_ref().map_or(String::new(), |c| {
                    c.iter().map(|r| join(r, " ")).collect::<Vec<_>>().join(";")
                }),
            ),
        ];
        for (k, v) in rows {
            w.write_record([k, v.as_str()]).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii report")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let mut report = EvalReport {
            n_samples: 0,
            n_clusters: 0,
            acc: None,
            nmi: None,
            sizes: Vec::new(),
            confusion: None,
        };
        for (i, rec) in rd.records().enumerate() {
            let row = i + 2;
            let rec = rec.map_err(|e| Error::Table { row, detail: e.to_string() })?;
            let (k, v) = (rec.get(0).unwrap_or(""), rec.get(1).unwrap_or(""));
            let bad = || Error::Table { row, detail: format!("bad value {v:?} for {k}") };
            let opt = |v: &str| -> Result<Option<f64>> {
                if v.is_empty() {
                    Ok(None)
                } else {
                    v.parse().map(Some).map_err(|_| bad())
                }
            };
            match k {
                "n_samples" => report.n_samples = v.parse().map_err(|_| bad())?,
                "n_clusters" => report.n_clusters = v.parse().map_err(|_| bad())?,
                "acc" => report.acc = opt(v)?,
                "nmi" => report.nmi = opt(v)?,
                "sizes" if v.is_empty() => report.sizes = Vec::new(),
                "sizes" => report.sizes = split(v, ';')?,
                "confusion" if v.is_empty() => report.confusion = None,
                "confusion" => {
                    report.confusion = Some(
                        v.split(';')
                            .map(|r| {
                                r.split_whitespace()
                                    .map(|c| c.parse().map_err(|_| bad()))
                                    .collect()
                            })
                            .collect::<Result<_>>()?,
                    )
                }
                _ => return Err(Error::Table { row, detail: format!("unknown key {k:?}") }),
            }
        }
        Ok(report)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Projection of the rows of `z` onto its two leading principal axes. Each
/// axis is signed so that its largest-magnitude loading is positive.
pub fn pca_2d(z: &Tensor) -> Result<Tensor> {
    let (n, d) = (z.rows(), z.cols());
    if n == 0 || d == 0 {
        return Err(Error::Degenerate("empty embedding".into()));
    }
    let m = DMatrix::from_row_slice(n, d, z.data());
    let mean = m.row_mean();
    let mut c = m.clone();
    for mut r in c.row_iter_mut() {
        r -= &mean;
    }
    let cov = c.transpose() * &c / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut out = vec![0.0; n * 2];
    for (axis, &j) in order.iter().take(2).enumerate() {
        let mut v = eig.eigenvectors.column(j).into_owned();
        let lead = v.iter().cloned().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
        if lead < 0.0 {
            v = -v;
        }
        let proj = &c * v;
        for i in 0..n {
            out[i * 2 + axis] = proj[i];
        }
    }
    Ok(Tensor::matrix(n, 2, out)?)
}

/// Hard labels of a checkpoint: Student-t assignment when centroids exist,
/// otherwise k-means on the embedding.
pub fn predict_checkpoint(state: &TrainState, ds: &Dataset) -> Result<(Tensor, Vec<usize>)> {
    state.check_dataset(ds)?;
    let z = state.nets.encoder.predict(&ds.x)?;
    let labels = match &state.mu {
        Some(mu) => predict_labels(&soft_assign(&z, mu, state.cfg.dof)?),
        None => {
            let cfg = &state.cfg;
            kmeans_init(&z, cfg.n_clusters, cfg.kmeans_restarts, cfg.seed.wrapping_add(KMEANS_STREAM))?
                .labels
        }
    };
    Ok((z, labels))
}

/// Report plus the 2-D embedding and predicted labels.
pub fn evaluate(state: &TrainState, ds: &Dataset) -> Result<(EvalReport, Tensor, Vec<usize>)> {
    let (z, labels) = predict_checkpoint(state, ds)?;
    let report = report_for(&labels, state.cfg.n_clusters, ds.labels.as_deref())?;
    Ok((report, pca_2d(&z)?, labels))
}

/// `pc1,pc2,cluster,label` rows for a scatter plot.
pub fn write_embedding(
    path: impl AsRef<Path>,
    emb: &Tensor,
    pred: &[usize],
    truth: Option<&[usize]>,
) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from("pc1,pc2,cluster,label\n");
    for (i, &c) in pred.iter().enumerate() {
        let label = truth.map_or(String::new(), |t| t[i].to_string());
        text.push_str(&format!("{:?},{:?},{c},{label}\n", emb.at(i, 0), emb.at(i, 1)));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
