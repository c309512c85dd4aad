use std::path::Path;

use crate::error::{Error, Result};

/// One line of the metrics log. Absent values are written as empty fields.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsRow {
    pub iter: u64,
    pub stage: String,
    pub loss_e: Option<f64>,
    pub loss_g: Option<f64>,
    pub loss_d: Option<f64>,
    pub loss_c: Option<f64>,
    pub acc: Option<f64>,
    pub nmi: Option<f64>,
    pub delta_fr: Option<f64>,
    pub delta_fd: Option<f64>,
    pub label_change_frac: Option<f64>,
    pub wall_ms: Option<u64>,
}

pub const COLUMNS: [&str; 12] = [
    "iter",
    "stage",
    "loss_E",
    "loss_G",
    "loss_D",
    "loss_C",
    "acc",
    "nmi",
    "delta_fr",
    "delta_fd",
    "label_change_frac",
    "wall_ms",
];

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:?}"))
}

fn parse_opt(field: &str, row: usize) -> Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    field.parse().map(Some).map_err(|_| Error::Table {
        row,
        detail: format!("bad number {field:?}"),
    })
}

impl MetricsRow {
    pub fn new(iter: u64, stage: &str) -> Self {
        MetricsRow {
            iter,
            stage: stage.to_string(),
            ..MetricsRow::default()
        }
    }

    fn fields(&self) -> [String; 12] {
        [
            self.iter.to_string(),
            self.stage.clone(),
            fmt_opt(self.loss_e),
            fmt_opt(self.loss_g),
            fmt_opt(self.loss_d),
            fmt_opt(self.loss_c),
            fmt_opt(self.acc),
            fmt_opt(self.nmi),
            fmt_opt(self.delta_fr),
            fmt_opt(self.delta_fd),
            fmt_opt(self.label_change_frac),
            self.wall_ms.map_or(String::new(), |w| w.to_string()),
        ]
    }

    /// Numeric value of a named column.
    pub fn column(&self, name: &str) -> Option<Option<f64>> {
        Some(match name {
            "iter" => Some(self.iter as f64),
            "loss_E" => self.loss_e,
            "loss_G" => self.loss_g,
            "loss_D" => self.loss_d,
            "loss_C" => self.loss_c,
            "acc" => self.acc,
            "nmi" => self.nmi,
            "delta_fr" => self.delta_fr,
            "delta_fd" => self.delta_fd,
            "label_change_frac" => self.label_change_frac,
            "wall_ms" => self.wall_ms.map(|w| w as f64),
            _ => return None,
        })
    }
}

/// Comma-separated log with a header row and LF line endings.
pub fn render_log(rows: &[MetricsRow]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(COLUMNS).expect("in-memory write");
    for r in rows {
        w.write_record(r.fields()).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii log")
}

pub fn parse_log(text: &str) -> Result<Vec<MetricsRow>> {
    let mut rd = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = rd.headers().map_err(|e| Error::Table {
        row: 1,
        detail: e.to_string(),
    })?;
    if header.iter().collect::<Vec<_>>() != COLUMNS {
        return Err(Error::Table {
            row: 1,
            detail: "unexpected metrics header".into(),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Table {
            row: line,
            detail: e.to_string(),
        })?;
        let f = |j: usize| rec.get(j).unwrap_or("");
        rows.push(MetricsRow {
            iter: f(0).parse().map_err(|_| Error::Table {
                row: line,
                detail: format!("bad iteration {:?}", f(0)),
            })?,
            stage: f(1).to_string(),
            loss_e: parse_opt(f(2), line)?,
            loss_g: parse_opt(f(3), line)?,
            loss_d: parse_opt(f(4), line)?,
            loss_c: parse_opt(f(5), line)?,
            acc: parse_opt(f(6), line)?,
            nmi: parse_opt(f(7), line)?,
            delta_fr: parse_opt(f(8), line)?,
            delta_fd: parse_opt(f(9), line)?,
            label_change_frac: parse_opt(f(10), line)?,
            wall_ms: parse_opt(f(11), line)?.map(|v| v as u64),
        });
    }
    Ok(rows)
}

pub fn write_log(path: impl AsRef<Path>, rows: &[MetricsRow]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render_log(rows)).map_err(|e| Error::io(path, e))
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_log(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_missing_fields() {
        let mut a = MetricsRow::new(140, "cluster");
        a.loss_e = Some(-0.123456789012345);
        a.acc = Some(0.9);
        a.delta_fd = Some(-1e-300);
        a.wall_ms = Some(17);
        let b = MetricsRow::new(0, "pretrain");
        let text = render_log(&[a.clone(), b.clone()]);
        assert!(text.starts_with("iter,stage,loss_E"));
        assert!(!text.contains('\r'));
        assert!(text.contains("0,pretrain,,,,,,,,,,\n"));
        assert_eq!(parse_log(&text).unwrap(), vec![a, b]);
    }

    #[test]
    fn rejects_foreign_header() {
        assert!(parse_log("a,b\n1,2\n").is_err());
    }
}
