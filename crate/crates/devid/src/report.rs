//! Metric and history exports.

use std::fs;
use std::path::Path;

use devid_core::train::{EpochRecord, MetricsReport};
use serde::Serialize;

use crate::{Error, Result};

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_text(rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

/// One row per class and a final `macro` row.
pub fn metrics_csv(report: &MetricsReport) -> String {
    let mut rows = vec![["class", "support", "predicted", "tp", "fp", "fn", "tn", "precision", "recall", "f1"]
        .map(String::from)
        .to_vec()];
    for c in &report.per_class {
        rows.push(vec![
            c.class.to_string(),
            c.support.to_string(),
            c.predicted.to_string(),
            c.tp.to_string(),
            c.fp.to_string(),
            c.fn_.to_string(),
            c.tn.to_string(),
            opt(c.precision),
            opt(c.recall),
            opt(c.f_beta),
        ]);
    }
    let m = &report.macro_avg;
    rows.push(vec![
        "macro".into(),
        report.total.to_string(),
        report.total.to_string(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        opt(m.precision),
        opt(m.recall),
        opt(m.f_beta),
    ]);
    csv_text(rows)
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut rows = vec![["epoch", "lr", "train_loss", "train_acc", "val_loss", "val_acc"].map(String::from).to_vec()];
    for r in history {
        rows.push(vec![
            r.epoch.to_string(),
            r.lr.to_string(),
            r.train_loss.to_string(),
            r.train_acc.to_string(),
            opt(r.val_loss),
            opt(r.val_acc),
        ]);
    }
    csv_text(rows)
}

pub fn to_json<S: Serialize>(value: &S) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(Error::io(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_csv_has_a_row_per_class_and_a_macro_row() {
        let r = MetricsReport::from_predictions(&[0, 1, 2, 2], &[0, 2, 2, 2], 3).unwrap();
        let text = metrics_csv(&r);
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 4);
        assert_eq!(&rows[3][0], "macro");
        assert_eq!(&rows[1][8], "0");
        assert_eq!(&rows[2][7], "0.6666666666666666");
    }

    #[test]
    fn history_columns() {
        let rec = EpochRecord { epoch: 0, lr: 1e-3, train_loss: 1.5, train_acc: 0.25, val_loss: None, val_acc: Some(0.5) };
        assert_eq!(history_csv(&[rec]), "epoch,lr,train_loss,train_acc,val_loss,val_acc\n0,0.001,1.5,0.25,,0.5\n");
    }
}
