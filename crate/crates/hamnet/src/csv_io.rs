//! CSV files: datasets (`x1,…,xn,label`), training history, predictions,
//! gradient-norm traces, spectrum reports, Richardson tables and grids.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use hamnet_core::data::Dataset;
use hamnet_core::diagnostics::{GradNormTrace, RichardsonRow, SpectrumReport};
use hamnet_core::training::History;
use hamnet_core::Matrix;

use crate::error::{CliError, Result};

/// Floats are written with 17 significant digits, enough to round-trip.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn create(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(csv_err(path))
}

fn finish(mut w: csv::Writer<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_dataset_to<W: Write>(out: W, d: &Dataset) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (1..=d.n()).map(|i| format!("x{i}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for i in 0..d.len() {
        let (x, c) = d.sample(i);
        let mut rec: Vec<String> = x.iter().map(|v| fmt_f64(*v)).collect();
        rec.push(c.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset(path: &Path, d: &Dataset) -> Result<()> {
    let f = File::create(path).map_err(|e| CliError::io(path, e))?;
    write_dataset_to(f, d).map_err(csv_err(path))
}

/// Reads a dataset CSV. The class count is one more than the largest label
/// and at least two.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let data_err = |msg: String| CliError::Data {
        path: path.to_path_buf(),
        msg,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = r.headers().map_err(csv_err(path))?.clone();
    let n = header.len().checked_sub(1).filter(|n| *n > 0).ok_or_else(|| data_err("expected x1..xn,label header".into()))?;
    for (i, name) in header.iter().enumerate() {
        let want = if i == n { "label".to_string() } else { format!("x{}", i + 1) };
        if name.trim() != want {
            return Err(data_err(format!("header column {} is {name:?}, expected {want:?}", i + 1)));
        }
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let line = row + 2;
        if rec.len() != n + 1 {
            return Err(data_err(format!("line {line}: {} fields, expected {}", rec.len(), n + 1)));
        }
        for f in rec.iter().take(n) {
            let v: f64 = f.trim().parse().map_err(|_| data_err(format!("line {line}: bad number {f:?}")))?;
            values.push(v);
        }
        let lab = &rec[n];
        labels.push(lab.trim().parse::<usize>().map_err(|_| data_err(format!("line {line}: bad label {lab:?}")))?);
    }
    let classes = labels.iter().max().map_or(2, |m| (m + 1).max(2));
    let name = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    let features = Matrix::new(labels.len(), n, values)?;
    Ok(Dataset::new(features, labels, classes, name)?)
}

pub fn write_history(path: &Path, h: &History) -> Result<()> {
    let mut w = create(path)?;
    let err = csv_err(path);
    w.write_record(["epoch", "iter", "loss", "train_acc"]).map_err(&err)?;
    for r in &h.records {
        w.write_record([r.epoch.to_string(), r.iter.to_string(), fmt_f64(r.loss), fmt_f64(r.train_acc)])
            .map_err(&err)?;
    }
    finish(w, path)
}

/// `index,label,pred,p0,…,p{M−1}`.
pub fn write_predictions(path: &Path, d: &Dataset, probs: &[Vec<f64>]) -> Result<()> {
    let mut w = create(path)?;
    let err = csv_err(path);
    let mut header = vec!["index".to_string(), "label".into(), "pred".into()];
    header.extend((0..d.classes).map(|c| format!("p{c}")));
    w.write_record(&header).map_err(&err)?;
    for (i, p) in probs.iter().enumerate() {
        let mut rec = vec![i.to_string(), d.labels[i].to_string(), hamnet_core::layers::argmax(p).to_string()];
        rec.extend(p.iter().map(|v| fmt_f64(*v)));
        w.write_record(&rec).map_err(&err)?;
    }
    finish(w, path)
}

pub fn write_gradnorms(path: &Path, t: &GradNormTrace) -> Result<()> {
    let mut w = create(path)?;
    let err = csv_err(path);
    w.write_record(["iteration", "layer", "norm"]).map_err(&err)?;
    for r in &t.records {
        w.write_record([r.iteration.to_string(), r.layer.to_string(), fmt_f64(r.norm)]).map_err(&err)?;
    }
    finish(w, path)
}

pub fn write_spectrum(path: &Path, rows: &[(String, SpectrumReport)]) -> Result<()> {
    let mut w = create(path)?;
    let err = csv_err(path);
    w.write_record(["case", "max_re_lambda", "skew_residual"]).map_err(&err)?;
    for (case, r) in rows {
        w.write_record([case.clone(), fmt_f64(r.max_re_lambda), fmt_f64(r.skew_residual)]).map_err(&err)?;
    }
    finish(w, path)
}

pub fn write_richardson(path: &Path, rows: &[RichardsonRow]) -> Result<()> {
    let mut w = create(path)?;
    let err = csv_err(path);
    w.write_record(["layers", "h", "error", "ratio"]).map_err(&err)?;
    for r in rows {
        let ratio = r.ratio.map_or_else(String::new, fmt_f64);
        w.write_record([r.layers.to_string(), fmt_f64(r.h), fmt_f64(r.error), ratio]).map_err(&err)?;
    }
    finish(w, path)
}

/// Grid CSV written row by row so completed cells survive a later failure.
pub struct GridWriter<'a> {
    path: &'a Path,
    w: csv::Writer<File>,
}

impl<'a> GridWriter<'a> {
    pub fn create(path: &'a Path) -> Result<Self> {
        let mut w = create(path)?;
        w.write_record(["arch", "layers", "test_acc", "params_per_layer"]).map_err(csv_err(path))?;
        w.flush().map_err(|e| CliError::io(path, e))?;
        Ok(GridWriter { path, w })
    }

    /// `test_acc = None` marks a failed cell (written as `nan`).
    pub fn row(&mut self, arch: &str, layers: usize, test_acc: Option<f64>, params_per_layer: usize) -> Result<()> {
        let acc = test_acc.map_or_else(|| "nan".to_string(), |a| format!("{a:.4}"));
        self.w
            .write_record([arch.to_string(), layers.to_string(), acc, params_per_layer.to_string()])
            .map_err(csv_err(self.path))?;
        self.w.flush().map_err(|e| CliError::io(self.path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use hamnet_core::data::gen_double_moons;

    #[test]
    fn dataset_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let d = gen_double_moons(6, 0.1, 3).unwrap();
        write_dataset(&p, &d).unwrap();
        let back = read_dataset(&p).unwrap();
        assert_eq!(back.features, d.features);
        assert_eq!(back.labels, d.labels);
        assert_eq!(back.classes, 2);
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next().unwrap(), "x1,x2,label");
        assert_eq!(text.lines().count(), 7);
    }

    #[test]
    fn malformed_rows_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "x1,x2,label\n1.0,2.0,0\n1.0,oops,1\n").unwrap();
        let e = read_dataset(&p).unwrap_err().to_string();
        assert!(e.contains("line 3"), "{e}");
        std::fs::write(&p, "a,b,label\n").unwrap();
        assert!(read_dataset(&p).is_err());
    }
}
