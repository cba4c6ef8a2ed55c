//! Flat CSV export/import of a generated dataset, so other implementations
//! can train on exactly the same samples.
//!
//! Header: `id,label,split,a0..a{n-1},t0..t{m-1}` where the `a` columns are
//! the non-shareable modality, the `t` columns the shareable one, and `split`
//! is `train` or `test`.

use std::fs::File;
use std::path::Path;

use partialfl_core::data::Dataset;
use partialfl_core::nn::Tensor;

use crate::{Error, Result};

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn write_dataset(path: &Path, train: &Dataset, test: &Dataset) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file);
    let a = train.non_shareable.cols();
    let t = train.shareable.cols();
    let mut header = vec!["id".to_string(), "label".into(), "split".into()];
    header.extend((0..a).map(|i| format!("a{i}")));
    header.extend((0..t).map(|i| format!("t{i}")));
    w.write_record(&header)?;
    for (split, data) in [("train", train), ("test", test)] {
        for i in 0..data.len() {
            let mut row = vec![data.ids[i].to_string(), data.labels[i].to_string(), split.to_string()];
            row.extend(data.non_shareable.row(i).iter().map(|&v| fmt_f64(v)));
            row.extend(data.shareable.row(i).iter().map(|&v| fmt_f64(v)));
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Default)]
struct Columns {
    ids: Vec<u64>,
    labels: Vec<usize>,
    a: Vec<f64>,
    t: Vec<f64>,
}

impl Columns {
    fn finish(self, a: usize, t: usize, num_classes: usize) -> partialfl_core::Result<Dataset> {
        let n = self.ids.len();
        Dataset::new(
            self.ids,
            self.labels,
            Tensor::matrix(n, a, self.a)?,
            Tensor::matrix(n, t, self.t)?,
            num_classes,
        )
    }
}

/// Reads a file written by [`write_dataset`]; returns `(train, test)`.
pub fn read_dataset(path: &Path, num_classes: usize) -> Result<(Dataset, Dataset)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let header = r.headers()?.clone();
    let bad = |record: usize, message: String| Error::Dataset {
        path: path.to_path_buf(),
        record,
        message,
    };
    if header.len() < 3 || &header[0] != "id" || &header[1] != "label" || &header[2] != "split" {
        return Err(bad(0, "header must start with id,label,split".into()));
    }
    let a = header.iter().filter(|h| h.starts_with('a')).count();
    let t = header.iter().filter(|h| h.starts_with('t')).count();
    if 3 + a + t != header.len() || a == 0 || t == 0 {
        return Err(bad(0, "feature columns must be a0.. followed by t0..".into()));
    }
    let mut train = Columns::default();
    let mut test = Columns::default();
    for (i, record) in r.records().enumerate() {
        let record = record?;
        let n = i + 1;
        let target = match &record[2] {
            "train" => &mut train,
            "test" => &mut test,
            other => return Err(bad(n, format!("unknown split `{other}`"))),
        };
        target
            .ids
            .push(record[0].parse().map_err(|e| bad(n, format!("id: {e}")))?);
        target
            .labels
            .push(record[1].parse().map_err(|e| bad(n, format!("label: {e}")))?);
        for (j, field) in record.iter().enumerate().skip(3) {
            let v: f64 = field
                .parse()
                .map_err(|e| bad(n, format!("column {}: {e}", &header[j])))?;
            if j < 3 + a {
                target.a.push(v);
            } else {
                target.t.push(v);
            }
        }
    }
    Ok((train.finish(a, t, num_classes)?, test.finish(a, t, num_classes)?))
}
