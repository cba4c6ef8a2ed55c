//! Classification metrics: confusion matrix, unweighted average recall and
//! top-k accuracy.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::nn::Tensor;
use crate::{Error, Result};

/// Rows are true classes, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn from_predictions(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<Self> {
        check_lengths(predictions.len(), labels.len())?;
        let mut m = Self::new(num_classes);
        for (&p, &y) in predictions.iter().zip(labels) {
            m.record(y, p)?;
        }
        Ok(m)
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let c = self.num_classes;
        if truth >= c || predicted >= c {
            return Err(Error::Validation(format!(
                "class pair ({truth}, {predicted}) outside {c} classes"
            )));
        }
        self.counts[truth * c + predicted] += 1;
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.num_classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_total(&self, truth: usize) -> u64 {
        let c = self.num_classes;
        self.counts[truth * c..(truth + 1) * c].iter().sum()
    }

    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| (0..self.num_classes).map(|i| self.get(i, i)).sum::<u64>() as f64 / total as f64)
    }

    /// Mean recall over classes that occur at least once as a true label.
    pub fn uar(&self) -> Option<f64> {
        let mut sum = 0.0;
        let mut present = 0usize;
        for c in 0..self.num_classes {
            let n = self.row_total(c);
            if n > 0 {
                sum += self.get(c, c) as f64 / n as f64;
                present += 1;
            }
        }
        (present > 0).then(|| sum / present as f64)
    }
}

fn check_lengths(predictions: usize, labels: usize) -> Result<()> {
    if predictions != labels {
        return Err(Error::Validation(format!(
            "{predictions} predictions for {labels} labels"
        )));
    }
    if labels == 0 {
        return Err(Error::Validation("metric over zero samples".into()));
    }
    Ok(())
}

/// Unweighted average recall. Classes absent from `labels` are left out of
/// the mean.
pub fn uar(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(predictions.len(), labels.len())?;
    let c = predictions.iter().chain(labels).max().map_or(0, |m| m + 1);
    let m = ConfusionMatrix::from_predictions(predictions, labels, c)?;
    m.uar()
        .ok_or_else(|| Error::Validation("metric over zero samples".into()))
}

/// Index of the largest logit per row, lowest index on ties.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Rank of the true class, where an equal logit at a lower index ranks ahead.
fn true_class_rank(row: &[f64], y: usize) -> usize {
    let target = row[y];
    row.iter()
        .enumerate()
        .filter(|&(j, &v)| v > target || (v == target && j < y))
        .count()
}

pub fn top_k_accuracy(logits: &Tensor, labels: &[usize], k: usize) -> Result<f64> {
    check_lengths(logits.rows(), labels.len())?;
    let c = logits.cols();
    if k == 0 || k > c {
        return Err(Error::Validation(format!("top-k with k = {k} and {c} classes")));
    }
    let mut hits = 0usize;
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::Validation(format!("label {y} outside {c} classes")));
        }
        if true_class_rank(logits.row(i), y) < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Metric {
    TopK(usize),
    Uar,
}

impl Metric {
    pub fn evaluate(&self, logits: &Tensor, labels: &[usize]) -> Result<f64> {
        match *self {
            Metric::TopK(k) => top_k_accuracy(logits, labels, k),
            Metric::Uar => {
                let m = ConfusionMatrix::from_predictions(&argmax_rows(logits), labels, logits.cols())?;
                m.uar()
                    .ok_or_else(|| Error::Validation("metric over zero samples".into()))
            }
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::TopK(k) => write!(f, "top{k}"),
            Metric::Uar => f.write_str("uar"),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "uar" {
            return Ok(Metric::Uar);
        }
        match s.strip_prefix("top").map(str::parse::<usize>) {
            Some(Ok(k)) if k > 0 => Ok(Metric::TopK(k)),
            _ => Err(Error::config(
                "metrics",
                format!("unknown metric `{s}` (expected uar or topK)"),
            )),
        }
    }
}

impl TryFrom<String> for Metric {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Metric> for String {
    fn from(m: Metric) -> String {
        format!("{m}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub metric: Metric,
    pub value: f64,
}

pub fn evaluate_all(metrics: &[Metric], logits: &Tensor, labels: &[usize]) -> Result<Vec<MetricValue>> {
    metrics
        .iter()
        .map(|&metric| {
            Ok(MetricValue {
                metric,
                value: metric.evaluate(logits, labels)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{SeedStreams, Stream};
    use proptest::prelude::*;
    use rand::Rng;

    fn loop_uar(pred: &[usize], labels: &[usize]) -> f64 {
        let c = pred.iter().chain(labels).max().unwrap() + 1;
        let mut recalls = std::vec::Vec::new();
        for class in 0..c {
            let mut n = 0;
            let mut hit = 0;
            for i in 0..labels.len() {
                if labels[i] == class {
                    n += 1;
                    if pred[i] == class {
                        hit += 1;
                    }
                }
            }
            if n > 0 {
                recalls.push(hit as f64 / n as f64);
            }
        }
        recalls.iter().sum::<f64>() / recalls.len() as f64
    }

    fn sort_top_k(logits: &Tensor, labels: &[usize], k: usize) -> f64 {
        let mut hits = 0;
        for (i, &y) in labels.iter().enumerate() {
            let row = logits.row(i);
            let mut order: std::vec::Vec<usize> = (0..row.len()).collect();
            // stable sort keeps lower index first among equal logits
            order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap());
            if order[..k].contains(&y) {
                hits += 1;
            }
        }
        hits as f64 / labels.len() as f64
    }

    #[test]
    fn perfect_and_constant_uar() {
        let labels: std::vec::Vec<usize> = (0..40).map(|i| i % 4).collect();
        assert_eq!(uar(&labels, &labels).unwrap(), 1.0);
        assert_eq!(uar(&[2; 40], &labels).unwrap(), 0.25);
    }

    #[test]
    fn uar_skips_absent_classes() {
        // class 2 never appears as a label
        assert_eq!(uar(&[0, 1, 2, 1], &[0, 1, 1, 1]).unwrap(), (1.0 + 2.0 / 3.0) / 2.0);
    }

    #[test]
    fn empty_and_mismatched_inputs() {
        assert!(uar(&[], &[]).is_err());
        assert!(uar(&[0], &[0, 1]).is_err());
        let logits = Tensor::zeros(vec![0, 3]);
        assert!(top_k_accuracy(&logits, &[], 1).is_err());
    }

    #[test]
    fn top_k_bounds() {
        let logits = Tensor::from_rows(&[vec![0.1, 0.5, 0.2], vec![0.9, 0.0, 0.3]]).unwrap();
        assert!(top_k_accuracy(&logits, &[0, 1], 0).is_err());
        assert!(top_k_accuracy(&logits, &[0, 1], 4).is_err());
        assert_eq!(top_k_accuracy(&logits, &[0, 1], 3).unwrap(), 1.0);
        assert_eq!(top_k_accuracy(&logits, &[1, 0], 1).unwrap(), 1.0);
        assert_eq!(top_k_accuracy(&logits, &[2, 2], 2).unwrap(), 1.0);
    }

    #[test]
    fn ties_favor_lower_index() {
        let logits = Tensor::from_rows(&[vec![1.0, 1.0, 1.0]]).unwrap();
        assert_eq!(top_k_accuracy(&logits, &[0], 1).unwrap(), 1.0);
        assert_eq!(top_k_accuracy(&logits, &[1], 1).unwrap(), 0.0);
        assert_eq!(top_k_accuracy(&logits, &[1], 2).unwrap(), 1.0);
        assert_eq!(argmax_rows(&logits), vec![0]);
    }

    #[test]
    fn symmetric_predictor_uar_equals_accuracy() {
        // balanced labels, each class recalled 3 of 5 times
        let mut labels = std::vec::Vec::new();
        let mut pred = std::vec::Vec::new();
        for c in 0..4 {
            for j in 0..5 {
                labels.push(c);
                pred.push(if j < 3 { c } else { (c + 1) % 4 });
            }
        }
        let m = ConfusionMatrix::from_predictions(&pred, &labels, 4).unwrap();
        assert_eq!(m.uar(), m.accuracy());
        assert_eq!(m.total(), 20);
    }

    #[test]
    fn random_instances_match_oracles() {
        let streams = SeedStreams::new(99);
        for case in 0..1000u64 {
            let mut rng = streams.rng(Stream::Data, case, 0);
            let c = rng.random_range(2..=10);
            let n = rng.random_range(1..=40);
            let labels: std::vec::Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
            let pred: std::vec::Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
            assert_eq!(uar(&pred, &labels).unwrap(), loop_uar(&pred, &labels));
            // coarse logits so ties actually happen
            let data = (0..n * c).map(|_| rng.random_range(0..4) as f64).collect();
            let logits = Tensor::matrix(n, c, data).unwrap();
            for k in 1..=c {
                assert_eq!(
                    top_k_accuracy(&logits, &labels, k).unwrap(),
                    sort_top_k(&logits, &labels, k)
                );
            }
        }
    }

    #[test]
    fn metric_names_round_trip() {
        for m in [Metric::Uar, Metric::TopK(1), Metric::TopK(5)] {
            let s: String = m.into();
            assert_eq!(s.parse::<Metric>().unwrap(), m);
        }
        assert!("top0".parse::<Metric>().is_err());
        assert!("accuracy".parse::<Metric>().is_err());
        let json = serde_json::to_string(&[Metric::TopK(1), Metric::Uar]).unwrap();
        assert_eq!(json, r#"["top1","uar"]"#);
    }

    proptest! {
        #[test]
        fn top_k_monotone_and_permutation_invariant(
            rows in proptest::collection::vec((proptest::collection::vec(-3i8..3, 5), 0usize..5), 1..20),
            shift in 0usize..20,
        ) {
            let n = rows.len();
            let flat: std::vec::Vec<f64> = rows.iter().flat_map(|(r, _)| r.iter().map(|&v| v as f64)).collect();
            let labels: std::vec::Vec<usize> = rows.iter().map(|(_, y)| *y).collect();
            let logits = Tensor::matrix(n, 5, flat).unwrap();
            let mut prev = 0.0;
            for k in 1..=5 {
                let acc = top_k_accuracy(&logits, &labels, k).unwrap();
                prop_assert!(acc >= prev);
                prev = acc;
            }
            prop_assert_eq!(prev, 1.0);
            let perm: std::vec::Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
            let p_logits = logits.select_rows(&perm);
            let p_labels: std::vec::Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
            for k in 1..=5 {
                prop_assert_eq!(
                    top_k_accuracy(&logits, &labels, k).unwrap(),
                    top_k_accuracy(&p_logits, &p_labels, k).unwrap()
                );
            }
            let pred = argmax_rows(&logits);
            let p_pred = argmax_rows(&p_logits);
            prop_assert_eq!(uar(&pred, &labels).unwrap(), uar(&p_pred, &p_labels).unwrap());
        }
    }
}
