//! Performance, group-fairness and counterfactual metrics.
//!
//! Groups follow the dataset encoding: 1 is privileged (`p`), 0 is
//! unprivileged (`u`). A prediction is positive (favourable) when its
//! probability is at least 0.5. Rates that would divide by zero are reported
//! as [`MetricError`]s rather than NaN.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, MetricError, Result};
use crate::nn::Network;

pub const DECISION_THRESHOLD: f64 = 0.5;

/// Label 1 iff `prob >= 0.5`.
pub fn threshold(pred_probs: &[f64]) -> Vec<u8> {
    pred_probs
        .iter()
        .map(|&p| u8::from(p >= DECISION_THRESHOLD))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalBundle {
    pub pred_probs: Vec<f64>,
    pub pred_labels: Vec<u8>,
    pub true_labels: Vec<u8>,
    /// 1 = privileged, 0 = unprivileged.
    pub group: Vec<u8>,
}

fn to_binary(values: &[f64], what: &str) -> Result<Vec<u8>> {
    values
        .iter()
        .map(|&v| {
            if v == 0.0 {
                Ok(0)
            } else if v == 1.0 {
                Ok(1)
            } else {
                Err(Error::invalid(format!("{what} must be 0 or 1, got {v}")))
            }
        })
        .collect()
}

impl EvalBundle {
    pub fn new(pred_probs: Vec<f64>, true_labels: &[f64], group: &[f64]) -> Result<Self> {
        if pred_probs.len() != true_labels.len() || pred_probs.len() != group.len() {
            return Err(Error::shape(format!(
                "bundle lengths differ: {} predictions, {} labels, {} groups",
                pred_probs.len(),
                true_labels.len(),
                group.len()
            )));
        }
        if pred_probs.is_empty() {
            return Err(Error::invalid("empty evaluation bundle"));
        }
        if pred_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("predicted probabilities must lie in [0, 1]"));
        }
        Ok(Self {
            pred_labels: threshold(&pred_probs),
            pred_probs,
            true_labels: to_binary(true_labels, "labels")?,
            group: to_binary(group, "groups")?,
        })
    }

    pub fn len(&self) -> usize {
        self.pred_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pred_labels.is_empty()
    }

    pub fn confusion(&self) -> GroupConfusion {
        let mut out = GroupConfusion::default();
        for i in 0..self.len() {
            let cell = if self.group[i] == 1 {
                &mut out.privileged
            } else {
                &mut out.unprivileged
            };
            cell.record(self.true_labels[i], self.pred_labels[i]);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    fn record(&mut self, truth: u8, pred: u8) {
        match (truth, pred) {
            (1, 1) => self.tp += 1,
            (0, 1) => self.fp += 1,
            (0, 0) => self.tn += 1,
            _ => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    fn tpr(&self, metric: &'static str, group: &str) -> Result<f64, MetricError> {
        let positives = self.tp + self.fn_;
        if positives == 0 {
            return Err(MetricError {
                metric,
                cell: format!("{group}/positives"),
            });
        }
        Ok(self.tp as f64 / positives as f64)
    }

    fn fpr(&self, metric: &'static str, group: &str) -> Result<f64, MetricError> {
        let negatives = self.fp + self.tn;
        if negatives == 0 {
            return Err(MetricError {
                metric,
                cell: format!("{group}/negatives"),
            });
        }
        Ok(self.fp as f64 / negatives as f64)
    }

    fn positive_rate(&self, metric: &'static str, group: &str) -> Result<f64, MetricError> {
        let n = self.total();
        if n == 0 {
            return Err(MetricError {
                metric,
                cell: group.to_owned(),
            });
        }
        Ok((self.tp + self.fp) as f64 / n as f64)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupConfusion {
    pub privileged: Confusion,
    pub unprivileged: Confusion,
}

/// `(|FPR_u − FPR_p|, |TPR_u − TPR_p|)`
fn odds_gaps(b: &EvalBundle, metric: &'static str) -> Result<(f64, f64), MetricError> {
    let c = b.confusion();
    let fpr_u = c.unprivileged.fpr(metric, "unprivileged")?;
    let fpr_p = c.privileged.fpr(metric, "privileged")?;
    let tpr_u = c.unprivileged.tpr(metric, "unprivileged")?;
    let tpr_p = c.privileged.tpr(metric, "privileged")?;
    Ok(((fpr_u - fpr_p).abs(), (tpr_u - tpr_p).abs()))
}

pub fn equalized_odds_diff(b: &EvalBundle) -> Result<f64, MetricError> {
    let (fpr_gap, tpr_gap) = odds_gaps(b, "equalized_odds")?;
    Ok(fpr_gap.max(tpr_gap))
}

pub fn average_abs_odds_diff(b: &EvalBundle) -> Result<f64, MetricError> {
    let (fpr_gap, tpr_gap) = odds_gaps(b, "absolute_odds")?;
    Ok(0.5 * (fpr_gap + tpr_gap))
}

/// Signed `P(ŷ=1|u) − P(ŷ=1|p)`.
pub fn statistical_parity_diff(b: &EvalBundle) -> Result<f64, MetricError> {
    const M: &str = "statistical_parity";
    let c = b.confusion();
    Ok(c.unprivileged.positive_rate(M, "unprivileged")?
        - c.privileged.positive_rate(M, "privileged")?)
}

/// `P(ŷ=1|u) / P(ŷ=1|p)`.
pub fn disparate_impact(b: &EvalBundle) -> Result<f64, MetricError> {
    const M: &str = "disparate_impact";
    let c = b.confusion();
    let u = c.unprivileged.positive_rate(M, "unprivileged")?;
    let p = c.privileged.positive_rate(M, "privileged")?;
    if p == 0.0 {
        return Err(MetricError {
            metric: M,
            cell: "privileged/positive predictions".to_owned(),
        });
    }
    Ok(u / p)
}

/// Accuracy and F1 on the favourable label; F1 is 0 when `2TP+FP+FN = 0`.
pub fn accuracy_f1(b: &EvalBundle) -> (f64, f64) {
    let c = b.confusion();
    let tp = c.privileged.tp + c.unprivileged.tp;
    let fp = c.privileged.fp + c.unprivileged.fp;
    let tn = c.privileged.tn + c.unprivileged.tn;
    let fn_ = c.privileged.fn_ + c.unprivileged.fn_;
    let accuracy = (tp + tn) as f64 / b.len() as f64;
    let denom = 2 * tp + fp + fn_;
    let f1 = if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    };
    (accuracy, f1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    F1,
    EqualizedOdds,
    AbsoluteOdds,
    StatisticalParity,
    DisparateImpact,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Accuracy,
        Metric::F1,
        Metric::EqualizedOdds,
        Metric::AbsoluteOdds,
        Metric::StatisticalParity,
        Metric::DisparateImpact,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::F1 => "f1",
            Metric::EqualizedOdds => "equalized_odds",
            Metric::AbsoluteOdds => "absolute_odds",
            Metric::StatisticalParity => "statistical_parity",
            Metric::DisparateImpact => "disparate_impact",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Metric::Accuracy => "Accuracy",
            Metric::F1 => "F1 Score",
            Metric::EqualizedOdds => "Equalized Odds",
            Metric::AbsoluteOdds => "Absolute Odds",
            Metric::StatisticalParity => "Statistical Parity",
            Metric::DisparateImpact => "Disparate Impact",
        }
    }
}

/// The six reported metrics for one model on one dataset. Undefined group
/// metrics are `None`, with the reason kept in `undefined`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
    pub equalized_odds: Option<f64>,
    pub absolute_odds: Option<f64>,
    pub statistical_parity: Option<f64>,
    pub disparate_impact: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undefined: Vec<String>,
}

impl MetricReport {
    pub fn from_bundle(b: &EvalBundle) -> Self {
        let mut undefined = Vec::new();
        let mut keep = |r: Result<f64, MetricError>| match r {
            Ok(v) => Some(v),
            Err(e) => {
                undefined.push(e.to_string());
                None
            }
        };
        let (accuracy, f1) = accuracy_f1(b);
        let equalized_odds = keep(equalized_odds_diff(b));
        let absolute_odds = keep(average_abs_odds_diff(b));
        let statistical_parity = keep(statistical_parity_diff(b));
        let disparate_impact = keep(disparate_impact(b));
        Self {
            accuracy: Some(accuracy),
            f1: Some(f1),
            equalized_odds,
            absolute_odds,
            statistical_parity,
            disparate_impact,
            undefined,
        }
    }

    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Accuracy => self.accuracy,
            Metric::F1 => self.f1,
            Metric::EqualizedOdds => self.equalized_odds,
            Metric::AbsoluteOdds => self.absolute_odds,
            Metric::StatisticalParity => self.statistical_parity,
            Metric::DisparateImpact => self.disparate_impact,
        }
    }

    fn set(&mut self, metric: Metric, value: Option<f64>) {
        let slot = match metric {
            Metric::Accuracy => &mut self.accuracy,
            Metric::F1 => &mut self.f1,
            Metric::EqualizedOdds => &mut self.equalized_odds,
            Metric::AbsoluteOdds => &mut self.absolute_odds,
            Metric::StatisticalParity => &mut self.statistical_parity,
            Metric::DisparateImpact => &mut self.disparate_impact,
        };
        *slot = value;
    }

    pub fn values(&self) -> [(Metric, Option<f64>); 6] {
        Metric::ALL.map(|m| (m, self.get(m)))
    }

    /// Flat `name → value` record; undefined metrics map to `null`.
    pub fn to_json_record(&self) -> serde_json::Value {
        let map = self
            .values()
            .into_iter()
            .map(|(m, v)| (m.name().to_owned(), serde_json::json!(v)))
            .collect::<serde_json::Map<_, _>>();
        serde_json::Value::Object(map)
    }

    /// Header of the six metric names and one row of values; undefined
    /// metrics are empty cells.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Metric::ALL.map(Metric::name))?;
        w.write_record(
            self.values()
                .map(|(_, v)| v.map(|x| x.to_string()).unwrap_or_default()),
        )?;
        let bytes = w
            .into_inner()
            .map_err(|e| Error::invalid(format!("csv buffer: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::invalid(format!("csv buffer: {e}")))
    }

    /// Per-metric `|self − other|`; `None` where either side is undefined.
    pub fn abs_diff(&self, other: &MetricReport) -> MetricReport {
        let mut out = MetricReport {
            accuracy: None,
            f1: None,
            equalized_odds: None,
            absolute_odds: None,
            statistical_parity: None,
            disparate_impact: None,
            undefined: Vec::new(),
        };
        for m in Metric::ALL {
            let d = match (self.get(m), other.get(m)) {
                (Some(a), Some(b)) => Some((a - b).abs()),
                _ => {
                    out.undefined
                        .push(format!("{} is undefined on one side", m.name()));
                    None
                }
            };
            out.set(m, d);
        }
        out
    }
}

/// Arithmetic mean of the six absolute differences.
pub fn mean_abs_difference(abs_diff: &MetricReport) -> Result<f64, MetricError> {
    let mut sum = 0.0;
    for (m, v) in abs_diff.values() {
        sum += v.ok_or_else(|| MetricError {
            metric: "mean_abs_difference",
            cell: m.name().to_owned(),
        })?;
    }
    Ok(sum / 6.0)
}

/// Column names read by [`read_predictions_csv`].
pub const PREDICTION_COLUMNS: [&str; 3] = ["prob", "label", "group"];

/// Reads externally produced predictions: a headed CSV with (at least) the
/// columns `prob`, `label` and `group`, in any order.
pub fn read_predictions_csv(path: impl AsRef<Path>) -> Result<EvalBundle> {
    let path = path.as_ref();
    let load_err = |message: String| Error::Load {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| load_err(e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| load_err(e.to_string()))?
        .clone();
    let idx = PREDICTION_COLUMNS.map(|name| headers.iter().position(|h| h.trim() == name));
    let missing: Vec<&str> = PREDICTION_COLUMNS
        .iter()
        .zip(&idx)
        .filter(|(_, i)| i.is_none())
        .map(|(n, _)| *n)
        .collect();
    if !missing.is_empty() {
        return Err(load_err(format!(
            "missing column(s): {}",
            missing.join(", ")
        )));
    }
    let idx = idx.map(Option::unwrap);
    let mut cols: [Vec<f64>; 3] = Default::default();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| load_err(e.to_string()))?;
        for (col, &i) in cols.iter_mut().zip(&idx) {
            let raw = record.get(i).unwrap_or("").trim();
            let v = raw.parse::<f64>().map_err(|_| {
                load_err(format!(
                    "row {}: {:?} in column {} is not a number",
                    line + 1,
                    raw,
                    headers[i].trim()
                ))
            })?;
            col.push(v);
        }
    }
    let [probs, labels, groups] = cols;
    EvalBundle::new(probs, &labels, &groups)
}

/// Eval-mode predictions of `model` on `data`, paired with its labels and groups.
pub fn bundle_for(model: &Network, data: &Dataset) -> Result<EvalBundle> {
    let probs = model.predict(&data.features)?;
    EvalBundle::new(probs, &data.labels, &data.protected)
}

pub fn evaluate(model: &Network, data: &Dataset) -> Result<MetricReport> {
    Ok(MetricReport::from_bundle(&bundle_for(model, data)?))
}

/// How the counterfactual evaluation partitions samples into groups.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterfactualGrouping {
    /// Keep each sample in its original group; only the model input changes.
    #[default]
    Original,
    /// Assign groups from the flipped attribute.
    Flipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualReport {
    pub regular: MetricReport,
    pub counterfactual: MetricReport,
    pub abs_diff: MetricReport,
}

impl CounterfactualReport {
    pub fn mean_abs_difference(&self) -> Result<f64, MetricError> {
        mean_abs_difference(&self.abs_diff)
    }
}

/// Evaluates `model` on `test` and on `test` with every protected attribute
/// flipped, and reports both along with their per-metric absolute difference.
pub fn counterfactual_report(
    model: &Network,
    test: &Dataset,
    grouping: CounterfactualGrouping,
) -> Result<CounterfactualReport> {
    let regular = evaluate(model, test)?;
    let flipped = test.with_protected_flipped()?;
    let cf_probs = model.predict(&flipped.features)?;
    let groups = match grouping {
        CounterfactualGrouping::Original => &test.protected,
        CounterfactualGrouping::Flipped => &flipped.protected,
    };
    let counterfactual =
        MetricReport::from_bundle(&EvalBundle::new(cf_probs, &test.labels, groups)?);
    let abs_diff = regular.abs_diff(&counterfactual);
    Ok(CounterfactualReport {
        regular,
        counterfactual,
        abs_diff,
    })
}
