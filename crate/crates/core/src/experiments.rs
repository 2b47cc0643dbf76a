//! Multi-seed experiment protocol: per seed split, standardize, initialize,
//! train and evaluate; then aggregate mean and population std in seed order.
//! Also the two lambda ablation grids, permutation importance and
//! bottleneck export.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{self, BuiltinDataset, Dataset};
use crate::error::{Error, Result};
use crate::loss::{LambdaWeights, LossBreakdown, VarianceConfig};
use crate::metrics::{
    self, counterfactual_report, CounterfactualGrouping, CounterfactualReport, Metric, MetricReport,
};
use crate::nn::Network;
use crate::seed::{self, Purpose};
use crate::train::{train, TrainConfig};

/// Hidden widths around the 2-unit bottleneck; the head adds a width-1 output.
pub const HIDDEN_WIDTHS: [usize; 7] = [128, 64, 32, 2, 32, 64, 128];
pub const DROPOUT_RATE: f64 = 0.25;
/// Reference L1/L2 weight penalty. Opt-in: experiments train without a
/// penalty unless [`ExperimentSpec::l1_coeff`]/[`ExperimentSpec::l2_coeff`]
/// are set, because the penalty is not part of the weighted objective and at
/// λ_acc ≤ 0.35 it outweighs the data gradient enough to pin every
/// prediction below 0.5.
pub const L1_COEFF: f64 = 1e-4;
pub const L2_COEFF: f64 = 1e-3;
pub const DEFAULT_TEST_FRACTION: f64 = 0.2;
pub const DEFAULT_SEED_COUNT: u64 = 10;
pub const EQUAL_GRID: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];

/// `[input, 128, 64, 32, 2, 32, 64, 128, 1]`
pub fn network_widths(input_width: usize) -> Vec<usize> {
    let mut w = Vec::with_capacity(HIDDEN_WIDTHS.len() + 2);
    w.push(input_width);
    w.extend_from_slice(&HIDDEN_WIDTHS);
    w.push(1);
    w
}

/// Freshly initialized network with the standard dropout and no penalty.
pub fn build_network(input_width: usize, seed: u64) -> Result<Network> {
    Network::init(&network_widths(input_width), seed)?.with_dropout(DROPOUT_RATE)
}

/// Default FairVIC weights: adult (0.2, 0.1, 0.1, 0.6), anything else
/// (0.1, 0.1, 0.1, 0.7).
pub fn default_lambdas(dataset: &str) -> LambdaWeights {
    let w = match dataset.parse::<BuiltinDataset>() {
        Ok(BuiltinDataset::Adult) => LambdaWeights::new(0.2, 0.1, 0.1, 0.6),
        _ => LambdaWeights::new(0.1, 0.1, 0.1, 0.7),
    };
    w.expect("default weights are valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    BaselineBce,
    Fairvic,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::BaselineBce => "baseline_bce",
            ModelKind::Fairvic => "fairvic",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline_bce" | "baseline" => Ok(ModelKind::BaselineBce),
            "fairvic" => Ok(ModelKind::Fairvic),
            other => Err(Error::invalid(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub dataset: String,
    pub model: ModelKind,
    /// Ignored for `baseline_bce`, which always trains on (1, 0, 0, 0).
    pub lambdas: LambdaWeights,
    pub gamma: f64,
    pub seeds: Vec<u64>,
    pub test_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Weight penalty coefficients; 0 unless opted in (see [`L1_COEFF`]).
    pub l1_coeff: f64,
    pub l2_coeff: f64,
    pub counterfactual_grouping: CounterfactualGrouping,
}

impl ExperimentSpec {
    /// Standard protocol: seeds 0..10, 20% test split, default training
    /// hyperparameters and the dataset's default FairVIC weights.
    pub fn new(dataset: impl Into<String>, model: ModelKind) -> Self {
        let dataset = dataset.into();
        let defaults = TrainConfig::new(LambdaWeights::accuracy_only(), 0);
        Self {
            lambdas: default_lambdas(&dataset),
            dataset,
            model,
            gamma: defaults.variance.gamma(),
            seeds: (0..DEFAULT_SEED_COUNT).collect(),
            test_fraction: DEFAULT_TEST_FRACTION,
            epochs: defaults.epochs,
            batch_size: defaults.batch_size,
            learning_rate: defaults.learning_rate,
            l1_coeff: 0.0,
            l2_coeff: 0.0,
            counterfactual_grouping: CounterfactualGrouping::default(),
        }
    }

    pub fn with_lambdas(mut self, lambdas: LambdaWeights) -> Self {
        self.lambdas = lambdas;
        self
    }

    pub fn with_seeds(mut self, seeds: Vec<u64>) -> Self {
        self.seeds = seeds;
        self
    }

    pub fn effective_lambdas(&self) -> LambdaWeights {
        match self.model {
            ModelKind::BaselineBce => LambdaWeights::accuracy_only(),
            ModelKind::Fairvic => self.lambdas,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::invalid("seed list is empty"));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return Err(Error::invalid(format!("seed {dup} is repeated")));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "test fraction {} outside (0, 1)",
                self.test_fraction
            )));
        }
        if !(self.l1_coeff >= 0.0 && self.l2_coeff >= 0.0)
            || !self.l1_coeff.is_finite()
            || !self.l2_coeff.is_finite()
        {
            return Err(Error::invalid(
                "penalty coefficients must be finite and >= 0",
            ));
        }
        self.train_config(0)?.validate()
    }

    pub fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::new(self.effective_lambdas(), seed);
        cfg.variance = VarianceConfig::new(self.gamma, cfg.variance.epsilon())?;
        cfg.epochs = self.epochs;
        cfg.batch_size = self.batch_size;
        cfg.learning_rate = self.learning_rate;
        Ok(cfg)
    }
}

/// Everything produced for one seed before aggregation.
#[derive(Debug, Clone)]
pub struct FittedSeed {
    pub seed: u64,
    pub network: Network,
    pub train: Dataset,
    pub test: Dataset,
    pub final_loss: LossBreakdown,
}

/// The standardized train and test sets `fit_seed` uses for `seed`.
pub fn split_seed(spec: &ExperimentSpec, data: &Dataset, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train_raw, test_raw) = data::train_test_split(data, spec.test_fraction, seed)?;
    let (train_set, mut others) = data::standardize(&train_raw, &[&test_raw])?;
    Ok((train_set, others.pop().expect("one standardized test set")))
}

/// Splits, standardizes, initializes and trains for one seed.
pub fn fit_seed(spec: &ExperimentSpec, data: &Dataset, seed: u64) -> Result<FittedSeed> {
    let (train_set, test) = split_seed(spec, data, seed)?;
    let net = build_network(train_set.n_features(), seed)?
        .with_regularization(spec.l1_coeff, spec.l2_coeff)?;
    let (network, history) = train(net, &train_set, &spec.train_config(seed)?)?;
    Ok(FittedSeed {
        seed,
        network,
        train: train_set,
        test,
        final_loss: history.epochs.last().copied().unwrap_or_default(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub metrics: MetricReport,
    pub counterfactual: CounterfactualReport,
    /// Mean of the six regular-vs-counterfactual absolute differences.
    pub mean_abs_difference: Option<f64>,
    pub final_loss: LossBreakdown,
}

pub fn evaluate_seed(spec: &ExperimentSpec, fitted: &FittedSeed) -> Result<SeedReport> {
    let counterfactual =
        counterfactual_report(&fitted.network, &fitted.test, spec.counterfactual_grouping)?;
    Ok(SeedReport {
        seed: fitted.seed,
        metrics: counterfactual.regular.clone(),
        mean_abs_difference: counterfactual.mean_abs_difference().ok(),
        counterfactual,
        final_loss: fitted.final_loss,
    })
}

/// Mean and population std over the seeds where the value is defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub count: usize,
    pub excluded: usize,
}

impl Summary {
    pub fn from_values(values: &[Option<f64>]) -> Self {
        let defined: Vec<f64> = values.iter().flatten().copied().collect();
        let excluded = values.len() - defined.len();
        if defined.is_empty() {
            return Self {
                mean: None,
                std: None,
                count: 0,
                excluded,
            };
        }
        let n = defined.len() as f64;
        let mean = defined.iter().sum::<f64>() / n;
        let var = defined.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            mean: Some(mean),
            std: Some(var.sqrt()),
            count: defined.len(),
            excluded,
        }
    }

    /// `0.8444 ± 0.0065`, or `undefined`.
    pub fn display(&self) -> String {
        match (self.mean, self.std) {
            (Some(m), Some(s)) => format!("{m:.4} ± {s:.4}"),
            _ => "undefined".to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: Metric,
    #[serde(flatten)]
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub spec: ExperimentSpec,
    pub lambdas: LambdaWeights,
    pub metrics: Vec<MetricSummary>,
    pub mean_abs_difference: Summary,
    pub per_seed: Vec<SeedReport>,
}

impl AggregateReport {
    /// Aggregates per-seed reports, which must be in the spec's seed order.
    pub fn from_seeds(spec: &ExperimentSpec, per_seed: Vec<SeedReport>) -> Self {
        let metrics = Metric::ALL
            .into_iter()
            .map(|m| {
                let values: Vec<Option<f64>> = per_seed.iter().map(|r| r.metrics.get(m)).collect();
                MetricSummary {
                    metric: m,
                    summary: Summary::from_values(&values),
                }
            })
            .collect();
        let mads: Vec<Option<f64>> = per_seed.iter().map(|r| r.mean_abs_difference).collect();
        Self {
            spec: spec.clone(),
            lambdas: spec.effective_lambdas(),
            metrics,
            mean_abs_difference: Summary::from_values(&mads),
            per_seed,
        }
    }

    pub fn summary(&self, metric: Metric) -> Summary {
        self.metrics
            .iter()
            .find(|s| s.metric == metric)
            .map(|s| s.summary)
            .expect("every metric is summarized")
    }

    pub fn mean(&self, metric: Metric) -> Option<f64> {
        self.summary(metric).mean
    }

    /// Seeds excluded from any metric because it was undefined.
    pub fn warning_count(&self) -> usize {
        self.metrics.iter().map(|s| s.summary.excluded).sum()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// `metric,mean,std,count,excluded`
    pub fn summary_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["metric", "mean", "std", "count", "excluded"])?;
        let rows = self
            .metrics
            .iter()
            .map(|s| (s.metric.name(), s.summary))
            .chain(std::iter::once((
                "mean_abs_difference",
                self.mean_abs_difference,
            )));
        for (name, s) in rows {
            w.write_record([
                name.to_owned(),
                opt_str(s.mean),
                opt_str(s.std),
                s.count.to_string(),
                s.excluded.to_string(),
            ])?;
        }
        finish_csv(w)
    }

    /// One row per seed with the six metrics and the counterfactual mean AD.
    pub fn per_seed_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["seed".to_owned()];
        header.extend(Metric::ALL.iter().map(|m| m.name().to_owned()));
        header.push("mean_abs_difference".to_owned());
        w.write_record(&header)?;
        for r in &self.per_seed {
            let mut row = vec![r.seed.to_string()];
            row.extend(Metric::ALL.iter().map(|&m| opt_str(r.metrics.get(m))));
            row.push(opt_str(r.mean_abs_difference));
            w.write_record(&row)?;
        }
        finish_csv(w)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# {} on {} (λ = {}, {} seeds)\n",
            self.spec.model,
            self.spec.dataset,
            self.lambdas,
            self.spec.seeds.len()
        );
        let _ = writeln!(s, "| Metric | {} |", self.spec.model);
        let _ = writeln!(s, "|---|---|");
        for m in &self.metrics {
            let _ = writeln!(s, "| {} | {} |", m.metric.label(), m.summary.display());
        }
        let _ = writeln!(
            s,
            "| Counterfactual mean AD | {} |",
            self.mean_abs_difference.display()
        );
        if self.warning_count() > 0 {
            let _ = writeln!(
                s,
                "\n{} seed-metric values were undefined and excluded.",
                self.warning_count()
            );
        }
        s
    }

    /// Writes `report.json`, `summary.csv`, `per_seed.csv` and `report.md`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        write_files(
            dir.as_ref(),
            &[
                ("report.json", self.to_json()),
                ("summary.csv", self.summary_csv()?),
                ("per_seed.csv", self.per_seed_csv()?),
                ("report.md", self.to_markdown()),
            ],
        )
    }
}

fn opt_str(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::invalid(format!("csv buffer: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid(format!("csv buffer: {e}")))
}

fn write_files(dir: &Path, files: &[(&str, String)]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    files
        .iter()
        .map(|(name, text)| {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}

/// Runs every seed (in parallel) on an already loaded dataset.
pub fn run_on_dataset(spec: &ExperimentSpec, data: &Dataset) -> Result<AggregateReport> {
    spec.validate()?;
    let per_seed = spec
        .seeds
        .par_iter()
        .map(|&s| fit_seed(spec, data, s).and_then(|f| evaluate_seed(spec, &f)))
        .collect::<Result<Vec<_>>>()?;
    Ok(AggregateReport::from_seeds(spec, per_seed))
}

/// Loads the spec's built-in dataset from `data_dir` and runs it.
pub fn run_experiment(
    spec: &ExperimentSpec,
    data_dir: impl AsRef<Path>,
) -> Result<AggregateReport> {
    spec.validate()?;
    let data = data::load_builtin(spec.dataset.parse()?, data_dir)?;
    run_on_dataset(spec, &data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub report: AggregateReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub dataset: String,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("table serializes");
        s.push('\n');
        s
    }

    /// `label,l_acc,l_var,l_inv,l_cov,<metric>_mean,<metric>_std,...`
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = ["label", "l_acc", "l_var", "l_inv", "l_cov"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for m in Metric::ALL {
            header.push(format!("{}_mean", m.name()));
            header.push(format!("{}_std", m.name()));
        }
        header.push("mean_abs_difference_mean".to_owned());
        header.push("mean_abs_difference_std".to_owned());
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.label.clone()];
            rec.extend(row.report.lambdas.as_array().iter().map(|v| v.to_string()));
            for m in Metric::ALL {
                let s = row.report.summary(m);
                rec.push(opt_str(s.mean));
                rec.push(opt_str(s.std));
            }
            rec.push(opt_str(row.report.mean_abs_difference.mean));
            rec.push(opt_str(row.report.mean_abs_difference.std));
            w.write_record(&rec)?;
        }
        finish_csv(w)
    }

    /// Metrics as rows, one column per ablation setting.
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# Lambda ablation on {}\n", self.dataset);
        let _ = write!(s, "| Metric |");
        for row in &self.rows {
            let _ = write!(s, " {} |", row.label);
        }
        let _ = write!(s, "\n|---|");
        for _ in &self.rows {
            let _ = write!(s, "---|");
        }
        s.push('\n');
        for m in Metric::ALL {
            let _ = write!(s, "| {} |", m.label());
            for row in &self.rows {
                let _ = write!(s, " {} |", row.report.summary(m).display());
            }
            s.push('\n');
        }
        s
    }

    /// Writes `ablation.json`, `ablation.csv` and `ablation.md`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        write_files(
            dir.as_ref(),
            &[
                ("ablation.json", self.to_json()),
                ("ablation.csv", self.to_csv()?),
                ("ablation.md", self.to_markdown()),
            ],
        )
    }
}

/// One FairVIC run per `λ_acc`, with the remainder split equally over the
/// three fairness terms. `base` supplies everything except the weights.
pub fn ablation_equal(
    base: &ExperimentSpec,
    data: &Dataset,
    grid: &[f64],
) -> Result<AblationTable> {
    if grid.is_empty() {
        return Err(Error::invalid("ablation grid is empty"));
    }
    let specs = grid
        .iter()
        .map(|&acc| {
            let mut spec = base.clone().with_lambdas(LambdaWeights::equal_split(acc)?);
            spec.model = ModelKind::Fairvic;
            Ok((format!("λ_acc = {acc}"), spec))
        })
        .collect::<Result<Vec<_>>>()?;
    run_table(&base.dataset, data, specs)
}

/// Which fairness terms an ablation row keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TermMask {
    pub var: bool,
    pub inv: bool,
    pub cov: bool,
}

impl TermMask {
    /// The three single-term and three two-term masks.
    pub const ALL: [TermMask; 6] = [
        TermMask::new(true, false, false),
        TermMask::new(false, true, false),
        TermMask::new(false, false, true),
        TermMask::new(true, true, false),
        TermMask::new(true, false, true),
        TermMask::new(false, true, true),
    ];

    pub const fn new(var: bool, inv: bool, cov: bool) -> Self {
        Self { var, inv, cov }
    }

    fn count(self) -> usize {
        usize::from(self.var) + usize::from(self.inv) + usize::from(self.cov)
    }

    /// λ_acc = 0.1; the remaining 0.9 is split over the selected terms.
    pub fn lambdas(self) -> Result<LambdaWeights> {
        let share = match self.count() {
            1 => 0.9,
            2 => 0.45,
            n => {
                return Err(Error::invalid(format!(
                    "a term mask selects 1 or 2 terms, this one selects {n}"
                )))
            }
        };
        let pick = |on: bool| if on { share } else { 0.0 };
        LambdaWeights::new(0.1, pick(self.var), pick(self.inv), pick(self.cov))
    }

    /// e.g. `var+cov`
    pub fn label(self) -> String {
        let names: Vec<&str> = [(self.var, "var"), (self.inv, "inv"), (self.cov, "cov")]
            .iter()
            .filter(|(on, _)| *on)
            .map(|(_, n)| *n)
            .collect();
        names.join("+")
    }
}

impl std::str::FromStr for TermMask {
    type Err = Error;

    /// Parses `var`, `inv+cov`, etc.
    fn from_str(s: &str) -> Result<Self> {
        let mut mask = TermMask::new(false, false, false);
        for part in s.split('+') {
            let slot = match part.trim() {
                "var" => &mut mask.var,
                "inv" => &mut mask.inv,
                "cov" => &mut mask.cov,
                other => return Err(Error::invalid(format!("unknown term {other:?}"))),
            };
            if *slot {
                return Err(Error::invalid(format!("term {part:?} listed twice")));
            }
            *slot = true;
        }
        mask.lambdas()?;
        Ok(mask)
    }
}

pub fn ablation_individual(
    base: &ExperimentSpec,
    data: &Dataset,
    masks: &[TermMask],
) -> Result<AblationTable> {
    if masks.is_empty() {
        return Err(Error::invalid("no term masks given"));
    }
    let specs = masks
        .iter()
        .map(|&mask| {
            let mut spec = base.clone().with_lambdas(mask.lambdas()?);
            spec.model = ModelKind::Fairvic;
            Ok((mask.label(), spec))
        })
        .collect::<Result<Vec<_>>>()?;
    run_table(&base.dataset, data, specs)
}

fn run_table(
    dataset: &str,
    data: &Dataset,
    specs: Vec<(String, ExperimentSpec)>,
) -> Result<AblationTable> {
    let rows = specs
        .into_iter()
        .map(|(label, spec)| {
            Ok(AblationRow {
                label,
                report: run_on_dataset(&spec, data)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationTable {
        dataset: dataset.to_owned(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    /// Mean accuracy drop over the shuffles.
    pub importance: f64,
    pub std: f64,
}

/// Accuracy drop when each feature column is shuffled, averaged over
/// `repeats` seeded shuffles. Features are reported in column order.
pub fn permutation_importance(
    model: &Network,
    test: &Dataset,
    repeats: usize,
    seed: u64,
) -> Result<Vec<FeatureImportance>> {
    if repeats == 0 {
        return Err(Error::invalid("repeats must be at least 1"));
    }
    let base = accuracy(model, test)?;
    (0..test.n_features())
        .map(|j| {
            let drops = (0..repeats)
                .map(|r| {
                    let mut column = test.features.column(j);
                    column.shuffle(&mut seed::stream(
                        seed,
                        Purpose::Permutation,
                        &[j as u64, r as u64],
                    ));
                    let mut shuffled = test.features.clone();
                    shuffled.set_column(j, &column);
                    let probs = model.predict(&shuffled)?;
                    let b = metrics::EvalBundle::new(probs, &test.labels, &test.protected)?;
                    Ok(base - metrics::accuracy_f1(&b).0)
                })
                .collect::<Result<Vec<f64>>>()?;
            let values: Vec<Option<f64>> = drops.into_iter().map(Some).collect();
            let s = Summary::from_values(&values);
            Ok(FeatureImportance {
                feature: test.feature_names[j].clone(),
                importance: s.mean.unwrap_or(0.0),
                std: s.std.unwrap_or(0.0),
            })
        })
        .collect()
}

fn accuracy(model: &Network, data: &Dataset) -> Result<f64> {
    Ok(metrics::accuracy_f1(&metrics::bundle_for(model, data)?).0)
}

/// `feature,importance,std`
pub fn importance_csv(scores: &[FeatureImportance]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["feature", "importance", "std"])?;
    for s in scores {
        w.write_record([
            s.feature.clone(),
            s.importance.to_string(),
            s.std.to_string(),
        ])?;
    }
    finish_csv(w)
}

/// Eval-mode bottleneck coordinates as `x0,x1,...,label,group`, one row per sample.
pub fn embeddings_csv(model: &Network, data: &Dataset) -> Result<String> {
    let z = model.embed(&data.features)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (0..z.cols()).map(|k| format!("x{k}")).collect();
    header.push("label".to_owned());
    header.push("group".to_owned());
    w.write_record(&header)?;
    for i in 0..z.rows() {
        let mut row: Vec<String> = z.row(i).iter().map(|v| v.to_string()).collect();
        row.push(data.labels[i].to_string());
        row.push(data.protected[i].to_string());
        w.write_record(&row)?;
    }
    finish_csv(w)
}

pub fn export_embeddings(model: &Network, data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = embeddings_csv(model, data)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
