use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fairvic::data::{self, BuiltinDataset, DATA_DIR_ENV};
use fairvic::experiments::{self, ExperimentSpec, ModelKind, TermMask, EQUAL_GRID};
use fairvic::metrics::{self, MetricReport};
use fairvic::{CounterfactualGrouping, Dataset, DatasetSchema, Error, LambdaWeights, Network};

/// Fairness-aware training and evaluation for tabular benchmarks.
#[derive(Debug, Parser)]
#[command(name = "fairvic", version)]
struct Cli {
    /// Directory holding the benchmark CSVs.
    #[arg(long, global = true, env = DATA_DIR_ENV, default_value = "data")]
    data_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Multi-seed run with mean ± std aggregation.
    Run {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// FairVIC runs over a λ_acc grid, the rest split equally over the fairness terms.
    AblateEqual {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Comma-separated λ_acc values.
        #[arg(long, value_delimiter = ',', default_values_t = EQUAL_GRID)]
        grid: Vec<f64>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// FairVIC runs keeping one or two fairness terms, with λ_acc = 0.1.
    AblateIndividual {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Comma-separated masks such as `var,inv+cov`; all six by default.
        #[arg(long, value_delimiter = ',')]
        masks: Vec<TermMask>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Permutation feature importances on one seed's test split.
    Importance {
        #[command(flatten)]
        model: SingleModelArgs,
        /// Shuffles per feature.
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        /// CSV destination; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Eval-mode bottleneck coordinates for one seed's split.
    Embeddings {
        #[command(flatten)]
        model: SingleModelArgs,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
        /// CSV destination; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// The six metrics on an external predictions CSV with columns prob,label,group.
    Audit {
        predictions: PathBuf,
        #[arg(long, value_enum, default_value_t = AuditFormat::Json)]
        format: AuditFormat,
        /// Destination; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// Built-in dataset (adult, compas, german). Ignored with --schema.
    #[arg(long, required_unless_present = "schema")]
    dataset: Option<BuiltinDataset>,
    /// TOML schema for a custom dataset.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// CSV for --schema; defaults to `<data-dir>/<schema name>.csv`.
    #[arg(long, requires = "schema")]
    csv: Option<PathBuf>,
    #[arg(long, default_value = "fairvic")]
    model: ModelKind,
    /// acc,var,inv,cov; defaults depend on the dataset.
    #[arg(long)]
    lambdas: Option<LambdaWeights>,
    /// Variance hinge margin.
    #[arg(long)]
    gamma: Option<f64>,
    /// `a..b` (end exclusive) or a comma-separated list.
    #[arg(long, value_parser = parse_seeds)]
    seeds: Option<Seeds>,
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// L1 weight penalty coefficient.
    #[arg(long)]
    l1: Option<f64>,
    /// L2 weight penalty coefficient.
    #[arg(long)]
    l2: Option<f64>,
    /// Group assignment for counterfactual metrics.
    #[arg(long, value_enum, default_value_t = Grouping::Original)]
    counterfactual_grouping: Grouping,
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// Directory for the JSON, CSV and markdown reports.
    #[arg(long)]
    out: Option<PathBuf>,
    /// What to print on stdout.
    #[arg(long, value_enum, default_value_t = Format::Markdown)]
    format: Format,
}

#[derive(Debug, Args)]
struct SingleModelArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    /// Seed whose split (and, without --network, training run) is used.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Previously saved network; skips training.
    #[arg(long)]
    network: Option<PathBuf>,
    /// Save the trained network here.
    #[arg(long, conflicts_with = "network")]
    save_network: Option<PathBuf>,
}

#[derive(Debug, Clone)]
struct Seeds(Vec<u64>);

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Markdown,
    Json,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AuditFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Grouping {
    Original,
    Flipped,
}

fn parse_seeds(s: &str) -> Result<Seeds, String> {
    let bad = |p: &str| format!("bad seed {p:?}");
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad(a))?;
        let b: u64 = b.trim().parse().map_err(|_| bad(b))?;
        if a >= b {
            return Err(format!("empty seed range {s:?}"));
        }
        return Ok(Seeds((a..b).collect()));
    }
    s.split(',')
        .map(|p| p.trim().parse().map_err(|_| bad(p)))
        .collect::<Result<_, _>>()
        .map(Seeds)
}

impl ExperimentArgs {
    fn load(&self, data_dir: &Path) -> fairvic::Result<(ExperimentSpec, Dataset)> {
        let data = match (&self.schema, self.dataset) {
            (Some(schema), _) => {
                let schema = DatasetSchema::from_toml_file(schema)?;
                let csv = self
                    .csv
                    .clone()
                    .unwrap_or_else(|| data_dir.join(format!("{}.csv", schema.name)));
                data::load_csv(csv, &schema)?
            }
            (None, Some(ds)) => data::load_builtin(ds, data_dir)?,
            (None, None) => unreachable!("clap requires --dataset or --schema"),
        };
        let mut spec = ExperimentSpec::new(data.name.clone(), self.model);
        if let Some(l) = self.lambdas {
            spec.lambdas = l;
        }
        if let Some(Seeds(s)) = &self.seeds {
            spec.seeds = s.clone();
        }
        set(&mut spec.gamma, self.gamma);
        set(&mut spec.test_fraction, self.test_fraction);
        set(&mut spec.epochs, self.epochs);
        set(&mut spec.batch_size, self.batch_size);
        set(&mut spec.learning_rate, self.learning_rate);
        set(&mut spec.l1_coeff, self.l1);
        set(&mut spec.l2_coeff, self.l2);
        spec.counterfactual_grouping = match self.counterfactual_grouping {
            Grouping::Original => CounterfactualGrouping::Original,
            Grouping::Flipped => CounterfactualGrouping::Flipped,
        };
        spec.validate()?;
        Ok((spec, data))
    }
}

fn set<T: Copy>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Writes `text` to `path`, or stdout without one.
fn emit(text: &str, path: Option<&Path>) -> fairvic::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io {
            path: p.to_owned(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Trained (or loaded) network plus the standardized split it belongs to.
fn single_model(
    args: &SingleModelArgs,
    data_dir: &Path,
) -> fairvic::Result<(Network, Dataset, Dataset)> {
    let (spec, data) = args.exp.load(data_dir)?;
    match &args.network {
        Some(path) => {
            let net = Network::load(path)?;
            let (train, test) = experiments::split_seed(&spec, &data, args.seed)?;
            if net.input_width() != test.n_features() {
                return Err(Error::Shape(format!(
                    "network expects {} features, dataset has {}",
                    net.input_width(),
                    test.n_features()
                )));
            }
            Ok((net, train, test))
        }
        None => {
            let fitted = experiments::fit_seed(&spec, &data, args.seed)?;
            if let Some(path) = &args.save_network {
                fitted.network.save(path)?;
            }
            Ok((fitted.network, fitted.train, fitted.test))
        }
    }
}

fn execute(cli: Cli) -> fairvic::Result<()> {
    let dir = cli.data_dir.as_path();
    match cli.command {
        Command::Run { exp, output } => {
            let (spec, data) = exp.load(dir)?;
            let report = experiments::run_on_dataset(&spec, &data)?;
            if let Some(out) = &output.out {
                report.write_to(out)?;
            }
            match output.format {
                Format::Markdown => emit(&report.to_markdown(), None),
                Format::Json => emit(&report.to_json(), None),
            }
        }
        Command::AblateEqual { exp, grid, output } => {
            let (spec, data) = exp.load(dir)?;
            let table = experiments::ablation_equal(&spec, &data, &grid)?;
            if let Some(out) = &output.out {
                table.write_to(out)?;
            }
            match output.format {
                Format::Markdown => emit(&table.to_markdown(), None),
                Format::Json => emit(&table.to_json(), None),
            }
        }
        Command::AblateIndividual { exp, masks, output } => {
            let (spec, data) = exp.load(dir)?;
            let masks = if masks.is_empty() {
                TermMask::ALL.to_vec()
            } else {
                masks
            };
            let table = experiments::ablation_individual(&spec, &data, &masks)?;
            if let Some(out) = &output.out {
                table.write_to(out)?;
            }
            match output.format {
                Format::Markdown => emit(&table.to_markdown(), None),
                Format::Json => emit(&table.to_json(), None),
            }
        }
        Command::Importance {
            model,
            repeats,
            out,
        } => {
            let (net, _, test) = single_model(&model, dir)?;
            let scores = experiments::permutation_importance(&net, &test, repeats, model.seed)?;
            emit(&experiments::importance_csv(&scores)?, out.as_deref())
        }
        Command::Embeddings { model, split, out } => {
            let (net, train, test) = single_model(&model, dir)?;
            let data = match split {
                Split::Train => &train,
                Split::Test => &test,
            };
            emit(&experiments::embeddings_csv(&net, data)?, out.as_deref())
        }
        Command::Audit {
            predictions,
            format,
            out,
        } => {
            let report = MetricReport::from_bundle(&metrics::read_predictions_csv(&predictions)?);
            let text = match format {
                AuditFormat::Json => format!("{}\n", report.to_json_record()),
                AuditFormat::Csv => report.to_csv()?,
            };
            emit(&text, out.as_deref())
        }
    }
}

fn error_record(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": { "kind": kind, "message": message } }).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.render().to_string();
            eprintln!("{}", error_record("usage", message.trim_end()));
            return ExitCode::from(2);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_record(e.kind(), &e.to_string()));
            ExitCode::FAILURE
        }
    }
}
