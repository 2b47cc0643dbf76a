//! End-to-end acceptance checks, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so every line is printed even when an
//! earlier check fails. Pass criterion numbers as arguments to run a subset:
//! `cargo test -p fairvic --test acceptance -- 6 7 8`.

mod common;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{gradient_suite, oracle, Term, FD_TOLERANCE};
use fairvic::data::{self, BuiltinDataset, DATA_DIR_ENV};
use fairvic::experiments::{self, AggregateReport, ExperimentSpec, ModelKind, EQUAL_GRID};
use fairvic::loss::{self, LossParts};
use fairvic::{Dataset, LambdaWeights, Matrix, Metric, VarianceConfig};

const SEEDS: u64 = 10;

fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

struct Run {
    report: AggregateReport,
    elapsed: Duration,
}

impl Run {
    fn mean(&self, m: Metric) -> f64 {
        self.report.mean(m).unwrap_or(f64::NAN)
    }

    fn mean_ad(&self) -> f64 {
        self.report.mean_abs_difference.mean.unwrap_or(f64::NAN)
    }
}

fn load(ds: BuiltinDataset) -> Result<Dataset, String> {
    data::load_builtin(ds, data_dir()).map_err(|e| format!("{e} (run scripts/prepare_data.py)"))
}

fn run(data: &Dataset, model: ModelKind, lambdas: Option<LambdaWeights>) -> Result<Run, String> {
    let mut spec = ExperimentSpec::new(data.name.clone(), model).with_seeds((0..SEEDS).collect());
    if let Some(l) = lambdas {
        spec = spec.with_lambdas(l);
    }
    let start = Instant::now();
    let report = experiments::run_on_dataset(&spec, data).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    eprintln!(
        "  {} {} λ=({}) in {:.1}s",
        data.name,
        model,
        report.lambdas,
        elapsed.as_secs_f64()
    );
    Ok(Run { report, elapsed })
}

fn lambdas(a: f64, v: f64, i: f64, c: f64) -> LambdaWeights {
    LambdaWeights::new(a, v, i, c).expect("valid weights")
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome, String> {
    Ok(Outcome { pass, detail })
}

/// The German baseline is shared with the counterfactual check.
#[derive(Default)]
struct German {
    baseline: Option<Run>,
}

impl German {
    fn baseline(&mut self, data: &Dataset) -> Result<&Run, String> {
        if self.baseline.is_none() {
            self.baseline = Some(run(data, ModelKind::BaselineBce, None)?);
        }
        Ok(self.baseline.as_ref().unwrap())
    }
}

fn german_reproduction(german: &mut German) -> Result<Outcome, String> {
    let data = load(BuiltinDataset::German)?;
    let fv = run(&data, ModelKind::Fairvic, Some(lambdas(0.1, 0.1, 0.1, 0.7)))?;
    let base = german.baseline(&data)?;
    let spd = fv.mean(Metric::StatisticalParity);
    let di = fv.mean(Metric::DisparateImpact);
    let (acc, base_acc) = (fv.mean(Metric::Accuracy), base.mean(Metric::Accuracy));
    let elapsed = fv.elapsed + base.elapsed;
    let pass = spd.abs() <= 0.12
        && (0.85..=1.16).contains(&di)
        && acc >= base_acc - 0.05
        && elapsed < Duration::from_secs(120);
    let detail = format!(
        "fairvic SPD {spd:.4}, DI {di:.4}, acc {acc:.4} vs baseline {base_acc:.4}; {:.0}s",
        elapsed.as_secs_f64()
    );
    outcome(pass, detail)
}

fn compas_reproduction() -> Result<Outcome, String> {
    let data = load(BuiltinDataset::Compas)?;
    let base = run(&data, ModelKind::BaselineBce, None)?;
    let fv = run(&data, ModelKind::Fairvic, Some(lambdas(0.1, 0.1, 0.1, 0.7)))?;
    let base_spd = base.mean(Metric::StatisticalParity);
    let spd = fv.mean(Metric::StatisticalParity);
    let di = fv.mean(Metric::DisparateImpact);
    let drop = base.mean(Metric::Accuracy) - fv.mean(Metric::Accuracy);
    let elapsed = fv.elapsed + base.elapsed;
    let pass = base_spd <= -0.20
        && spd.abs() <= 0.15
        && di >= 0.78
        && drop <= 0.05
        && elapsed < Duration::from_secs(300);
    outcome(
        pass,
        format!(
            "baseline SPD {base_spd:.4}; fairvic SPD {spd:.4}, DI {di:.4}, acc drop {drop:.4}; {:.0}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn adult_reproduction() -> Result<Outcome, String> {
    let data = load(BuiltinDataset::Adult)?;
    let base = run(&data, ModelKind::BaselineBce, None)?;
    let fv = run(&data, ModelKind::Fairvic, Some(lambdas(0.2, 0.1, 0.1, 0.6)))?;
    let base_di = base.mean(Metric::DisparateImpact);
    let di = fv.mean(Metric::DisparateImpact);
    let acc = fv.mean(Metric::Accuracy);
    // The budget covers one 10-seed configuration.
    let pass =
        base_di <= 0.40 && di >= 0.70 && acc >= 0.78 && fv.elapsed < Duration::from_secs(1800);
    outcome(
        pass,
        format!(
            "baseline DI {base_di:.4}; fairvic DI {di:.4}, acc {acc:.4}; fairvic {:.0}s, baseline {:.0}s",
            fv.elapsed.as_secs_f64(),
            base.elapsed.as_secs_f64()
        ),
    )
}

/// Adjacent pairs moving the wrong way, with whether each stays within one
/// combined std.
fn violations(means: &[f64], stds: &[f64], increasing: bool) -> Vec<bool> {
    (1..means.len())
        .filter_map(|k| {
            let step = means[k] - means[k - 1];
            let wrong = if increasing { step < 0.0 } else { step > 0.0 };
            let combined = (stds[k].powi(2) + stds[k - 1].powi(2)).sqrt();
            wrong.then_some(step.abs() <= combined)
        })
        .collect()
}

fn adult_trend() -> Result<Outcome, String> {
    let data = load(BuiltinDataset::Adult)?;
    let base =
        ExperimentSpec::new(data.name.clone(), ModelKind::Fairvic).with_seeds((0..SEEDS).collect());
    let start = Instant::now();
    let table =
        experiments::ablation_equal(&base, &data, &EQUAL_GRID).map_err(|e| e.to_string())?;
    eprintln!(
        "  adult equal-weight grid in {:.1}s",
        start.elapsed().as_secs_f64()
    );
    let series = |m: Metric| -> (Vec<f64>, Vec<f64>) {
        table
            .rows
            .iter()
            .map(|r| {
                let s = r.report.summary(m);
                (s.mean.unwrap_or(f64::NAN), s.std.unwrap_or(f64::NAN))
            })
            .unzip()
    };
    let (acc, acc_std) = series(Metric::Accuracy);
    let (di, di_std) = series(Metric::DisparateImpact);
    let mut wrong = violations(&acc, &acc_std, true);
    wrong.extend(violations(&di, &di_std, false));
    let pass = wrong.len() <= 1
        && wrong.iter().all(|&within| within)
        && acc.iter().chain(&di).all(|v| v.is_finite());
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:.3}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    outcome(
        pass,
        format!(
            "acc [{}], DI [{}], {} violation(s)",
            fmt(&acc),
            fmt(&di),
            wrong.len()
        ),
    )
}

fn counterfactual(german: &mut German) -> Result<Outcome, String> {
    let data = load(BuiltinDataset::German)?;
    let inv = run(&data, ModelKind::Fairvic, Some(lambdas(0.1, 0.0, 0.9, 0.0)))?;
    let base = german.baseline(&data)?;
    let (ad, base_ad) = (inv.mean_ad(), base.mean_ad());
    outcome(
        ad < base_ad,
        format!("invariance mean AD {ad:.4} vs baseline {base_ad:.4}"),
    )
}

fn metric_oracle() -> Result<Outcome, String> {
    let (mismatches, undefined) = oracle::compare(1000, 2024);
    outcome(
        mismatches == 0,
        format!("1000 bundles, {mismatches} mismatches, {undefined} undefined in both"),
    )
}

fn gradients() -> Result<Outcome, String> {
    let mut worst = 0.0f64;
    let mut points = 0;
    for (k, term) in Term::ALL.into_iter().enumerate() {
        let s = gradient_suite(term, 100, 100 + k as u64, 0.0);
        worst = worst.max(s.worst);
        points += s.points;
    }
    outcome(
        worst <= FD_TOLERANCE,
        format!("{points} points over four terms, worst relative error {worst:.2e}"),
    )
}

fn closed_form() -> Result<Outcome, String> {
    let err = |e: fairvic::Error| e.to_string();
    let close = |a: f64, b: f64, tol: f64| (a - b).abs() <= tol;
    let default_var = VarianceConfig::new(1.0, 1e-4).map_err(err)?;
    let no_eps = VarianceConfig::new(1.0, 0.0).map_err(err)?;
    let identical = Matrix::from_rows(&[[0.3, -1.0], [0.3, -1.0], [0.3, -1.0]]).map_err(err)?;
    let spread = Matrix::from_rows(&[[-2.0, 3.0], [2.0, -3.0]]).map_err(err)?;
    let two = Matrix::from_rows(&[[0.0, 0.0], [1.0, 1.0]]).map_err(err)?;
    let batch = Matrix::from_rows(&[[0.0, 5.0], [1.0, -2.0], [1.0, 0.5]]).map_err(err)?;
    let flipped = loss::flip_protected(&batch, 0).map_err(err)?;
    let total = |w: LambdaWeights, p: [f64; 5]| {
        let parts = LossParts {
            acc: p[0],
            var: p[1],
            inv: p[2],
            cov: p[3],
            reg: p[4],
        };
        loss::total_loss(&parts, &w).l_total
    };

    let checks: Vec<(&str, bool)> = vec![
        (
            "bce perfect",
            loss::bce_loss(&[1.0 - 1e-7, 1e-7], &[1.0, 0.0])
                .map_err(err)?
                .value
                <= 1e-6,
        ),
        (
            "bce ln2",
            close(
                loss::bce_loss(&[0.5, 0.5], &[1.0, 0.0]).map_err(err)?.value,
                2f64.ln(),
                1e-12,
            ),
        ),
        (
            "bce 0.9",
            close(
                loss::bce_loss(&[0.9], &[0.0]).map_err(err)?.value,
                -(0.1f64.ln()),
                1e-12,
            ),
        ),
        (
            "variance inactive",
            loss::variance_loss(&spread, &default_var)
                .map_err(err)?
                .value
                == 0.0,
        ),
        (
            "variance identical",
            close(
                loss::variance_loss(&identical, &default_var)
                    .map_err(err)?
                    .value,
                0.99,
                1e-12,
            ),
        ),
        (
            "variance two-sample",
            loss::variance_loss(&two, &no_eps).map_err(err)?.value == 0.5,
        ),
        (
            "invariance identical",
            loss::invariance_loss(&[0.3, 0.7], &[0.3, 0.7])
                .map_err(err)?
                .value
                == 0.0,
        ),
        (
            "invariance 0.02",
            close(
                loss::invariance_loss(&[0.8, 0.2], &[0.6, 0.2])
                    .map_err(err)?
                    .value,
                0.02,
                1e-15,
            ),
        ),
        (
            "invariance symmetric",
            loss::invariance_loss(&[0.8, 0.1], &[0.6, 0.4])
                .map_err(err)?
                .value
                == loss::invariance_loss(&[0.6, 0.4], &[0.8, 0.1])
                    .map_err(err)?
                    .value,
        ),
        (
            "covariance constant",
            loss::covariance_loss(&[0.4; 4], &[1.0, 0.0, 1.0, 0.0])
                .map_err(err)?
                .value
                == 0.0,
        ),
        (
            "covariance 0.25",
            loss::covariance_loss(&[1.0, 0.0], &[1.0, 0.0])
                .map_err(err)?
                .value
                == 0.25,
        ),
        (
            "covariance no group",
            loss::covariance_loss(&[1.0, 0.0], &[0.0, 0.0])
                .map_err(err)?
                .value
                == 0.0,
        ),
        (
            "total acc-only",
            total(LambdaWeights::accuracy_only(), [0.7, 3.0, 2.0, 1.0, 0.0]) == 0.7,
        ),
        (
            "total convex",
            close(
                total(lambdas(0.1, 0.1, 0.1, 0.7), [1.0, 1.0, 1.0, 1.0, 0.0]),
                1.0,
                1e-15,
            ),
        ),
        (
            "total 0.32",
            close(
                total(lambdas(0.2, 0.1, 0.1, 0.6), [0.5, 0.2, 0.1, 0.3, 0.01]),
                0.32,
                1e-15,
            ),
        ),
        ("flip complement", flipped.column(0) == [1.0, 0.0, 0.0]),
        (
            "flip involution",
            loss::flip_protected(&flipped, 0).map_err(err)? == batch,
        ),
        ("flip locality", flipped.column(1) == batch.column(1)),
    ];
    let failed: Vec<&str> = checks
        .iter()
        .filter(|(_, ok)| !ok)
        .map(|(n, _)| *n)
        .collect();
    outcome(
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} examples", checks.len())
        } else {
            format!("failed: {}", failed.join(", "))
        },
    )
}

fn determinism() -> Result<Outcome, String> {
    let data = load(BuiltinDataset::German)?;
    let mut spec =
        ExperimentSpec::new(data.name.clone(), ModelKind::Fairvic).with_seeds(vec![0, 7, 3]);
    spec.epochs = 20;
    let render = || -> Result<Vec<String>, String> {
        let r = experiments::run_on_dataset(&spec, &data).map_err(|e| e.to_string())?;
        Ok(vec![
            r.to_json(),
            r.summary_csv().map_err(|e| e.to_string())?,
            r.per_seed_csv().map_err(|e| e.to_string())?,
            r.to_markdown(),
        ])
    };
    let (a, b) = (render()?, render()?);
    let bytes: usize = a.iter().map(String::len).sum();
    outcome(
        a == b,
        format!("3 seeds × 20 epochs, {bytes} bytes of CSV/JSON/markdown compared"),
    )
}

fn main() -> ExitCode {
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let wanted = |id: u32| selected.is_empty() || selected.contains(&id);
    let german = std::cell::RefCell::new(German::default());

    type Check<'a> = Box<dyn FnMut() -> Result<Outcome, String> + 'a>;
    let checks: Vec<(u32, &str, Check)> = vec![
        (6, "metric oracle equivalence", Box::new(metric_oracle)),
        (7, "finite-difference gradients", Box::new(gradients)),
        (8, "closed-form loss examples", Box::new(closed_form)),
        (9, "byte-identical reruns", Box::new(determinism)),
        (
            1,
            "German reproduction",
            Box::new(|| german_reproduction(&mut german.borrow_mut())),
        ),
        (
            5,
            "German counterfactual AD",
            Box::new(|| counterfactual(&mut german.borrow_mut())),
        ),
        (2, "COMPAS reproduction", Box::new(compas_reproduction)),
        (3, "Adult reproduction", Box::new(adult_reproduction)),
        (4, "Adult λ_acc trade-off", Box::new(adult_trend)),
    ];

    let mut all_pass = true;
    for (id, name, mut check) in checks {
        if !wanted(id) {
            continue;
        }
        eprintln!("[{id}] {name} ...");
        let (pass, detail) = match check() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        println!(
            "{} [{id}] {name}: {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
        all_pass &= pass;
    }
    if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
