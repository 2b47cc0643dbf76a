#![allow(dead_code)]

use fairvic::metrics::{EvalBundle, Metric};
use fairvic::nn::Mode;
use fairvic::train::{batch_gradient, Batch, TrainConfig};
use fairvic::{LambdaWeights, Matrix, Network, VarianceConfig};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Minimum distance of every pre-activation, hinge gap, clamp edge and
/// covariance projection from its kink for a point to count.
const KINK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    Accuracy,
    Variance,
    Invariance,
    Covariance,
}

impl Term {
    pub const ALL: [Term; 4] = [
        Term::Accuracy,
        Term::Variance,
        Term::Invariance,
        Term::Covariance,
    ];

    pub fn lambdas(self) -> LambdaWeights {
        let w = match self {
            Term::Accuracy => [1.0, 0.0, 0.0, 0.0],
            Term::Variance => [0.0, 1.0, 0.0, 0.0],
            Term::Invariance => [0.0, 0.0, 1.0, 0.0],
            Term::Covariance => [0.0, 0.0, 0.0, 1.0],
        };
        LambdaWeights::new(w[0], w[1], w[2], w[3]).unwrap()
    }
}

pub struct Problem {
    pub net: Network,
    pub features: Matrix,
    pub labels: Vec<f64>,
    pub protected: Vec<f64>,
    pub cfg: TrainConfig,
    pub dropout_seed: u64,
}

const PROTECTED_COL: usize = 0;

impl Problem {
    /// Random 4-3-2-1 network and 8-row batch; column 0 is the binary group.
    pub fn random(rng: &mut ChaCha8Rng, lambdas: LambdaWeights) -> Self {
        let mut net = Network::init(&[4, 3, 2, 1], rng.gen()).unwrap();
        let params: Vec<f64> = (0..net.parameter_count())
            .map(|_| rng.gen_range(-1.5..1.5))
            .collect();
        net.set_parameters(&params).unwrap();
        let rows = 8;
        let mut data = Vec::with_capacity(rows * 4);
        let mut protected = Vec::with_capacity(rows);
        for i in 0..rows {
            let g = if i < 2 {
                i as f64
            } else {
                f64::from(rng.gen::<bool>())
            };
            protected.push(g);
            data.push(g);
            for _ in 1..4 {
                data.push(rng.gen_range(-2.0..2.0));
            }
        }
        let labels = (0..rows).map(|_| f64::from(rng.gen::<bool>())).collect();
        let mut cfg = TrainConfig::new(lambdas, 0);
        // A large γ keeps the variance hinge active.
        cfg.variance = VarianceConfig::new(3.0, 1e-4).unwrap();
        Self {
            net,
            features: Matrix::from_vec(rows, 4, data).unwrap(),
            labels,
            protected,
            cfg,
            dropout_seed: rng.gen(),
        }
    }

    fn batch(&self) -> Batch<'_> {
        Batch {
            features: &self.features,
            labels: &self.labels,
            protected: &self.protected,
            protected_col: PROTECTED_COL,
        }
    }

    fn at(&self, params: &[f64]) -> Network {
        let mut net = self.net.clone();
        net.set_parameters(params).unwrap();
        net
    }

    pub fn loss(&self, params: &[f64]) -> f64 {
        batch_gradient(
            &self.at(params),
            self.batch(),
            &self.cfg,
            Mode::Train,
            self.dropout_seed,
        )
        .unwrap()
        .breakdown
        .l_total
    }

    pub fn analytic(&self) -> Vec<f64> {
        batch_gradient(
            &self.net,
            self.batch(),
            &self.cfg,
            Mode::Train,
            self.dropout_seed,
        )
        .unwrap()
        .grads
        .flatten()
    }

    pub fn numeric(&self) -> Vec<f64> {
        let base = self.net.parameters();
        (0..base.len())
            .map(|i| {
                let mut p = base.clone();
                p[i] = base[i] + FD_STEP;
                let up = self.loss(&p);
                p[i] = base[i] - FD_STEP;
                let down = self.loss(&p);
                (up - down) / (2.0 * FD_STEP)
            })
            .collect()
    }

    /// Every non-differentiable point is at least `KINK_MARGIN` away.
    pub fn is_smooth(&self) -> bool {
        let flipped = fairvic::loss::flip_protected(&self.features, PROTECTED_COL).unwrap();
        let mut embeddings = None;
        let mut preds = None;
        for x in [&self.features, &flipped] {
            let out = self.net.forward(x, Mode::Train, self.dropout_seed).unwrap();
            let hidden = self.net.layers().len() - 1;
            for k in 0..hidden {
                let z = out.cache.pre_activation(k).unwrap();
                if z.data().iter().any(|v| v.abs() < KINK_MARGIN) {
                    return false;
                }
            }
            if embeddings.is_none() {
                embeddings = Some(out.embeddings.clone());
                preds = Some(out.predictions.clone());
            }
        }
        let preds = preds.unwrap();
        let clamp = fairvic::loss::BCE_CLAMP;
        if preds
            .iter()
            .any(|&p| p < clamp + KINK_MARGIN || p > 1.0 - clamp - KINK_MARGIN)
        {
            return false;
        }
        let z = embeddings.unwrap();
        let n = z.rows() as f64;
        for j in 0..z.cols() {
            let col = z.column(j);
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let sigma = (var + self.cfg.variance.epsilon()).sqrt();
            if (self.cfg.variance.gamma() - sigma).abs() < KINK_MARGIN {
                return false;
            }
        }
        let mean = preds.iter().sum::<f64>() / n;
        let dot: f64 = preds
            .iter()
            .zip(&self.protected)
            .map(|(p, g)| (p - mean) * g)
            .sum();
        dot.abs() > KINK_MARGIN
    }
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-300)
}

pub struct GradientSummary {
    pub points: usize,
    pub rejected: usize,
    pub worst: f64,
}

/// Draws random smooth points until `points` are accepted and returns the
/// worst relative error between analytic and central-difference gradients.
pub fn gradient_suite(term: Term, points: usize, seed: u64, dropout: f64) -> GradientSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut accepted, mut rejected, mut worst) = (0, 0, 0.0f64);
    while accepted < points {
        let mut p = Problem::random(&mut rng, term.lambdas());
        if dropout > 0.0 {
            p.net = p.net.with_dropout(dropout).unwrap();
        }
        if !p.is_smooth() {
            rejected += 1;
            assert!(
                rejected < 100 * points,
                "too few smooth points for {term:?}"
            );
            continue;
        }
        let a = p.analytic();
        if a.iter().map(|g| g.abs()).sum::<f64>() < 1e-8 {
            rejected += 1;
            continue;
        }
        worst = worst.max(relative_error(&a, &p.numeric()));
        accepted += 1;
    }
    GradientSummary {
        points: accepted,
        rejected,
        worst,
    }
}

/// Straight-line metric definitions over explicit index loops.
pub mod oracle {
    use super::*;

    fn rate(b: &EvalBundle, group: u8, condition: impl Fn(usize) -> bool) -> Option<f64> {
        let mut hits = 0usize;
        let mut total = 0usize;
        for i in 0..b.pred_probs.len() {
            if b.group[i] == group && condition(i) {
                total += 1;
                if b.pred_probs[i] >= 0.5 {
                    hits += 1;
                }
            }
        }
        (total > 0).then(|| hits as f64 / total as f64)
    }

    fn tpr(b: &EvalBundle, g: u8) -> Option<f64> {
        rate(b, g, |i| b.true_labels[i] == 1)
    }

    fn fpr(b: &EvalBundle, g: u8) -> Option<f64> {
        rate(b, g, |i| b.true_labels[i] == 0)
    }

    fn selection(b: &EvalBundle, g: u8) -> Option<f64> {
        rate(b, g, |_| true)
    }

    pub fn value(b: &EvalBundle, metric: Metric) -> Option<f64> {
        let n = b.pred_probs.len();
        match metric {
            Metric::Accuracy => {
                let correct = (0..n)
                    .filter(|&i| u8::from(b.pred_probs[i] >= 0.5) == b.true_labels[i])
                    .count();
                Some(correct as f64 / n as f64)
            }
            Metric::F1 => {
                let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
                for i in 0..n {
                    let pred = b.pred_probs[i] >= 0.5;
                    match (b.true_labels[i] == 1, pred) {
                        (true, true) => tp += 1,
                        (false, true) => fp += 1,
                        (true, false) => fn_ += 1,
                        _ => {}
                    }
                }
                let d = 2 * tp + fp + fn_;
                Some(if d == 0 {
                    0.0
                } else {
                    (2 * tp) as f64 / d as f64
                })
            }
            Metric::EqualizedOdds | Metric::AbsoluteOdds => {
                let fpr_gap = (fpr(b, 0)? - fpr(b, 1)?).abs();
                let tpr_gap = (tpr(b, 0)? - tpr(b, 1)?).abs();
                Some(if metric == Metric::EqualizedOdds {
                    fpr_gap.max(tpr_gap)
                } else {
                    0.5 * (fpr_gap + tpr_gap)
                })
            }
            Metric::StatisticalParity => Some(selection(b, 0)? - selection(b, 1)?),
            Metric::DisparateImpact => {
                let p = selection(b, 1)?;
                if p == 0.0 {
                    return None;
                }
                Some(selection(b, 0)? / p)
            }
        }
    }

    pub fn library(b: &EvalBundle, metric: Metric) -> Option<f64> {
        use fairvic::metrics::*;
        match metric {
            Metric::Accuracy => Some(accuracy_f1(b).0),
            Metric::F1 => Some(accuracy_f1(b).1),
            Metric::EqualizedOdds => equalized_odds_diff(b).ok(),
            Metric::AbsoluteOdds => average_abs_odds_diff(b).ok(),
            Metric::StatisticalParity => statistical_parity_diff(b).ok(),
            Metric::DisparateImpact => disparate_impact(b).ok(),
        }
    }

    /// Random bundle of 1..=12 rows; probabilities land on 0.5 exactly now and then.
    pub fn random_bundle(rng: &mut ChaCha8Rng) -> EvalBundle {
        let n = rng.gen_range(1..=12);
        let probs: Vec<f64> = (0..n)
            .map(|_| {
                if rng.gen_bool(0.15) {
                    0.5
                } else {
                    rng.gen_range(0.0..=1.0)
                }
            })
            .collect();
        let labels: Vec<f64> = (0..n).map(|_| f64::from(rng.gen::<bool>())).collect();
        let groups: Vec<f64> = (0..n).map(|_| f64::from(rng.gen::<bool>())).collect();
        EvalBundle::new(probs, &labels, &groups).unwrap()
    }

    /// Number of (bundle, metric) mismatches over `count` random bundles, and
    /// how many metric values were undefined.
    pub fn compare(count: usize, seed: u64) -> (usize, usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut mismatches, mut undefined) = (0, 0);
        for _ in 0..count {
            let b = random_bundle(&mut rng);
            for m in Metric::ALL {
                match (value(&b, m), library(&b, m)) {
                    (Some(x), Some(y)) if (x - y).abs() <= 1e-12 => {}
                    (None, None) => undefined += 1,
                    _ => mismatches += 1,
                }
            }
        }
        (mismatches, undefined)
    }
}
