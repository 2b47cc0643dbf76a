//! Accuracy, variance, invariance and covariance loss terms.
//!
//! Each term returns its value together with the gradient with respect to
//! its inputs (predictions or bottleneck embeddings). The network's
//! [`backward`](crate::nn::Network::backward) carries those gradients to the
//! parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before the log.
pub const BCE_CLAMP: f64 = 1e-7;

const WEIGHT_SUM_TOLERANCE: f64 = 1e-6;

/// Convex weights over the accuracy, variance, invariance and covariance terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaWeights {
    acc: f64,
    var: f64,
    inv: f64,
    cov: f64,
}

impl LambdaWeights {
    pub fn new(acc: f64, var: f64, inv: f64, cov: f64) -> Result<Self> {
        let all = [acc, var, inv, cov];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid(format!(
                "lambda weights must be finite and non-negative, got {all:?}"
            )));
        }
        let sum: f64 = all.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::invalid(format!(
                "lambda weights must sum to 1, got {sum}"
            )));
        }
        Ok(Self { acc, var, inv, cov })
    }

    /// Plain cross-entropy: `(1, 0, 0, 0)`.
    pub fn accuracy_only() -> Self {
        Self {
            acc: 1.0,
            var: 0.0,
            inv: 0.0,
            cov: 0.0,
        }
    }

    /// `acc` on the accuracy term, the remainder split evenly over the three
    /// fairness terms.
    pub fn equal_split(acc: f64) -> Result<Self> {
        if !(acc > 0.0 && acc < 1.0) {
            return Err(Error::invalid(format!("lambda_acc {acc} outside (0, 1)")));
        }
        let rest = (1.0 - acc) / 3.0;
        Self::new(acc, rest, rest, rest)
    }

    pub fn acc(&self) -> f64 {
        self.acc
    }

    pub fn var(&self) -> f64 {
        self.var
    }

    pub fn inv(&self) -> f64 {
        self.inv
    }

    pub fn cov(&self) -> f64 {
        self.cov
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.acc, self.var, self.inv, self.cov]
    }
}

impl std::fmt::Display for LambdaWeights {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{},{},{}", self.acc, self.var, self.inv, self.cov)
    }
}

impl std::str::FromStr for LambdaWeights {
    type Err = Error;

    /// Parses `acc,var,inv,cov`.
    fn from_str(s: &str) -> Result<Self> {
        let parts = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::invalid(format!("bad lambda value {p:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        match parts[..] {
            [a, v, i, c] => Self::new(a, v, i, c),
            _ => Err(Error::invalid(format!(
                "expected four comma-separated lambdas, got {s:?}"
            ))),
        }
    }
}

/// Hinge margin and the stabilizer added under the square root.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceConfig {
    gamma: f64,
    epsilon: f64,
}

impl VarianceConfig {
    /// `gamma` must be positive. `epsilon` may be zero, in which case the
    /// gradient at exactly zero variance is taken as 0.
    pub fn new(gamma: f64, epsilon: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::invalid(format!(
                "gamma must be positive, got {gamma}"
            )));
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::invalid(format!(
                "epsilon must be non-negative, got {epsilon}"
            )));
        }
        Ok(Self { gamma, epsilon })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

impl Default for VarianceConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            epsilon: 1e-4,
        }
    }
}

/// A loss value and its gradient with respect to a prediction vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TermLoss {
    pub value: f64,
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingLoss {
    pub value: f64,
    pub grad: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvarianceLoss {
    pub value: f64,
    pub grad_preds: Vec<f64>,
    pub grad_flipped: Vec<f64>,
}

fn check_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("{what}: lengths {a} and {b} differ")));
    }
    if a == 0 {
        return Err(Error::invalid(format!("{what}: empty batch")));
    }
    Ok(())
}

/// Mean binary cross-entropy on clamped probabilities.
pub fn bce_loss(preds: &[f64], labels: &[f64]) -> Result<TermLoss> {
    check_len(preds.len(), labels.len(), "bce_loss")?;
    let n = preds.len() as f64;
    let mut total = 0.0;
    let grad = preds
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let pc = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            total -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
            if p != pc {
                // Clamp is flat outside the interval.
                0.0
            } else {
                (-y / pc + (1.0 - y) / (1.0 - pc)) / n
            }
        })
        .collect();
    Ok(TermLoss {
        value: total / n,
        grad,
    })
}

/// Mean computed relative to the first value, so a constant sequence has
/// exactly that constant as its mean.
fn anchored_mean(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let mut it = values.clone();
    let Some(first) = it.next() else {
        return 0.0;
    };
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + (v - first), c + 1));
    first + sum / count as f64
}

/// Mean over embedding dimensions of `max(0, γ − sqrt(popvar_j + ε))`.
pub fn variance_loss(embeddings: &Matrix, cfg: &VarianceConfig) -> Result<EmbeddingLoss> {
    let (n, d) = embeddings.shape();
    if n < 2 {
        return Err(Error::invalid(format!(
            "variance loss needs at least 2 samples, got {n}"
        )));
    }
    if d == 0 {
        return Err(Error::invalid("variance loss needs at least one dimension"));
    }
    let nf = n as f64;
    let means: Vec<f64> = (0..d)
        .map(|j| anchored_mean((0..n).map(|i| embeddings.get(i, j))))
        .collect();
    let mut var = vec![0.0; d];
    for i in 0..n {
        for (j, v) in var.iter_mut().enumerate() {
            let c = embeddings.get(i, j) - means[j];
            *v += c * c;
        }
    }

    let mut value = 0.0;
    // Per-dimension factor such that ∂L/∂z_ij = coef_j · (z_ij − mean_j).
    let mut coef = vec![0.0; d];
    for j in 0..d {
        let sigma = (var[j] / nf + cfg.epsilon).sqrt();
        let gap = cfg.gamma - sigma;
        if gap > 0.0 {
            value += gap;
            if sigma > 0.0 {
                coef[j] = -1.0 / (d as f64 * nf * sigma);
            }
        }
    }

    let mut grad = Matrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            grad.set(i, j, coef[j] * (embeddings.get(i, j) - means[j]));
        }
    }
    Ok(EmbeddingLoss {
        value: value / d as f64,
        grad,
    })
}

/// `(1/N)·Σ(ŷᵢ − ŷᵢ*)²`, with gradients for both prediction vectors.
pub fn invariance_loss(preds: &[f64], preds_flipped: &[f64]) -> Result<InvarianceLoss> {
    check_len(preds.len(), preds_flipped.len(), "invariance_loss")?;
    let n = preds.len() as f64;
    let mut value = 0.0;
    let mut grad_preds = Vec::with_capacity(preds.len());
    let mut grad_flipped = Vec::with_capacity(preds.len());
    for (&a, &b) in preds.iter().zip(preds_flipped) {
        let delta = a - b;
        value += delta * delta;
        grad_preds.push(2.0 * delta / n);
        grad_flipped.push(-2.0 * delta / n);
    }
    Ok(InvarianceLoss {
        value: value / n,
        grad_preds,
        grad_flipped,
    })
}

/// `sqrt((Σᵢ (ŷᵢ − mean ŷ)·Pᵢ)²) / N`: the centered predictions are
/// projected onto the group indicator before squaring, so this is
/// `|Σᵢ (ŷᵢ − mean ŷ)·Pᵢ| / N`, the absolute batch covariance of ŷ and P.
pub fn covariance_loss(preds: &[f64], protected: &[f64]) -> Result<TermLoss> {
    check_len(preds.len(), protected.len(), "covariance_loss")?;
    let n = preds.len() as f64;
    let mean = anchored_mean(preds.iter().copied());
    let dot: f64 = preds
        .iter()
        .zip(protected)
        .map(|(y, p)| (y - mean) * p)
        .sum();
    let value = dot.abs() / n;

    // ∂dot/∂ŷ_k = P_k − mean P; the root's subgradient at 0 is taken as 0.
    let grad = if dot != 0.0 {
        let sign = dot.signum();
        let mean_p = protected.iter().sum::<f64>() / n;
        protected.iter().map(|p| sign * (p - mean_p) / n).collect()
    } else {
        vec![0.0; preds.len()]
    };
    Ok(TermLoss { value, grad })
}

/// Raw per-term losses before weighting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub acc: f64,
    pub var: f64,
    pub inv: f64,
    pub cov: f64,
    pub reg: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_acc: f64,
    pub l_var: f64,
    pub l_inv: f64,
    pub l_cov: f64,
    pub l_reg: f64,
    pub l_total: f64,
}

/// Weighted sum of the four terms plus the (unweighted) regularization penalty.
pub fn total_loss(parts: &LossParts, weights: &LambdaWeights) -> LossBreakdown {
    let l_total = weights.acc * parts.acc
        + weights.var * parts.var
        + weights.inv * parts.inv
        + weights.cov * parts.cov
        + parts.reg;
    LossBreakdown {
        l_acc: parts.acc,
        l_var: parts.var,
        l_inv: parts.inv,
        l_cov: parts.cov,
        l_reg: parts.reg,
        l_total,
    }
}

/// Copy of `batch` with the protected column replaced by its complement.
///
/// The column must hold only the two encoded levels 0 and 1.
pub fn flip_protected(batch: &Matrix, protected_col: usize) -> Result<Matrix> {
    if protected_col >= batch.cols() {
        return Err(Error::invalid(format!(
            "protected column {protected_col} out of range for {} columns",
            batch.cols()
        )));
    }
    let mut out = batch.clone();
    for r in 0..out.rows() {
        let v = out.get(r, protected_col);
        let flipped = if v == 0.0 {
            1.0
        } else if v == 1.0 {
            0.0
        } else {
            return Err(Error::invalid(format!(
                "protected column holds non-binary value {v} at row {r}"
            )));
        };
        out.set(r, protected_col, flipped);
    }
    Ok(out)
}
