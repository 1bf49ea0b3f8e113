//! Exact risk functionals on finite discrete distributions.
//!
//! Everything here works on the left tail of a *return* (higher is better):
//! the expectile below 1/2 and the CVaR are both pessimistic summaries that
//! never exceed the mean. The per-sample gradient terms at the bottom of the
//! file are the ones the model-free critics use.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Atom values closer than this are merged into one atom.
pub const MERGE_TOL: f64 = 1e-12;

/// Slack for cumulative-probability comparisons against a risk level.
const LEVEL_TOL: f64 = 1e-12;

/// Finite-support distribution over real values.
///
/// Atoms are kept sorted by value, merged when closer than [`MERGE_TOL`], and
/// carry strictly positive probabilities that sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    values: Vec<f64>,
    probs: Vec<f64>,
}

impl DiscreteDistribution {
    /// Builds a distribution from `(value, probability)` pairs.
    ///
    /// Zero-probability atoms are dropped. The total mass must be within 1e-9
    /// of one and is renormalized exactly.
    pub fn new<I>(atoms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        let mut pairs: Vec<(f64, f64)> = Vec::new();
        let mut total = 0.0;
        for (v, p) in atoms {
            if !v.is_finite() {
                return Err(Error::domain(format!("atom value {v} is not finite")));
            }
            if !p.is_finite() || p < 0.0 {
                return Err(Error::domain(format!("atom probability {p} is invalid")));
            }
            if p > 0.0 {
                total += p;
                pairs.push((v, p));
            }
        }
        if pairs.is_empty() {
            return Err(Error::domain("distribution has no atoms with positive mass"));
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!("probabilities sum to {total}, not 1")));
        }
        for pair in &mut pairs {
            pair.1 /= total;
        }
        Ok(Self::from_pairs(pairs))
    }

    /// Sorts and merges pairs whose probabilities are already valid.
    pub(crate) fn from_pairs(mut pairs: Vec<(f64, f64)>) -> Self {
        pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let mut values: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut probs: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut group_start = f64::NEG_INFINITY;
        for (v, p) in pairs {
            if !values.is_empty() && v - group_start <= MERGE_TOL {
                *probs.last_mut().unwrap() += p;
            } else {
                group_start = v;
                values.push(v);
                probs.push(p);
            }
        }
        Self { values, probs }
    }

    /// Point mass at `value`.
    pub fn point(value: f64) -> Self {
        Self {
            values: vec![value],
            probs: vec![1.0],
        }
    }

    /// Equal mass on each of `values`.
    pub fn uniform(values: &[f64]) -> Result<Self> {
        let p = 1.0 / values.len() as f64;
        Self::new(values.iter().map(|&v| (v, p)))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn atoms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.values.iter().copied().zip(self.probs.iter().copied())
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        *self.values.last().unwrap()
    }

    pub fn mean(&self) -> f64 {
        self.atoms().map(|(v, p)| v * p).sum()
    }

    /// Applies `f` to every atom value, re-sorting and re-merging.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_pairs(self.atoms().map(|(v, p)| (f(v), p)).collect())
    }

    /// Draws one value by inverse-CDF lookup on a single uniform.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        let mut cum = 0.0;
        for (v, p) in self.atoms() {
            cum += p;
            if u < cum {
                return v;
            }
        }
        self.max()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskKind {
    Expectile,
    #[serde(rename = "cvar")]
    CVaR,
    Mean,
}

impl FromStr for RiskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "expectile" => Ok(RiskKind::Expectile),
            "cvar" => Ok(RiskKind::CVaR),
            "mean" => Ok(RiskKind::Mean),
            other => Err(Error::domain(format!("unknown risk measure `{other}`"))),
        }
    }
}

impl fmt::Display for RiskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RiskKind::Expectile => "expectile",
            RiskKind::CVaR => "cvar",
            RiskKind::Mean => "mean",
        })
    }
}

/// A risk measure together with its level.
///
/// `Mean` is carried as the 1/2-expectile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskSpec {
    kind: RiskKind,
    alpha: f64,
}

impl RiskSpec {
    pub fn new(kind: RiskKind, alpha: f64) -> Result<Self> {
        match kind {
            RiskKind::Mean => Ok(Self::mean()),
            _ => {
                check_alpha(alpha)?;
                Ok(Self { kind, alpha })
            }
        }
    }

    pub fn expectile(alpha: f64) -> Result<Self> {
        Self::new(RiskKind::Expectile, alpha)
    }

    pub fn cvar(alpha: f64) -> Result<Self> {
        Self::new(RiskKind::CVaR, alpha)
    }

    pub fn mean() -> Self {
        Self {
            kind: RiskKind::Mean,
            alpha: 0.5,
        }
    }

    pub fn kind(&self) -> RiskKind {
        self.kind
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// True when the measure is the plain expectation.
    pub fn is_neutral(&self) -> bool {
        matches!(self.kind, RiskKind::Mean)
            || (self.kind == RiskKind::Expectile && self.alpha == 0.5)
    }
}

impl fmt::Display for RiskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            RiskKind::Mean => write!(f, "mean"),
            k => write!(f, "{k}({})", self.alpha),
        }
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("risk level {alpha} is not in (0, 1)")))
    }
}

/// The α-expectile: the unique root of
/// `α·E[(X−y)₊] = (1−α)·E[(y−X)₊]`.
///
/// The first-order condition is piecewise linear and strictly decreasing in
/// `y`, so the root is solved in closed form on the segment between the two
/// atoms that bracket it.
pub fn expectile_exact(dist: &DiscreteDistribution, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(expectile_sorted(&dist.values, &dist.probs, alpha))
}

pub(crate) fn expectile_sorted(values: &[f64], probs: &[f64], alpha: f64) -> f64 {
    let n = values.len();
    if n == 1 {
        return values[0];
    }
    let total: f64 = values.iter().zip(probs).map(|(v, p)| v * p).sum();
    let mut mass_below = 0.0;
    let mut sum_below = 0.0;
    for k in 0..n - 1 {
        mass_below += probs[k];
        sum_below += probs[k] * values[k];
        let mass_above = (1.0 - mass_below).max(0.0);
        let sum_above = total - sum_below;
        let denom = alpha * mass_above + (1.0 - alpha) * mass_below;
        let root = (alpha * sum_above + (1.0 - alpha) * sum_below) / denom;
        if root <= values[k + 1] {
            return root.clamp(values[k], values[k + 1]);
        }
    }
    values[n - 1]
}

/// Lower α-quantile: the smallest atom `v` with `P[X ≤ v] ≥ α`.
pub fn var_exact(dist: &DiscreteDistribution, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let mut cum = 0.0;
    for (v, p) in dist.atoms() {
        cum += p;
        if cum >= alpha - LEVEL_TOL {
            return Ok(v);
        }
    }
    Ok(dist.max())
}

/// Left-tail CVaR: the mean of the lowest α of probability mass.
///
/// The atom straddling level α contributes the fractional weight
/// `α − P[X < v*]`; division by α comes last.
pub fn cvar_exact(dist: &DiscreteDistribution, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(cvar_sorted(&dist.values, &dist.probs, alpha))
}

pub(crate) fn cvar_sorted(values: &[f64], probs: &[f64], alpha: f64) -> f64 {
    let mut cum = 0.0;
    let mut acc = 0.0;
    for (&v, &p) in values.iter().zip(probs) {
        if cum + p >= alpha - LEVEL_TOL {
            if cum == 0.0 {
                return v;
            }
            acc += (alpha - cum).max(0.0) * v;
            return acc / alpha;
        }
        acc += p * v;
        cum += p;
    }
    acc / alpha
}

pub fn risk_exact(dist: &DiscreteDistribution, spec: RiskSpec) -> f64 {
    risk_sorted(&dist.values, &dist.probs, spec)
}

pub(crate) fn risk_sorted(values: &[f64], probs: &[f64], spec: RiskSpec) -> f64 {
    if values.len() == 1 {
        return values[0];
    }
    match spec.kind {
        RiskKind::Mean => values.iter().zip(probs).map(|(v, p)| v * p).sum(),
        RiskKind::Expectile => expectile_sorted(values, probs, spec.alpha),
        RiskKind::CVaR => cvar_sorted(values, probs, spec.alpha),
    }
}

/// `(1−α)·(δ)₋ + α·(δ)₊` with `δ = sample_target − y`.
///
/// Half of the negative gradient of the asymmetric squared loss at `y`.
#[inline]
pub fn expectile_grad_term(sample_target: f64, y: f64, alpha: f64) -> f64 {
    let delta = sample_target - y;
    if delta < 0.0 {
        (1.0 - alpha) * delta
    } else {
        alpha * delta
    }
}

/// `𝟙{sample_target < y} − α`, the quantile-regression gradient at `y`.
#[inline]
pub fn quantile_grad_term(sample_target: f64, y: f64, alpha: f64) -> f64 {
    if sample_target < y {
        1.0 - alpha
    } else {
        -alpha
    }
}
