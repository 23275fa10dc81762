//! Upper bounds on the risk level `r(μ) = E max_ℓ |f_ℓ|` and on the line
//! failure probability.
//!
//! Both risk bounds come from the moment generating function of the `2m`
//! Gaussians `±f_ℓ`:
//!
//! ```text
//! g(s)  = log(2m)/s + max_ℓ (σ_ℓ² s / 2 + |ν_ℓ|)
//! r⋆    = inf_{s>0} g(s)
//! r_up  = max_ℓ |ν_ℓ| + max_ℓ σ_ℓ · √(2 log 2m)        (r⋆ ≤ r_up)
//! ```
//!
//! `g` is convex, so its infimum sits either at a stationary point of one
//! affine piece (`s = √(2 log 2m)/σ_ℓ`) or at a crossing of two pieces;
//! [`r_star`] evaluates `g` on exactly that finite candidate set.
//!
//! Any risk value `r < 1` turns into the failure-probability bound
//! `P(max |f_ℓ| ≥ 1) ≤ exp(-(1-r)² / (2 max σ²))`.

use std::fmt;

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::flow_factors::FlowFactorization;

/// A probability strictly inside `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Probability(f64);

impl Probability {
    pub fn new(q: f64) -> Result<Self> {
        if q > 0.0 && q < 1.0 {
            Ok(Probability(q))
        } else {
            Err(Error::InvalidProbability(q))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Probability {
    type Error = Error;
    fn try_from(q: f64) -> Result<Self> {
        Probability::new(q)
    }
}

impl From<Probability> for f64 {
    fn from(q: Probability) -> f64 {
        q.0
    }
}

impl fmt::Display for Probability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Minimizer of `g`. When every σ is zero the infimum is only reached as
/// `s → ∞`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Minimizer {
    At(f64),
    Unbounded,
}

impl Minimizer {
    pub fn value(self) -> Option<f64> {
        match self {
            Minimizer::At(s) => Some(s),
            Minimizer::Unbounded => None,
        }
    }
}

impl Serialize for Minimizer {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Minimizer::At(v) => s.serialize_f64(*v),
            Minimizer::Unbounded => s.serialize_str("unbounded"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RStar {
    pub value: f64,
    pub s_star: Minimizer,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, &b| a.max(b.abs()))
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, &b| a.max(b))
}

/// `√(2 log 2m)`.
pub fn union_factor(m: usize) -> f64 {
    (2.0 * (2.0 * m as f64).ln()).sqrt()
}

/// `√(2 log 1/q)`.
pub fn tail_factor(q: Probability) -> f64 {
    (2.0 * (1.0 / q.get()).ln()).sqrt()
}

pub fn r_up(nu: &[f64], sigma: &[f64]) -> f64 {
    debug_assert_eq!(nu.len(), sigma.len());
    max_abs(nu) + max_of(sigma) * union_factor(nu.len())
}

/// The objective whose infimum over `s > 0` is `r⋆`.
pub fn g_objective(s: f64, nu: &[f64], sigma: &[f64]) -> f64 {
    let m = nu.len();
    let a = (2.0 * m as f64).ln();
    let piece = nu
        .iter()
        .zip(sigma)
        .map(|(n, sg)| 0.5 * sg * sg * s + n.abs())
        .fold(f64::NEG_INFINITY, f64::max);
    a / s + piece
}

/// Positive points where `g` can attain its minimum: the per-line
/// stationary points and the pairwise crossings of the affine pieces.
pub fn candidate_points(nu: &[f64], sigma: &[f64]) -> Vec<f64> {
    let m = nu.len();
    let root = union_factor(m);
    let mut out: Vec<f64> = sigma
        .iter()
        .filter(|&&s| s > 0.0)
        .map(|&s| root / s)
        .collect();
    for i in 0..m {
        for j in (i + 1)..m {
            let (si, sj) = (sigma[i] * sigma[i], sigma[j] * sigma[j]);
            if si == sj {
                continue;
            }
            let s = 2.0 * (nu[i].abs() - nu[j].abs()) / (sj - si);
            if s > 0.0 && s.is_finite() {
                out.push(s);
            }
        }
    }
    out
}

/// `r⋆(μ)` by exhaustive evaluation of `g` at [`candidate_points`].
///
/// Ties go to the smallest `s`. The result is capped at `r_up`, which `g`
/// reaches at `s = √(2 log 2m) / max σ` up to rounding.
pub fn r_star(nu: &[f64], sigma: &[f64]) -> RStar {
    assert_eq!(nu.len(), sigma.len(), "nu and sigma must have equal length");
    assert!(!nu.is_empty(), "need at least one line");
    if sigma.iter().all(|&s| s == 0.0) {
        return RStar {
            value: max_abs(nu),
            s_star: Minimizer::Unbounded,
        };
    }
    if nu.iter().all(|&v| v == 0.0) {
        // g(s) = log(2m)/s + max σ² s/2, minimized in closed form
        return RStar {
            value: r_up(nu, sigma),
            s_star: Minimizer::At(union_factor(nu.len()) / max_of(sigma)),
        };
    }
    let mut best = (f64::INFINITY, f64::INFINITY);
    for s in candidate_points(nu, sigma) {
        let g = g_objective(s, nu, sigma);
        if g < best.0 || (g == best.0 && s < best.1) {
            best = (g, s);
        }
    }
    RStar {
        value: best.0.min(r_up(nu, sigma)),
        s_star: Minimizer::At(best.1),
    }
}

/// `exp(-(1-r)² / (2 max σ²))` for `r < 1`, and the vacuous bound 1 otherwise.
pub fn failure_bound(r: f64, max_sigma: f64) -> f64 {
    if r >= 1.0 || r.is_nan() {
        return 1.0;
    }
    let gap = 1.0 - r;
    (-(gap * gap) / (2.0 * max_sigma * max_sigma))
        .exp()
        .clamp(0.0, 1.0)
}

/// Largest risk level for which [`failure_bound`] stays at or below `q`.
pub fn risk_threshold(q: Probability, max_sigma: f64) -> f64 {
    1.0 - max_sigma * tail_factor(q)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskAssessment {
    pub q: f64,
    pub max_sigma: f64,
    pub r_up: f64,
    pub r_star: f64,
    pub s_star: Minimizer,
    pub threshold: f64,
    /// Failure-probability bound, evaluated at `bound_risk`.
    pub failure_bound: f64,
    /// Which risk value fed the bound.
    pub bound_risk: &'static str,
    /// True when the risk value is ≥ 1 and the bound degenerates to 1.
    pub bound_vacuous: bool,
}

impl RiskAssessment {
    pub fn in_up(&self) -> bool {
        self.r_up <= self.threshold
    }

    pub fn in_star(&self) -> bool {
        self.r_star <= self.threshold
    }
}

/// All bounds at the factorization's own mean.
pub fn assess(factors: &FlowFactorization, q: Probability) -> RiskAssessment {
    assess_flows(factors.nu(), factors.sigma(), q)
}

pub fn assess_flows(nu: &[f64], sigma: &[f64], q: Probability) -> RiskAssessment {
    let max_sigma = max_of(sigma);
    let up = r_up(nu, sigma);
    let star = r_star(nu, sigma);
    RiskAssessment {
        q: q.get(),
        max_sigma,
        r_up: up,
        r_star: star.value,
        s_star: star.s_star,
        threshold: risk_threshold(q, max_sigma),
        failure_bound: failure_bound(star.value, max_sigma),
        bound_risk: "r_star",
        bound_vacuous: star.value >= 1.0,
    }
}
