//! Safe capacity regions in mean-injection space.
//!
//! For a target failure probability `q`, a mean injection vector μ is
//! admissible when a risk value at μ stays below
//! `1 − max σ · √(2 log 1/q)`. The three kinds differ only in which risk
//! value is used:
//!
//! - [`RegionKind::Up`]: the closed-form `r_up`; the region is the
//!   intersection of `2m` half-spaces `±W_ℓ μ ≤ t_up`.
//! - [`RegionKind::Star`]: `r⋆` from the candidate-point minimization.
//! - [`RegionKind::Ci`]: an estimate of `r(μ)` itself, supplied by a
//!   [`RiskEstimator`] and padded by a number of standard errors.
//!
//! Each region contains the previous one. 2-D slices are traced by radial
//! bisection from an interior base point.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow_factors::{row_dot, FlowFactorization};
use crate::mc_oracle::McEstimate;
use crate::report::fmt_f64;
use crate::risk_bounds::{r_star, r_up, risk_threshold, tail_factor, union_factor, Probability};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionKind {
    Up,
    Star,
    Ci,
}

impl fmt::Display for RegionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegionKind::Up => "up",
            RegionKind::Star => "star",
            RegionKind::Ci => "ci",
        })
    }
}

impl FromStr for RegionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "up" => Ok(RegionKind::Up),
            "star" => Ok(RegionKind::Star),
            "ci" => Ok(RegionKind::Ci),
            other => Err(Error::InvalidArgument(format!(
                "unknown region kind `{other}`"
            ))),
        }
    }
}

/// Anything that can estimate `r(μ) = E max |f_ℓ|` with a standard error.
/// Implementations must be deterministic.
pub trait RiskEstimator: Sync {
    fn estimate_risk_at(&self, factors: &FlowFactorization, mu: &[f64]) -> Result<McEstimate>;

    /// Standard errors added to the estimate before the threshold test.
    fn se_margin(&self) -> f64 {
        3.0
    }
}

/// `{μ : A μ ≤ b}`.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpaceSystem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Set when the right-hand side is not positive and no μ qualifies in
    /// any meaningful sense.
    pub empty: bool,
}

impl HalfSpaceSystem {
    pub fn contains(&self, mu: &[f64]) -> bool {
        (0..self.a.nrows()).all(|k| row_dot(&self.a, k, mu) <= self.b[k])
    }
}

/// `t_up = 1 − max σ (√(2 log 1/q) + √(2 log 2m))`.
pub fn rup_rhs(factors: &FlowFactorization, q: Probability) -> f64 {
    1.0 - factors.max_sigma() * (tail_factor(q) + union_factor(factors.m()))
}

/// Half-space form of the `r_up` region: rows `W_ℓ` and `−W_ℓ`, interleaved.
pub fn rup_halfspaces(factors: &FlowFactorization, q: Probability) -> HalfSpaceSystem {
    let w = factors.w();
    let (m, d) = w.shape();
    let t = rup_rhs(factors, q);
    let mut a = DMatrix::zeros(2 * m, d);
    for l in 0..m {
        for c in 0..d {
            a[(2 * l, c)] = w[(l, c)];
            a[(2 * l + 1, c)] = -w[(l, c)];
        }
    }
    HalfSpaceSystem {
        a,
        b: DVector::from_element(2 * m, t),
        empty: t <= 0.0,
    }
}

/// Membership test with the μ-independent quantities computed once.
struct Tester<'a> {
    factors: &'a FlowFactorization,
    kind: RegionKind,
    threshold: f64,
    t_up: f64,
    estimator: Option<&'a dyn RiskEstimator>,
}

impl<'a> Tester<'a> {
    fn new(
        factors: &'a FlowFactorization,
        q: Probability,
        kind: RegionKind,
        estimator: Option<&'a dyn RiskEstimator>,
    ) -> Result<Self> {
        if kind == RegionKind::Ci && estimator.is_none() {
            return Err(Error::EstimatorRequired);
        }
        Ok(Tester {
            factors,
            kind,
            threshold: risk_threshold(q, factors.max_sigma()),
            t_up: rup_rhs(factors, q),
            estimator,
        })
    }

    fn contains(&self, mu: &[f64]) -> Result<bool> {
        let nu = self.factors.nu_at(mu)?;
        Ok(match self.kind {
            // same comparison as the half-space form, so the two agree bit for bit
            RegionKind::Up => nu.iter().all(|v| v.abs() <= self.t_up),
            RegionKind::Star => r_star(&nu, self.factors.sigma()).value <= self.threshold,
            RegionKind::Ci => {
                let est = self.estimator.ok_or(Error::EstimatorRequired)?;
                let r = est.estimate_risk_at(self.factors, mu)?;
                r.mean + est.se_margin() * r.std_error <= self.threshold
            }
        })
    }
}

/// Whether `mu` lies in the capacity region of the given kind.
pub fn membership(
    factors: &FlowFactorization,
    mu: &[f64],
    q: Probability,
    kind: RegionKind,
    estimator: Option<&dyn RiskEstimator>,
) -> Result<bool> {
    Tester::new(factors, q, kind, estimator)?.contains(mu)
}

/// The value `membership` compares against the threshold (`r_up`, `r⋆` or
/// the padded estimate).
pub fn risk_value(
    factors: &FlowFactorization,
    mu: &[f64],
    kind: RegionKind,
    estimator: Option<&dyn RiskEstimator>,
) -> Result<f64> {
    let nu = factors.nu_at(mu)?;
    match kind {
        RegionKind::Up => Ok(r_up(&nu, factors.sigma())),
        RegionKind::Star => Ok(r_star(&nu, factors.sigma()).value),
        RegionKind::Ci => {
            let est = estimator.ok_or(Error::EstimatorRequired)?;
            let r = est.estimate_risk_at(factors, mu)?;
            Ok(r.mean + est.se_margin() * r.std_error)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub rays: usize,
    /// Bisection stops once the bracket is shorter than this (μ units).
    pub tol: f64,
    pub max_radius: f64,
    /// Report rays that never leave the region as marked vertices at
    /// `max_radius` instead of failing.
    pub allow_unbounded: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            rays: 60,
            tol: 1e-6,
            max_radius: 1e6,
            allow_unbounded: false,
        }
    }
}

pub const MIN_RAYS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Vertex {
    pub angle: f64,
    pub mu_i: f64,
    pub mu_j: f64,
    pub bounded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionSlice {
    pub kind: RegionKind,
    pub q: f64,
    pub axis_i: usize,
    pub axis_j: usize,
    pub base_mu: Vec<f64>,
    pub rays: usize,
    pub tol: f64,
    pub vertices: Vec<Vertex>,
}

impl RegionSlice {
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.vertices.iter().map(|v| (v.mu_i, v.mu_j)).collect()
    }

    /// `angle,mu_i,mu_j` rows with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("angle,mu_i,mu_j\n");
        for v in &self.vertices {
            out.push_str(&format!(
                "{},{},{}\n",
                fmt_f64(v.angle),
                fmt_f64(v.mu_i),
                fmt_f64(v.mu_j)
            ));
        }
        out
    }
}

/// Traces the boundary of a 2-D slice through `base_mu`, varying entries
/// `axis_i` and `axis_j` of μ.
#[allow(clippy::too_many_arguments)]
pub fn sweep_slice(
    factors: &FlowFactorization,
    base_mu: &[f64],
    axis_i: usize,
    axis_j: usize,
    q: Probability,
    kind: RegionKind,
    opts: &SweepOptions,
    estimator: Option<&dyn RiskEstimator>,
) -> Result<RegionSlice> {
    let d = factors.n() - 1;
    if base_mu.len() != d {
        return Err(Error::DimensionMismatch {
            what: "base mu".into(),
            expected: d,
            got: base_mu.len(),
        });
    }
    if axis_i >= d || axis_j >= d || axis_i == axis_j {
        return Err(Error::InvalidArgument(format!(
            "axes must be distinct entries of mu in 0..{d}, got ({axis_i}, {axis_j})"
        )));
    }
    if opts.rays < MIN_RAYS {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_RAYS} rays, got {}",
            opts.rays
        )));
    }
    if !(opts.tol > 0.0 && opts.max_radius > opts.tol) {
        return Err(Error::InvalidArgument("need 0 < tol < max_radius".into()));
    }
    let tester = Tester::new(factors, q, kind, estimator)?;
    if !tester.contains(base_mu)? {
        return Err(Error::BasePointOutside {
            kind: kind.to_string(),
            mu: base_mu.to_vec(),
        });
    }

    let point = |dir: (f64, f64), t: f64| {
        let mut mu = base_mu.to_vec();
        mu[axis_i] += t * dir.0;
        mu[axis_j] += t * dir.1;
        mu
    };

    let vertices = (0..opts.rays)
        .into_par_iter()
        .map(|k| {
            let angle = 2.0 * std::f64::consts::PI * k as f64 / opts.rays as f64;
            let dir = (angle.cos(), angle.sin());
            let (mut lo, mut hi) = (0.0_f64, 1.0_f64.min(opts.max_radius));
            let mut bounded = true;
            while tester.contains(&point(dir, hi))? {
                lo = hi;
                if hi >= opts.max_radius {
                    bounded = false;
                    break;
                }
                hi = (2.0 * hi).min(opts.max_radius);
            }
            if !bounded && !opts.allow_unbounded {
                return Err(Error::NonFiniteBoundary {
                    angle,
                    max_radius: opts.max_radius,
                });
            }
            if bounded {
                while hi - lo > opts.tol {
                    let mid = 0.5 * (lo + hi);
                    if tester.contains(&point(dir, mid))? {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
            }
            let mu = point(dir, lo);
            Ok(Vertex {
                angle,
                mu_i: mu[axis_i],
                mu_j: mu[axis_j],
                bounded,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(RegionSlice {
        kind,
        q: q.get(),
        axis_i,
        axis_j,
        base_mu: base_mu.to_vec(),
        rays: opts.rays,
        tol: opts.tol,
        vertices,
    })
}

/// Convex-position test for a polygon given in angular order: no vertex
/// lies more than `tol` inside the chord joining its neighbours.
pub fn is_convex_polygon(points: &[(f64, f64)], tol: f64) -> bool {
    let k = points.len();
    if k < 3 {
        return true;
    }
    // orientation from the signed area
    let area: f64 = (0..k)
        .map(|i| {
            let (a, b) = (points[i], points[(i + 1) % k]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum();
    let orient = if area >= 0.0 { 1.0 } else { -1.0 };
    (0..k).all(|i| {
        let a = points[(i + k - 1) % k];
        let b = points[i];
        let c = points[(i + 1) % k];
        let (cx, cy) = (c.0 - a.0, c.1 - a.1);
        let len = cx.hypot(cy);
        if len == 0.0 {
            return true;
        }
        // distance of b outward from chord a-c, positive for a convex turn
        let outward = -orient * (cx * (b.1 - a.1) - cy * (b.0 - a.0)) / len;
        outward >= -tol
    })
}

/// Whether `p` lies inside (or within `tol` of) a convex polygon in angular order.
pub fn polygon_contains(poly: &[(f64, f64)], p: (f64, f64), tol: f64) -> bool {
    let k = poly.len();
    let area: f64 = (0..k)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % k]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum();
    let orient = if area >= 0.0 { 1.0 } else { -1.0 };
    (0..k).all(|i| {
        let a = poly[i];
        let b = poly[(i + 1) % k];
        let (ex, ey) = (b.0 - a.0, b.1 - a.1);
        let len = ex.hypot(ey);
        if len == 0.0 {
            return true;
        }
        orient * (ex * (p.1 - a.1) - ey * (p.0 - a.0)) / len >= -tol
    })
}
