//! Gaussian law of the normalized line flows.
//!
//! With `p = S(√Σ X + μ)` and `f = C p`, the flows are `f = V X + W μ`
//! where `C = D B L⁺`, `W = C S` and `V = C S √Σ`. Each flow is
//! `N(ν_ℓ, σ_ℓ²)` with `ν = W μ` and `σ_ℓ` the norm of row `ℓ` of `V`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid_model::{build_incidence, build_laplacian, Network};

/// Relative eigenvalue cutoff separating the Laplacian's structural zero.
pub const DEFAULT_PINV_REL_TOL: f64 = 1e-9;

/// Relative asymmetry accepted for "symmetric" inputs.
pub const SYMMETRY_REL_TOL: f64 = 1e-12;

fn asymmetry(a: &DMatrix<f64>) -> Result<f64> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch {
            what: "square matrix columns".into(),
            expected: a.nrows(),
            got: a.ncols(),
        });
    }
    let scale = a.amax();
    let diff = (a - a.transpose()).amax();
    if diff > SYMMETRY_REL_TOL * scale {
        return Err(Error::NotSymmetric { asymmetry: diff });
    }
    Ok(diff)
}

fn symmetric_eigen(a: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let sym = (a + a.transpose()) * 0.5;
    SymmetricEigen::new(sym)
}

/// Moore–Penrose pseudo-inverse of a symmetric PSD matrix by spectral
/// decomposition. Eigenvalues at or below `rel_tol · λ_max` are treated as
/// zero; more than one such eigenvalue means the graph is disconnected.
pub fn pseudo_inverse(l: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    asymmetry(l)?;
    let n = l.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let eig = symmetric_eigen(l);
    let lambda_max = eig.eigenvalues.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
    if lambda_max == 0.0 {
        if n == 1 {
            return Ok(DMatrix::zeros(1, 1));
        }
        return Err(Error::MultipleZeroEigenvalues { count: n });
    }
    let cutoff = rel_tol * lambda_max;
    let zeros = eig.eigenvalues.iter().filter(|v| v.abs() <= cutoff).count();
    if zeros > 1 {
        return Err(Error::MultipleZeroEigenvalues { count: zeros });
    }
    let mut pinv = DMatrix::zeros(n, n);
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.abs() <= cutoff {
            continue;
        }
        let q = eig.eigenvectors.column(k);
        pinv += (q * q.transpose()) / lambda;
    }
    Ok((&pinv + pinv.transpose()) * 0.5)
}

/// Symmetric square root of a PSD matrix. Eigenvalues in `[-tol, 0)` are
/// clamped to zero; anything below `-tol` is rejected.
pub fn psd_sqrt(sigma: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    asymmetry(sigma)?;
    let n = sigma.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let eig = symmetric_eigen(sigma);
    let mut root = DMatrix::zeros(n, n);
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < -tol {
            return Err(Error::NotPsd { eigenvalue: lambda });
        }
        if lambda <= 0.0 {
            continue;
        }
        let q = eig.eigenvectors.column(k);
        root += (q * q.transpose()) * lambda.sqrt();
    }
    Ok((&root + root.transpose()) * 0.5)
}

/// The `n × (n−1)` matrix that completes non-slack injections into a
/// zero-sum vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SlackEmbedding {
    pub matrix: DMatrix<f64>,
    /// Bus index of each column.
    pub columns: Vec<usize>,
    pub slack: usize,
}

pub fn slack_embedding(n: usize, slack: usize) -> Result<SlackEmbedding> {
    if slack >= n {
        return Err(Error::BadSlackIndex { slack, n });
    }
    let columns: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let mut matrix = DMatrix::zeros(n, n - 1);
    for (c, &bus) in columns.iter().enumerate() {
        matrix[(bus, c)] = 1.0;
        matrix[(slack, c)] = -1.0;
    }
    Ok(SlackEmbedding {
        matrix,
        columns,
        slack,
    })
}

/// Mean vector and covariance of the non-slack injections.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionModel {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
}

impl InjectionModel {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        if sigma.nrows() != mu.len() || sigma.ncols() != mu.len() {
            return Err(Error::DimensionMismatch {
                what: "covariance matrix".into(),
                expected: mu.len(),
                got: if sigma.nrows() != mu.len() {
                    sigma.nrows()
                } else {
                    sigma.ncols()
                },
            });
        }
        if mu.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "injection model contains non-finite values".into(),
            ));
        }
        asymmetry(&sigma)?;
        Ok(InjectionModel { mu, sigma })
    }

    /// Independent injections with a common variance.
    pub fn iid(mu: DVector<f64>, variance: f64) -> Result<Self> {
        if !(variance.is_finite() && variance >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "variance must be >= 0, got {variance}"
            )));
        }
        let d = mu.len();
        Self::new(mu, DMatrix::identity(d, d) * variance)
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn with_mu(&self, mu: DVector<f64>) -> Result<Self> {
        Self::new(mu, self.sigma.clone())
    }
}

/// Everything needed to describe `f ~ N(ν, V Vᵀ)`.
#[derive(Debug, Clone, Serialize)]
pub struct FlowFactorization {
    #[serde(skip)]
    l_pinv: DMatrix<f64>,
    #[serde(skip)]
    injection_flows: DMatrix<f64>,
    #[serde(skip)]
    ptdf: DMatrix<f64>,
    #[serde(skip)]
    w: DMatrix<f64>,
    #[serde(skip)]
    v: DMatrix<f64>,
    nu: Vec<f64>,
    sigma: Vec<f64>,
    m: usize,
    n: usize,
    slack: usize,
    columns: Vec<usize>,
}

impl FlowFactorization {
    /// Laplacian pseudo-inverse `L⁺`.
    pub fn l_pinv(&self) -> &DMatrix<f64> {
        &self.l_pinv
    }

    /// Unnormalized map from bus injections to line flows, `B L⁺`.
    pub fn injection_flows(&self) -> &DMatrix<f64> {
        &self.injection_flows
    }

    /// `C = D B L⁺`, injections to normalized flows.
    pub fn ptdf(&self) -> &DMatrix<f64> {
        &self.ptdf
    }

    /// `W = C S`, mean non-slack injections to mean normalized flows.
    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// `V = C S √Σ`.
    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn max_sigma(&self) -> f64 {
        self.sigma.iter().fold(0.0, |a, &b| a.max(b))
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn slack(&self) -> usize {
        self.slack
    }

    /// Bus index for each entry of μ.
    pub fn columns(&self) -> &[usize] {
        &self.columns
    }

    /// Mean normalized flows `W μ` for an arbitrary μ (σ does not depend on μ).
    pub fn nu_at(&self, mu: &[f64]) -> Result<Vec<f64>> {
        if mu.len() != self.n - 1 {
            return Err(Error::DimensionMismatch {
                what: "mu".into(),
                expected: self.n - 1,
                got: mu.len(),
            });
        }
        Ok((0..self.m).map(|l| row_dot(&self.w, l, mu)).collect())
    }

    /// Copy of this factorization re-centred at another mean injection.
    pub fn with_mu(&self, mu: &[f64]) -> Result<Self> {
        let nu = self.nu_at(mu)?;
        Ok(FlowFactorization { nu, ..self.clone() })
    }
}

/// Dot product of row `r` of `a` with `x`, summed left to right.
pub(crate) fn row_dot(a: &DMatrix<f64>, r: usize, x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (c, &xc) in x.iter().enumerate() {
        acc += a[(r, c)] * xc;
    }
    acc
}

/// Assembles `L⁺, C, W, V, ν, σ` for a validated network.
pub fn factorize(net: &Network, inj: &InjectionModel, rel_tol: f64) -> Result<FlowFactorization> {
    let (n, m) = (net.n(), net.m());
    if inj.dim() != n - 1 {
        return Err(Error::DimensionMismatch {
            what: "mu".into(),
            expected: n - 1,
            got: inj.dim(),
        });
    }
    let l_pinv = pseudo_inverse(&build_laplacian(net), rel_tol)?;
    let injection_flows = build_incidence(net) * &l_pinv;
    let mut ptdf = injection_flows.clone();
    for line in net.lines() {
        let mut row = ptdf.row_mut(line.index);
        row /= line.capacity;
    }
    let s = slack_embedding(n, net.slack())?;
    let w = &ptdf * &s.matrix;
    let sig_scale = inj.sigma().amax().max(1.0);
    let root = psd_sqrt(inj.sigma(), 1e-9 * sig_scale)?;
    let v = &w * root;
    let sigma = (0..m).map(|l| v.row(l).norm()).collect();
    let nu = (0..m)
        .map(|l| row_dot(&w, l, inj.mu().as_slice()))
        .collect();
    Ok(FlowFactorization {
        l_pinv,
        injection_flows,
        ptdf,
        w,
        v,
        nu,
        sigma,
        m,
        n,
        slack: net.slack(),
        columns: s.columns,
    })
}

/// Unnormalized mean line flows `B L⁺ S μ`.
pub fn mean_line_flows(net: &Network, mu: &[f64], rel_tol: f64) -> Result<Vec<f64>> {
    let n = net.n();
    if mu.len() != n - 1 {
        return Err(Error::DimensionMismatch {
            what: "mu".into(),
            expected: n - 1,
            got: mu.len(),
        });
    }
    let l_pinv = pseudo_inverse(&build_laplacian(net), rel_tol)?;
    let s = slack_embedding(n, net.slack())?;
    let p = &s.matrix * DVector::from_column_slice(mu);
    let flows = build_incidence(net) * (l_pinv * p);
    Ok(flows.iter().copied().collect())
}
