//! Crude Monte Carlo ground truth for the normalized flows `f = ν + V X`.
//!
//! Samples are generated in fixed chunks of [`CHUNK_SIZE`]. Chunk `k` draws
//! from a ChaCha8 stream seeded with `seed` on stream number `k`, and
//! per-chunk statistics are merged in chunk order. The result is therefore
//! bit-identical for any number of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow_factors::FlowFactorization;
use crate::regions::RiskEstimator;

pub const CHUNK_SIZE: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateKind {
    FailureProb,
    RiskLevel,
    TailProb,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McEstimate {
    pub kind: EstimateKind,
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationReport {
    pub s_values: Vec<f64>,
    pub empirical_tail: Vec<McEstimate>,
    pub bound: Vec<f64>,
    pub r_hat: McEstimate,
    pub max_sigma: f64,
}

impl ConcentrationReport {
    /// Whether every empirical tail minus `k` standard errors stays below its bound.
    pub fn holds_within(&self, k: f64) -> bool {
        self.empirical_tail
            .iter()
            .zip(&self.bound)
            .all(|(e, &b)| e.mean - k * e.std_error <= b)
    }
}

/// Row-major copy of `V` plus the mean, the only data the sampler touches.
struct FlowLaw {
    v: Vec<f64>,
    nu: Vec<f64>,
    dim: usize,
}

impl FlowLaw {
    fn new(factors: &FlowFactorization, nu: Vec<f64>) -> Self {
        let v = factors.v();
        let (m, dim) = v.shape();
        let mut rows = Vec::with_capacity(m * dim);
        for l in 0..m {
            rows.extend(v.row(l).iter());
        }
        FlowLaw { v: rows, nu, dim }
    }

    fn m(&self) -> usize {
        self.nu.len()
    }

    /// Fills `flows` with one sample; `x` is scratch space of length `dim`.
    fn draw(&self, rng: &mut ChaCha8Rng, x: &mut [f64], flows: &mut [f64]) {
        for xi in x.iter_mut() {
            *xi = rng.sample(StandardNormal);
        }
        for (l, f) in flows.iter_mut().enumerate() {
            let row = &self.v[l * self.dim..(l + 1) * self.dim];
            let mut acc = self.nu[l];
            for (a, b) in row.iter().zip(x.iter()) {
                acc += a * b;
            }
            *f = acc;
        }
    }
}

fn chunk_rng(seed: u64, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk as u64);
    rng
}

fn chunk_plan(n: usize) -> Vec<(usize, usize)> {
    (0..n.div_ceil(CHUNK_SIZE))
        .map(|k| (k, CHUNK_SIZE.min(n - k * CHUNK_SIZE)))
        .collect()
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "sample count must be at least 1".into(),
        ));
    }
    Ok(())
}

/// Running count / exceedances / mean / M2 of `max |f|`, mergeable in order.
#[derive(Debug, Clone, Copy, Default)]
struct Stats {
    n: usize,
    exceed: usize,
    mean: f64,
    m2: f64,
}

impl Stats {
    fn push(&mut self, x: f64) {
        self.n += 1;
        if x >= 1.0 {
            self.exceed += 1;
        }
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn merge(self, other: Stats) -> Stats {
        if self.n == 0 {
            return other;
        }
        if other.n == 0 {
            return self;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let mean = if delta == 0.0 {
            self.mean
        } else {
            self.mean + delta * other.n as f64 / n as f64
        };
        let m2 = self.m2 + other.m2 + delta * delta * (self.n as f64 * other.n as f64 / n as f64);
        Stats {
            n,
            exceed: self.exceed + other.exceed,
            mean,
            m2,
        }
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, &b| a.max(b.abs()))
}

fn run_stats(law: &FlowLaw, n: usize, seed: u64) -> Stats {
    chunk_plan(n)
        .into_par_iter()
        .map(|(k, len)| {
            let mut rng = chunk_rng(seed, k);
            let mut x = vec![0.0; law.dim];
            let mut flows = vec![0.0; law.m()];
            let mut st = Stats::default();
            for _ in 0..len {
                law.draw(&mut rng, &mut x, &mut flows);
                st.push(max_abs(&flows));
            }
            st
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(Stats::default(), Stats::merge)
}

fn run_max_abs(law: &FlowLaw, n: usize, seed: u64) -> Vec<f64> {
    chunk_plan(n)
        .into_par_iter()
        .map(|(k, len)| {
            let mut rng = chunk_rng(seed, k);
            let mut x = vec![0.0; law.dim];
            let mut flows = vec![0.0; law.m()];
            (0..len)
                .map(|_| {
                    law.draw(&mut rng, &mut x, &mut flows);
                    max_abs(&flows)
                })
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .concat()
}

fn failure_from(st: &Stats, seed: u64) -> McEstimate {
    let p = st.exceed as f64 / st.n as f64;
    McEstimate {
        kind: EstimateKind::FailureProb,
        mean: p,
        std_error: (p * (1.0 - p) / st.n as f64).sqrt(),
        n_samples: st.n,
        seed,
    }
}

fn risk_from(st: &Stats, seed: u64) -> McEstimate {
    let var = if st.n > 1 {
        st.m2 / (st.n - 1) as f64
    } else {
        0.0
    };
    McEstimate {
        kind: EstimateKind::RiskLevel,
        mean: st.mean,
        std_error: (var.max(0.0) / st.n as f64).sqrt(),
        n_samples: st.n,
        seed,
    }
}

/// `n` draws of the normalized flow vector, one per row.
pub fn sample_flows(
    factors: &FlowFactorization,
    n: usize,
    seed: u64,
) -> Result<nalgebra::DMatrix<f64>> {
    check_n(n)?;
    let law = FlowLaw::new(factors, factors.nu().to_vec());
    let m = law.m();
    let rows: Vec<Vec<f64>> = chunk_plan(n)
        .into_par_iter()
        .map(|(k, len)| {
            let mut rng = chunk_rng(seed, k);
            let mut x = vec![0.0; law.dim];
            let mut out = vec![0.0; len * m];
            for r in 0..len {
                law.draw(&mut rng, &mut x, &mut out[r * m..(r + 1) * m]);
            }
            out
        })
        .collect();
    Ok(nalgebra::DMatrix::from_row_slice(n, m, &rows.concat()))
}

/// Fraction of samples with `max |f_ℓ| ≥ 1`.
pub fn estimate_failure_prob(
    factors: &FlowFactorization,
    n: usize,
    seed: u64,
) -> Result<McEstimate> {
    check_n(n)?;
    let law = FlowLaw::new(factors, factors.nu().to_vec());
    Ok(failure_from(&run_stats(&law, n, seed), seed))
}

/// Sample mean of `max |f_ℓ|`.
pub fn estimate_risk(factors: &FlowFactorization, n: usize, seed: u64) -> Result<McEstimate> {
    check_n(n)?;
    let law = FlowLaw::new(factors, factors.nu().to_vec());
    Ok(risk_from(&run_stats(&law, n, seed), seed))
}

/// Failure probability and risk level from one shared sample.
pub fn estimate_both(
    factors: &FlowFactorization,
    n: usize,
    seed: u64,
) -> Result<(McEstimate, McEstimate)> {
    check_n(n)?;
    let law = FlowLaw::new(factors, factors.nu().to_vec());
    let st = run_stats(&law, n, seed);
    Ok((failure_from(&st, seed), risk_from(&st, seed)))
}

/// Empirical tails `P(max|f| − r̂ ≥ s)` against `exp(−s²/(2 max σ²))`,
/// with `r̂` the sample mean of the same draws.
pub fn concentration_check(
    factors: &FlowFactorization,
    s_values: &[f64],
    n: usize,
    seed: u64,
) -> Result<ConcentrationReport> {
    check_n(n)?;
    if s_values.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(Error::InvalidArgument(
            "s values must be finite and nonnegative".into(),
        ));
    }
    if s_values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "s values must be strictly increasing".into(),
        ));
    }
    let law = FlowLaw::new(factors, factors.nu().to_vec());
    let draws = run_max_abs(&law, n, seed);
    let mut st = Stats::default();
    for &d in &draws {
        st.push(d);
    }
    let r_hat = risk_from(&st, seed);
    let max_sigma = factors.max_sigma();
    let nf = n as f64;
    let empirical_tail = s_values
        .iter()
        .map(|&s| {
            let hits = draws.iter().filter(|&&d| d - r_hat.mean >= s).count();
            let p = hits as f64 / nf;
            McEstimate {
                kind: EstimateKind::TailProb,
                mean: p,
                std_error: (p * (1.0 - p) / nf).sqrt(),
                n_samples: n,
                seed,
            }
        })
        .collect();
    let bound = s_values
        .iter()
        .map(|&s| {
            if s == 0.0 {
                1.0
            } else {
                (-(s * s) / (2.0 * max_sigma * max_sigma)).exp()
            }
        })
        .collect();
    Ok(ConcentrationReport {
        s_values: s_values.to_vec(),
        empirical_tail,
        bound,
        r_hat,
        max_sigma,
    })
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for an estimate at `mu`, a pure function of `(seed, mu)` so that
/// sweep results do not depend on evaluation order.
pub fn derive_seed(seed: u64, mu: &[f64]) -> u64 {
    mu.iter()
        .fold(splitmix64(seed), |h, x| splitmix64(h ^ x.to_bits()))
}

/// Monte Carlo risk estimator for capacity-region membership.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloRisk {
    pub n: usize,
    pub seed: u64,
    /// Standard errors added to `r̂` before comparing with the threshold.
    pub se_margin: f64,
}

impl MonteCarloRisk {
    pub fn new(n: usize, seed: u64) -> Self {
        MonteCarloRisk {
            n,
            seed,
            se_margin: 3.0,
        }
    }
}

impl RiskEstimator for MonteCarloRisk {
    fn estimate_risk_at(&self, factors: &FlowFactorization, mu: &[f64]) -> Result<McEstimate> {
        check_n(self.n)?;
        let seed = derive_seed(self.seed, mu);
        let law = FlowLaw::new(factors, factors.nu_at(mu)?);
        Ok(risk_from(&run_stats(&law, self.n, seed), seed))
    }

    fn se_margin(&self) -> f64 {
        self.se_margin
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow_factors::{factorize, InjectionModel, DEFAULT_PINV_REL_TOL};
    use crate::grid_model::tests::{ids, k3, spec};
    use crate::grid_model::Network;
    use nalgebra::DVector;

    fn k3_factors(mu: [f64; 2], var: f64) -> FlowFactorization {
        let inj = InjectionModel::iid(DVector::from_column_slice(&mu), var).unwrap();
        factorize(&k3(), &inj, DEFAULT_PINV_REL_TOL).unwrap()
    }

    #[test]
    fn degenerate_samples_equal_mean() {
        let f = k3_factors([3.0, -3.0], 0.0);
        let s = sample_flows(&f, 100, 1).unwrap();
        for r in 0..100 {
            for l in 0..3 {
                assert_eq!(s[(r, l)], f.nu()[l]);
            }
        }
        let r = estimate_risk(&f, 1000, 1).unwrap();
        assert_eq!(r.mean, f.nu().iter().fold(0.0, |a: f64, b| a.max(b.abs())));
        assert_eq!(r.std_error, 0.0);
    }

    #[test]
    fn same_seed_same_matrix() {
        let f = k3_factors([0.0, 0.0], 0.5);
        assert_eq!(
            sample_flows(&f, 20_000, 9).unwrap(),
            sample_flows(&f, 20_000, 9).unwrap()
        );
        assert_ne!(
            sample_flows(&f, 100, 9).unwrap(),
            sample_flows(&f, 100, 10).unwrap()
        );
    }

    #[test]
    fn column_means_match_nu() {
        let f = k3_factors([1.0, -2.0], 0.5);
        let n = 100_000;
        let s = sample_flows(&f, n, 3).unwrap();
        for l in 0..3 {
            let mean = s.column(l).mean();
            assert!((mean - f.nu()[l]).abs() <= 3.0 * f.sigma()[l] / (n as f64).sqrt());
        }
    }

    #[test]
    fn huge_capacities_never_fail() {
        let net = Network::new(
            ids(3),
            &[
                spec(0, 1, 1.0, 5e6),
                spec(0, 2, 1.0, 5e6),
                spec(1, 2, 1.0, 5e6),
            ],
            None,
        )
        .unwrap();
        let inj = InjectionModel::iid(DVector::zeros(2), 0.5).unwrap();
        let f = factorize(&net, &inj, DEFAULT_PINV_REL_TOL).unwrap();
        assert_eq!(estimate_failure_prob(&f, 10_000, 1).unwrap().mean, 0.0);
    }

    #[test]
    fn deterministic_overload_always_fails() {
        let f = k3_factors([10.0, -10.0], 0.0);
        let e = estimate_failure_prob(&f, 1000, 1).unwrap();
        assert_eq!(e.mean, 1.0);
        assert_eq!(e.std_error, 0.0);
    }

    #[test]
    fn zero_samples_rejected() {
        let f = k3_factors([0.0, 0.0], 0.5);
        assert!(estimate_risk(&f, 0, 1).is_err());
        assert!(concentration_check(&f, &[0.1, 0.1], 10, 1).is_err());
        assert!(concentration_check(&f, &[-0.1], 10, 1).is_err());
    }

    #[test]
    fn concentration_at_zero_is_trivial() {
        let f = k3_factors([0.0, 0.0], 0.5);
        let rep = concentration_check(&f, &[0.0], 10_000, 2).unwrap();
        assert_eq!(rep.bound[0], 1.0);
        assert!(rep.empirical_tail[0].mean <= 1.0);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let f = k3_factors([0.5, -1.0], 4.5);
        let n = 5 * CHUNK_SIZE + 17;
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let a = one.install(|| estimate_both(&f, n, 11).unwrap());
        let b = four.install(|| estimate_both(&f, n, 11).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn merge_is_consistent_with_serial_welford() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 / 50.0).collect();
        let mut serial = Stats::default();
        xs.iter().for_each(|&x| serial.push(x));
        let mut a = Stats::default();
        let mut b = Stats::default();
        xs[..333].iter().for_each(|&x| a.push(x));
        xs[333..].iter().for_each(|&x| b.push(x));
        let merged = a.merge(b);
        assert_eq!(merged.n, serial.n);
        assert_eq!(merged.exceed, serial.exceed);
        assert!((merged.mean - serial.mean).abs() < 1e-12);
        assert!((merged.m2 - serial.m2).abs() < 1e-9);
    }

    #[test]
    fn derived_seed_depends_on_mu() {
        assert_eq!(derive_seed(1, &[0.5, 1.0]), derive_seed(1, &[0.5, 1.0]));
        assert_ne!(derive_seed(1, &[0.5, 1.0]), derive_seed(1, &[1.0, 0.5]));
        assert_ne!(derive_seed(1, &[0.5]), derive_seed(2, &[0.5]));
    }
}
