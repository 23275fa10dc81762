//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::Instant;

use gridrisk::case_io::{load_scenario_file, ScenarioOverrides};
use gridrisk::flow_factors::{factorize, DEFAULT_PINV_REL_TOL};
use gridrisk::grid_model::{build_laplacian, build_unit_incidence};
use gridrisk::mc_oracle::{
    concentration_check, derive_seed, estimate_failure_prob, estimate_risk, MonteCarloRisk,
};
use gridrisk::regions::{membership, sweep_slice, RegionKind, SweepOptions};
use gridrisk::risk_bounds::{r_star, r_up, Minimizer};
use gridrisk::{InjectionModel, Probability, RiskEstimator};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use common::*;

type Outcome = (bool, String);
type Criterion = (&'static str, fn() -> Outcome);

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(f)
}

/// Every explicit-region point is in the semi-explicit region, semi-explicit
/// points have sampled risk consistent with the threshold, and sampled-region
/// points have sampled failure probability consistent with `q`.
fn inclusion_chain() -> Outcome {
    let sc = k3_with_variance(0.5);
    let (_, f) = sc.factorize().unwrap();
    let q = Probability::new(1e-2).unwrap();
    let threshold = 1.0 - f.max_sigma() * (2.0 * 100f64.ln()).sqrt();
    let est = MonteCarloRisk::new(100_000, 11);
    let start = Instant::now();
    let (mut n_up, mut n_star, mut n_ci) = (0, 0, 0);
    let mut bad = Vec::new();
    single_threaded(|| {
        for a in 0..41 {
            for b in 0..41 {
                let mu = [-8.0 + 0.4 * a as f64, -8.0 + 0.4 * b as f64];
                let up = membership(&f, &mu, q, RegionKind::Up, None).unwrap();
                let star = membership(&f, &mu, q, RegionKind::Star, None).unwrap();
                let ci = membership(&f, &mu, q, RegionKind::Ci, Some(&est)).unwrap();
                if up {
                    n_up += 1;
                    if !star {
                        bad.push(format!("{mu:?} in up but not star"));
                    }
                }
                if star {
                    n_star += 1;
                    let r = est.estimate_risk_at(&f, &mu).unwrap();
                    if r.mean - 3.0 * r.std_error > threshold {
                        bad.push(format!("{mu:?} in star but r_hat {} > {threshold}", r.mean));
                    }
                }
                if ci {
                    n_ci += 1;
                    let g = f.with_mu(&mu).unwrap();
                    let p = estimate_failure_prob(&g, 1_000_000, derive_seed(12, &mu)).unwrap();
                    if p.mean > q.get() + 3.0 * p.std_error {
                        bad.push(format!("{mu:?} in ci but P(L) {} > q", p.mean));
                    }
                }
            }
        }
    });
    let secs = start.elapsed().as_secs_f64();
    let ok = bad.is_empty() && n_up > 0 && n_up <= n_star && secs < 600.0;
    (
        ok,
        format!(
            "up {n_up}, star {n_star}, ci {n_ci} of 1681 grid points; {} violations; {secs:.1}s single-threaded{}",
            bad.len(),
            bad.first().map(|b| format!("; first: {b}")).unwrap_or_default()
        ),
    )
}

/// `r_star ≤ r_up` on random flow laws, and sampled risk stays below
/// `r_star` on random sampleable grids.
fn bound_ordering() -> Outcome {
    let mut rng = rng(2);
    let mut violations = 0;
    for _ in 0..180 {
        let m = rng.gen_range(1..=50);
        let nu: Vec<f64> = (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let sigma: Vec<f64> = (0..m)
            .map(|_| {
                if rng.gen_bool(0.1) {
                    0.0
                } else {
                    rng.gen_range(0.0..1.0)
                }
            })
            .collect();
        if r_star(&nu, &sigma).value > r_up(&nu, &sigma) {
            violations += 1;
        }
    }
    let mut sampled_bad = Vec::new();
    for k in 0..20 {
        let n = rng.gen_range(4..=26);
        let extra = rng.gen_range(0..=(50 - (n - 1)).min(n * (n - 1) / 2 - (n - 1)));
        let net = random_network(&mut rng, n, extra);
        let mu = random_vector(&mut rng, n - 1, 0.5);
        let scale = rng.gen_range(0.01..0.5);
        let sigma = random_psd(&mut rng, n - 1, scale);
        let f = factorize(
            &net,
            &InjectionModel::new(mu, sigma).unwrap(),
            DEFAULT_PINV_REL_TOL,
        )
        .unwrap();
        let rs = r_star(f.nu(), f.sigma()).value;
        if rs > r_up(f.nu(), f.sigma()) {
            violations += 1;
        }
        let r = estimate_risk(&f, 100_000, 100 + k).unwrap();
        if r.mean - 3.0 * r.std_error > rs {
            sampled_bad.push(format!("config {k}: r_hat {} r_star {rs}", r.mean));
        }
    }
    (
        violations == 0 && sampled_bad.is_empty(),
        format!(
            "200 configurations, {violations} with r_star > r_up; 20 sampled grids, {} with r_hat - 3SE > r_star",
            sampled_bad.len()
        ),
    )
}

fn g(s: f64, nu: &[f64], sigma: &[f64]) -> f64 {
    let a = (2.0 * nu.len() as f64).ln();
    a / s
        + nu.iter()
            .zip(sigma)
            .map(|(n, sg)| sg * sg * s / 2.0 + n.abs())
            .fold(f64::NEG_INFINITY, f64::max)
}

/// Minimum over 10⁵ log-spaced points in (10⁻³, 10⁵), then golden-section
/// refinement inside the bracketing cells (the objective is convex).
/// Returns (refined, raw grid minimum).
fn grid_minimum(nu: &[f64], sigma: &[f64]) -> (f64, f64) {
    const N: usize = 100_000;
    let s_at = |k: usize| 10f64.powf(-3.0 + 8.0 * k as f64 / (N - 1) as f64);
    let (mut best_k, mut best) = (0, f64::INFINITY);
    for k in 0..N {
        let v = g(s_at(k), nu, sigma);
        if v < best {
            best = v;
            best_k = k;
        }
    }
    let (mut lo, mut hi) = (
        s_at(best_k.saturating_sub(1)),
        s_at((best_k + 1).min(N - 1)),
    );
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let x1 = hi - phi * (hi - lo);
        let x2 = lo + phi * (hi - lo);
        if g(x1, nu, sigma) <= g(x2, nu, sigma) {
            hi = x2;
        } else {
            lo = x1;
        }
    }
    (best.min(g(0.5 * (lo + hi), nu, sigma)), best)
}

/// Candidate-point minimization against a dense log-grid minimization.
fn candidate_points() -> Outcome {
    let mut rng = rng(3);
    let (mut worst, mut worst_raw, mut below_grid) = (0.0_f64, 0.0_f64, 0);
    let (mut tied, mut zeros) = (0, 0);
    for k in 0..200 {
        let m = rng.gen_range(1..=50);
        let nu: Vec<f64> = (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut sigma: Vec<f64> = (0..m).map(|_| rng.gen_range(0.02..1.0)).collect();
        match k % 4 {
            0 => {
                // a few distinct values shared by many lines
                let levels: Vec<f64> = (0..3).map(|_| rng.gen_range(0.02..1.0)).collect();
                sigma = (0..m).map(|_| levels[rng.gen_range(0..3)]).collect();
                tied += 1;
            }
            1 if m > 1 => {
                for s in sigma.iter_mut().skip(1) {
                    if rng.gen_bool(0.4) {
                        *s = 0.0;
                    }
                }
                zeros += 1;
            }
            _ => {}
        }
        let rs = r_star(&nu, &sigma);
        assert!(matches!(rs.s_star, Minimizer::At(s) if s > 1e-3 && s < 1e5));
        let (refined, raw) = grid_minimum(&nu, &sigma);
        worst = worst.max((rs.value - refined).abs() / refined.abs());
        worst_raw = worst_raw.max((raw - rs.value) / rs.value);
        if raw < rs.value * (1.0 - 1e-12) {
            below_grid += 1;
        }
    }
    (
        worst <= 1e-9 && below_grid == 0,
        format!(
            "200 configurations ({tied} tied, {zeros} with zero sigmas): max rel. gap {worst:.2e} to the refined grid minimum; \
             raw 1e5-point grid sits at most {worst_raw:.2e} above r_star and never below ({below_grid} below)"
        ),
    )
}

/// Sampled failure probability against the exponential bound at `r_star`.
fn failure_bound_consistency() -> Outcome {
    let sc = k3_with_variance(4.5);
    let (_, f) = sc.factorize().unwrap();
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut ok = true;
    let mut checked = 0;
    for (k, mu) in [[0.0, 0.0], [1.0, -1.0], [0.5, 0.5], [-1.0, 0.0]]
        .iter()
        .enumerate()
    {
        let g = f.with_mu(mu).unwrap();
        let rs = r_star(g.nu(), g.sigma()).value;
        if rs >= 1.0 {
            continue;
        }
        let bound = (-(1.0 - rs).powi(2) / (2.0 * g.max_sigma().powi(2))).exp();
        let p = estimate_failure_prob(&g, 1_000_000, 40 + k as u64).unwrap();
        checked += 1;
        ok &= p.mean - 3.0 * p.std_error <= bound;
        lines.push(format!("mu {mu:?}: P {:.4} bound {:.4}", p.mean, bound));
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= checked > 0 && secs < 60.0;
    (ok, format!("{}; {secs:.1}s", lines.join(", ")))
}

/// Empirical tails of `max|f| − r̂` against the Gaussian concentration bound.
fn concentration() -> Outcome {
    let s = [0.02, 0.05, 0.1, 0.2];
    let k3 = k3_with_variance(0.5);
    let case14 = load_scenario_file(
        &cases_dir().join("case14.m"),
        &ScenarioOverrides {
            variance: Some(2e-2),
            ..Default::default()
        },
    )
    .unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, sc, seed) in [("k3", &k3, 51), ("case14", &case14, 52)] {
        let (_, f) = sc.factorize().unwrap();
        let rep = concentration_check(&f, &s, 1_000_000, seed).unwrap();
        ok &= rep.holds_within(3.0);
        let tails: Vec<String> = rep
            .empirical_tail
            .iter()
            .zip(&rep.bound)
            .map(|(e, b)| format!("{:.2e}<={:.2e}", e.mean, b))
            .collect();
        parts.push(format!("{name} [{}]", tails.join(" ")));
    }
    (ok, parts.join("; "))
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    max_abs(&(a - b)) / max_abs(b).max(f64::MIN_POSITIVE)
}

/// Pseudo-inverse identities and flow conservation.
fn linear_algebra() -> Outcome {
    let mut rng = rng(6);
    let mut nets = vec![
        k3_with_variance(0.5).network().unwrap(),
        load_scenario_file(&cases_dir().join("case14.m"), &ScenarioOverrides::default())
            .unwrap()
            .network()
            .unwrap(),
    ];
    for _ in 0..50 {
        let n = rng.gen_range(2..=40);
        let extra = rng.gen_range(0..=n);
        nets.push(random_network(&mut rng, n, extra));
    }
    let mut worst = 0.0_f64;
    let mut worst_balance = 0.0_f64;
    for net in &nets {
        let n = net.n();
        let l = build_laplacian(net);
        let d = n - 1;
        let f = factorize(
            net,
            &InjectionModel::iid(DVector::zeros(d), 1.0).unwrap(),
            DEFAULT_PINV_REL_TOL,
        )
        .unwrap();
        let lp = f.l_pinv();
        worst = worst.max(rel(&(&l * lp * &l), &l));
        worst = worst.max(rel(&(lp * &l * lp), lp));
        worst = worst.max(max_abs(&(lp * DMatrix::from_element(n, 1, 1.0))) / max_abs(lp));
        let a = build_unit_incidence(net);
        for _ in 0..5 {
            let mut p = random_vector(&mut rng, n, 1.0);
            let mean = p.mean();
            p.add_scalar_mut(-mean);
            let flows = f.injection_flows() * &p;
            let balance = a.transpose() * flows - &p;
            worst_balance = worst_balance.max(balance.amax() / p.amax());
        }
    }
    (
        worst <= 1e-10 && worst_balance <= 1e-10,
        format!(
            "{} networks: max rel. identity residual {worst:.2e}, max rel. node imbalance {worst_balance:.2e}",
            nets.len()
        ),
    )
}

/// The explicit-region slice of the three-bus cycle is the analytic hexagon.
fn hexagon() -> Outcome {
    let sc = k3_with_variance(0.5);
    let (_, f) = sc.factorize().unwrap();
    let q = Probability::new(1e-3).unwrap();
    let sigma_max = (1.0f64 / 90.0).sqrt();
    let t_up = 1.0 - sigma_max * ((2.0 * 1000f64.ln()).sqrt() + (2.0 * 6f64.ln()).sqrt());
    let half_width = 15.0 * t_up;
    let slice = sweep_slice(
        &f,
        &[0.0, 0.0],
        0,
        1,
        q,
        RegionKind::Up,
        &SweepOptions::default(),
        None,
    )
    .unwrap();
    let worst = slice
        .points()
        .iter()
        .map(|&(x, y)| {
            let h = (x - y)
                .abs()
                .max((2.0 * x + y).abs())
                .max((x + 2.0 * y).abs());
            (h - half_width).abs()
        })
        .fold(0.0, f64::max);
    (
        worst <= 1e-4 && (t_up - 0.40866).abs() < 5e-6,
        format!(
            "{} vertices, half-width {half_width:.5} (t_up {t_up:.5}), max deviation from boundary {worst:.2e}",
            slice.vertices.len()
        ),
    )
}

fn read_csv(text: &str) -> Vec<(f64, f64, f64)> {
    text.lines()
        .skip(1)
        .map(|l| {
            let v: Vec<f64> = l.split(',').map(|t| t.parse().unwrap()).collect();
            (v[0], v[1], v[2])
        })
        .collect()
}

/// Largest distance by which a vertex sits inside the chord of its
/// neighbours (positive means a reflex vertex).
fn worst_reflex(p: &[(f64, f64)]) -> f64 {
    let k = p.len();
    (0..k)
        .map(|i| {
            let (a, b, c) = (p[(i + k - 1) % k], p[i], p[(i + 1) % k]);
            let (ex, ey) = (c.0 - a.0, c.1 - a.1);
            let len = (ex * ex + ey * ey).sqrt();
            // counter-clockwise order: convex vertices lie to the right of a→c
            (ex * (b.1 - a.1) - ey * (b.0 - a.0)) / len
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Explicit and semi-explicit slices of the 14-bus case through buses 6 and 9.
fn case14_slices() -> Outcome {
    assert!(worst_reflex(&[(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)]) < 0.0);
    assert!(worst_reflex(&[(0.0, 0.0), (2.0, 1.0), (0.0, 2.0), (0.5, 1.0)]) > 0.1);
    let dir = tempfile::tempdir().unwrap();
    let tol = 1e-6;
    let mut polys = Vec::new();
    for kind in ["up", "star"] {
        let out = dir.path().join(format!("{kind}.csv"));
        let status = Command::new(bin())
            .arg("region")
            .arg(cases_dir().join("case14.m"))
            .args([
                "--axes",
                "6,9",
                "--kind",
                kind,
                "--q",
                "1e-4",
                "--variance",
                "0.02",
            ])
            .args([
                "--capacity-rule",
                "factor:1.5:0.05",
                "--rays",
                "60",
                "--tol",
                "1e-6",
                "--out",
            ])
            .arg(&out)
            .output()
            .unwrap();
        if !status.status.success() {
            return (
                false,
                format!("{kind}: {}", String::from_utf8_lossy(&status.stderr)),
            );
        }
        polys.push(read_csv(&std::fs::read_to_string(&out).unwrap()));
    }
    let (up, star) = (&polys[0], &polys[1]);
    let base = (-0.112, -0.295);
    let radius = |v: &(f64, f64, f64)| ((v.1 - base.0).powi(2) + (v.2 - base.1).powi(2)).sqrt();
    let contained = up
        .iter()
        .zip(star)
        .all(|(u, s)| u.0 == s.0 && radius(u) <= radius(s) + tol);
    let pts = |p: &[(f64, f64, f64)]| p.iter().map(|v| (v.1, v.2)).collect::<Vec<_>>();
    let (ru, rs) = (worst_reflex(&pts(up)), worst_reflex(&pts(star)));
    let area = |p: &[(f64, f64)]| {
        0.5 * (0..p.len())
            .map(|i| {
                let (a, b) = (p[i], p[(i + 1) % p.len()]);
                a.0 * b.1 - a.1 * b.0
            })
            .sum::<f64>()
    };
    let (au, as_) = (area(&pts(up)), area(&pts(star)));
    (
        contained && ru <= 4.0 * tol && rs <= 4.0 * tol && au > 0.0 && au <= as_,
        format!(
            "{} rays; up area {au:.4e} within star area {as_:.4e}; vertex-wise containment {contained}; \
             max reflex depth up {ru:.1e}, star {rs:.1e}",
            up.len()
        ),
    )
}

fn run_cli(args: &[&str], threads: usize) -> (Vec<u8>, i32) {
    let out = Command::new(bin())
        .args(args)
        .args(["--threads", &threads.to_string()])
        .output()
        .unwrap();
    (out.stdout, out.status.code().unwrap_or(-1))
}

/// Repeated and differently-threaded runs produce identical bytes.
fn determinism() -> Outcome {
    let k3 = cases_dir().join("k3.json");
    let k3 = k3.to_str().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut same = true;
    let mut notes = Vec::new();

    let mc = [
        "mc",
        k3,
        "--n",
        "100000",
        "--seed",
        "7",
        "--concentration",
        "0.05,0.1",
    ];
    let runs: Vec<_> = [1, 1, 4, 8].iter().map(|&t| run_cli(&mc, t)).collect();
    same &= runs.iter().all(|r| r == &runs[0] && r.1 == 0);
    notes.push(format!("mc: {} bytes", runs[0].0.len()));

    for (kind, extra) in [
        ("up", vec![]),
        ("ci", vec!["--n", "4000", "--seed", "5", "--rays", "12"]),
    ] {
        let mut outputs = Vec::new();
        for (i, t) in [1, 1, 4].iter().enumerate() {
            let csv = dir.path().join(format!("{kind}{i}.csv"));
            let mut args = vec!["region", k3, "--kind", kind, "--out", csv.to_str().unwrap()];
            args.extend(extra.iter().copied());
            let (_, code) = run_cli(&args, *t);
            same &= code == 0;
            outputs.push((
                std::fs::read(&csv).unwrap_or_default(),
                std::fs::read(csv.with_extension("json")).unwrap_or_default(),
            ));
        }
        same &= outputs
            .iter()
            .all(|o| o == &outputs[0] && !o.0.is_empty() && !o.1.is_empty());
        notes.push(format!("region {kind}: {} csv bytes", outputs[0].0.len()));
    }
    (
        same,
        format!(
            "byte-identical across runs and 1/4/8 threads: {}",
            notes.join(", ")
        ),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("inclusion chain of capacity regions", inclusion_chain),
        ("bound ordering r <= r_star <= r_up", bound_ordering),
        ("candidate-point minimization", candidate_points),
        (
            "failure-probability bound vs Monte Carlo",
            failure_bound_consistency,
        ),
        ("concentration of the maximum", concentration),
        ("pseudo-inverse identities and conservation", linear_algebra),
        ("analytic hexagon slice", hexagon),
        ("14-bus slices convex and nested", case14_slices),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let (ok, detail) = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(r) => r,
            Err(p) => (
                false,
                format!(
                    "panicked: {}",
                    p.downcast_ref::<String>()
                        .cloned()
                        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                        .unwrap_or_default()
                ),
            ),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "criterion {} {} [{name}]: {detail}",
            i + 1,
            if ok { "PASS" } else { "FAIL" }
        );
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
