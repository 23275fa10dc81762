//! Command-line front end: `analyze`, `region`, `mc` and `inspect`.
//!
//! Every command assembles its complete output in memory before anything is
//! written, so a failing run leaves no partial output. Reports carry a
//! [`RunManifest`]; floats are printed with 17 significant digits.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;
use serde_json::{json, Value};

use crate::case_io::{
    load_scenario_file, scenario_to_json, CapacityRule, Scenario, ScenarioOverrides,
};
use crate::error::{Error, Result};
use crate::flow_factors::FlowFactorization;
use crate::grid_model::build_laplacian;
use crate::mc_oracle::{concentration_check, estimate_both, MonteCarloRisk};
use crate::regions::{
    membership, risk_value, rup_rhs, sweep_slice, RegionKind, RiskEstimator, SweepOptions,
};
use crate::report::{to_json, RunManifest};
use crate::risk_bounds::assess;

/// Seed used when `--seed` is not given. Environment variables are ignored.
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_MC_SAMPLES: usize = 100_000;
/// Samples per membership test for the `ci` region.
pub const DEFAULT_CI_SAMPLES: usize = 10_000;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_STAR_ONLY: i32 = 2;
pub const EXIT_NEITHER: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "gridrisk",
    version,
    about = "Line-failure risk bounds and capacity regions for DC power grids"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Risk bounds and region verdicts at one injection mean.
    ///
    /// Exit status: 0 inside the explicit region, 2 inside the semi-explicit
    /// region only, 3 inside neither, 1 on error.
    Analyze(AnalyzeArgs),
    /// Boundary of a two-dimensional slice of a capacity region.
    Region(RegionArgs),
    /// Monte Carlo failure probability and risk level.
    Mc(McArgs),
    /// Dump the parsed network and its flow factors.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct CaseArgs {
    /// Scenario file: `.json` or a MATPOWER `.m` case.
    pub case: PathBuf,
    /// Target failure probability, overriding the case's.
    #[arg(long)]
    pub q: Option<f64>,
    /// i.i.d. injection variance (MW² for MATPOWER cases), overriding the case's.
    #[arg(long)]
    pub variance: Option<f64>,
    /// `explicit`, `rate_a`, `factor:<c>` or `factor:<c>:<floor>`.
    #[arg(long)]
    pub capacity_rule: Option<String>,
    /// Worker threads (default: all cores). Does not change results.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Write the primary output here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub case: CaseArgs,
    /// Comma-separated mean injections on the non-slack buses.
    #[arg(long, allow_hyphen_values = true)]
    pub mu: Option<String>,
    /// Also test the sampled region with this many Monte Carlo draws.
    #[arg(long)]
    pub ci_samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RegionArgs {
    #[command(flatten)]
    pub case: CaseArgs,
    /// Two bus ids spanning the slice, e.g. `6,9`. Defaults to the first two
    /// non-slack buses.
    #[arg(long)]
    pub axes: Option<String>,
    #[arg(long, default_value = "up")]
    pub kind: RegionKind,
    #[arg(long, default_value_t = 60)]
    pub rays: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 1e6)]
    pub max_radius: f64,
    /// Base point of the slice; defaults to the case's mean.
    #[arg(long, allow_hyphen_values = true)]
    pub mu: Option<String>,
    /// Monte Carlo draws per membership test for `--kind ci`.
    #[arg(long, default_value_t = DEFAULT_CI_SAMPLES)]
    pub n: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct McArgs {
    #[command(flatten)]
    pub case: CaseArgs,
    #[arg(long, default_value_t = DEFAULT_MC_SAMPLES)]
    pub n: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, allow_hyphen_values = true)]
    pub mu: Option<String>,
    /// Comma-separated deviations `s` for the concentration check.
    #[arg(long)]
    pub concentration: Option<String>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[command(flatten)]
    pub case: CaseArgs,
}

/// What a successful command produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub files: Vec<(PathBuf, String)>,
}

impl Outcome {
    fn primary(out: &Option<PathBuf>, text: String, code: i32) -> Self {
        match out {
            Some(p) => Outcome {
                code,
                stdout: String::new(),
                files: vec![(p.clone(), text)],
            },
            None => Outcome {
                code,
                stdout: text,
                files: Vec::new(),
            },
        }
    }
}

fn parse_list(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::InvalidArgument(format!("bad {what} entry `{t}`")))
        })
        .collect()
}

struct Loaded {
    scenario: Scenario,
    factors: FlowFactorization,
    scenario_json: String,
    case_path: String,
}

fn load(args: &CaseArgs) -> Result<Loaded> {
    let capacity_rule = args
        .capacity_rule
        .as_deref()
        .map(str::parse::<CapacityRule>)
        .transpose()?;
    let ov = ScenarioOverrides {
        variance: args.variance,
        capacity_rule,
        q: args.q,
    };
    let scenario = load_scenario_file(&args.case, &ov)?;
    let (_, factors) = scenario.factorize()?;
    Ok(Loaded {
        scenario_json: scenario_to_json(&scenario),
        scenario,
        factors,
        case_path: args.case.display().to_string(),
    })
}

fn resolve_mu(loaded: &Loaded, mu: &Option<String>) -> Result<Vec<f64>> {
    let base = loaded.scenario.mu();
    match mu {
        None => Ok(base.to_vec()),
        Some(s) => {
            let v = parse_list(s, "mu")?;
            if v.len() != base.len() {
                return Err(Error::DimensionMismatch {
                    what: "mu".into(),
                    expected: base.len(),
                    got: v.len(),
                });
            }
            Ok(v)
        }
    }
}

fn manifest(cmd: &str, loaded: &Loaded, options: Value, seed: Option<u64>) -> RunManifest {
    RunManifest::new(cmd, &loaded.case_path, &loaded.scenario_json, options, seed)
}

fn common_options(loaded: &Loaded) -> Value {
    json!({
        "q": loaded.scenario.q.get(),
        "capacity_rule": loaded.scenario.capacity_rule,
    })
}

fn with(mut base: Value, extra: Value) -> Value {
    if let (Value::Object(b), Value::Object(e)) = (&mut base, extra) {
        b.extend(e);
    }
    base
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

#[derive(Serialize)]
struct CiVerdict {
    risk_estimate: f64,
    std_error: f64,
    padded_risk: f64,
    inside: bool,
}

fn analyze(a: &AnalyzeArgs) -> Result<Outcome> {
    let loaded = load(&a.case)?;
    let mu = resolve_mu(&loaded, &a.mu)?;
    let q = loaded.scenario.q;
    let f = loaded.factors.with_mu(&mu)?;
    let rep = assess(&f, q);
    let in_up = membership(&f, &mu, q, RegionKind::Up, None)?;
    let in_star = membership(&f, &mu, q, RegionKind::Star, None)?;
    let seed = a.ci_samples.map(|_| a.seed.unwrap_or(DEFAULT_SEED));
    let ci = match a.ci_samples {
        Some(n) => {
            let est = MonteCarloRisk::new(n, seed.unwrap_or(DEFAULT_SEED));
            let r = est.estimate_risk_at(&f, &mu)?;
            let padded = risk_value(&f, &mu, RegionKind::Ci, Some(&est))?;
            Some(CiVerdict {
                risk_estimate: r.mean,
                std_error: r.std_error,
                padded_risk: padded,
                inside: padded <= rep.threshold,
            })
        }
        None => None,
    };
    let (verdict, code) = if in_up {
        ("up", EXIT_OK)
    } else if in_star {
        ("star_only", EXIT_STAR_ONLY)
    } else {
        ("neither", EXIT_NEITHER)
    };
    let options = with(
        common_options(&loaded),
        json!({ "mu": mu, "ci_samples": a.ci_samples }),
    );
    let report = json!({
        "manifest": manifest("analyze", &loaded, options, seed),
        "case": loaded.scenario.case.name,
        "mu": mu,
        "nu": f.nu(),
        "sigma": f.sigma(),
        "max_sigma": rep.max_sigma,
        "r_up": rep.r_up,
        "r_star": rep.r_star,
        "s_star": rep.s_star,
        "threshold": rep.threshold,
        "up_flow_limit": rup_rhs(&f, q),
        "failure_bound": rep.failure_bound,
        "bound_risk": rep.bound_risk,
        "bound_vacuous": rep.bound_vacuous,
        "in_up": in_up,
        "in_star": in_star,
        "ci": ci,
        "verdict": verdict,
    });
    Ok(Outcome::primary(&a.case.out, to_json(&report), code))
}

fn region(a: &RegionArgs) -> Result<Outcome> {
    let loaded = load(&a.case)?;
    let sc = &loaded.scenario;
    let base = resolve_mu(&loaded, &a.mu)?;
    let ids: Vec<String> = match &a.axes {
        Some(s) => s.split(',').map(|t| t.trim().to_string()).collect(),
        None => {
            let net = &sc.case.network;
            net.non_slack()
                .iter()
                .take(2)
                .map(|&b| net.buses()[b].id.clone())
                .collect()
        }
    };
    if ids.len() != 2 {
        return Err(Error::InvalidArgument(format!(
            "--axes needs two bus ids, got {}",
            ids.len()
        )));
    }
    let (i, j) = (sc.mu_index(&ids[0])?, sc.mu_index(&ids[1])?);
    let opts = SweepOptions {
        rays: a.rays,
        tol: a.tol,
        max_radius: a.max_radius,
        allow_unbounded: false,
    };
    let uses_mc = a.kind == RegionKind::Ci;
    let seed = uses_mc.then(|| a.seed.unwrap_or(DEFAULT_SEED));
    let est = seed.map(|s| MonteCarloRisk::new(a.n, s));
    let slice = sweep_slice(
        &loaded.factors,
        &base,
        i,
        j,
        sc.q,
        a.kind,
        &opts,
        est.as_ref().map(|e| e as &dyn RiskEstimator),
    )?;
    let mut options = with(
        common_options(&loaded),
        json!({
            "axes": ids,
            "kind": a.kind,
            "rays": a.rays,
            "tol": a.tol,
            "max_radius": a.max_radius,
            "base_mu": base,
        }),
    );
    if uses_mc {
        options = with(options, json!({ "n": a.n }));
    }
    let csv = slice.to_csv();
    let sidecar = json!({
        "manifest": manifest("region", &loaded, options, seed),
        "axis_buses": ids,
        "slice": slice,
    });
    Ok(match &a.case.out {
        Some(p) => Outcome {
            code: EXIT_OK,
            stdout: String::new(),
            files: vec![(p.clone(), csv), (sidecar_path(p), to_json(&sidecar))],
        },
        None => Outcome {
            code: EXIT_OK,
            stdout: csv,
            files: Vec::new(),
        },
    })
}

/// `out.csv` → `out.json`; a path that already ends in `.json` gets
/// `.sidecar.json` so the CSV is not overwritten.
pub fn sidecar_path(p: &Path) -> PathBuf {
    if p.extension().is_some_and(|e| e == "json") {
        p.with_extension("sidecar.json")
    } else {
        p.with_extension("json")
    }
}

fn mc(a: &McArgs) -> Result<Outcome> {
    let loaded = load(&a.case)?;
    let mu = resolve_mu(&loaded, &a.mu)?;
    let seed = a.seed.unwrap_or(DEFAULT_SEED);
    let q = loaded.scenario.q;
    let f = loaded.factors.with_mu(&mu)?;
    let s_values = a
        .concentration
        .as_deref()
        .map(|s| parse_list(s, "concentration"))
        .transpose()?;
    let (p, r) = estimate_both(&f, a.n, seed)?;
    let conc = match &s_values {
        Some(s) => Some(concentration_check(&f, s, a.n, seed)?),
        None => None,
    };
    let rep = assess(&f, q);
    let options = with(
        common_options(&loaded),
        json!({ "mu": mu, "n": a.n, "concentration": s_values }),
    );
    let report = json!({
        "manifest": manifest("mc", &loaded, options, Some(seed)),
        "case": loaded.scenario.case.name,
        "mu": mu,
        "failure_probability": p,
        "risk_level": r,
        "bounds": {
            "r_up": rep.r_up,
            "r_star": rep.r_star,
            "failure_bound": rep.failure_bound,
            "threshold": rep.threshold,
        },
        "comparison": {
            "risk_below_r_star": r.mean - 3.0 * r.std_error <= rep.r_star,
            "failure_below_bound": p.mean - 3.0 * p.std_error <= rep.failure_bound,
            "failure_below_q": p.mean - 3.0 * p.std_error <= q.get(),
        },
        "concentration": conc.as_ref().map(|c| json!({
            "report": c,
            "holds_within_3se": c.holds_within(3.0),
        })),
    });
    Ok(Outcome::primary(&a.case.out, to_json(&report), EXIT_OK))
}

fn inspect(a: &InspectArgs) -> Result<Outcome> {
    let loaded = load(&a.case)?;
    let sc = &loaded.scenario;
    let net = sc.network()?;
    let f = &loaded.factors;
    let lap = build_laplacian(&net);
    let mut eig: Vec<f64> = SymmetricEigen::new(f.l_pinv().clone())
        .eigenvalues
        .iter()
        .copied()
        .collect();
    eig.sort_by(f64::total_cmp);
    let tiny = 1e-9 * eig.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    let zero_count = eig.iter().filter(|e| e.abs() <= tiny).count();
    let lines: Vec<Value> = net
        .lines()
        .iter()
        .map(|l| {
            json!({
                "index": l.index,
                "from": net.buses()[l.from].id,
                "to": net.buses()[l.to].id,
                "susceptance": l.susceptance,
                "capacity": l.capacity,
            })
        })
        .collect();
    let report = json!({
        "manifest": manifest("inspect", &loaded, common_options(&loaded), None),
        "case": sc.case.name,
        "n": net.n(),
        "m": net.m(),
        "slack": net.buses()[net.slack()].id,
        "buses": net.buses().iter().map(|b| b.id.clone()).collect::<Vec<_>>(),
        "lines": lines,
        "laplacian": rows(&lap),
        "l_pinv_spectrum": {
            "eigenvalues": eig,
            "zero_count": zero_count,
        },
        "w": rows(f.w()),
        "mu": sc.mu(),
        "nu": f.nu(),
        "sigma": f.sigma(),
        "max_sigma": f.max_sigma(),
    });
    Ok(Outcome::primary(&a.case.out, to_json(&report), EXIT_OK))
}

fn case_args(cmd: &Command) -> &CaseArgs {
    match cmd {
        Command::Analyze(a) => &a.case,
        Command::Region(a) => &a.case,
        Command::Mc(a) => &a.case,
        Command::Inspect(a) => &a.case,
    }
}

/// Runs a parsed command, honouring `--threads`.
pub fn run(cli: &Cli) -> Result<Outcome> {
    let go = || match &cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Region(a) => region(a),
        Command::Mc(a) => mc(a),
        Command::Inspect(a) => inspect(a),
    };
    match case_args(&cli.command).threads {
        Some(0) => Err(Error::InvalidArgument(
            "--threads must be at least 1".into(),
        )),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .install(go),
        None => go(),
    }
}

fn error_json(kind: &str, message: &str) -> String {
    to_json(&json!({ "error": { "kind": kind, "message": message } }))
}

/// Parses `args`, runs the command, writes its output and returns the exit
/// status. Errors go to stderr as a JSON object.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    EXIT_OK
                }
                _ => {
                    eprint!("{}", error_json("usage", &e.to_string()));
                    EXIT_ERROR
                }
            };
        }
    };
    let outcome = match run(&cli) {
        Ok(o) => o,
        Err(e) => {
            eprint!("{}", error_json(e.kind(), &e.to_string()));
            return EXIT_ERROR;
        }
    };
    for (path, text) in &outcome.files {
        if let Err(e) = std::fs::write(path, text) {
            eprint!("{}", error_json("io", &format!("{}: {e}", path.display())));
            return EXIT_ERROR;
        }
    }
    print!("{}", outcome.stdout);
    outcome.code
}
