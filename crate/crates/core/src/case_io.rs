//! Case ingestion: the native JSON scenario format, a MATPOWER `.m` subset,
//! bundled reference cases and line-capacity rules.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow_factors::{
    factorize, mean_line_flows, slack_embedding, FlowFactorization, InjectionModel,
    DEFAULT_PINV_REL_TOL,
};
use crate::grid_model::{LineSpec, Network};
use crate::risk_bounds::Probability;

/// Reference cases shipped with the crate.
pub mod bundled {
    /// 3-bus cycle with unit susceptances, capacity 5 and iid variance 0.5.
    pub const K3_JSON: &str = include_str!("../cases/k3.json");
    /// Standard IEEE 14-bus MATPOWER case.
    pub const CASE14_M: &str = include_str!("../cases/case14.m");
}

/// Injection variance for MATPOWER cases unless overridden, in MW² (the
/// file's native unit); it is divided by `baseMVA²` on load.
pub const DEFAULT_MATPOWER_VARIANCE: f64 = 2e-2;
pub const DEFAULT_MATPOWER_Q: f64 = 1e-4;
pub const DEFAULT_MATPOWER_FACTOR: f64 = 1.5;
/// Per-unit capacity given to lines whose mean flow is (near) zero, and the
/// lower limit for every other line, under the default MATPOWER rule.
pub const DEFAULT_MATPOWER_FLOOR: f64 = 0.05;

/// Grid data as read from a case file, before a capacity rule is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseData {
    pub name: String,
    pub source: String,
    /// Capacities are the explicit ones where given and 1.0 placeholders
    /// elsewhere; use [`apply_capacity_rule`] for the real ones.
    pub network: Network,
    /// Per-bus net injection in per-unit.
    pub base_injections: Vec<f64>,
    pub base_mva: f64,
    pub explicit_capacity: Vec<Option<f64>>,
    /// Per-unit rating per line, if the file has one.
    pub rate_a: Vec<Option<f64>>,
}

impl CaseData {
    /// Base injections restricted to the non-slack buses.
    pub fn non_slack_injections(&self) -> Vec<f64> {
        self.network
            .non_slack()
            .into_iter()
            .map(|i| self.base_injections[i])
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CapacityRule {
    #[default]
    Explicit,
    RateA,
    /// `M_ℓ = max(factor · |mean flow_ℓ|, floor)`. Without a floor, a line
    /// with zero mean flow is an error.
    FactorOfMean {
        factor: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        floor: Option<f64>,
    },
}

impl std::str::FromStr for CapacityRule {
    type Err = Error;

    /// `explicit`, `rate_a`, `factor:<c>` or `factor:<c>:<floor>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad capacity rule `{s}`"));
        match s {
            "explicit" => Ok(CapacityRule::Explicit),
            "rate_a" => Ok(CapacityRule::RateA),
            _ => {
                let mut parts = s.strip_prefix("factor:").ok_or_else(bad)?.split(':');
                let factor = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
                let floor = match parts.next() {
                    Some(p) => Some(p.parse().map_err(|_| bad())?),
                    None => None,
                };
                if parts.next().is_some() {
                    return Err(bad());
                }
                Ok(CapacityRule::FactorOfMean { factor, floor })
            }
        }
    }
}

/// Relative size below which a mean flow counts as zero.
const ZERO_FLOW_REL: f64 = 1e-9;

/// Capacities under `rule`; `mu` (non-slack means) only matters for the
/// factor rule.
pub fn apply_capacity_rule(case: &CaseData, rule: CapacityRule, mu: &[f64]) -> Result<Network> {
    let net = &case.network;
    let caps: Vec<f64> = match rule {
        CapacityRule::Explicit => case
            .explicit_capacity
            .iter()
            .enumerate()
            .map(|(line, c)| c.ok_or(Error::MissingCapacity { line }))
            .collect::<Result<_>>()?,
        CapacityRule::RateA => case
            .rate_a
            .iter()
            .enumerate()
            .map(|(line, c)| c.filter(|&v| v > 0.0).ok_or(Error::MissingRateA { line }))
            .collect::<Result<_>>()?,
        CapacityRule::FactorOfMean { factor, floor } => {
            if !(factor.is_finite() && factor > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "capacity factor must be positive, got {factor}"
                )));
            }
            if let Some(f) = floor {
                if !(f.is_finite() && f > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "capacity floor must be positive, got {f}"
                    )));
                }
            }
            let flows = mean_line_flows(net, mu, DEFAULT_PINV_REL_TOL)?;
            let scale = flows.iter().fold(0.0_f64, |a, f| a.max(f.abs()));
            flows
                .iter()
                .enumerate()
                .map(|(line, f)| {
                    let cap = factor * f.abs();
                    let zero = f.abs() <= ZERO_FLOW_REL * scale || scale == 0.0;
                    match floor {
                        Some(fl) if zero => Ok(fl),
                        Some(fl) => Ok(cap.max(fl)),
                        None if zero => {
                            let l = &net.lines()[line];
                            Err(Error::ZeroMeanFlow {
                                line,
                                from: net.buses()[l.from].id.clone(),
                                to: net.buses()[l.to].id.clone(),
                            })
                        }
                        None => Ok(cap),
                    }
                })
                .collect::<Result<_>>()?
        }
    };
    net.with_capacities(&caps)
}

/// A complete analysis input: grid, injection law, capacity rule and target `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub case: CaseData,
    pub injections: InjectionModel,
    pub capacity_rule: CapacityRule,
    pub q: Probability,
}

impl Scenario {
    /// Scenario for a parsed MATPOWER case: μ is the base injection on every
    /// non-slack bus and `Σ = variance · I`.
    pub fn from_case(
        case: CaseData,
        variance: f64,
        capacity_rule: CapacityRule,
        q: Probability,
    ) -> Result<Self> {
        let mu = DVector::from_vec(case.non_slack_injections());
        let injections = InjectionModel::iid(mu, variance)?;
        Ok(Scenario {
            case,
            injections,
            capacity_rule,
            q,
        })
    }

    pub fn mu(&self) -> &[f64] {
        self.injections.mu().as_slice()
    }

    /// Network with resolved capacities.
    pub fn network(&self) -> Result<Network> {
        apply_capacity_rule(&self.case, self.capacity_rule, self.mu())
    }

    pub fn factorize(&self) -> Result<(Network, FlowFactorization)> {
        let net = self.network()?;
        let f = factorize(&net, &self.injections, DEFAULT_PINV_REL_TOL)?;
        Ok((net, f))
    }

    /// Index into μ of the bus with external id `id`.
    pub fn mu_index(&self, id: &str) -> Result<usize> {
        let net = &self.case.network;
        let bus = net
            .bus_index(id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown bus id `{id}`")))?;
        net.non_slack()
            .iter()
            .position(|&b| b == bus)
            .ok_or_else(|| Error::InvalidArgument(format!("bus `{id}` is the slack bus")))
    }
}

// ---------------------------------------------------------------------------
// native JSON

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseDoc {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<String>,
    #[serde(default = "one")]
    base_mva: f64,
    buses: Vec<BusDoc>,
    lines: Vec<LineDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    slack: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    base_injections: Option<Vec<f64>>,
    injections: InjectionsDoc,
    #[serde(default)]
    capacity_rule: CapacityRule,
    q: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BusDoc {
    id: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LineDoc {
    from: String,
    to: String,
    susceptance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    capacity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rate_a: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InjectionsDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mu: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    iid_variance: Option<f64>,
}

fn schema(path: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::SchemaViolation {
        path: path.into(),
        reason: reason.into(),
    }
}

/// Parses a native JSON scenario.
pub fn load_case_json(text: &str) -> Result<Scenario> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: CaseDoc = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        schema(
            if path == "." {
                "$".to_string()
            } else {
                format!("$.{path}")
            },
            e.inner().to_string(),
        )
    })?;

    let ids: Vec<String> = doc.buses.iter().map(|b| b.id.clone()).collect();
    let index: HashMap<&str, usize> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    if index.len() != ids.len() {
        return Err(schema("$.buses", "bus ids must be unique"));
    }
    let lookup = |id: &str, path: String| {
        index
            .get(id)
            .copied()
            .ok_or_else(|| schema(path, format!("unknown bus `{id}`")))
    };
    let mut specs = Vec::with_capacity(doc.lines.len());
    for (k, l) in doc.lines.iter().enumerate() {
        specs.push(LineSpec {
            from: lookup(&l.from, format!("$.lines[{k}].from"))?,
            to: lookup(&l.to, format!("$.lines[{k}].to"))?,
            susceptance: l.susceptance,
            capacity: l.capacity.unwrap_or(1.0),
        });
    }
    let slack = match &doc.slack {
        Some(id) => Some(lookup(id, "$.slack".into())?),
        None => None,
    };
    let network = Network::new(ids, &specs, slack)?;
    let n = network.n();
    let d = n - 1;

    let mu = match &doc.injections.mu {
        Some(mu) if mu.len() != d => {
            return Err(Error::DimensionMismatch {
                what: "injections.mu".into(),
                expected: d,
                got: mu.len(),
            })
        }
        Some(mu) => mu.clone(),
        None => match &doc.base_injections {
            Some(b) if b.len() == n => network.non_slack().iter().map(|&i| b[i]).collect(),
            _ => vec![0.0; d],
        },
    };
    let sigma = match (&doc.injections.sigma, doc.injections.iid_variance) {
        (Some(_), Some(_)) => {
            return Err(schema(
                "$.injections",
                "give either `sigma` or `iid_variance`, not both",
            ))
        }
        (None, None) => return Err(schema("$.injections", "missing `sigma` or `iid_variance`")),
        (None, Some(v)) => {
            if !(v.is_finite() && v >= 0.0) {
                return Err(schema(
                    "$.injections.iid_variance",
                    "must be a nonnegative number",
                ));
            }
            DMatrix::identity(d, d) * v
        }
        (Some(rows), None) => {
            if rows.len() != d {
                return Err(Error::DimensionMismatch {
                    what: "injections.sigma rows".into(),
                    expected: d,
                    got: rows.len(),
                });
            }
            if let Some(r) = rows.iter().find(|r| r.len() != d) {
                return Err(Error::DimensionMismatch {
                    what: "injections.sigma columns".into(),
                    expected: d,
                    got: r.len(),
                });
            }
            DMatrix::from_fn(d, d, |i, j| rows[i][j])
        }
    };
    let injections = InjectionModel::new(DVector::from_vec(mu.clone()), sigma)?;

    let base_injections = match doc.base_injections {
        Some(b) if b.len() != n => {
            return Err(Error::DimensionMismatch {
                what: "base_injections".into(),
                expected: n,
                got: b.len(),
            })
        }
        Some(b) => b,
        None => {
            let s = slack_embedding(n, network.slack())?;
            (&s.matrix * DVector::from_vec(mu))
                .iter()
                .copied()
                .collect()
        }
    };
    if !(doc.base_mva.is_finite() && doc.base_mva > 0.0) {
        return Err(schema("$.base_mva", "must be positive"));
    }
    let q = Probability::new(doc.q).map_err(|e| schema("$.q", e.to_string()))?;

    Ok(Scenario {
        case: CaseData {
            name: doc.name,
            source: doc.source.unwrap_or_default(),
            network,
            base_injections,
            base_mva: doc.base_mva,
            explicit_capacity: doc.lines.iter().map(|l| l.capacity).collect(),
            rate_a: doc.lines.iter().map(|l| l.rate_a).collect(),
        },
        injections,
        capacity_rule: doc.capacity_rule,
        q,
    })
}

/// Serializes a scenario to the native JSON format (full covariance matrix).
pub fn scenario_to_json(sc: &Scenario) -> String {
    let net = &sc.case.network;
    let d = sc.injections.dim();
    let sigma = sc.injections.sigma();
    let doc = CaseDoc {
        name: sc.case.name.clone(),
        source: Some(sc.case.source.clone()).filter(|s| !s.is_empty()),
        base_mva: sc.case.base_mva,
        buses: net
            .buses()
            .iter()
            .map(|b| BusDoc { id: b.id.clone() })
            .collect(),
        lines: net
            .lines()
            .iter()
            .map(|l| LineDoc {
                from: net.buses()[l.from].id.clone(),
                to: net.buses()[l.to].id.clone(),
                susceptance: l.susceptance,
                capacity: sc.case.explicit_capacity[l.index],
                rate_a: sc.case.rate_a[l.index],
            })
            .collect(),
        slack: Some(net.buses()[net.slack()].id.clone()),
        base_injections: Some(sc.case.base_injections.clone()),
        injections: InjectionsDoc {
            mu: Some(sc.mu().to_vec()),
            sigma: Some(
                (0..d)
                    .map(|i| (0..d).map(|j| sigma[(i, j)]).collect())
                    .collect(),
            ),
            iid_variance: None,
        },
        capacity_rule: sc.capacity_rule,
        q: sc.q.get(),
    };
    crate::report::to_json(&doc)
}

// ---------------------------------------------------------------------------
// MATPOWER

struct Block {
    start_line: usize,
    rows: Vec<(usize, Vec<f64>)>,
}

fn strip_comment(line: &str) -> &str {
    let mut in_str = false;
    for (i, c) in line.char_indices() {
        match c {
            '\'' => in_str = !in_str,
            '%' if !in_str => return &line[..i],
            _ => {}
        }
    }
    line
}

fn parse_row(seg: &str, line: usize) -> Result<Vec<f64>> {
    seg.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>().map_err(|_| Error::MalformedRow {
                line,
                reason: format!("`{t}` is not a number"),
            })
        })
        .collect()
}

/// Numeric `mpc.*` matrices and scalars; cell arrays and strings are skipped.
fn scan_matpower(text: &str) -> Result<(HashMap<String, f64>, HashMap<String, Block>)> {
    let mut scalars = HashMap::new();
    let mut blocks = HashMap::new();
    let mut open: Option<(String, Block)> = None;
    let mut skipping_cell = false;

    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = strip_comment(raw).trim();
        if skipping_cell {
            skipping_cell = !line.contains('}');
            continue;
        }
        let mut body = line;
        if open.is_none() {
            let Some(rest) = line.strip_prefix("mpc.") else {
                continue;
            };
            let (name, rhs) = rest.split_once('=').ok_or_else(|| Error::MalformedRow {
                line: line_no,
                reason: "expected `mpc.<name> = ...`".into(),
            })?;
            let (name, rhs) = (name.trim().to_string(), rhs.trim());
            if let Some(after) = rhs.strip_prefix('[') {
                open = Some((
                    name,
                    Block {
                        start_line: line_no,
                        rows: Vec::new(),
                    },
                ));
                body = after;
            } else if rhs.starts_with('{') {
                skipping_cell = !rhs.contains('}');
                continue;
            } else if rhs.starts_with('\'') {
                continue;
            } else {
                let v = rhs.trim_end_matches(';').trim();
                let value = v.parse::<f64>().map_err(|_| Error::MalformedRow {
                    line: line_no,
                    reason: format!("scalar `{name}` has non-numeric value `{v}`"),
                })?;
                scalars.insert(name, value);
                continue;
            }
        }
        let (content, closes) = match body.find(']') {
            Some(i) => (&body[..i], true),
            None => (body, false),
        };
        if let Some((_, block)) = open.as_mut() {
            for seg in content.split(';') {
                let row = parse_row(seg, line_no)?;
                if !row.is_empty() {
                    block.rows.push((line_no, row));
                }
            }
        }
        if closes {
            let (name, block) = open.take().expect("block is open");
            blocks.insert(name, block);
        }
    }
    if let Some((name, block)) = open {
        return Err(Error::MalformedRow {
            line: block.start_line,
            reason: format!("block `{name}` is never closed"),
        });
    }
    Ok((scalars, blocks))
}

fn need_cols(row: &[f64], cols: usize, line: usize, what: &str) -> Result<()> {
    if row.len() < cols {
        return Err(Error::MalformedRow {
            line,
            reason: format!("{what} row has {} columns, need at least {cols}", row.len()),
        });
    }
    Ok(())
}

fn bus_number(v: f64, line: usize) -> Result<i64> {
    if v.fract() != 0.0 || !v.is_finite() {
        return Err(Error::MalformedRow {
            line,
            reason: format!("bus number `{v}` is not an integer"),
        });
    }
    Ok(v as i64)
}

/// Parses the DC-relevant subset of a MATPOWER case: buses (type, Pd),
/// generators (bus, Pg, status) and branches (endpoints, x, rateA, status).
/// Susceptance is `1/x`; resistance, shunts and taps are ignored.
pub fn parse_matpower(text: &str) -> Result<CaseData> {
    let (scalars, blocks) = scan_matpower(text)?;
    let base_mva = *scalars
        .get("baseMVA")
        .ok_or_else(|| Error::MissingBlock("baseMVA".into()))?;
    if !(base_mva.is_finite() && base_mva > 0.0) {
        return Err(Error::MalformedRow {
            line: 0,
            reason: format!("baseMVA must be positive, got {base_mva}"),
        });
    }
    let bus_block = blocks
        .get("bus")
        .ok_or_else(|| Error::MissingBlock("bus".into()))?;
    let branch_block = blocks
        .get("branch")
        .ok_or_else(|| Error::MissingBlock("branch".into()))?;

    let mut ids = Vec::new();
    let mut index = HashMap::new();
    let mut load = Vec::new();
    let mut slack = None;
    for (line, row) in &bus_block.rows {
        need_cols(row, 3, *line, "bus")?;
        let id = bus_number(row[0], *line)?;
        let kind = row[1] as i64;
        if kind == 4 {
            continue; // isolated
        }
        if index.insert(id, ids.len()).is_some() {
            return Err(Error::MalformedRow {
                line: *line,
                reason: format!("duplicate bus {id}"),
            });
        }
        if kind == 3 && slack.is_none() {
            slack = Some(ids.len());
        }
        ids.push(id.to_string());
        load.push(row[2]);
    }

    let mut injections: Vec<f64> = load.iter().map(|pd| -pd).collect();
    if let Some(gen) = blocks.get("gen") {
        for (line, row) in &gen.rows {
            need_cols(row, 2, *line, "gen")?;
            let in_service = row.get(7).is_none_or(|&s| s > 0.0);
            if !in_service {
                continue;
            }
            let id = bus_number(row[0], *line)?;
            let &b = index.get(&id).ok_or_else(|| Error::MalformedRow {
                line: *line,
                reason: format!("generator at unknown bus {id}"),
            })?;
            injections[b] += row[1];
        }
    }
    for p in injections.iter_mut() {
        *p /= base_mva;
    }

    let mut specs = Vec::new();
    let mut rate_a = Vec::new();
    for (line, row) in &branch_block.rows {
        need_cols(row, 4, *line, "branch")?;
        if row.get(10).is_some_and(|&s| s <= 0.0) {
            continue;
        }
        let (f, t) = (bus_number(row[0], *line)?, bus_number(row[1], *line)?);
        let endpoint = |id: i64| {
            index.get(&id).copied().ok_or_else(|| Error::MalformedRow {
                line: *line,
                reason: format!("branch references unknown or isolated bus {id}"),
            })
        };
        let (from, to) = (endpoint(f)?, endpoint(t)?);
        let x = row[3];
        if x == 0.0 {
            return Err(Error::ZeroReactance { line: *line });
        }
        specs.push(LineSpec {
            from,
            to,
            susceptance: 1.0 / x,
            capacity: 1.0,
        });
        rate_a.push(
            row.get(5)
                .copied()
                .filter(|&r| r > 0.0)
                .map(|r| r / base_mva),
        );
    }
    let network = Network::new(ids, &specs, slack)?;
    let m = network.m();
    Ok(CaseData {
        name: "matpower".into(),
        source: "MATPOWER case file".into(),
        network,
        base_injections: injections,
        base_mva,
        explicit_capacity: vec![None; m],
        rate_a,
    })
}

/// Settings that replace what a case file specifies (or supplies defaults
/// for MATPOWER files, which carry no stochastic model). For MATPOWER files
/// `variance` is in MW²; for JSON scenarios it is in the scenario's units.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ScenarioOverrides {
    pub variance: Option<f64>,
    pub capacity_rule: Option<CapacityRule>,
    pub q: Option<f64>,
}

/// Loads a `.json` scenario or a `.m` MATPOWER case from disk.
pub fn load_scenario_file(path: &Path, ov: &ScenarioOverrides) -> Result<Scenario> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let is_matpower = path.extension().is_some_and(|e| e == "m");
    let mut sc = if is_matpower {
        let mut case = parse_matpower(&text)?;
        if let Some(stem) = path.file_stem() {
            case.name = stem.to_string_lossy().into_owned();
        }
        let variance =
            ov.variance.unwrap_or(DEFAULT_MATPOWER_VARIANCE) / (case.base_mva * case.base_mva);
        Scenario::from_case(
            case,
            variance,
            CapacityRule::FactorOfMean {
                factor: DEFAULT_MATPOWER_FACTOR,
                floor: Some(DEFAULT_MATPOWER_FLOOR),
            },
            Probability::new(DEFAULT_MATPOWER_Q)?,
        )?
    } else {
        let mut sc = load_case_json(&text)?;
        if let Some(v) = ov.variance {
            sc.injections = InjectionModel::iid(sc.injections.mu().clone(), v)?;
        }
        sc
    };
    if let Some(rule) = ov.capacity_rule {
        sc.capacity_rule = rule;
    }
    if let Some(q) = ov.q {
        sc.q = Probability::new(q)?;
    }
    Ok(sc)
}
