//! Graph representation of a DC grid and its weighted Laplacian / incidence
//! matrices.
//!
//! A [`Network`] can only be obtained through [`Network::new`], which runs
//! [`validate`]; every `Network` in circulation is therefore connected, has
//! positive line parameters and a valid slack bus.

use std::collections::{HashMap, HashSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: String,
    pub index: usize,
}

/// An oriented transmission line `from -> to`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub index: usize,
    pub from: usize,
    pub to: usize,
    /// Per-unit susceptance.
    pub susceptance: f64,
    /// Per-unit thermal capacity.
    pub capacity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSpec {
    pub from: usize,
    pub to: usize,
    pub susceptance: f64,
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Network {
    buses: Vec<Bus>,
    lines: Vec<Line>,
    slack: usize,
}

impl Network {
    /// Builds and validates a network. Line orientation follows input order;
    /// `slack` defaults to the last bus.
    pub fn new(bus_ids: Vec<String>, lines: &[LineSpec], slack: Option<usize>) -> Result<Self> {
        let buses = bus_ids
            .into_iter()
            .enumerate()
            .map(|(index, id)| Bus { id, index })
            .collect::<Vec<_>>();
        let lines = lines
            .iter()
            .enumerate()
            .map(|(index, l)| Line {
                index,
                from: l.from,
                to: l.to,
                susceptance: l.susceptance,
                capacity: l.capacity,
            })
            .collect();
        let slack = slack.unwrap_or(buses.len().saturating_sub(1));
        let net = Network {
            buses,
            lines,
            slack,
        };
        validate(&net)?;
        Ok(net)
    }

    pub fn n(&self) -> usize {
        self.buses.len()
    }

    pub fn m(&self) -> usize {
        self.lines.len()
    }

    pub fn slack(&self) -> usize {
        self.slack
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn capacities(&self) -> Vec<f64> {
        self.lines.iter().map(|l| l.capacity).collect()
    }

    /// Same topology with new per-line capacities.
    pub fn with_capacities(&self, capacities: &[f64]) -> Result<Self> {
        if capacities.len() != self.m() {
            return Err(Error::DimensionMismatch {
                what: "capacities".into(),
                expected: self.m(),
                got: capacities.len(),
            });
        }
        let mut net = self.clone();
        for (line, &c) in net.lines.iter_mut().zip(capacities) {
            line.capacity = c;
        }
        validate(&net)?;
        Ok(net)
    }

    /// Same network with a different slack bus.
    pub fn with_slack(&self, slack: usize) -> Result<Self> {
        let mut net = self.clone();
        net.slack = slack;
        validate(&net)?;
        Ok(net)
    }

    /// Non-slack bus indices in ascending order; these index the entries of a
    /// mean-injection vector.
    pub fn non_slack(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| i != self.slack).collect()
    }

    /// Connected components of the underlying undirected graph, as sorted
    /// lists of bus indices.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.n();
        let mut adj = vec![Vec::new(); n];
        for l in &self.lines {
            if l.from < n && l.to < n {
                adj[l.from].push(l.to);
                adj[l.to].push(l.from);
            }
        }
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            let mut comp = Vec::new();
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(u) = stack.pop() {
                comp.push(u);
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }
}

/// Checks every structural invariant of a network.
pub fn validate(net: &Network) -> Result<()> {
    let n = net.n();
    if n < 2 {
        return Err(Error::InvalidNetwork(format!(
            "need at least 2 buses, got {n}"
        )));
    }
    if net.lines.is_empty() {
        return Err(Error::InvalidNetwork("need at least 1 line".into()));
    }
    let mut ids = HashSet::new();
    for (i, b) in net.buses.iter().enumerate() {
        if b.index != i {
            return Err(Error::InvalidNetwork(format!(
                "bus {} has index {} at position {i}",
                b.id, b.index
            )));
        }
        if !ids.insert(b.id.as_str()) {
            return Err(Error::InvalidNetwork(format!("duplicate bus id {}", b.id)));
        }
    }
    if net.slack >= n {
        return Err(Error::BadSlackIndex {
            slack: net.slack,
            n,
        });
    }
    let mut pairs: HashMap<(usize, usize), usize> = HashMap::new();
    for (idx, l) in net.lines.iter().enumerate() {
        if l.index != idx {
            return Err(Error::InvalidNetwork(format!(
                "line at position {idx} has index {}",
                l.index
            )));
        }
        if l.from >= n || l.to >= n {
            return Err(Error::InvalidNetwork(format!(
                "line {idx} references bus {} outside 0..{n}",
                l.from.max(l.to)
            )));
        }
        if l.from == l.to {
            return Err(Error::InvalidNetwork(format!(
                "line {idx} is a self-loop at bus {}",
                net.buses[l.from].id
            )));
        }
        if !(l.susceptance.is_finite() && l.susceptance > 0.0) {
            return Err(Error::NonPositiveParameter {
                line: idx,
                what: "susceptance",
                value: l.susceptance,
            });
        }
        if !(l.capacity.is_finite() && l.capacity > 0.0) {
            return Err(Error::NonPositiveParameter {
                line: idx,
                what: "capacity",
                value: l.capacity,
            });
        }
        let key = (l.from.min(l.to), l.from.max(l.to));
        if pairs.insert(key, idx).is_some() {
            return Err(Error::DuplicateLine {
                from: net.buses[l.from].id.clone(),
                to: net.buses[l.to].id.clone(),
            });
        }
    }
    let comps = net.components();
    if comps.len() > 1 {
        return Err(Error::Disconnected {
            components: comps
                .iter()
                .map(|c| c.iter().map(|&i| net.buses[i].id.clone()).collect())
                .collect(),
        });
    }
    Ok(())
}

/// Weighted Laplacian: `-β_ij` off the diagonal, incident susceptance sums on
/// the diagonal.
pub fn build_laplacian(net: &Network) -> DMatrix<f64> {
    let n = net.n();
    let mut l = DMatrix::zeros(n, n);
    for line in &net.lines {
        let (i, j, b) = (line.from, line.to, line.susceptance);
        l[(i, j)] -= b;
        l[(j, i)] -= b;
        l[(i, i)] += b;
        l[(j, j)] += b;
    }
    l
}

/// Weighted edge-vertex incidence: row `ℓ = (i, j)` has `+β` at `i`, `-β` at `j`.
pub fn build_incidence(net: &Network) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(net.m(), net.n());
    for line in &net.lines {
        b[(line.index, line.from)] = line.susceptance;
        b[(line.index, line.to)] = -line.susceptance;
    }
    b
}

/// Unweighted (±1) incidence matrix.
pub fn build_unit_incidence(net: &Network) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(net.m(), net.n());
    for line in &net.lines {
        b[(line.index, line.from)] = 1.0;
        b[(line.index, line.to)] = -1.0;
    }
    b
}
