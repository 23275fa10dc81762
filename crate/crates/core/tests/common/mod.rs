#![allow(dead_code)]

use std::path::PathBuf;

use gridrisk::case_io::{bundled, load_case_json, Scenario};
use gridrisk::{InjectionModel, LineSpec, Network};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn cases_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("cases")
}

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_gridrisk"))
}

/// The bundled three-bus cycle with i.i.d. injection variance `variance`.
pub fn k3_with_variance(variance: f64) -> Scenario {
    let mut sc = load_case_json(bundled::K3_JSON).unwrap();
    sc.injections = InjectionModel::iid(sc.injections.mu().clone(), variance).unwrap();
    sc
}

/// Random connected graph: a random spanning tree plus `extra` chords,
/// susceptances in [0.2, 5] and capacities in [0.5, 5].
pub fn random_network(rng: &mut ChaCha8Rng, n: usize, extra: usize) -> Network {
    let mut pairs: Vec<(usize, usize)> = (1..n).map(|i| (rng.gen_range(0..i), i)).collect();
    let max_edges = n * (n - 1) / 2;
    let target = (pairs.len() + extra).min(max_edges);
    while pairs.len() < target {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        let p = (a.min(b), a.max(b));
        if a != b && !pairs.contains(&p) {
            pairs.push(p);
        }
    }
    let ids: Vec<String> = (1..=n).map(|i| i.to_string()).collect();
    let specs: Vec<LineSpec> = pairs
        .iter()
        .map(|&(a, b)| LineSpec {
            from: a,
            to: b,
            susceptance: rng.gen_range(0.2..5.0),
            capacity: rng.gen_range(0.5..5.0),
        })
        .collect();
    let slack = rng.gen_range(0..n);
    Network::new(ids, &specs, Some(slack)).unwrap()
}

/// Random PSD matrix `A Aᵀ · scale / d`.
pub fn random_psd(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    &a * a.transpose() * (scale / d as f64)
}

pub fn random_vector(rng: &mut ChaCha8Rng, d: usize, half_width: f64) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.gen_range(-half_width..half_width))
}

/// Max-abs entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, &b| a.max(b.abs()))
}
