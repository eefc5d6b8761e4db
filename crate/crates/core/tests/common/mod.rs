#![allow(dead_code)]

use std::path::{Path, PathBuf};

use nma_core::analysis::load_dataset;
use nma_core::dataset::{ContrastObservation, EffectMeasure, NetworkDataset, Treatment};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn corpus_path(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus").join(rel)
}

pub fn corpus(name: &str) -> NetworkDataset {
    load_dataset(&corpus_path(&format!("{name}.json")), None, None).expect("corpus file loads")
}

/// Published per-study `Q_het^i`, keyed by study id.
pub fn published_q(name: &str) -> Vec<(String, f64)> {
    let text = std::fs::read_to_string(corpus_path(&format!("published/{name}_q.csv"))).unwrap();
    text.lines()
        .skip(1)
        .map(|l| {
            let (id, q) = l.split_once(',').unwrap();
            (id.to_string(), q.parse().unwrap())
        })
        .collect()
}

pub fn obs(id: &str, a: &str, b: &str, y: f64, s: f64) -> ContrastObservation {
    ContrastObservation {
        study_id: id.to_string(),
        treat_a: Treatment::new(a).unwrap(),
        treat_b: Treatment::new(b).unwrap(),
        effect: y,
        se: s,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NetworkShape {
    pub max_treatments: usize,
    /// True treatment effects are drawn from `(-spread, spread)`.
    pub effect_spread: f64,
    pub max_studies: usize,
    /// Spread of true effects across studies of the same design, in units of
    /// the study's own standard error.
    pub noise: f64,
    /// Extra between-study spread on the effect scale.
    pub heterogeneity: f64,
    pub se_range: (f64, f64),
}

impl Default for NetworkShape {
    fn default() -> Self {
        Self {
            max_treatments: 8,
            effect_spread: 1.5,
            max_studies: 40,
            noise: 1.0,
            heterogeneity: 0.5,
            se_range: (0.1, 1.0),
        }
    }
}

/// Random connected two-arm network with at least one residual degree of
/// freedom. A random spanning tree guarantees connectivity; the remaining
/// studies land on random pairs with random orientation.
pub fn random_network(seed: u64, shape: NetworkShape) -> NetworkDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=shape.max_treatments);
    let m = rng.gen_range(n..=shape.max_studies.max(n));
    let labels: Vec<String> = (0..n).map(|i| format!("T{i}")).collect();
    let truth: Vec<f64> = (0..n).map(|_| rng.gen_range(-shape.effect_spread..shape.effect_spread)).collect();

    let mut pairs: Vec<(usize, usize)> = (1..n).map(|j| (rng.gen_range(0..j), j)).collect();
    while pairs.len() < m {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a != b {
            pairs.push((a, b));
        }
    }
    pairs.shuffle(&mut rng);

    let studies = pairs
        .into_iter()
        .enumerate()
        .map(|(i, (a, b))| {
            let (a, b) = if rng.gen_bool(0.5) { (a, b) } else { (b, a) };
            let se = rng.gen_range(shape.se_range.0..shape.se_range.1);
            let y = truth[b] - truth[a]
                + shape.noise * se * rng.gen_range(-1.7..1.7)
                + shape.heterogeneity * rng.gen_range(-1.0..1.0);
            obs(&format!("s{i}"), &labels[a], &labels[b], y, se)
        })
        .collect();
    NetworkDataset::new(format!("random-{seed}"), EffectMeasure::Md, studies, None).expect("generated network is valid")
}

/// Relative closeness with an absolute floor of `tol` near zero.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Treatment partition by union-find, each part and the list sorted.
pub fn union_find_components(nodes: &[&str], edges: &[(&str, &str)]) -> Vec<Vec<String>> {
    let idx = |s: &str| nodes.iter().position(|n| *n == s).unwrap();
    let mut parent: Vec<usize> = (0..nodes.len()).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for (a, b) in edges {
        let (ra, rb) = (find(&mut parent, idx(a)), find(&mut parent, idx(b)));
        if ra != rb {
            parent[ra] = rb;
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<String>> = Default::default();
    for (i, n) in nodes.iter().enumerate() {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(n.to_string());
    }
    let mut out: Vec<Vec<String>> = groups
        .into_values()
        .map(|mut g| {
            g.sort();
            g
        })
        .collect();
    out.sort();
    out
}

/// Cochran Q summed over designs, computed from scratch: effects are put on
/// a common orientation per unordered pair, pooled by inverse variance, and
/// squared deviations weighted.
pub fn brute_force_q_het(studies: &[ContrastObservation]) -> f64 {
    type Group = ((String, String), Vec<(f64, f64)>);
    let mut groups: Vec<Group> = Vec::new();
    for s in studies {
        let (a, b) = (s.treat_a.as_str().to_string(), s.treat_b.as_str().to_string());
        let (key, y) = if a < b { ((a, b), s.effect) } else { ((b, a), -s.effect) };
        let w = 1.0 / (s.se * s.se);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push((y, w)),
            None => groups.push((key, vec![(y, w)])),
        }
    }
    groups
        .iter()
        .map(|(_, v)| {
            let sw: f64 = v.iter().map(|(_, w)| w).sum();
            let mean = v.iter().map(|(y, w)| y * w).sum::<f64>() / sw;
            v.iter().map(|(y, w)| w * (y - mean).powi(2)).sum::<f64>()
        })
        .sum()
}

pub const LABELS: [&str; 5] = ["A", "B", "C", "D", "E"];

pub fn all_pairs(n: usize) -> Vec<(&'static str, &'static str)> {
    let mut v = Vec::new();
    for (i, a) in LABELS[..n].iter().enumerate() {
        for b in &LABELS[i + 1..n] {
            v.push((*a, *b));
        }
    }
    v
}

/// Visits every design sequence of length `len` over `pairs`.
pub fn sequences(pairs: usize, len: usize, f: &mut impl FnMut(&[usize])) {
    let mut idx = vec![0; len];
    loop {
        f(&idx);
        let mut k = 0;
        while k < len {
            idx[k] += 1;
            if idx[k] < pairs {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == len {
            return;
        }
    }
}

const MAX_P: usize = 4;

/// Restricted log-likelihood written out directly for diagonal `Σ`:
/// `X'Σ⁻¹X` is inverted by Gauss-Jordan elimination and its determinant
/// taken from the pivots.
pub fn reml_reference(tau2: f64, y: &[f64], s2: &[f64], x: &[Vec<f64>]) -> f64 {
    let p = x[0].len();
    assert!(p <= MAX_P);
    let mut a = [[0.0; 2 * MAX_P]; MAX_P];
    let mut b = [0.0; MAX_P];
    let mut log_det_sigma = 0.0;
    for i in 0..y.len() {
        let w = 1.0 / (s2[i] + tau2);
        log_det_sigma -= w.ln();
        for r in 0..p {
            b[r] += x[i][r] * w * y[i];
            for c in 0..p {
                a[r][c] += x[i][r] * w * x[i][c];
            }
        }
    }
    for (r, row) in a.iter_mut().enumerate().take(p) {
        row[p + r] = 1.0;
    }
    let mut log_det = 0.0;
    for col in 0..p {
        let piv = (col..p).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        let d = a[col][col];
        log_det += d.abs().ln();
        for v in a[col].iter_mut() {
            *v /= d;
        }
        let pivot_row = a[col];
        for (r, row) in a.iter_mut().enumerate().take(p) {
            if r != col {
                let f = row[col];
                for (v, pv) in row.iter_mut().zip(pivot_row) {
                    *v -= f * pv;
                }
            }
        }
    }
    let mut beta = [0.0; MAX_P];
    for r in 0..p {
        beta[r] = (0..p).map(|c| a[r][p + c] * b[c]).sum();
    }
    let mut ypy = 0.0;
    for i in 0..y.len() {
        let fit: f64 = (0..p).map(|c| x[i][c] * beta[c]).sum();
        ypy += (y[i] - fit).powi(2) / (s2[i] + tau2);
    }
    -0.5 * (log_det_sigma + log_det + ypy)
}

pub fn small_reml_network(seed: u64) -> NetworkDataset {
    random_network(
        seed,
        NetworkShape {
            max_treatments: 4,
            effect_spread: 0.3,
            max_studies: 12,
            noise: 1.0,
            heterogeneity: 0.6,
            se_range: (0.1, 0.35),
        },
    )
}
