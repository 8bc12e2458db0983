//! Brute-force one-step oracles for the built-in plugins. Each oracle
//! re-implements the transition rule independently and enumerates every
//! outcome with its probability.

#![allow(dead_code)]

use std::collections::{HashSet, VecDeque};
use std::hash::Hash;
use std::path::PathBuf;

use dem_core::process::{
    BallsInBins, BinsState, CoinWalk, ConstantProcess, DegreeProcess, DegreeState, GreedyMatching, MatchingState,
    Process,
};
use dem_core::ProcessSpec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn spec_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../specs").join(name)
}

pub fn load_spec(name: &str) -> ProcessSpec {
    ProcessSpec::load(spec_path(name)).expect("bundled spec loads")
}

/// A state together with every outcome `(probability, next counts)`.
pub struct Case<S> {
    pub state: S,
    pub outcomes: Vec<(f64, Vec<i64>)>,
}

/// Breadth-first search over oracle states up to `depth` steps from `start`.
fn explore<S: Clone + Eq + Hash>(start: S, depth: usize, next: impl Fn(&S) -> Vec<(f64, S)>) -> Vec<(S, Vec<(f64, S)>)> {
    let mut seen = HashSet::from([start.clone()]);
    let mut queue = VecDeque::from([(start, 0)]);
    let mut out = Vec::new();
    while let Some((s, d)) = queue.pop_front() {
        let succ = next(&s);
        if d < depth {
            for (_, t) in &succ {
                if seen.insert(t.clone()) {
                    queue.push_back((t.clone(), d + 1));
                }
            }
        }
        out.push((s, succ));
    }
    out
}

pub fn bins_cases(n: usize) -> Vec<Case<BinsState>> {
    let empty = |occ: &Vec<bool>| occ.iter().filter(|&&o| !o).count() as i64;
    explore(vec![false; n], n, |occ: &Vec<bool>| {
        (0..n)
            .map(|b| {
                let mut t = occ.clone();
                t[b] = true;
                (1.0 / n as f64, t)
            })
            .collect()
    })
    .into_iter()
    .map(|(occ, succ)| Case {
        state: BinsState { empty: empty(&occ), occupied: occ },
        outcomes: succ.iter().map(|(p, t)| (*p, vec![empty(t)])).collect(),
    })
    .collect()
}

fn degree_counts(deg: &[u32], a: usize) -> Vec<i64> {
    (0..a).map(|k| deg.iter().filter(|&&d| d as usize == k).count() as i64).collect()
}

pub fn degree_cases(n: usize, max_degree: usize, depth: usize) -> Vec<Case<DegreeState>> {
    let a = max_degree + 1;
    let pairs = (n * (n - 1)) as f64;
    explore(vec![0u32; n], depth, |deg: &Vec<u32>| {
        let mut out = Vec::new();
        for u in 0..n {
            for v in 0..n {
                if u != v {
                    let mut t = deg.clone();
                    t[u] += 1;
                    t[v] += 1;
                    out.push((1.0 / pairs, t));
                }
            }
        }
        out
    })
    .into_iter()
    .map(|(deg, succ)| {
        let top = *deg.iter().max().unwrap() as usize;
        Case {
            state: DegreeState { counts: degree_counts(&deg, top + 1), degree: deg },
            outcomes: succ.iter().map(|(p, t)| (*p, degree_counts(t, a))).collect(),
        }
    })
    .collect()
}

pub fn matching_cases(n: usize) -> Vec<Case<MatchingState>> {
    let free = |m: &Vec<Option<usize>>| (0..m.len()).filter(|&v| m[v].is_none()).collect::<Vec<_>>();
    explore(vec![None::<usize>; n], n, |m: &Vec<Option<usize>>| {
        let f = free(m);
        if f.len() < 2 {
            return vec![(1.0, m.clone())];
        }
        let pairs = (f.len() * (f.len() - 1) / 2) as f64;
        let mut out = Vec::new();
        for (x, &u) in f.iter().enumerate() {
            for &v in &f[x + 1..] {
                let mut t = m.clone();
                t[u] = Some(v);
                t[v] = Some(u);
                out.push((1.0 / pairs, t));
            }
        }
        out
    })
    .into_iter()
    .map(|(m, succ)| Case {
        state: MatchingState { unmatched: free(&m), partner: m },
        outcomes: succ.iter().map(|(p, t)| (*p, vec![free(t).len() as i64])).collect(),
    })
    .collect()
}

pub fn coin_cases(start: Vec<i64>, step: i64, depth: usize) -> Vec<Case<Vec<i64>>> {
    let a = start.len();
    let outcomes = 1usize << a;
    explore(start, depth, |y: &Vec<i64>| {
        (0..outcomes)
            .map(|mask| {
                let t = (0..a).map(|k| if mask >> k & 1 == 1 { y[k] + step } else { y[k] - step }).collect();
                (1.0 / outcomes as f64, t)
            })
            .collect()
    })
    .into_iter()
    .map(|(y, succ)| Case { state: y, outcomes: succ })
    .collect()
}

pub fn constant_cases(start: Vec<i64>) -> Vec<Case<Vec<i64>>> {
    vec![Case { outcomes: vec![(1.0, start.clone())], state: start }]
}

const THRESHOLDS: [f64; 6] = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5];

/// Largest absolute gap between the plugin's conditional moments and the
/// oracle's, over all cases, coordinates and thresholds. Sampled steps that
/// land outside the oracle's support count as an infinite gap.
pub fn max_moment_error<P: Process>(plugin: &P, cases: &[Case<P::State>]) -> f64 {
    let a = plugin.dim();
    let mut worst: f64 = 0.0;
    let (mut got, mut y, mut next) = (vec![0.0; a], vec![0i64; a], vec![0i64; a]);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for case in cases {
        plugin.observe(&case.state, &mut y);
        let total: f64 = case.outcomes.iter().map(|(p, _)| p).sum();
        worst = worst.max((total - 1.0).abs());
        let expect = |f: &dyn Fn(i64) -> f64, k: usize| -> f64 {
            case.outcomes.iter().map(|(p, t)| p * f(t[k] - y[k])).sum()
        };
        plugin.drift(&case.state, &mut got);
        for k in 0..a {
            worst = worst.max((got[k] - expect(&|d| d as f64, k)).abs());
        }
        plugin.mean_abs_step(&case.state, &mut got);
        for k in 0..a {
            worst = worst.max((got[k] - expect(&|d| d.abs() as f64, k)).abs());
        }
        for th in THRESHOLDS {
            plugin.exceed_probability(&case.state, th, &mut got);
            for k in 0..a {
                worst = worst.max((got[k] - expect(&|d| ((d.abs() as f64) > th) as u8 as f64, k)).abs());
            }
        }
        for _ in 0..6 {
            let mut s = case.state.clone();
            if plugin.step(&mut s, &mut rng).is_err() {
                return f64::INFINITY;
            }
            plugin.observe(&s, &mut next);
            if !case.outcomes.iter().any(|(_, t)| *t == next) {
                return f64::INFINITY;
            }
        }
    }
    worst
}

/// Worst oracle gap over every built-in plugin at `2 <= n <= 6`, and the
/// number of states examined.
pub fn all_plugin_oracles() -> (f64, usize) {
    let mut worst: f64 = 0.0;
    let mut states = 0;
    for n in 2..=6 {
        let c = bins_cases(n);
        states += c.len();
        worst = worst.max(max_moment_error(&BallsInBins::new(n), &c));

        let depth = if n <= 4 { 5 } else { 3 };
        let c = degree_cases(n, 3, depth);
        states += c.len();
        worst = worst.max(max_moment_error(&DegreeProcess::new(n, 3), &c));
        let c = degree_cases(n, 0, 2);
        states += c.len();
        worst = worst.max(max_moment_error(&DegreeProcess::new(n, 0), &c));

        let c = matching_cases(n);
        states += c.len();
        worst = worst.max(max_moment_error(&GreedyMatching::new(n), &c));
    }
    for step in [1, 2] {
        let start = vec![3, 0, -2];
        let c = coin_cases(start.clone(), step, 3);
        states += c.len();
        worst = worst.max(max_moment_error(&CoinWalk::new(start, step), &c));
    }
    let c = constant_cases(vec![4, 1]);
    states += c.len();
    worst = worst.max(max_moment_error(&ConstantProcess::new(vec![4, 1]), &c));
    (worst, states)
}
