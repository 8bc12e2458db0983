use rand::Rng;

use super::{Process, StepError};

/// `n` balls thrown one by one into `n` bins; `Y(i)` counts empty bins.
///
/// Drift `-Y/n`, limit `y(t) = e^{-t}`, steps in `{-1, 0}`.
#[derive(Clone, Debug)]
pub struct BallsInBins {
    n: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinsState {
    pub occupied: Vec<bool>,
    pub empty: i64,
}

impl BallsInBins {
    pub fn new(n: usize) -> Self {
        Self { n }
    }
}

impl Process for BallsInBins {
    type State = BinsState;

    fn name(&self) -> &'static str {
        "balls-in-bins"
    }

    fn dim(&self) -> usize {
        1
    }

    fn initial_state(&self) -> BinsState {
        BinsState { occupied: vec![false; self.n], empty: self.n as i64 }
    }

    fn observe(&self, s: &BinsState, out: &mut [i64]) {
        out[0] = s.empty;
    }

    fn drift(&self, s: &BinsState, out: &mut [f64]) {
        out[0] = -(s.empty as f64) / self.n as f64;
    }

    fn mean_abs_step(&self, s: &BinsState, out: &mut [f64]) {
        out[0] = s.empty as f64 / self.n as f64;
    }

    fn exceed_probability(&self, s: &BinsState, threshold: f64, out: &mut [f64]) {
        out[0] = if threshold < 1.0 { s.empty as f64 / self.n as f64 } else { 0.0 };
    }

    fn step<R: Rng + ?Sized>(&self, s: &mut BinsState, rng: &mut R) -> Result<(), StepError> {
        if self.n == 0 {
            return Err(StepError("no bins".into()));
        }
        let bin = rng.random_range(0..self.n);
        if !s.occupied[bin] {
            s.occupied[bin] = true;
            s.empty -= 1;
        }
        Ok(())
    }
}

/// Random multigraph on `n` vertices: every step adds an edge between an
/// ordered pair of distinct vertices chosen uniformly (repeat edges allowed).
/// `Y_k(i)` counts vertices of degree exactly `k` for `k = 0..=max_degree`.
///
/// Each vertex is an endpoint with probability exactly `2/n`, so the drift
/// is `2 (Y_{k-1} - Y_k) / n` with no error term; steps satisfy `|dY_k| <= 2`.
#[derive(Clone, Debug)]
pub struct DegreeProcess {
    n: usize,
    max_degree: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DegreeState {
    pub degree: Vec<u32>,
    /// Vertices of degree `k`, for every `k` up to the largest degree seen.
    pub counts: Vec<i64>,
}

impl DegreeProcess {
    pub fn new(n: usize, max_degree: usize) -> Self {
        Self { n, max_degree }
    }

    fn count(s: &DegreeState, k: isize) -> f64 {
        if k < 0 {
            0.0
        } else {
            s.counts.get(k as usize).copied().unwrap_or(0) as f64
        }
    }

    /// `(p, q, o)`: vertices of degree `k-1`, of degree `k`, and all others.
    fn categories(&self, s: &DegreeState, k: usize) -> (f64, f64, f64) {
        let p = Self::count(s, k as isize - 1);
        let q = Self::count(s, k as isize);
        (p, q, self.n as f64 - p - q)
    }
}

impl Process for DegreeProcess {
    type State = DegreeState;

    fn name(&self) -> &'static str {
        "degree-process"
    }

    fn dim(&self) -> usize {
        self.max_degree + 1
    }

    fn initial_state(&self) -> DegreeState {
        DegreeState { degree: vec![0; self.n], counts: vec![self.n as i64] }
    }

    fn observe(&self, s: &DegreeState, out: &mut [i64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = s.counts.get(k).copied().unwrap_or(0);
        }
    }

    fn drift(&self, s: &DegreeState, out: &mut [f64]) {
        let n = self.n as f64;
        for (k, o) in out.iter_mut().enumerate() {
            let (p, q, _) = self.categories(s, k);
            *o = 2.0 * (p - q) / n;
        }
    }

    // dY_k over ordered endpoint categories: (k-1, k-1) -> +2, (k, k) -> -2,
    // (k-1, other) -> +1, (k, other) -> -1, (k-1, k) and (other, other) -> 0
    fn mean_abs_step(&self, s: &DegreeState, out: &mut [f64]) {
        let pairs = self.n as f64 * (self.n as f64 - 1.0);
        for (k, o) in out.iter_mut().enumerate() {
            let (p, q, r) = self.categories(s, k);
            *o = 2.0 * (p * (p - 1.0) + p * r + q * (q - 1.0) + q * r) / pairs;
        }
    }

    fn exceed_probability(&self, s: &DegreeState, threshold: f64, out: &mut [f64]) {
        let pairs = self.n as f64 * (self.n as f64 - 1.0);
        for (k, o) in out.iter_mut().enumerate() {
            let (p, q, r) = self.categories(s, k);
            let twos = p * (p - 1.0) + q * (q - 1.0);
            let ones = 2.0 * p * r + 2.0 * q * r;
            *o = if threshold >= 2.0 {
                0.0
            } else if threshold >= 1.0 {
                twos / pairs
            } else {
                (twos + ones) / pairs
            };
        }
    }

    fn step<R: Rng + ?Sized>(&self, s: &mut DegreeState, rng: &mut R) -> Result<(), StepError> {
        if self.n < 2 {
            return Err(StepError(format!("need two distinct vertices, n = {}", self.n)));
        }
        let u = rng.random_range(0..self.n);
        let mut v = rng.random_range(0..self.n - 1);
        if v >= u {
            v += 1;
        }
        for w in [u, v] {
            let d = s.degree[w] as usize;
            s.degree[w] += 1;
            s.counts[d] -= 1;
            if s.counts.len() == d + 1 {
                s.counts.push(0);
            }
            s.counts[d + 1] += 1;
        }
        Ok(())
    }
}

/// Random greedy matching on the complete graph `K_n`: every step matches a
/// uniformly random pair of unmatched vertices. `Y(i)` counts unmatched
/// vertices; the drift is `-2` while at least two remain, `0` afterwards.
#[derive(Clone, Debug)]
pub struct GreedyMatching {
    n: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatchingState {
    pub unmatched: Vec<usize>,
    pub partner: Vec<Option<usize>>,
}

impl GreedyMatching {
    pub fn new(n: usize) -> Self {
        Self { n }
    }
}

impl Process for GreedyMatching {
    type State = MatchingState;

    fn name(&self) -> &'static str {
        "greedy-matching"
    }

    fn dim(&self) -> usize {
        1
    }

    fn initial_state(&self) -> MatchingState {
        MatchingState { unmatched: (0..self.n).collect(), partner: vec![None; self.n] }
    }

    fn observe(&self, s: &MatchingState, out: &mut [i64]) {
        out[0] = s.unmatched.len() as i64;
    }

    fn drift(&self, s: &MatchingState, out: &mut [f64]) {
        out[0] = if s.unmatched.len() >= 2 { -2.0 } else { 0.0 };
    }

    fn mean_abs_step(&self, s: &MatchingState, out: &mut [f64]) {
        out[0] = if s.unmatched.len() >= 2 { 2.0 } else { 0.0 };
    }

    fn exceed_probability(&self, s: &MatchingState, threshold: f64, out: &mut [f64]) {
        out[0] = if s.unmatched.len() >= 2 && threshold < 2.0 { 1.0 } else { 0.0 };
    }

    fn step<R: Rng + ?Sized>(&self, s: &mut MatchingState, rng: &mut R) -> Result<(), StepError> {
        let m = s.unmatched.len();
        if m < 2 {
            return Ok(());
        }
        let i = rng.random_range(0..m);
        let mut j = rng.random_range(0..m - 1);
        if j >= i {
            j += 1;
        }
        let (u, v) = (s.unmatched[i], s.unmatched[j]);
        s.partner[u] = Some(v);
        s.partner[v] = Some(u);
        // remove the larger index first so the smaller stays valid
        s.unmatched.swap_remove(i.max(j));
        s.unmatched.swap_remove(i.min(j));
        Ok(())
    }
}

/// Counts that never change.
#[derive(Clone, Debug)]
pub struct ConstantProcess {
    start: Vec<i64>,
}

impl ConstantProcess {
    pub fn new(start: Vec<i64>) -> Self {
        Self { start }
    }
}

impl Process for ConstantProcess {
    type State = Vec<i64>;

    fn name(&self) -> &'static str {
        "constant"
    }

    fn dim(&self) -> usize {
        self.start.len()
    }

    fn initial_state(&self) -> Vec<i64> {
        self.start.clone()
    }

    fn observe(&self, s: &Vec<i64>, out: &mut [i64]) {
        out.copy_from_slice(s);
    }

    fn drift(&self, _: &Vec<i64>, out: &mut [f64]) {
        out.fill(0.0);
    }

    fn mean_abs_step(&self, _: &Vec<i64>, out: &mut [f64]) {
        out.fill(0.0);
    }

    fn exceed_probability(&self, _: &Vec<i64>, _: f64, out: &mut [f64]) {
        out.fill(0.0);
    }

    fn step<R: Rng + ?Sized>(&self, _: &mut Vec<i64>, _: &mut R) -> Result<(), StepError> {
        Ok(())
    }
}

/// Independent fair `+-step` walks, one per coordinate. Drift zero.
#[derive(Clone, Debug)]
pub struct CoinWalk {
    start: Vec<i64>,
    step: i64,
}

impl CoinWalk {
    pub fn new(start: Vec<i64>, step: i64) -> Self {
        Self { start, step }
    }
}

impl Process for CoinWalk {
    type State = Vec<i64>;

    fn name(&self) -> &'static str {
        "coin"
    }

    fn dim(&self) -> usize {
        self.start.len()
    }

    fn initial_state(&self) -> Vec<i64> {
        self.start.clone()
    }

    fn observe(&self, s: &Vec<i64>, out: &mut [i64]) {
        out.copy_from_slice(s);
    }

    fn drift(&self, _: &Vec<i64>, out: &mut [f64]) {
        out.fill(0.0);
    }

    fn mean_abs_step(&self, _: &Vec<i64>, out: &mut [f64]) {
        out.fill(self.step as f64);
    }

    fn exceed_probability(&self, _: &Vec<i64>, threshold: f64, out: &mut [f64]) {
        out.fill(if self.step as f64 > threshold { 1.0 } else { 0.0 });
    }

    fn step<R: Rng + ?Sized>(&self, s: &mut Vec<i64>, rng: &mut R) -> Result<(), StepError> {
        for v in s.iter_mut() {
            if rng.random::<bool>() {
                *v += self.step;
            } else {
                *v -= self.step;
            }
        }
        Ok(())
    }
}
