//! Finite-state Markov environment `X(alpha t)` with perturbation values `p`.

mod kernel;
mod path;

pub use kernel::CorrelationKernel;
pub use path::EnvTrajectory;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-12;
// Poisson terms per uniformization chunk are bounded by keeping the chunk
// rate small; the tail mass left out of each chunk is below `UNIF_TAIL`.
const UNIF_CHUNK: f64 = 16.0;
const UNIF_TAIL: f64 = 1e-15;

/// Stationary law of the environment.
#[derive(Clone, Debug, PartialEq)]
pub struct StationaryLaw {
    probabilities: Vec<f64>,
}

impl StationaryLaw {
    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    /// Expectation of a per-state function.
    pub fn expect(&self, f: &[f64]) -> f64 {
        self.probabilities.iter().zip(f).map(|(a, b)| a * b).sum()
    }
}

/// Stationary moments of the perturbation function.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PMoments {
    pub mean: f64,
    pub mean_sq: f64,
    pub mean_plus: f64,
    pub mean_minus: f64,
    pub max_abs: f64,
}

impl PMoments {
    pub fn variance(&self) -> f64 {
        (self.mean_sq - self.mean * self.mean).max(0.0)
    }
}

/// A finite-state CTMC environment scaled in time by `alpha`.
///
/// The environment seen by the queue at time `t` is `X(alpha t)`, so the
/// effective generator is `alpha Q`. `alpha = 0` freezes the chain in its
/// initial state.
#[derive(Clone, Debug)]
pub struct MarkovEnv {
    n: usize,
    generator: Vec<f64>,
    p: Vec<f64>,
    alpha: f64,
    law: StationaryLaw,
    // Derived data for the scaled chain.
    unif_rate: f64,
    unif: Vec<f64>,
    jump_cdf: Vec<Vec<f64>>,
}

impl MarkovEnv {
    pub fn new(generator: Vec<Vec<f64>>, p: Vec<f64>, alpha: f64) -> Result<Self> {
        let n = generator.len();
        if n == 0 {
            return Err(Error::InvalidEnvironment("no states".into()));
        }
        if p.len() != n {
            return Err(Error::InvalidEnvironment(format!(
                "{} perturbation values for {n} states",
                p.len()
            )));
        }
        if let Some(x) = p.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidEnvironment(format!("non-finite perturbation value {x}")));
        }
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::InvalidEnvironment(format!("alpha must be finite and >= 0, got {alpha}")));
        }
        let mut flat = Vec::with_capacity(n * n);
        for (i, row) in generator.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidEnvironment(format!("row {i} has {} entries, expected {n}", row.len())));
            }
            let mut sum = 0.0;
            let mut scale: f64 = 1.0;
            for (j, &r) in row.iter().enumerate() {
                if !r.is_finite() {
                    return Err(Error::InvalidEnvironment(format!("non-finite rate at ({i},{j})")));
                }
                if i != j && r < 0.0 {
                    return Err(Error::InvalidEnvironment(format!("negative rate {r} at ({i},{j})")));
                }
                sum += r;
                scale = scale.max(r.abs());
            }
            if sum.abs() > ROW_SUM_TOL * scale {
                return Err(Error::InvalidEnvironment(format!("row {i} sums to {sum}")));
            }
            flat.extend_from_slice(row);
        }
        check_irreducible(n, &flat)?;
        let law = solve_stationary(n, &flat)?;
        let mut env = Self {
            n,
            generator: flat,
            p,
            alpha,
            law,
            unif_rate: 0.0,
            unif: Vec::new(),
            jump_cdf: Vec::new(),
        };
        env.derive();
        Ok(env)
    }

    fn derive(&mut self) {
        let n = self.n;
        let q = &self.generator;
        let max_out = (0..n).map(|i| -q[i * n + i]).fold(0.0, f64::max);
        self.unif_rate = self.alpha * max_out;
        self.unif = (0..n * n)
            .map(|k| {
                let id = if k / n == k % n { 1.0 } else { 0.0 };
                if max_out > 0.0 {
                    id + q[k] / max_out
                } else {
                    id
                }
            })
            .collect();
        self.jump_cdf = (0..n)
            .map(|i| {
                let out = -q[i * n + i];
                let mut acc = 0.0;
                (0..n)
                    .map(|j| {
                        if j != i && out > 0.0 {
                            acc += q[i * n + j] / out;
                        }
                        acc
                    })
                    .collect()
            })
            .collect();
    }

    /// Single state with constant perturbation `p0`.
    pub fn constant(p0: f64) -> Result<Self> {
        Self::new(vec![vec![0.0]], vec![p0], 1.0)
    }

    /// Two states with rates `q01` (0 to 1) and `q10` (1 to 0).
    pub fn two_state(q01: f64, q10: f64, p: [f64; 2]) -> Result<Self> {
        Self::new(vec![vec![-q01, q01], vec![q10, -q10]], p.to_vec(), 1.0)
    }

    /// Two states switching at rate `q` both ways.
    pub fn symmetric(q: f64, p: [f64; 2]) -> Result<Self> {
        Self::two_state(q, q, p)
    }

    /// Same chain and perturbation, different time scale.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::InvalidEnvironment(format!("alpha must be finite and >= 0, got {alpha}")));
        }
        let mut env = self.clone();
        env.alpha = alpha;
        env.derive();
        Ok(env)
    }

    pub fn state_count(&self) -> usize {
        self.n
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Unscaled generator entry `Q[i][j]`.
    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.generator[i * self.n + j]
    }

    pub fn generator_rows(&self) -> Vec<Vec<f64>> {
        self.generator.chunks(self.n).map(<[f64]>::to_vec).collect()
    }

    pub fn p_values(&self) -> &[f64] {
        &self.p
    }

    pub fn p_plus(&self) -> Vec<f64> {
        self.p.iter().map(|&x| x.max(0.0)).collect()
    }

    pub fn p_minus(&self) -> Vec<f64> {
        self.p.iter().map(|&x| (-x).max(0.0)).collect()
    }

    pub fn max_p_plus(&self) -> f64 {
        self.p.iter().fold(0.0, |m, &x| m.max(x))
    }

    pub fn max_p_minus(&self) -> f64 {
        self.p.iter().fold(0.0, |m, &x| m.max(-x))
    }

    pub fn max_abs_p(&self) -> f64 {
        self.p.iter().fold(0.0, |m, &x| m.max(x.abs()))
    }

    pub fn stationary(&self) -> &StationaryLaw {
        &self.law
    }

    pub fn p_moments(&self) -> PMoments {
        let nu = self.law.probabilities();
        let mut m = PMoments {
            mean: 0.0,
            mean_sq: 0.0,
            mean_plus: 0.0,
            mean_minus: 0.0,
            max_abs: self.max_abs_p(),
        };
        for (w, &x) in nu.iter().zip(&self.p) {
            m.mean_sq += w * x * x;
            m.mean_plus += w * x.max(0.0);
            m.mean_minus += w * (-x).max(0.0);
        }
        m.mean = m.mean_plus - m.mean_minus;
        m
    }

    /// Rate of the uniformized chain `alpha * max_i |Q_ii|`.
    pub fn uniformization_rate(&self) -> f64 {
        self.unif_rate
    }

    /// Row vector `w exp(alpha Q u)`.
    pub fn propagate(&self, w: &[f64], u: f64) -> Vec<f64> {
        let mut out = w.to_vec();
        self.propagate_into(&mut out, u);
        out
    }

    /// In-place version of [`MarkovEnv::propagate`].
    pub fn propagate_into(&self, w: &mut [f64], u: f64) {
        let total = self.unif_rate * u;
        if total <= 0.0 || self.n == 1 {
            return;
        }
        let chunks = (total / UNIF_CHUNK).ceil().max(1.0);
        let tau = total / chunks;
        let mut term = vec![0.0; self.n];
        let mut next = vec![0.0; self.n];
        let mut acc = vec![0.0; self.n];
        for _ in 0..chunks as usize {
            term.copy_from_slice(w);
            let mut weight = (-tau).exp();
            let mut mass = weight;
            for (a, t) in acc.iter_mut().zip(&term) {
                *a = weight * t;
            }
            let mut k = 0u32;
            while 1.0 - mass > UNIF_TAIL && k < 10_000 {
                k += 1;
                self.step(&term, &mut next);
                std::mem::swap(&mut term, &mut next);
                weight *= tau / f64::from(k);
                mass += weight;
                for (a, t) in acc.iter_mut().zip(&term) {
                    *a += weight * t;
                }
            }
            w.copy_from_slice(&acc);
        }
    }

    fn step(&self, w: &[f64], out: &mut [f64]) {
        let n = self.n;
        out.iter_mut().for_each(|x| *x = 0.0);
        for (i, &wi) in w.iter().enumerate() {
            if wi == 0.0 {
                continue;
            }
            let row = &self.unif[i * n..(i + 1) * n];
            for (o, &u) in out.iter_mut().zip(row) {
                *o += wi * u;
            }
        }
    }

    /// Transition matrix of the scaled chain over a lag `u`.
    pub fn transition_matrix(&self, u: f64) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| {
                let mut e = vec![0.0; self.n];
                e[i] = 1.0;
                self.propagate(&e, u)
            })
            .collect()
    }

    /// `E_nu[f(X(0)) g(X(u))]` for the scaled chain.
    pub fn cross_moment(&self, f: &[f64], g: &[f64], u: f64) -> Result<f64> {
        if !(u >= 0.0) {
            return Err(Error::Domain(format!("lag must be >= 0, got {u}")));
        }
        let nu = self.law.probabilities();
        let mf = self.law.expect(f);
        let mg = self.law.expect(g);
        let mut w: Vec<f64> = nu.iter().zip(f).map(|(a, b)| a * (b - mf)).collect();
        self.propagate_into(&mut w, u);
        Ok(mf * mg + dot(&w, g))
    }

    /// Auto-covariance `C_p(u)` of `p(X(.))`.
    pub fn covariance(&self, u: f64) -> Result<f64> {
        if !(u >= 0.0) {
            return Err(Error::Domain(format!("lag must be >= 0, got {u}")));
        }
        let nu = self.law.probabilities();
        let mean = self.law.expect(&self.p);
        let mut w: Vec<f64> = nu.iter().zip(&self.p).map(|(a, b)| a * (b - mean)).collect();
        self.propagate_into(&mut w, u);
        Ok(dot(&w, &self.p))
    }

    /// Autocorrelation `C_p(u) / C_p(0)`; 1 for a degenerate `p`.
    pub fn correlation(&self, u: f64) -> Result<f64> {
        let v = self.covariance(0.0)?;
        if v <= 0.0 {
            return Ok(1.0);
        }
        Ok(self.covariance(u)? / v)
    }

    /// Draws a state from the stationary law.
    pub fn sample_stationary_state<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, &w) in self.law.probabilities().iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        // rounding: fall back to the last state with positive mass
        self.law.probabilities().iter().rposition(|&w| w > 0.0).unwrap_or(0)
    }

    /// Holding rate of state `i` in the scaled chain.
    pub fn holding_rate(&self, i: usize) -> f64 {
        self.alpha * -self.generator[i * self.n + i]
    }

    pub(crate) fn sample_holding<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> f64 {
        let rate = self.holding_rate(state);
        if rate > 0.0 {
            let e: f64 = rng.sample(Exp1);
            e / rate
        } else {
            f64::INFINITY
        }
    }

    pub(crate) fn sample_next_state<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let cdf = &self.jump_cdf[state];
        let last = cdf.len() - 1;
        let mut j = cdf.iter().position(|&c| u < c).unwrap_or(last);
        if j == state {
            // u landed on the flat step at the diagonal; take the next state with mass
            j = (0..self.n).rev().find(|&k| k != state && self.generator[state * self.n + k] > 0.0).unwrap_or(state);
        }
        j
    }

    /// Stationary path on `[0, horizon]`.
    pub fn sample_path<R: Rng + ?Sized>(&self, horizon: f64, rng: &mut R) -> Result<EnvTrajectory> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Domain(format!("horizon must be positive and finite, got {horizon}")));
        }
        let mut path = EnvTrajectory::start(self, rng);
        path.extend_to(self, horizon, rng);
        Ok(path)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn reach(n: usize, q: &[f64], forward: bool) -> Vec<bool> {
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for j in 0..n {
            let r = if forward { q[i * n + j] } else { q[j * n + i] };
            if j != i && r > 0.0 && !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen
}

fn check_irreducible(n: usize, q: &[f64]) -> Result<()> {
    let f = reach(n, q, true);
    let b = reach(n, q, false);
    let isolated: Vec<usize> = (0..n).filter(|&i| !(f[i] && b[i])).collect();
    if isolated.is_empty() {
        Ok(())
    } else {
        Err(Error::Reducible { isolated })
    }
}

fn solve_stationary(n: usize, q: &[f64]) -> Result<StationaryLaw> {
    // nu Q = 0 with the last balance equation replaced by normalisation.
    let mut a = DMatrix::from_fn(n, n, |i, j| q[j * n + i]);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let x = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidEnvironment("singular stationary system".into()))?;
    let mut probs: Vec<f64> = x.iter().map(|&v| v.max(0.0)).collect();
    let s: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|v| *v /= s);
    Ok(StationaryLaw { probabilities: probs })
}
