use rand::Rng;

use super::MarkovEnv;

/// Piecewise-constant environment path on `[0, horizon]`.
///
/// The path can be extended later; the pending jump drawn past the
/// current horizon is kept, so an extended path is one realisation.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvTrajectory {
    jump_times: Vec<f64>,
    states: Vec<usize>,
    horizon: f64,
    next_jump: f64,
}

impl EnvTrajectory {
    pub(crate) fn start<R: Rng + ?Sized>(env: &MarkovEnv, rng: &mut R) -> Self {
        let s = env.sample_stationary_state(rng);
        let next_jump = env.sample_holding(s, rng);
        Self {
            jump_times: vec![0.0],
            states: vec![s],
            horizon: 0.0,
            next_jump,
        }
    }

    /// A path frozen in `state`.
    pub fn constant(state: usize, horizon: f64) -> Self {
        Self {
            jump_times: vec![0.0],
            states: vec![state],
            horizon,
            next_jump: f64::INFINITY,
        }
    }

    /// Builds a path from explicit segments; times must start at 0 and
    /// increase strictly, and the last one must lie before `horizon`.
    pub fn from_segments(jump_times: Vec<f64>, states: Vec<usize>, horizon: f64) -> Option<Self> {
        let ok = !jump_times.is_empty()
            && jump_times.len() == states.len()
            && jump_times[0] == 0.0
            && jump_times.windows(2).all(|w| w[0] < w[1])
            && *jump_times.last().unwrap() < horizon.max(f64::MIN_POSITIVE);
        ok.then_some(Self {
            jump_times,
            states,
            horizon,
            next_jump: f64::INFINITY,
        })
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Extends the path so that it covers `[0, horizon]`.
    pub fn extend_to<R: Rng + ?Sized>(&mut self, env: &MarkovEnv, horizon: f64, rng: &mut R) {
        while self.next_jump <= horizon {
            let t = self.next_jump;
            let s = env.sample_next_state(*self.states.last().unwrap(), rng);
            self.jump_times.push(t);
            self.states.push(s);
            self.next_jump = t + env.sample_holding(s, rng);
        }
        self.horizon = self.horizon.max(horizon);
    }

    #[inline]
    fn segment(&self, t: f64) -> usize {
        self.jump_times.partition_point(|&x| x <= t).saturating_sub(1)
    }

    /// State at time `t`; right-continuous at jumps.
    #[inline]
    pub fn state_at(&self, t: f64) -> usize {
        self.states[self.segment(t)]
    }

    /// Calls `visit(lo, hi, state)` for each constant piece of `[a, b]`.
    pub fn for_each_piece(&self, a: f64, b: f64, mut visit: impl FnMut(f64, f64, usize)) {
        if b <= a {
            return;
        }
        let mut k = self.segment(a);
        let mut lo = a;
        loop {
            let hi = self.jump_times.get(k + 1).copied().unwrap_or(f64::INFINITY).min(b);
            visit(lo, hi, self.states[k]);
            if hi >= b {
                break;
            }
            lo = hi;
            k += 1;
        }
    }

    /// `int_a^b f(X(t)) dt`.
    pub fn integrate(&self, f: &[f64], a: f64, b: f64) -> f64 {
        let mut s = 0.0;
        self.for_each_piece(a, b, |lo, hi, x| s += f[x] * (hi - lo));
        s
    }

    /// `int_a^b f(X(t)) (c0 + c1 t) dt`.
    pub fn integrate_linear(&self, f: &[f64], a: f64, b: f64, c0: f64, c1: f64) -> f64 {
        let mut s = 0.0;
        self.for_each_piece(a, b, |lo, hi, x| {
            let v = f[x];
            if v != 0.0 {
                s += v * (hi - lo) * (c0 + 0.5 * c1 * (lo + hi));
            }
        });
        s
    }
}
