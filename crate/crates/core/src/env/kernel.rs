use super::{dot, MarkovEnv};

const MAX_CELLS: usize = 1 << 17;
const DECAY_CUTOFF: f64 = 1e-20;
// Taylor order per cell; the remainder is below CELL_SPAN^(ORDER+1) / (ORDER+1)!.
const ORDER: usize = 24;
// Cell width in units of 1 / Lambda.
const CELL_SPAN: f64 = 1.0;

/// Lag function `r(v) = E_nu[f(X(0)) g(X(v))]` with tabulated lag moments.
///
/// `r` is split as `offset + c(v)` where `c` decays to zero. On cells of
/// width `h = 1 / Lambda` the transient `c(t0 + s) = w e^{alpha Q s} g`
/// is stored as its Taylor polynomial in `s`, which converges like `1/k!`
/// because `|alpha Q| <= 2 Lambda`; the same series advances the row vector
/// to the next cell. Values and the cumulative integrals
/// `G_k(t) = int_0^t c(v) v^k dv` (k = 0, 1, 2) are then exact polynomial
/// evaluations.
#[derive(Clone, Debug)]
pub struct CorrelationKernel {
    offset: f64,
    // Constant transient part when the chain does not move.
    frozen: Option<f64>,
    h: f64,
    // Taylor coefficients `c^(k)(t0) / k!` per cell.
    cells: Vec<[f64; ORDER + 1]>,
    cum: Vec<[f64; 3]>,
    // The table hit MAX_CELLS before the transient decayed.
    truncated: bool,
}

impl CorrelationKernel {
    /// Kernel of `E_nu[f(X(0)) g(X(v))]`.
    pub fn correlation(env: &MarkovEnv, f: &[f64], g: &[f64]) -> Self {
        let law = env.stationary();
        let mf = law.expect(f);
        let mg = law.expect(g);
        let w0: Vec<f64> = law.probabilities().iter().zip(f).map(|(a, b)| a * (b - mf)).collect();
        Self::build(env, w0, g, mf * mg)
    }

    /// Kernel of the auto-covariance `C_p(v)`.
    pub fn covariance(env: &MarkovEnv) -> Self {
        let mut k = Self::correlation(env, env.p_values(), env.p_values());
        k.offset = 0.0;
        k
    }

    fn build(env: &MarkovEnv, w0: Vec<f64>, g: &[f64], offset: f64) -> Self {
        let rate = env.uniformization_rate();
        let norm0: f64 = w0.iter().map(|x| x.abs()).sum();
        let mut k = Self { offset, frozen: None, h: 0.0, cells: Vec::new(), cum: vec![[0.0; 3]], truncated: false };
        if rate == 0.0 || norm0 == 0.0 {
            k.frozen = Some(dot(&w0, g));
            return k;
        }
        k.h = CELL_SPAN / rate;
        let n = env.state_count();
        let pi = env.stationary().probabilities();
        let aq: Vec<f64> = env.generator.iter().map(|x| env.alpha * x).collect();
        let mut w = w0;
        let (mut u, mut v, mut next) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        loop {
            let j = k.cells.len();
            let mut coef = [0.0; ORDER + 1];
            // u runs through w (alpha Q)^m / m!
            u.copy_from_slice(&w);
            next.copy_from_slice(&w);
            let mut hm = 1.0;
            for (m, c) in coef.iter_mut().enumerate() {
                if m > 0 {
                    let inv = 1.0 / m as f64;
                    for (col, out) in v.iter_mut().enumerate() {
                        *out = inv * (0..n).map(|row| u[row] * aq[row * n + col]).sum::<f64>();
                    }
                    std::mem::swap(&mut u, &mut v);
                    hm *= k.h;
                    next.iter_mut().zip(&u).for_each(|(a, b)| *a += hm * b);
                }
                *c = dot(&u, g);
            }
            let t0 = j as f64 * k.h;
            let cell = partial_moments(&coef, t0, k.h);
            let prev = *k.cum.last().unwrap();
            k.cum.push([prev[0] + cell[0], prev[1] + cell[1], prev[2] + cell[2]]);
            k.cells.push(coef);
            std::mem::swap(&mut w, &mut next);
            // w sums to zero exactly; drop the rounding drift along pi, which would never decay
            let drift: f64 = w.iter().sum();
            w.iter_mut().zip(pi).for_each(|(a, b)| *a -= drift * b);
            let norm: f64 = w.iter().map(|x| x.abs()).sum();
            if norm < DECAY_CUTOFF * norm0 {
                break;
            }
            if k.cells.len() >= MAX_CELLS {
                k.truncated = true;
                break;
            }
        }
        k
    }

    /// True when the chain mixes too slowly relative to its fastest rate for
    /// the table to reach the decay cutoff; values past `support` are then wrong.
    pub fn truncated(&self) -> bool {
        self.truncated
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Time after which the transient part is below the tabulation cutoff.
    pub fn support(&self) -> f64 {
        if self.frozen.is_some() {
            f64::INFINITY
        } else {
            self.cells.len() as f64 * self.h
        }
    }

    /// Transient part `c(v)`.
    pub fn centered(&self, v: f64) -> f64 {
        if let Some(c) = self.frozen {
            return c;
        }
        let j = (v / self.h).floor() as usize;
        match self.cells.get(j) {
            None => 0.0,
            Some(c) => horner(c, v - j as f64 * self.h),
        }
    }

    /// `r(v)`.
    pub fn value(&self, v: f64) -> f64 {
        self.offset + self.centered(v.max(0.0))
    }

    fn cumulative(&self, b: f64) -> [f64; 3] {
        if let Some(c) = self.frozen {
            return [c * b, c * b * b / 2.0, c * b * b * b / 3.0];
        }
        let j = (b / self.h).floor() as usize;
        let Some(c) = self.cells.get(j) else {
            return *self.cum.last().unwrap();
        };
        let t0 = j as f64 * self.h;
        let base = self.cum[j];
        let part = partial_moments(c, t0, b - t0);
        [base[0] + part[0], base[1] + part[1], base[2] + part[2]]
    }

    /// `[int_0^b r, int_0^b (b-v) r(v) dv, int_0^b (b-v)^2 r(v) dv]`.
    pub fn lag_moments(&self, b: f64) -> [f64; 3] {
        if !(b > 0.0) {
            return [0.0; 3];
        }
        let [g0, g1, g2] = self.cumulative(b);
        let o = self.offset;
        [
            o * b + g0,
            o * b * b / 2.0 + b * g0 - g1,
            o * b * b * b / 3.0 + b * b * g0 - 2.0 * b * g1 + g2,
        ]
    }
}

fn horner(c: &[f64], s: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * s + a)
}

// `int_0^d c(s) (t0 + s)^m ds` for m = 0, 1, 2 with `c` given by its coefficients.
fn partial_moments(c: &[f64], t0: f64, d: f64) -> [f64; 3] {
    let mut g = [0.0; 3];
    for (i, gi) in g.iter_mut().enumerate() {
        *gi = c.iter().enumerate().rev().fold(0.0, |acc, (k, &a)| acc * d + a / (k + i + 1) as f64) * d.powi(i as i32 + 1);
    }
    [g[0], t0 * g[0] + g[1], t0 * t0 * g[0] + 2.0 * t0 * g[1] + g[2]]
}
