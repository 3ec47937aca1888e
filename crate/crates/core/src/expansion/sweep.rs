//! Coupled `eps`-sweeps and the fits built on them.
//!
//! One replication replays the same streams at `eps = 0` and at every grid
//! value, so differences against `eps = 0` carry common random numbers.

use nalgebra::DMatrix;

use super::{CoefficientEstimate, Estimators, Method};
use crate::error::{Error, Result};
use crate::mm1::{closed_form_busy_stats, rsr_bitrate, QueueParams};
use crate::sim::{CoupledStreams, EventKind, ReplaySink};
use crate::stats::{LeastSquaresMap, MultiMoments, Z95};

/// One row of the sweep table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub epsilon: f64,
    pub e_area: f64,
    pub se_area: f64,
    pub e_busy: f64,
    pub se_busy: f64,
    pub e_bitrate: f64,
    pub se_bitrate: f64,
    pub rsr_bitrate: f64,
    pub expansion_bitrate: f64,
}

/// Polynomial fit `sum_k coef[k] eps^(lo + k)` with parameter covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyFit {
    pub lo: u32,
    pub coef: Vec<f64>,
    pub cov: DMatrix<f64>,
}

impl PolyFit {
    fn index(&self, power: u32) -> Option<usize> {
        let k = power.checked_sub(self.lo)? as usize;
        (k < self.coef.len()).then_some(k)
    }

    /// Coefficient of `eps^power` with its standard error.
    pub fn coefficient(&self, power: u32) -> Option<(f64, f64)> {
        self.index(power).map(|k| (self.coef[k], self.cov[(k, k)].max(0.0).sqrt()))
    }

    pub fn estimate(&self, power: u32, n: u64) -> Option<CoefficientEstimate> {
        self.coefficient(power).map(|(value, std_error)| CoefficientEstimate { value, std_error, n_samples: n, method: Method::McJoint })
    }

    pub fn ci95(&self, power: u32) -> Option<(f64, f64)> {
        self.coefficient(power).map(|(v, s)| (v - Z95 * s, v + Z95 * s))
    }
}

/// Which sweep quantity to fit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quantity {
    Area,
    Busy,
    Bitrate,
}

/// Means of busy period and area at `eps = 0` and each grid value.
#[derive(Clone, Debug)]
pub struct SweepResult {
    q: QueueParams,
    mean_p: f64,
    eps: Vec<f64>,
    n: u64,
    mean: Vec<f64>,
    cov: DMatrix<f64>,
}

/// Value and Jacobian of a derived vector.
struct Derived {
    value: Vec<f64>,
    jac: DMatrix<f64>,
}

impl SweepResult {
    pub fn grid(&self) -> &[f64] {
        &self.eps
    }

    pub fn replications(&self) -> u64 {
        self.n
    }

    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn cov_of(&self, d: &Derived) -> DMatrix<f64> {
        &d.jac * &self.cov * d.jac.transpose()
    }

    // Index 0 is eps = 0, index k is grid value k - 1.
    fn level(&self, which: Quantity) -> Derived {
        let k = self.eps.len() + 1;
        let mut jac = DMatrix::zeros(k, self.dim());
        let mut value = vec![0.0; k];
        for i in 0..k {
            let (b, a) = (self.mean[2 * i], self.mean[2 * i + 1]);
            match which {
                Quantity::Busy => {
                    value[i] = b;
                    jac[(i, 2 * i)] = 1.0;
                }
                Quantity::Area => {
                    value[i] = a;
                    jac[(i, 2 * i + 1)] = 1.0;
                }
                Quantity::Bitrate => {
                    value[i] = b / a;
                    jac[(i, 2 * i)] = 1.0 / a;
                    jac[(i, 2 * i + 1)] = -b / (a * a);
                }
            }
        }
        Derived { value, jac }
    }

    fn differenced(&self, which: Quantity) -> Derived {
        let l = self.level(which);
        let k = self.eps.len();
        let mut jac = DMatrix::zeros(k, self.dim());
        let mut value = vec![0.0; k];
        for i in 0..k {
            value[i] = l.value[i + 1] - l.value[0];
            for c in 0..self.dim() {
                jac[(i, c)] = l.jac[(i + 1, c)] - l.jac[(0, c)];
            }
        }
        Derived { value, jac }
    }

    /// Bit-rate residual against the frozen-rate queue, differenced at `eps = 0`.
    fn residual(&self) -> Result<Derived> {
        let mut d = self.differenced(Quantity::Bitrate);
        let base = rsr_bitrate(&self.q, self.mean_p, 0.0)?;
        for (v, &e) in d.value.iter_mut().zip(&self.eps) {
            *v -= rsr_bitrate(&self.q, self.mean_p, e)? - base;
        }
        Ok(d)
    }

    pub fn rows(&self, c: f64) -> Result<Vec<SweepRow>> {
        let area = self.level(Quantity::Area);
        let busy = self.level(Quantity::Busy);
        let rate = self.level(Quantity::Bitrate);
        let (ca, cb, cr) = (self.cov_of(&area), self.cov_of(&busy), self.cov_of(&rate));
        let mut out = Vec::with_capacity(self.eps.len() + 1);
        for (i, &e) in std::iter::once(&0.0).chain(&self.eps).enumerate() {
            out.push(SweepRow {
                epsilon: e,
                e_area: area.value[i],
                se_area: ca[(i, i)].max(0.0).sqrt(),
                e_busy: busy.value[i],
                se_busy: cb[(i, i)].max(0.0).sqrt(),
                e_bitrate: rate.value[i],
                se_bitrate: cr[(i, i)].max(0.0).sqrt(),
                rsr_bitrate: rsr_bitrate(&self.q, self.mean_p, e)?,
                expansion_bitrate: super::predicted_bitrate(&self.q, self.mean_p, c, e),
            });
        }
        Ok(out)
    }

    fn wls(eps: &[f64], d: &Derived, cov: &DMatrix<f64>, lo: u32, hi: u32) -> Result<PolyFit> {
        let w: Vec<f64> = (0..eps.len()).map(|i| 1.0 / cov[(i, i)]).collect();
        let weights = w.iter().all(|v| v.is_finite() && *v > 0.0).then_some(w.as_slice());
        let map = LeastSquaresMap::polynomial(eps, lo, hi, weights)?;
        Ok(PolyFit { lo, coef: map.apply(&d.value), cov: map.propagate(cov) })
    }

    /// Fit of `y(eps) - y(0)` on powers `lo..=hi` of `eps` (`lo >= 1`).
    pub fn fit(&self, which: Quantity, lo: u32, hi: u32) -> Result<PolyFit> {
        if lo == 0 {
            return Err(Error::Fit("differenced fits have no intercept".into()));
        }
        let d = self.differenced(which);
        let cov = self.cov_of(&d);
        Self::wls(&self.eps, &d, &cov, lo, hi)
    }

    /// Residual divided by `eps^2`, fitted as `psi + gamma eps`.
    pub fn psi_fit(&self) -> Result<PolyFit> {
        let mut d = self.residual()?;
        for (i, &e) in self.eps.iter().enumerate() {
            let s = 1.0 / (e * e);
            d.value[i] *= s;
            for c in 0..self.dim() {
                d.jac[(i, c)] *= s;
            }
        }
        let cov = self.cov_of(&d);
        Self::wls(&self.eps, &d, &cov, 0, 1)
    }

    /// Residual bit-rate gap per grid value with its standard error.
    pub fn residuals(&self) -> Result<Vec<(f64, f64)>> {
        let d = self.residual()?;
        let cov = self.cov_of(&d);
        Ok(d.value.iter().enumerate().map(|(i, &v)| (v, cov[(i, i)].max(0.0).sqrt())).collect())
    }

    /// Slope of `log |residual|` against `log eps` with its standard error.
    pub fn residual_loglog_slope(&self) -> Result<(f64, f64)> {
        let r = self.residual()?;
        if r.value.contains(&0.0) {
            return Err(Error::Fit("zero residual has no logarithm".into()));
        }
        let k = r.value.len();
        let mut jac = r.jac.clone();
        for i in 0..k {
            for c in 0..self.dim() {
                jac[(i, c)] /= r.value[i];
            }
        }
        let d = Derived { value: r.value.iter().map(|v| v.abs().ln()).collect(), jac };
        let cov = self.cov_of(&d);
        let design: Vec<Vec<f64>> = self.eps.iter().map(|e| vec![1.0, e.ln()]).collect();
        let w: Vec<f64> = (0..k).map(|i| 1.0 / cov[(i, i)]).collect();
        let map = LeastSquaresMap::new(&design, Some(&w))?;
        let beta = map.apply(&d.value);
        let cb = map.propagate(&cov);
        Ok((beta[1], cb[(1, 1)].max(0.0).sqrt()))
    }
}

/// Event whose probability is expanded in `eps`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JumpKind {
    /// An additional departure during the perturbed busy period.
    Plus,
    /// A marked base point during the perturbed busy period.
    Minus,
    /// Two additional departures during the perturbed busy period.
    DoublePlus,
}

impl JumpKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "plus" => Ok(Self::Plus),
            "minus" => Ok(Self::Minus),
            "double_plus" => Ok(Self::DoublePlus),
            other => Err(Error::Precondition(format!("unknown jump kind {other}"))),
        }
    }
}

/// Fitted and analytic coefficients of a hitting probability.
#[derive(Clone, Debug)]
pub struct FirstJumpFit {
    pub kind: JumpKind,
    pub eps: Vec<f64>,
    pub probabilities: Vec<(f64, f64)>,
    pub fit: PolyFit,
    pub analytic_first: f64,
    /// Present when the other sign of `p` vanishes.
    pub analytic_second: Option<CoefficientEstimate>,
}

impl FirstJumpFit {
    /// Lowest fitted power: 1 for single events, 2 for the double one.
    pub fn leading_power(&self) -> u32 {
        self.fit.lo
    }
}

#[derive(Default)]
struct JumpCounter {
    plus: u32,
    minus: u32,
}

impl ReplaySink for JumpCounter {
    fn event(&mut self, _: f64, kind: EventKind, _: u32, _: usize) {
        match kind {
            EventKind::AdditionalDeparture => self.plus += 1,
            EventKind::MarkedPoint => self.minus += 1,
            _ => {}
        }
    }
}

fn check_grid(grid: &[f64], min: usize) -> Result<()> {
    if grid.len() < min {
        return Err(Error::Precondition(format!("need at least {min} eps values, got {}", grid.len())));
    }
    if grid.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(Error::Precondition("eps values must be positive".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Precondition("eps grid must be strictly increasing".into()));
    }
    Ok(())
}

impl Estimators<'_> {
    /// Coupled sweep over `grid`: `n` replications, each replayed at
    /// `eps = 0` and at every grid value.
    pub fn sweep(&self, grid: &[f64], n: u64) -> Result<SweepResult> {
        check_grid(grid, 1)?;
        Self::check_n(n)?;
        let q = *self.queue();
        let env = self.env();
        let eps_max = *grid.last().unwrap();
        q.check_perturbation(env.max_abs_p(), eps_max)?;
        let key = self.key().child("sweep");
        let dim = 2 * (grid.len() + 1);
        let m = self.pool().fold(
            n,
            || MultiMoments::new(dim),
            |acc, i| {
                let mut s = CoupledStreams::new(&q, env, eps_max, key.replication(i)).expect("checked");
                let mut row = Vec::with_capacity(dim);
                for &e in std::iter::once(&0.0).chain(grid) {
                    let o = s.replay(e, &mut ());
                    row.push(o.duration);
                    row.push(o.area);
                }
                acc.push(&row);
            },
        );
        Ok(SweepResult { q, mean_p: env.p_moments().mean, eps: grid.to_vec(), n, mean: m.mean(), cov: m.cov_of_mean() })
    }

    /// Second-order coefficient of the bit-rate gap to the frozen-rate queue
    /// with the environment sped up by `alpha`.
    pub fn estimate_psi(&self, alpha: f64, grid: &[f64], n: u64) -> Result<CoefficientEstimate> {
        Ok(self.psi_sweep(alpha, grid, n)?.1)
    }

    /// Like `estimate_psi`, also returning the sweep.
    pub fn psi_sweep(&self, alpha: f64, grid: &[f64], n: u64) -> Result<(SweepResult, CoefficientEstimate)> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Domain(format!("alpha must be positive, got {alpha}")));
        }
        check_grid(grid, 3)?;
        let env = self.env().with_alpha(alpha)?;
        let est = Estimators::new(*self.queue(), env, self.key(), self.pool());
        let sweep = est.sweep(grid, n)?;
        let fit = sweep.psi_fit()?;
        let psi = fit.estimate(0, n).expect("intercept");
        Ok((sweep, psi))
    }

    /// Hitting probability of `kind` across `grid`, fitted through the origin.
    pub fn prob_first_jump_expansion(&self, kind: JumpKind, grid: &[f64], n: u64, n_analytic: u64) -> Result<FirstJumpFit> {
        check_grid(grid, 3)?;
        Self::check_n(n)?;
        let q = *self.queue();
        let env = self.env();
        let eps_max = *grid.last().unwrap();
        q.check_perturbation(env.max_abs_p(), eps_max)?;
        let key = self.key().child("first_jump");
        let k = grid.len();
        let m = self.pool().fold(
            n,
            || MultiMoments::new(k),
            |acc, i| {
                let mut s = CoupledStreams::new(&q, env, eps_max, key.replication(i)).expect("checked");
                let row: Vec<f64> = grid
                    .iter()
                    .map(|&e| {
                        let mut c = JumpCounter::default();
                        s.replay(e, &mut c);
                        let hit = match kind {
                            JumpKind::Plus => c.plus >= 1,
                            JumpKind::Minus => c.minus >= 1,
                            JumpKind::DoublePlus => c.plus >= 2,
                        };
                        f64::from(u8::from(hit))
                    })
                    .collect();
                acc.push(&row);
            },
        );
        let mean = m.mean();
        let cov = m.cov_of_mean();
        let probabilities = (0..k).map(|i| (mean[i], cov[(i, i)].max(0.0).sqrt())).collect();
        // leading power plus two nuisance powers
        let lo = if kind == JumpKind::DoublePlus { 2 } else { 1 };
        let d = Derived { value: mean, jac: DMatrix::identity(k, k) };
        let fit = SweepResult::wls(grid, &d, &cov, lo, lo + 2)?;
        let s = closed_form_busy_stats(&q);
        let pm = env.p_moments();
        let plus_only = env.max_p_minus() == 0.0;
        let minus_only = env.max_p_plus() == 0.0;
        let (analytic_first, analytic_second) = match kind {
            JumpKind::Plus => {
                let t1 = plus_only.then(|| self.plus_pair_mass(n_analytic, Method::QuadratureHybrid)).transpose()?;
                (pm.mean_plus * s.e_b, t1.map(|e| super::sum_estimates(&[(-1.0, e)])))
            }
            JumpKind::Minus => {
                let s1 = minus_only.then(|| self.minus_pair_mass(n_analytic, Method::QuadratureHybrid)).transpose()?;
                let mu = q.mu();
                (pm.mean_minus * s.e_b, s1.map(|e| super::sum_estimates(&[(-1.0 / (mu * mu), e)])))
            }
            JumpKind::DoublePlus => {
                let t1 = plus_only.then(|| self.plus_pair_mass(n_analytic, Method::QuadratureHybrid)).transpose()?;
                (0.0, t1.map(|e| super::sum_estimates(&[(q.rho(), e)])))
            }
        };
        Ok(FirstJumpFit { kind, eps: grid.to_vec(), probabilities, fit, analytic_first, analytic_second })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::MarkovEnv;
    use crate::parallel::Pool;
    use crate::rng::StreamKey;

    fn q() -> QueueParams {
        QueueParams::new(0.5, 1.0).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(check_grid(&[0.1, 0.05, 0.2], 3).is_err());
        assert!(check_grid(&[0.1, 0.2], 3).is_err());
        assert!(check_grid(&[0.0, 0.1, 0.2], 3).is_err());
        assert!(check_grid(&[0.01, 0.1, 0.2], 3).is_ok());
    }

    #[test]
    fn zero_environment_sweep_is_flat() {
        let pool = Pool::serial();
        let e = Estimators::new(q(), MarkovEnv::constant(0.0).unwrap(), StreamKey::new(5), &pool);
        let s = e.sweep(&[0.05, 0.1, 0.2], 500).unwrap();
        let rows = s.rows(0.0).unwrap();
        for r in &rows[1..] {
            assert_eq!(r.e_area, rows[0].e_area);
            assert_eq!(r.e_busy, rows[0].e_busy);
        }
        let psi = e.estimate_psi(1.0, &[0.05, 0.1, 0.2], 500).unwrap();
        assert_eq!(psi.value, 0.0);
        let f = e.prob_first_jump_expansion(JumpKind::Plus, &[0.05, 0.1, 0.2], 500, 10).unwrap();
        assert!(f.probabilities.iter().all(|p| p.0 == 0.0));
    }

    #[test]
    fn constant_sweep_tracks_frozen_queue() {
        let pool = Pool::new(2);
        let e = Estimators::new(q(), MarkovEnv::constant(1.0).unwrap(), StreamKey::new(8), &pool);
        let s = e.sweep(&[0.05, 0.1, 0.15, 0.2], 100_000).unwrap();
        for &(r, se) in &s.residuals().unwrap() {
            assert!(r.abs() < 5.0 * se + 1e-12, "{r} {se}");
        }
        let fit = s.fit(Quantity::Busy, 1, 3).unwrap();
        let (c1, se1) = fit.coefficient(1).unwrap();
        assert!((c1 + 4.0).abs() < 5.0 * se1, "{c1} {se1}");
    }

    #[test]
    fn psi_rejects_bad_alpha_and_short_grid() {
        let pool = Pool::serial();
        let e = Estimators::new(q(), MarkovEnv::symmetric(1.0, [0.0, 2.0]).unwrap(), StreamKey::new(1), &pool);
        assert!(e.estimate_psi(0.0, &[0.01, 0.02, 0.03], 10).is_err());
        assert!(e.estimate_psi(1.0, &[0.01, 0.02], 10).is_err());
        assert!(e.sweep(&[0.3], 10).is_err());
    }

    #[test]
    fn jump_kinds_parse() {
        assert_eq!(JumpKind::parse("double_plus").unwrap(), JumpKind::DoublePlus);
        assert!(JumpKind::parse("both").is_err());
    }
}
