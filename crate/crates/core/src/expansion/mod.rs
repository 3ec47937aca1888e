//! Estimators for the coefficients of the second-order expansions in `eps`
//! of the mean area, the mean busy period and the mean bit rate.
//!
//! Every second-order coefficient is an expectation over standard-queue
//! busy periods of pairwise functionals of the environment. Two routes are
//! offered: `mc_joint` simulates the environment path jointly with the busy
//! periods, `quadrature_hybrid` simulates only the busy periods and
//! integrates the analytic lag correlations of the environment.

mod sweep;

pub use sweep::{FirstJumpFit, JumpKind, PolyFit, Quantity, SweepResult, SweepRow};

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::env::{CorrelationKernel, EnvTrajectory, MarkovEnv};
use crate::error::{Error, Result};
use crate::mm1::{closed_form_busy_stats, QueueParams};
use crate::parallel::Pool;
use crate::rng::{ReplicationRng, StreamKey};
use crate::sim::{decompose_level1, simulate_s_busy_period, BusyPeriodPath, Level1Decomposition};
use crate::stats::{Merge, Moments, Z95};

/// Estimation route of a coefficient.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    McJoint,
    QuadratureHybrid,
    ClosedForm,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Self::McJoint => "mc_joint",
            Self::QuadratureHybrid => "quadrature_hybrid",
            Self::ClosedForm => "closed_form",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mc_joint" => Ok(Self::McJoint),
            "quadrature_hybrid" => Ok(Self::QuadratureHybrid),
            "closed_form" => Ok(Self::ClosedForm),
            other => Err(Error::UnknownMethod(other.to_string())),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

/// Point estimate of a coefficient with its standard error.
///
/// `std_error` is zero exactly for closed-form values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoefficientEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: u64,
    pub method: Method,
}

impl CoefficientEstimate {
    pub fn closed_form(value: f64) -> Self {
        Self { value, std_error: 0.0, n_samples: 0, method: Method::ClosedForm }
    }

    /// Sample mean times `scale`.
    pub fn from_moments(m: &Moments, scale: f64, method: Method) -> Self {
        assert!(method != Method::ClosedForm);
        Self {
            value: scale * m.mean(),
            std_error: (scale * m.std_error()).abs(),
            n_samples: m.count(),
            method,
        }
    }

    pub fn ci95(&self) -> (f64, f64) {
        (self.value - Z95 * self.std_error, self.value + Z95 * self.std_error)
    }

    pub fn z_against(&self, target: f64) -> f64 {
        crate::stats::z_score(self.value, target, self.std_error)
    }
}

/// Convention for `A_i` in the sub-busy terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AiConvention {
    /// `E_0` is the first level-1 sojourn.
    #[default]
    Literal,
    /// `E_0` replaced by the sojourn that follows excursion `i`.
    Alternate,
}

/// The five second-order parts.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SecondOrderParts {
    pub a_plus: Option<CoefficientEstimate>,
    pub a_minus: Option<CoefficientEstimate>,
    pub a_pm: Option<CoefficientEstimate>,
    pub b_plus: Option<CoefficientEstimate>,
    pub b_minus: Option<CoefficientEstimate>,
}

/// All coefficients of the three expansions.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpansionResult {
    /// Signed coefficient of `eps` in the mean area.
    pub first_order_area: f64,
    pub a_plus: CoefficientEstimate,
    pub a_minus: CoefficientEstimate,
    pub a_pm: CoefficientEstimate,
    pub b_plus: CoefficientEstimate,
    pub b_minus: CoefficientEstimate,
    pub c: CoefficientEstimate,
    /// `[1, eps, eps^2]` coefficients of the mean area.
    pub area_poly: [f64; 3],
    /// Same for the mean busy period.
    pub busy_poly: [f64; 3],
    /// Same for the mean bit rate.
    pub bitrate_poly: [f64; 3],
}

impl ExpansionResult {
    pub fn assemble(q: &QueueParams, mean_p: f64, parts: &SecondOrderParts) -> Result<Self> {
        let c = coefficient_c(q, mean_p, parts)?;
        let get = |p: Option<CoefficientEstimate>, n| p.ok_or(Error::MissingPart(n));
        let a_plus = get(parts.a_plus, "a_plus")?;
        let a_minus = get(parts.a_minus, "a_minus")?;
        let a_pm = get(parts.a_pm, "a_pm")?;
        let b_plus = get(parts.b_plus, "b_plus")?;
        let b_minus = get(parts.b_minus, "b_minus")?;
        let s = closed_form_busy_stats(q);
        let (l, m) = (q.lambda(), q.mu());
        let first = first_order_area_term(q, mean_p);
        let area_poly = [s.e_a, first, -(a_plus.value + a_minus.value + a_pm.value)];
        let busy_poly = [s.e_b, -mean_p / (m - l).powi(2), b_minus.value - b_plus.value];
        let bitrate_poly = [1.0 - q.rho(), q.rho() * mean_p / m, c.value];
        Ok(Self { first_order_area: first, a_plus, a_minus, a_pm, b_plus, b_minus, c, area_poly, busy_poly, bitrate_poly })
    }

    pub fn a_sum(&self) -> CoefficientEstimate {
        sum_estimates(&[(1.0, self.a_plus), (1.0, self.a_minus), (1.0, self.a_pm)])
    }

    pub fn predicted_area(&self, eps: f64) -> f64 {
        poly(&self.area_poly, eps)
    }

    pub fn predicted_busy(&self, eps: f64) -> f64 {
        poly(&self.busy_poly, eps)
    }

    pub fn predicted_bitrate(&self, eps: f64) -> f64 {
        poly(&self.bitrate_poly, eps)
    }
}

fn poly(c: &[f64; 3], x: f64) -> f64 {
    c[0] + x * (c[1] + x * c[2])
}

/// Linear combination of estimates treated as independent.
pub fn sum_estimates(terms: &[(f64, CoefficientEstimate)]) -> CoefficientEstimate {
    let value = terms.iter().map(|(w, e)| w * e.value).sum();
    let var: f64 = terms.iter().map(|(w, e)| (w * e.std_error).powi(2)).sum();
    let n = terms.iter().map(|(_, e)| e.n_samples).sum();
    let method = if terms.iter().any(|(_, e)| e.method == Method::McJoint) {
        Method::McJoint
    } else if terms.iter().any(|(_, e)| e.method == Method::QuadratureHybrid) {
        Method::QuadratureHybrid
    } else {
        Method::ClosedForm
    };
    if method == Method::ClosedForm {
        CoefficientEstimate::closed_form(value)
    } else {
        CoefficientEstimate { value, std_error: var.sqrt(), n_samples: n, method }
    }
}

/// Signed coefficient of `eps` in the mean area, `-E[p](lambda+mu)/(mu-lambda)^3`.
pub fn first_order_area_term(q: &QueueParams, mean_p: f64) -> f64 {
    let (l, m) = (q.lambda(), q.mu());
    -mean_p * (l + m) / (m - l).powi(3)
}

/// Second-order coefficient of the mean bit rate from its five parts.
pub fn coefficient_c(q: &QueueParams, mean_p: f64, parts: &SecondOrderParts) -> Result<CoefficientEstimate> {
    let r = q.rho();
    let m = q.mu();
    let get = |p: Option<CoefficientEstimate>, n| p.ok_or(Error::MissingPart(n));
    let a_plus = get(parts.a_plus, "a_plus")?;
    let a_minus = get(parts.a_minus, "a_minus")?;
    let a_pm = get(parts.a_pm, "a_pm")?;
    let b_plus = get(parts.b_plus, "b_plus")?;
    let b_minus = get(parts.b_minus, "b_minus")?;
    let k = m * (1.0 - r).powi(2);
    let lead = CoefficientEstimate::closed_form(mean_p * mean_p * r * (1.0 + r) / (m * m * (1.0 - r)));
    Ok(sum_estimates(&[
        (1.0, lead),
        (k * (1.0 - r), a_plus),
        (k * (1.0 - r), a_minus),
        (k * (1.0 - r), a_pm),
        (k, b_minus),
        (-k, b_plus),
    ]))
}

/// `1 - rho + rho E[p] eps / mu + c eps^2`.
pub fn predicted_bitrate(q: &QueueParams, mean_p: f64, c: f64, eps: f64) -> f64 {
    1.0 - q.rho() + q.rho() * mean_p * eps / q.mu() + c * eps * eps
}

/// Closed-form fast and slow limit expressions `-rho E[p]^2 / mu^2` and
/// `-rho E[p^2] / mu^2` for the bit-rate gap coefficient.
pub fn psi_limits(q: &QueueParams, env: &MarkovEnv) -> (f64, f64) {
    let m = env.p_moments();
    let s = q.rho() / (q.mu() * q.mu());
    (-s * m.mean * m.mean, -s * m.mean_sq)
}

/// Both readings of the pair weight in the non-positive case.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dif1Estimate {
    /// Weight `B_1 - D'_j`.
    pub plain: CoefficientEstimate,
    /// Weight `B_1 - D'_j + mu / (mu - lambda)^2`.
    pub with_kappa: CoefficientEstimate,
}

impl Dif1Estimate {
    /// Whether the two readings differ by more than four combined errors.
    pub fn disagree(&self) -> bool {
        let d = self.plain.value - self.with_kappa.value;
        let s = (self.plain.std_error.powi(2) + self.with_kappa.std_error.powi(2)).sqrt();
        d.abs() > 4.0 * s
    }
}

struct Kernels {
    pp: CorrelationKernel,
    mm: CorrelationKernel,
    // E[p-(X(0)) p+(X(v))] and E[p+(X(0)) p-(X(v))]
    mp: CorrelationKernel,
    pm: CorrelationKernel,
    cov: CorrelationKernel,
}

impl Kernels {
    fn new(env: &MarkovEnv) -> Self {
        let (plus, minus) = (env.p_plus(), env.p_minus());
        Self {
            pp: CorrelationKernel::correlation(env, &plus, &plus),
            mm: CorrelationKernel::correlation(env, &minus, &minus),
            mp: CorrelationKernel::correlation(env, &minus, &plus),
            pm: CorrelationKernel::correlation(env, &plus, &minus),
            cov: CorrelationKernel::covariance(env),
        }
    }

    /// `int_0^t E[p-(X(d)) p+(X(s))] ds` for `0 <= d <= t`.
    fn cross_mass(&self, d: f64, t: f64) -> f64 {
        self.pm.lag_moments(d)[0] + self.mp.lag_moments(t - d)[0]
    }
}

/// Estimator context: queue, environment, seed family and worker pool.
pub struct Estimators<'p> {
    q: QueueParams,
    env: MarkovEnv,
    key: StreamKey,
    pool: &'p Pool,
    kernels: OnceLock<Kernels>,
    plus: Vec<f64>,
    minus: Vec<f64>,
}

/// Busy periods of one replication.
struct Skeleton {
    b: BusyPeriodPath,
    b1: Option<BusyPeriodPath>,
    dec: Option<Level1Decomposition>,
}

impl<'p> Estimators<'p> {
    pub fn new(q: QueueParams, env: MarkovEnv, key: StreamKey, pool: &'p Pool) -> Self {
        let plus = env.p_plus();
        let minus = env.p_minus();
        Self { q, env, key, pool, kernels: OnceLock::new(), plus, minus }
    }

    pub fn queue(&self) -> &QueueParams {
        &self.q
    }

    pub fn env(&self) -> &MarkovEnv {
        &self.env
    }

    pub fn key(&self) -> StreamKey {
        self.key
    }

    pub fn pool(&self) -> &Pool {
        self.pool
    }

    fn kernels(&self) -> &Kernels {
        self.kernels.get_or_init(|| Kernels::new(&self.env))
    }

    fn hybrid_kernels(&self) -> Result<&Kernels> {
        let k = self.kernels();
        if [&k.pp, &k.mm, &k.mp, &k.pm, &k.cov].iter().any(|c| c.truncated()) {
            return Err(Error::Precondition("environment mixes too slowly for the quadrature_hybrid tables; use mc_joint".into()));
        }
        Ok(k)
    }

    fn has_plus(&self) -> bool {
        self.env.max_p_plus() > 0.0
    }

    fn has_minus(&self) -> bool {
        self.env.max_p_minus() > 0.0
    }

    fn check_n(n: u64) -> Result<()> {
        if n < 2 {
            return Err(Error::Precondition(format!("need at least 2 replications, got {n}")));
        }
        Ok(())
    }

    fn run(&self, tag: &str, n: u64, scale: f64, method: Method, f: impl Fn(&mut ReplicationRng) -> f64 + Sync) -> Result<CoefficientEstimate> {
        Self::check_n(n)?;
        if method == Method::QuadratureHybrid {
            self.hybrid_kernels()?;
        }
        let key = self.key.child(tag);
        let m = self.pool.fold(n, Moments::new, |acc, i| {
            let mut rng = key.replication(i);
            acc.push(f(&mut rng));
        });
        Ok(CoefficientEstimate::from_moments(&m, scale, method))
    }

    fn skeleton(&self, rng: &mut ReplicationRng, second: bool, decompose: bool) -> Skeleton {
        let b = simulate_s_busy_period(&self.q, rng);
        let b1 = second.then(|| simulate_s_busy_period(&self.q, rng));
        let dec = decompose.then(|| decompose_level1(&b).expect("simulated path decomposes"));
        Skeleton { b, b1, dec }
    }

    fn path(&self, rng: &mut ReplicationRng, horizon: f64) -> EnvTrajectory {
        let mut path = EnvTrajectory::start(&self.env, &mut rng.env);
        path.extend_to(&self.env, horizon, &mut rng.env);
        path
    }

    fn horizon(sk: &Skeleton, a: &[f64]) -> f64 {
        let mut h = sk.b.duration() + sk.b1.as_ref().map_or(0.0, |b| b.duration());
        if let Some(dec) = &sk.dec {
            for (s, ai) in dec.sub_busy.iter().zip(a) {
                h = h.max(s.start + ai);
            }
        }
        h
    }

    // (int_0^b f, int_0^b 2 (b - v) f(v) F(v) dv) with F the running integral of f.
    fn path_functionals(path: &EnvTrajectory, f: &[f64], b: f64) -> (f64, f64) {
        let mut big = 0.0;
        let mut j = 0.0;
        path.for_each_piece(0.0, b, |lo, hi, x| {
            let v = f[x];
            if v != 0.0 {
                let l = hi - lo;
                let d = b - lo;
                j += 2.0 * v * (big * (d * l - 0.5 * l * l) + v * (0.5 * d * l * l - l * l * l / 3.0));
                big += v * l;
            }
        });
        (big, j)
    }

    fn pair_terms(&self, sample: &Skeleton, method: Method, path: Option<&EnvTrajectory>) -> [f64; 2] {
        // [int_0^B (B-v) r++(v) dv, int_0^B (B-v)^2 r++(v) dv]
        let b = sample.b.duration();
        match method {
            Method::QuadratureHybrid => {
                let m = self.kernels().pp.lag_moments(b);
                [m[1], m[2]]
            }
            _ => {
                let (big, j) = Self::path_functionals(path.unwrap(), &self.plus, b);
                [0.5 * big * big, j]
            }
        }
    }

    fn a_values(dec: &Level1Decomposition, conv: AiConvention) -> &[f64] {
        match conv {
            AiConvention::Literal => &dec.a_i,
            AiConvention::Alternate => &dec.a_i_alternate,
        }
    }

    fn require_method(method: Method) -> Result<()> {
        if method == Method::ClosedForm {
            return Err(Error::UnknownMethod("closed_form is not a sampling route".into()));
        }
        Ok(())
    }

    /// `a_+`: pairs of additional departures.
    pub fn a_plus(&self, n: u64, method: Method) -> Result<CoefficientEstimate> {
        Self::require_method(method)?;
        if !self.has_plus() {
            return Ok(CoefficientEstimate::closed_form(0.0));
        }
        let r = self.q.rho();
        let mu = self.q.mu();
        let (w1, w2) = (-r / (mu * (1.0 - r)), -(1.0 - r) / 2.0);
        self.run("a_plus", n, 1.0, method, |rng| {
            let sk = self.skeleton(rng, false, false);
            let path = (method == Method::McJoint).then(|| self.path(rng, sk.b.duration()));
            let [t1, t2] = self.pair_terms(&sk, method, path.as_ref());
            w1 * t1 + w2 * t2
        })
    }

    /// `a_-`: pairs of marked departures.
    pub fn a_minus(&self, n: u64, method: Method) -> Result<CoefficientEstimate> {
        Self::require_method(method)?;
        if !self.has_minus() {
            return Ok(CoefficientEstimate::closed_form(0.0));
        }
        let r = self.q.rho();
        let mu = self.q.mu();
        let kappa = self.q.kappa();
        let (w1, w2) = (-1.0 / (mu.powi(3) * (1.0 - r)), -1.0 / (mu * mu));
        self.run("a_minus", n, 1.0, method, |rng| {
            let sk = self.skeleton(rng, true, false);
            let (b, b1) = (sk.b.duration(), sk.b1.as_ref().unwrap());
            let (d, d1) = (sk.b.departures(), b1.departures());
            let (s1, s2) = match method {
                Method::QuadratureHybrid => {
                    let k = &self.kernels().mm;
                    let mut s1 = 0.0;
                    for j in 0..d.len() {
                        for i in 0..j {
                            s1 += k.value(d[j] - d[i]);
                        }
                    }
                    let mut s2 = 0.0;
                    for &di in d {
                        for &dj in d1 {
                            s2 += k.value(b - di + dj) * (b1.duration() - dj + kappa);
                        }
                    }
                    (s1, s2)
                }
                _ => {
                    let path = self.path(rng, b + b1.duration());
                    let x: Vec<f64> = d.iter().map(|&t| self.minus[path.state_at(t)]).collect();
                    let sx: f64 = x.iter().sum();
                    let sxx: f64 = x.iter().map(|v| v * v).sum();
                    let sy: f64 = d1.iter().map(|&t| self.minus[path.state_at(b + t)] * (b1.duration() - t + kappa)).sum();
                    (0.5 * (sx * sx - sxx), sx * sy)
                }
            };
            w1 * s1 + w2 * s2
        })
    }

    /// `a_+-`: one additional and one marked departure.
    pub fn a_pm(&self, n: u64, method: Method, conv: AiConvention) -> Result<CoefficientEstimate> {
        Self::require_method(method)?;
        if !(self.has_plus() && self.has_minus()) {
            return Ok(CoefficientEstimate::closed_form(0.0));
        }
        let mu = self.q.mu();
        let kappa = self.q.kappa();
        let kl = self.q.kappa_lambda();
        let tag = "a_pm".to_string();
        self.run(&tag, n, 1.0 / mu, method, |rng| {
            let sk = self.skeleton(rng, true, true);
            let (b, b1) = (sk.b.duration(), sk.b1.as_ref().unwrap());
            let bb = b1.duration();
            let d = sk.b.departures();
            let dec = sk.dec.as_ref().unwrap();
            let a = Self::a_values(dec, conv);
            match method {
                Method::QuadratureHybrid => {
                    let k = self.kernels();
                    let mut t1 = 0.0;
                    let mut t2 = 0.0;
                    for &di in d {
                        t1 += (kappa + b - di) * k.cross_mass(di, b);
                        let delta = b - di;
                        let tt = delta + bb;
                        let mt = k.mp.lag_moments(tt);
                        let md = k.mp.lag_moments(delta);
                        t2 += kl * mt[0] + mt[1] - md[1] - (bb + kl) * md[0];
                    }
                    let mut t3 = 0.0;
                    for (s, &ai) in dec.sub_busy.iter().zip(a) {
                        for &dk in &s.departures {
                            let before = k.pm.lag_moments(dk);
                            let after = k.mp.lag_moments(ai - dk);
                            t3 += (kl + ai) * before[0] - before[1] + kl * after[0] + after[1];
                        }
                    }
                    t1 + t2 - t3
                }
                _ => {
                    let path = self.path(rng, Self::horizon(&sk, a));
                    let x: Vec<f64> = d.iter().map(|&t| self.minus[path.state_at(t)]).collect();
                    let big = path.integrate(&self.plus, 0.0, b);
                    let t1: f64 = big * x.iter().zip(d).map(|(xi, di)| xi * (kappa + b - di)).sum::<f64>();
                    let t2 = x.iter().sum::<f64>() * path.integrate_linear(&self.plus, b, b + bb, b + bb + kl, -1.0);
                    let mut t3 = 0.0;
                    for (s, &ai) in dec.sub_busy.iter().zip(a) {
                        let marks: f64 = s.departures.iter().map(|&dk| self.minus[path.state_at(s.start + dk)]).sum();
                        if marks != 0.0 {
                            t3 += marks * path.integrate_linear(&self.plus, s.start, s.start + ai, kl + s.start + ai, -1.0);
                        }
                    }
                    t1 + t2 - t3
                }
            }
        })
    }

    /// `b_+`: additional departures in the busy-period expansion.
    pub fn b_plus(&self, n: u64, method: Method) -> Result<CoefficientEstimate> {
        Self::require_method(method)?;
        if !self.has_plus() {
            return Ok(CoefficientEstimate::closed_form(0.0));
        }
        let r = self.q.rho();
        let mu = self.q.mu();
        let mixed = self.has_minus();
        let w2 = -1.0 / (mu * mu * (1.0 - r));
        self.run("b_plus", n, 1.0, method, |rng| {
            let sk = self.skeleton(rng, false, mixed);
            let a: &[f64] = sk.dec.as_ref().map_or(&[], |d| &d.a_i);
            let path = (method == Method::McJoint).then(|| self.path(rng, Self::horizon(&sk, a)));
            let [t1, _] = self.pair_terms(&sk, method, path.as_ref());
            let mut w = 0.0;
            if let Some(dec) = &sk.dec {
                for (s, &ai) in dec.sub_busy.iter().zip(a) {
                    match method {
                        Method::QuadratureHybrid => {
                            let k = self.kernels();
                            for &dk in &s.departures {
                                w += k.cross_mass(dk, ai);
                            }
                        }
                        _ => {
                            let p = path.as_ref().unwrap();
                            let marks: f64 = s.departures.iter().map(|&dk| self.minus[p.state_at(s.start + dk)]).sum();
                            if marks != 0.0 {
                                w += marks * p.integrate(&self.plus, s.start, s.start + ai);
                            }
                        }
                    }
                }
            }
            -t1 / mu + w2 * w
        })
    }

    /// `b_-`: marked departures in the busy-period expansion.
    pub fn b_minus(&self, n: u64, method: Method) -> Result<CoefficientEstimate> {
        Self::require_method(method)?;
        if !self.has_minus() {
            return Ok(CoefficientEstimate::closed_form(0.0));
        }
        let r = self.q.rho();
        let mu = self.q.mu();
        let mixed = self.has_plus();
        let scale = 1.0 / (mu * mu * (1.0 - r));
        self.run("b_minus", n, scale, method, |rng| {
            let sk = self.skeleton(rng, true, false);
            let (b, b1) = (sk.b.duration(), sk.b1.as_ref().unwrap());
            let total = b + b1.duration();
            let (d, d1) = (sk.b.departures(), b1.departures());
            match method {
                Method::QuadratureHybrid => {
                    let k = self.kernels();
                    let mut s3 = 0.0;
                    if mixed {
                        for &di in d {
                            s3 += k.cross_mass(di, total);
                        }
                    }
                    let mut s4 = 0.0;
                    for &di in d {
                        for &dk in d1 {
                            s4 += k.mm.value(b + dk - di);
                        }
                    }
                    -s3 + s4 / mu
                }
                _ => {
                    let path = self.path(rng, total);
                    let sx: f64 = d.iter().map(|&t| self.minus[path.state_at(t)]).sum();
                    let sy: f64 = d1.iter().map(|&t| self.minus[path.state_at(b + t)]).sum();
                    let s3 = if mixed { sx * path.integrate(&self.plus, 0.0, total) } else { 0.0 };
                    -s3 + sx * sy / mu
                }
            }
        })
    }

    /// All five parts with one method.
    pub fn parts(&self, n: u64, method: Method) -> Result<SecondOrderParts> {
        Ok(SecondOrderParts {
            a_plus: Some(self.a_plus(n, method)?),
            a_minus: Some(self.a_minus(n, method)?),
            a_pm: Some(self.a_pm(n, method, AiConvention::Literal)?),
            b_plus: Some(self.b_plus(n, method)?),
            b_minus: Some(self.b_minus(n, method)?),
        })
    }

    /// Full expansion with every part estimated by `method`.
    pub fn expansion(&self, n: u64, method: Method) -> Result<ExpansionResult> {
        let parts = self.parts(n, method)?;
        ExpansionResult::assemble(&self.q, self.env.p_moments().mean, &parts)
    }

    /// Bit-rate gap coefficient when `p+ = 0`, with the covariance `C_p`
    /// evaluated analytically.
    pub fn dif1_rhs(&self, n: u64) -> Result<Dif1Estimate> {
        if self.has_plus() {
            return Err(Error::Precondition("dif1 requires p+ = 0".into()));
        }
        Self::check_n(n)?;
        let r = self.q.rho();
        let mu = self.q.mu();
        let kappa = self.q.kappa();
        if self.env.p_moments().variance() == 0.0 {
            let z = CoefficientEstimate::closed_form(0.0);
            return Ok(Dif1Estimate { plain: z, with_kappa: z });
        }
        let k = &self.hybrid_kernels()?.cov;
        let key = self.key.child("dif1");
        let (w1, w2) = (-(1.0 - r).powi(2) / (mu * mu), -(1.0 - r).powi(3) / mu);
        let (plain, kap) = self.pool.fold(
            n,
            || (Moments::new(), Moments::new()),
            |acc, i| {
                let mut rng = key.replication(i);
                let sk = self.skeleton(&mut rng, true, false);
                let (b, b1) = (sk.b.duration(), sk.b1.as_ref().unwrap());
                let (d, d1) = (sk.b.departures(), b1.departures());
                let mut s1 = 0.0;
                for j in 0..d.len() {
                    for i in 0..j {
                        s1 += k.value(d[j] - d[i]);
                    }
                }
                let (mut s2, mut s2k) = (0.0, 0.0);
                for &di in d {
                    for &dj in d1 {
                        let c = k.value(b - di + dj);
                        s2 += c * (b1.duration() - dj);
                        s2k += c * (b1.duration() - dj + kappa);
                    }
                }
                acc.0.push(w1 * s1 + w2 * s2);
                acc.1.push(w1 * s1 + w2 * s2k);
            },
        );
        Ok(Dif1Estimate {
            plain: CoefficientEstimate::from_moments(&plain, 1.0, Method::QuadratureHybrid),
            with_kappa: CoefficientEstimate::from_moments(&kap, 1.0, Method::QuadratureHybrid),
        })
    }

    /// Bit-rate gap coefficient when `p- = 0`.
    pub fn cheval2_rhs(&self, n: u64, method: Method) -> Result<CoefficientEstimate> {
        Self::require_method(method)?;
        if self.has_minus() {
            return Err(Error::Precondition("cheval2 requires p- = 0".into()));
        }
        let m = self.env.p_moments();
        if m.variance() == 0.0 {
            return Ok(CoefficientEstimate::closed_form(0.0));
        }
        let r = self.q.rho();
        let mu = self.q.mu();
        let lead = (1.0 - r).powi(3);
        let half = (1.0 - r) * mu / 2.0;
        let centered: Vec<f64> = self.env.p_values().iter().map(|v| v - m.mean).collect();
        self.run("cheval2", n, lead, method, |rng| {
            let sk = self.skeleton(rng, false, false);
            let b = sk.b.duration();
            match method {
                Method::QuadratureHybrid => {
                    let f = self.kernels().cov.lag_moments(b);
                    f[1] - half * f[2]
                }
                _ => {
                    let path = self.path(rng, b);
                    let (big, j) = Self::path_functionals(&path, &centered, b);
                    0.5 * big * big - half * j
                }
            }
        })
    }

    /// `E int_0^B (B - v) E[p+(X(0)) p+(X(v))] dv`, the second-order
    /// scale of the first-jump probabilities.
    pub fn plus_pair_mass(&self, n: u64, method: Method) -> Result<CoefficientEstimate> {
        Self::require_method(method)?;
        if !self.has_plus() {
            return Ok(CoefficientEstimate::closed_form(0.0));
        }
        self.run("plus_pair", n, 1.0, method, |rng| {
            let sk = self.skeleton(rng, false, false);
            let path = (method == Method::McJoint).then(|| self.path(rng, sk.b.duration()));
            self.pair_terms(&sk, method, path.as_ref())[0]
        })
    }
}

impl Estimators<'_> {
    /// `E sum_{i<j} E[p-(X(D_i)) p-(X(D_j))]` over standard departures.
    pub fn minus_pair_mass(&self, n: u64, method: Method) -> Result<CoefficientEstimate> {
        Self::require_method(method)?;
        if !self.has_minus() {
            return Ok(CoefficientEstimate::closed_form(0.0));
        }
        self.run("minus_pair", n, 1.0, method, |rng| {
            let sk = self.skeleton(rng, false, false);
            let d = sk.b.departures();
            match method {
                Method::QuadratureHybrid => {
                    let k = &self.kernels().mm;
                    let mut s = 0.0;
                    for j in 0..d.len() {
                        for i in 0..j {
                            s += k.value(d[j] - d[i]);
                        }
                    }
                    s
                }
                _ => {
                    let path = self.path(rng, sk.b.duration());
                    let x: Vec<f64> = d.iter().map(|&t| self.minus[path.state_at(t)]).collect();
                    let sx: f64 = x.iter().sum();
                    let sxx: f64 = x.iter().map(|v| v * v).sum();
                    0.5 * (sx * sx - sxx)
                }
            }
        })
    }
}

impl<'p> fmt::Debug for Estimators<'p> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Estimators").field("q", &self.q).field("key", &self.key).finish_non_exhaustive()
    }
}

impl Merge for (Moments, Moments) {
    fn merge(&mut self, other: Self) {
        self.0.merge(other.0);
        self.1.merge(other.1);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q() -> QueueParams {
        QueueParams::new(0.5, 1.0).unwrap()
    }

    #[test]
    fn method_tags_round_trip() {
        for m in [Method::McJoint, Method::QuadratureHybrid, Method::ClosedForm] {
            assert_eq!(Method::parse(m.tag()).unwrap(), m);
        }
        assert!(matches!(Method::parse("bogus"), Err(Error::UnknownMethod(_))));
    }

    #[test]
    fn first_order_term_values() {
        assert_eq!(first_order_area_term(&q(), 1.0), -12.0);
        assert_eq!(first_order_area_term(&q(), 0.0), 0.0);
        let f = |e: f64| crate::mm1::constant_p_oracle(&q(), 1.0, e).unwrap().0;
        let d = (f(2e-7) - f(1e-7)) / 1e-7;
        assert!((d - first_order_area_term(&q(), 1.0)).abs() < 1e-4);
    }

    #[test]
    fn c_from_exact_constant_parts() {
        // exact parts for p = 1: a+ = -32, b+ = -8, others 0
        let cf = CoefficientEstimate::closed_form;
        let parts = SecondOrderParts {
            a_plus: Some(cf(-32.0)),
            a_minus: Some(cf(0.0)),
            a_pm: Some(cf(0.0)),
            b_plus: Some(cf(-8.0)),
            b_minus: Some(cf(0.0)),
        };
        let c = coefficient_c(&q(), 1.0, &parts).unwrap();
        assert!((c.value + 0.5).abs() < 1e-12);
        assert_eq!(c.method, Method::ClosedForm);
        let r = ExpansionResult::assemble(&q(), 1.0, &parts).unwrap();
        assert_eq!(r.area_poly, [4.0, -12.0, 32.0]);
        assert_eq!(r.busy_poly, [2.0, -4.0, 8.0]);
        let missing = SecondOrderParts { b_minus: None, ..parts };
        assert!(matches!(coefficient_c(&q(), 1.0, &missing), Err(Error::MissingPart("b_minus"))));
    }

    #[test]
    fn predicted_bitrate_matches_constant_oracle() {
        let q = q();
        assert_eq!(predicted_bitrate(&q, 1.0, -0.5, 0.0), 0.5);
        assert!((predicted_bitrate(&q, 1.0, 0.0, 0.1) - 0.55).abs() < 1e-15);
        let exact = crate::mm1::constant_p_oracle(&q, 1.0, 0.01).unwrap().2;
        assert!((predicted_bitrate(&q, 1.0, -0.5, 0.01) - exact).abs() < 1e-5);
    }

    #[test]
    fn psi_limit_values() {
        let env = MarkovEnv::symmetric(1.0, [-1.0, 1.0]).unwrap();
        assert_eq!(psi_limits(&q(), &env), (0.0, -0.5));
        let env = MarkovEnv::constant(1.0).unwrap();
        let (f, s) = psi_limits(&q(), &env);
        assert_eq!(f, s);
        let env = MarkovEnv::symmetric(1.0, [0.0, 2.0]).unwrap();
        let (f, s) = psi_limits(&q(), &env);
        assert!(s <= f && (f + 0.5).abs() < 1e-15 && (s + 1.0).abs() < 1e-15);
    }

    #[test]
    fn structural_zeros_and_preconditions() {
        let pool = Pool::serial();
        let e = Estimators::new(q(), MarkovEnv::symmetric(1.0, [0.0, 2.0]).unwrap(), StreamKey::new(1), &pool);
        assert_eq!(e.a_minus(100, Method::McJoint).unwrap(), CoefficientEstimate::closed_form(0.0));
        assert_eq!(e.a_pm(100, Method::McJoint, AiConvention::Literal).unwrap().value, 0.0);
        assert_eq!(e.b_minus(100, Method::QuadratureHybrid).unwrap().std_error, 0.0);
        assert!(matches!(e.dif1_rhs(100), Err(Error::Precondition(_))));
        assert!(e.a_plus(100, Method::ClosedForm).is_err());
        let e = Estimators::new(q(), MarkovEnv::symmetric(1.0, [-1.0, 0.0]).unwrap(), StreamKey::new(1), &pool);
        assert!(matches!(e.cheval2_rhs(100, Method::McJoint), Err(Error::Precondition(_))));
        assert_eq!(e.a_plus(100, Method::McJoint).unwrap().method, Method::ClosedForm);
        let e = Estimators::new(q(), MarkovEnv::constant(0.0).unwrap(), StreamKey::new(1), &pool);
        let r = e.expansion(100, Method::McJoint).unwrap();
        assert_eq!(r.c, CoefficientEstimate::closed_form(0.0));
    }

    #[test]
    fn path_functionals_match_brute_force() {
        let path = EnvTrajectory::from_segments(vec![0.0, 0.7, 1.5, 2.0], vec![0, 1, 0, 1], 10.0).unwrap();
        let f = [0.3, 2.0];
        let b = 2.6;
        let (big, j) = Estimators::path_functionals(&path, &f, b);
        let n = 20_000;
        let h = b / n as f64;
        let (mut p, mut jj) = (0.0, 0.0);
        for k in 0..n {
            let v = (k as f64 + 0.5) * h;
            let fv = f[path.state_at(v)];
            jj += 2.0 * (b - v) * fv * (p + 0.5 * fv * h) * h;
            p += fv * h;
        }
        assert!((big - p).abs() < 4.0 * h);
        assert!((j - jj).abs() < 40.0 * h);
    }

    #[test]
    fn kernel_hybrid_equals_mc_on_frozen_constant() {
        // With one state both routes are deterministic functions of B.
        let pool = Pool::serial();
        let e = Estimators::new(q(), MarkovEnv::constant(1.0).unwrap(), StreamKey::new(3), &pool);
        let h = e.a_plus(2000, Method::QuadratureHybrid).unwrap();
        let m = e.a_plus(2000, Method::McJoint).unwrap();
        assert!((h.value - m.value).abs() < 1e-9 * h.value.abs());
    }
}
