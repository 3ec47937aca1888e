//! Closed-form M/M/1 busy-period analytics.

use crate::error::{Error, Result};

/// Arrival and service rates of a stable M/M/1 queue.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QueueParams {
    lambda: f64,
    mu: f64,
}

impl QueueParams {
    pub fn new(lambda: f64, mu: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
        }
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::Domain(format!("mu must be positive, got {mu}")));
        }
        if lambda >= mu {
            return Err(Error::Unstable(format!("rho = {} >= 1", lambda / mu)));
        }
        Ok(Self { lambda, mu })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn rho(&self) -> f64 {
        self.lambda / self.mu
    }

    /// Checks the stability margin `lambda + eps * max|p| < mu`.
    pub fn check_perturbation(&self, max_abs_p: f64, eps: f64) -> Result<()> {
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::Domain(format!("eps must be >= 0, got {eps}")));
        }
        if self.lambda + eps * max_abs_p < self.mu {
            Ok(())
        } else {
            Err(Error::Unstable(format!(
                "lambda + eps*max|p| = {} >= mu = {}",
                self.lambda + eps * max_abs_p,
                self.mu
            )))
        }
    }

    /// `mu / (mu - lambda)^2`, the mean busy-period area.
    pub fn kappa(&self) -> f64 {
        self.mu / (self.mu - self.lambda).powi(2)
    }

    /// `lambda / (mu - lambda)^2`, the mean excess area.
    pub fn kappa_lambda(&self) -> f64 {
        self.lambda / (self.mu - self.lambda).powi(2)
    }
}

/// Busy-period aggregates of the standard queue.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BusyStats {
    pub e_b: f64,
    pub e_b2: f64,
    pub e_b3: f64,
    pub e_a: f64,
    pub e_n: f64,
    pub e_nb: f64,
    pub e_d_sum: f64,
}

pub fn closed_form_busy_stats(q: &QueueParams) -> BusyStats {
    let (l, m, r) = (q.lambda, q.mu, q.rho());
    BusyStats {
        e_b: 1.0 / (m - l),
        e_b2: 2.0 / (m * m * (1.0 - r).powi(3)),
        e_b3: busy_moment(q, 3),
        e_a: m / (m - l).powi(2),
        e_n: 1.0 / (1.0 - r),
        e_nb: (1.0 + r) / (m * (1.0 - r).powi(3)),
        e_d_sum: m * m / (m - l).powi(3),
    }
}

/// Busy-period transform `E[exp(-s B)]`.
pub fn busy_lst(q: &QueueParams, s: f64) -> Result<f64> {
    if !(s >= 0.0) {
        return Err(Error::Domain(format!("transform argument must be >= 0, got {s}")));
    }
    let a = q.lambda + q.mu + s;
    // root of lambda b^2 - a b + mu = 0 in (0, 1], written without cancellation
    let disc = (a * a - 4.0 * q.lambda * q.mu).max(0.0);
    Ok(2.0 * q.mu / (a + disc.sqrt()))
}

/// Taylor coefficients of `E[exp(-s B)]` at `s = 0`, up to `s^order`.
pub fn busy_lst_taylor(q: &QueueParams, order: usize) -> Vec<f64> {
    let mut c = vec![1.0; order + 1];
    for k in 1..=order {
        let conv: f64 = (1..k).map(|i| c[i] * c[k - i]).sum();
        c[k] = (c[k - 1] - q.lambda * conv) / (q.lambda - q.mu);
    }
    c
}

/// `E[B^k]` from the transform coefficients.
pub fn busy_moment(q: &QueueParams, k: usize) -> f64 {
    let c = busy_lst_taylor(q, k);
    let fact: f64 = (1..=k).map(|i| i as f64).product();
    let sign = if k.is_multiple_of(2) { 1.0 } else { -1.0 };
    sign * fact * c[k]
}

/// Transform of `Z*` given that of `Z` and `E[Z]`.
pub fn size_biased_lst(phi: impl Fn(f64) -> f64, mean: f64, s: f64) -> f64 {
    if s == 0.0 {
        return 1.0;
    }
    (1.0 - phi(s)) / (s * mean)
}

const SERIES_TERMS: usize = 48;

/// Transform of the `order`-times size-biased busy period
/// (`B`, `B*`, `B**`, `B***`, ...).
///
/// Near the origin the closed form loses digits to cancellation, so it is
/// replaced by the power series, whose radius of convergence is the
/// distance `(sqrt(mu) - sqrt(lambda))^2` to the branch point.
#[derive(Clone, Debug)]
pub struct BusyTransform {
    q: QueueParams,
    order: usize,
    series: Vec<f64>,
    means: Vec<f64>,
    radius: f64,
}

impl BusyTransform {
    pub fn new(q: &QueueParams, order: usize) -> Self {
        let mut coeffs = busy_lst_taylor(q, SERIES_TERMS + order);
        let mut means = Vec::with_capacity(order);
        for _ in 0..order {
            let m = -coeffs[1];
            means.push(m);
            coeffs = coeffs[1..].iter().map(|c| -c / m).collect();
            coeffs[0] = 1.0;
        }
        coeffs.truncate(SERIES_TERMS);
        let radius = (q.mu.sqrt() - q.lambda.sqrt()).powi(2);
        Self { q: *q, order, series: coeffs, means, radius }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Mean of the transformed variable.
    pub fn mean(&self) -> f64 {
        -self.series[1]
    }

    pub fn eval(&self, s: f64) -> Result<f64> {
        if !(s >= 0.0) {
            return Err(Error::Domain(format!("transform argument must be >= 0, got {s}")));
        }
        if s < 0.1 * self.radius {
            return Ok(self.series.iter().rev().fold(0.0, |acc, c| acc * s + c));
        }
        let mut v = busy_lst(&self.q, s)?;
        for m in &self.means {
            v = (1.0 - v) / (s * m);
        }
        Ok(v)
    }
}

/// Small-`eps` limit of `(E d_eps - E d_hat) / eps^2` when `p >= 0` and
/// `C_p(x) = var_p * exp(-alpha x)`.
pub fn auxey_rhs(q: &QueueParams, alpha: f64, var_p: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Domain(format!("alpha must be positive, got {alpha}")));
    }
    let r = q.rho();
    let b2 = BusyTransform::new(q, 2).eval(alpha)?;
    let b3 = BusyTransform::new(q, 3).eval(alpha)?;
    Ok(var_p / (q.mu * q.mu) * (b2 - (1.0 + r) / (1.0 - r) * b3))
}

/// Exact `(E area, E busy, E bit rate)` when `p` is the constant `p0`.
pub fn constant_p_oracle(q: &QueueParams, p0: f64, eps: f64) -> Result<(f64, f64, f64)> {
    if !(eps >= 0.0) {
        return Err(Error::Domain(format!("eps must be >= 0, got {eps}")));
    }
    let s = q.mu + eps * p0;
    if !(q.lambda < s) {
        return Err(Error::Unstable(format!("service rate {s} <= lambda {}", q.lambda)));
    }
    Ok((s / (s - q.lambda).powi(2), 1.0 / (s - q.lambda), 1.0 - q.lambda / s))
}

/// `eps^2` Taylor coefficients of `constant_p_oracle` at `eps = 0`.
pub fn constant_p_taylor(q: &QueueParams, p0: f64) -> (f64, f64, f64) {
    let (l, m) = (q.lambda, q.mu);
    let d = m - l;
    let area = p0 * p0 * (1.0 / d.powi(3) + 3.0 * l / d.powi(4));
    (area, p0 * p0 / d.powi(3), -p0 * p0 * l / m.powi(3))
}

/// Bit rate of the queue whose service rate is frozen at `mu + eps E[p]`.
pub fn rsr_bitrate(q: &QueueParams, mean_p: f64, eps: f64) -> Result<f64> {
    Ok(constant_p_oracle(q, mean_p, eps)?.2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q() -> QueueParams {
        QueueParams::new(0.5, 1.0).unwrap()
    }

    #[test]
    fn constant_taylor_matches_differences() {
        let q = q();
        assert_eq!(constant_p_taylor(&q, 1.0), (32.0, 8.0, -0.5));
        let (a, b, r) = constant_p_taylor(&q, -0.7);
        let h = 1e-3;
        let f = |e: f64| constant_p_oracle(&QueueParams::new(0.5, 1.0 - 0.7 * e).unwrap(), 0.0, 0.0).unwrap();
        let (f0, fp, fm) = (f(0.0), f(h), f(-h));
        assert!(((fp.0 - 2.0 * f0.0 + fm.0) / (2.0 * h * h) - a).abs() < 1e-3 * a);
        assert!(((fp.1 - 2.0 * f0.1 + fm.1) / (2.0 * h * h) - b).abs() < 1e-3 * b);
        assert!(((fp.2 - 2.0 * f0.2 + fm.2) / (2.0 * h * h) - r).abs() < 1e-3 * r.abs());
    }

    #[test]
    fn params_validation() {
        assert!(matches!(QueueParams::new(1.0, 1.0), Err(Error::Unstable(_))));
        assert!(QueueParams::new(0.0, 1.0).is_err());
        assert!(QueueParams::new(0.5, f64::NAN).is_err());
        assert!(q().check_perturbation(1.0, 0.49).is_ok());
        assert!(q().check_perturbation(1.0, 0.5).is_err());
        assert!(q().check_perturbation(1.0, -0.1).is_err());
    }

    #[test]
    fn reference_moments() {
        let s = closed_form_busy_stats(&q());
        assert_eq!(s.e_b, 2.0);
        assert_eq!(s.e_a, 4.0);
        assert_eq!(s.e_b2, 16.0);
        assert_eq!(s.e_n, 2.0);
        assert_eq!(s.e_nb, 12.0);
        assert_eq!(s.e_d_sum, 8.0);
        // textbook third moment 6(1+rho) / (mu^3 (1-rho)^5)
        assert!((s.e_b3 - 288.0).abs() < 1e-9);
        let q2 = QueueParams::new(0.3, 1.7).unwrap();
        let r = q2.rho();
        let want = 6.0 * (1.0 + r) / (1.7f64.powi(3) * (1.0 - r).powi(5));
        assert!((busy_moment(&q2, 3) / want - 1.0).abs() < 1e-12);
    }

    #[test]
    fn transform_basics() {
        let q = q();
        assert_eq!(busy_lst(&q, 0.0).unwrap(), 1.0);
        assert!(busy_lst(&q, -1.0).is_err());
        let h = 1e-6;
        let d = (busy_lst(&q, h).unwrap() - busy_lst(&q, 0.0).unwrap()) / h;
        assert!((d + 2.0).abs() < 1e-5);
        let central = (busy_lst(&q, 2e-4).unwrap() - 2.0 * busy_lst(&q, 1e-4).unwrap() + 1.0) / 1e-8;
        assert!((central - 16.0).abs() < 5e-2);
    }

    #[test]
    fn transform_fixed_point_and_shape() {
        let q = q();
        let grid: Vec<f64> = (0..200).map(|i| 0.05 * i as f64).collect();
        let vals: Vec<f64> = grid.iter().map(|&s| busy_lst(&q, s).unwrap()).collect();
        for (&s, &b) in grid.iter().zip(&vals) {
            assert!((b * (q.lambda() + q.mu() + s - q.lambda() * b) - q.mu()).abs() < 1e-10);
        }
        for w in vals.windows(3) {
            assert!(w[1] < w[0]);
            assert!(w[1].ln() * 2.0 <= w[0].ln() + w[2].ln() + 1e-12);
        }
    }

    #[test]
    fn size_biased_exponential_is_itself() {
        let theta = 1.3;
        let phi = |s: f64| theta / (theta + s);
        for &s in &[0.1, 1.0, 7.0] {
            assert!((size_biased_lst(phi, 1.0 / theta, s) - phi(s)).abs() < 1e-14);
        }
        assert_eq!(size_biased_lst(phi, 1.0 / theta, 0.0), 1.0);
    }

    #[test]
    fn iterated_transforms() {
        let q = q();
        let b1 = BusyTransform::new(&q, 1);
        let b2 = BusyTransform::new(&q, 2);
        let b3 = BusyTransform::new(&q, 3);
        assert!((b1.mean() - 4.0).abs() < 1e-12);
        assert!((b2.mean() - 6.0).abs() < 1e-12);
        // E B*** = E B^4 / (4 E B^3)
        assert!((b3.mean() - busy_moment(&q, 4) / (4.0 * 288.0)).abs() < 1e-9);
        assert!((busy_moment(&q, 4) - 8448.0).abs() < 1e-7);
        // series and closed form agree where both are accurate
        let r = (1.0f64 - 0.5f64.sqrt()).powi(2);
        for t in [&b1, &b2, &b3] {
            let s = 0.1 * r;
            let series = t.series.iter().rev().fold(0.0, |acc, c| acc * s + c);
            let mut direct = busy_lst(&q, s).unwrap();
            for m in &t.means {
                direct = (1.0 - direct) / (s * m);
            }
            assert!((series - direct).abs() < 1e-10);
        }
        // direct composition of the generic helper
        let s = 0.7;
        let z1 = |x: f64| size_biased_lst(|y| busy_lst(&q, y).unwrap(), 2.0, x);
        assert!((b1.eval(s).unwrap() - z1(s)).abs() < 1e-14);
        let z2 = |x: f64| size_biased_lst(z1, 4.0, x);
        assert!((b2.eval(s).unwrap() - z2(s)).abs() < 1e-13);
    }

    #[test]
    fn auxey_limits_and_monotonicity() {
        let q = q();
        assert_eq!(auxey_rhs(&q, 1.0, 0.0).unwrap(), 0.0);
        assert!(auxey_rhs(&q, 0.0, 1.0).is_err());
        assert!((auxey_rhs(&q, 1e-6, 1.0).unwrap() + 2.0).abs() < 1e-3);
        assert!(auxey_rhs(&q, 1e6, 1.0).unwrap().abs() < 1e-4);
        let mut prev = f64::NEG_INFINITY;
        for i in 0..60 {
            let a = 1e-3 * 1.3f64.powi(i);
            let v = auxey_rhs(&q, a, 1.0).unwrap();
            assert!(v > prev && v < 0.0);
            prev = v;
        }
        assert!((auxey_rhs(&q, 2.0, 1.0).unwrap() + 0.121155).abs() < 1e-5);
    }

    #[test]
    fn constant_p_oracle_values() {
        let q = q();
        let s = closed_form_busy_stats(&q);
        let (a, b, d) = constant_p_oracle(&q, 1.0, 0.0).unwrap();
        assert_eq!((a, b, d), (s.e_a, s.e_b, 0.5));
        let (a, _, _) = constant_p_oracle(&q, 1.0, 0.1).unwrap();
        assert!((a - 1.1 / 0.36).abs() < 1e-12);
        assert!(constant_p_oracle(&q, -1.0, 0.6).is_err());
        // second-order Taylor coefficient of the area by finite differences
        // a negative shift is the mirrored perturbation
        let f = |e: f64| {
            if e >= 0.0 {
                constant_p_oracle(&q, 1.0, e).unwrap().0
            } else {
                constant_p_oracle(&q, -1.0, -e).unwrap().0
            }
        };
        let h = 1e-3;
        let c2 = (f(h) - 2.0 * f(0.0) + f(-h)) / (2.0 * h * h);
        assert!((c2 - 32.0).abs() < 1e-3);
        let c1 = (f(1e-6) - f(-1e-6)) / 2e-6;
        assert!((c1 + 12.0).abs() < 1e-6 * 12.0);
    }

    #[test]
    fn rsr_values() {
        let q = q();
        assert_eq!(rsr_bitrate(&q, 3.0, 0.0).unwrap(), 0.5);
        assert!((rsr_bitrate(&q, 1.0, 0.1).unwrap() - (1.0 - 0.5 / 1.1)).abs() < 1e-15);
        assert_eq!(rsr_bitrate(&q, 0.0, 0.3).unwrap(), 0.5);
    }
}
