//! Accumulators, least-squares maps and the two-sample Kolmogorov–Smirnov test.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }

    pub fn merge(&mut self, other: &Self) {
        self.add(other.sum);
        self.add(other.carry);
    }
}

/// Merge of per-block partial results. Must be associative for the
/// block-parallel runner to be meaningful.
pub trait Merge {
    fn merge(&mut self, other: Self);
}

/// Scalar `(count, sum, sum of squares)` accumulator.
#[derive(Clone, Copy, Debug, Default)]
pub struct Moments {
    n: u64,
    sum: CompensatedSum,
    sum_sq: CompensatedSum,
}

impl Moments {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum.add(x);
        self.sum_sq.add(x * x);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            return f64::NAN;
        }
        self.sum.value() / self.n as f64
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        let m = self.sum.value() / n;
        ((self.sum_sq.value() - n * m * m) / (n - 1.0)).max(0.0)
    }

    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            return f64::NAN;
        }
        (self.variance() / self.n as f64).sqrt()
    }
}

impl Merge for Moments {
    fn merge(&mut self, other: Self) {
        self.n += other.n;
        self.sum.merge(&other.sum);
        self.sum_sq.merge(&other.sum_sq);
    }
}

/// Vector accumulator carrying all cross products, for delta-method
/// standard errors of functions of several means.
#[derive(Clone, Debug)]
pub struct MultiMoments {
    n: u64,
    sums: Vec<CompensatedSum>,
    cross: Vec<CompensatedSum>,
}

impl MultiMoments {
    pub fn new(dim: usize) -> Self {
        Self {
            n: 0,
            sums: vec![CompensatedSum::new(); dim],
            cross: vec![CompensatedSum::new(); dim * (dim + 1) / 2],
        }
    }

    pub fn dim(&self) -> usize {
        self.sums.len()
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn push(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.dim());
        self.n += 1;
        let mut k = 0;
        for i in 0..x.len() {
            self.sums[i].add(x[i]);
            for j in i..x.len() {
                self.cross[k].add(x[i] * x[j]);
                k += 1;
            }
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.sums.iter().map(|s| s.value() / n).collect()
    }

    /// Covariance matrix of the vector of sample means.
    pub fn cov_of_mean(&self) -> DMatrix<f64> {
        let d = self.dim();
        let n = self.n as f64;
        let m = self.mean();
        let mut c = DMatrix::zeros(d, d);
        if self.n < 2 {
            return c;
        }
        let mut k = 0;
        for i in 0..d {
            for j in i..d {
                let v = (self.cross[k].value() - n * m[i] * m[j]) / (n - 1.0) / n;
                c[(i, j)] = v;
                c[(j, i)] = v;
                k += 1;
            }
        }
        c
    }
}

impl Merge for MultiMoments {
    fn merge(&mut self, other: Self) {
        self.n += other.n;
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            a.merge(b);
        }
        for (a, b) in self.cross.iter_mut().zip(&other.cross) {
            a.merge(b);
        }
    }
}

/// Weighted least squares as a fixed linear map `beta = M y`.
///
/// `design[k]` is the regressor row for observation `k`.
#[derive(Clone, Debug)]
pub struct LeastSquaresMap {
    map: DMatrix<f64>,
}

impl LeastSquaresMap {
    pub fn new(design: &[Vec<f64>], weights: Option<&[f64]>) -> Result<Self> {
        let k = design.len();
        let p = design.first().map(|r| r.len()).unwrap_or(0);
        if k < p || p == 0 {
            return Err(Error::Fit(format!("{k} observations for {p} parameters")));
        }
        let x = DMatrix::from_fn(k, p, |i, j| design[i][j]);
        let w = DVector::from_fn(k, |i, _| weights.map_or(1.0, |w| w[i]));
        if w.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Fit("non-positive or non-finite weight".into()));
        }
        let xtw = x.transpose() * DMatrix::from_diagonal(&w);
        let normal = &xtw * &x;
        let inv = normal
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Fit("rank-deficient design".into()))?;
        // Reject numerically singular designs, not just exactly singular ones.
        let resid = (&inv * &normal - DMatrix::identity(p, p)).abs().max();
        if !resid.is_finite() || resid > 1e-6 {
            return Err(Error::Fit("rank-deficient design".into()));
        }
        Ok(Self { map: inv * xtw })
    }

    /// Polynomial design `[eps^lo, ..., eps^hi]`.
    pub fn polynomial(eps: &[f64], lo: u32, hi: u32, weights: Option<&[f64]>) -> Result<Self> {
        let design: Vec<Vec<f64>> = eps
            .iter()
            .map(|&e| (lo..=hi).map(|k| e.powi(k as i32)).collect())
            .collect();
        Self::new(&design, weights)
    }

    pub fn params(&self) -> usize {
        self.map.nrows()
    }

    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        let y = DVector::from_column_slice(y);
        (&self.map * y).iter().copied().collect()
    }

    /// Covariance of the fitted parameters given the covariance of `y`.
    pub fn propagate(&self, cov_y: &DMatrix<f64>) -> DMatrix<f64> {
        &self.map * cov_y * self.map.transpose()
    }
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic critical value of the two-sample KS statistic at level `alpha`.
pub fn ks_critical_value(alpha: f64, n: usize, m: usize) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    let (n, m) = (n as f64, m as f64);
    c * ((n + m) / (n * m)).sqrt()
}

/// Asymptotic p-value of a two-sample KS statistic.
pub fn ks_p_value(d: f64, n: usize, m: usize) -> f64 {
    let (n, m) = (n as f64, m as f64);
    let en = (n * m / (n + m)).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

pub fn z_score(estimate: f64, target: f64, std_error: f64) -> f64 {
    if std_error == 0.0 {
        if estimate == target {
            0.0
        } else {
            f64::INFINITY.copysign(estimate - target)
        }
    } else {
        (estimate - target) / std_error
    }
}

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;
