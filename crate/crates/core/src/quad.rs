//! Adaptive Gauss–Kronrod (7/15) quadrature for small vector integrands.

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];

// Gauss weights for the odd-indexed Kronrod nodes 1, 3, 5 and the centre.
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

const MAX_INTERVALS: usize = 500;

/// One 15-point rule on `[a, b]`: Kronrod estimate and per-component error.
pub fn gk15<const N: usize>(f: &mut impl FnMut(f64) -> [f64; N], a: f64, b: f64) -> ([f64; N], [f64; N]) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = [0.0; N];
    let mut g = [0.0; N];
    for n in 0..N {
        k[n] = WGK[7] * fc[n];
        g[n] = WG[3] * fc[n];
    }
    for j in 0..7 {
        let dx = h * XGK[j];
        let f1 = f(c - dx);
        let f2 = f(c + dx);
        for n in 0..N {
            let s = f1[n] + f2[n];
            k[n] += WGK[j] * s;
            if j % 2 == 1 {
                g[n] += WG[j / 2] * s;
            }
        }
    }
    let mut err = [0.0; N];
    for n in 0..N {
        k[n] *= h;
        g[n] *= h;
        err[n] = (k[n] - g[n]).abs();
    }
    (k, err)
}

fn max_err<const N: usize>(e: &[f64; N]) -> f64 {
    e.iter().fold(0.0, |m, &x| m.max(x))
}

/// Globally adaptive integration of `f` over `[a, b]` until the summed error
/// estimate of every component is below `abs_tol`.
///
/// Returns the integral and the final error estimate (max over components).
pub fn integrate<const N: usize>(
    mut f: impl FnMut(f64) -> [f64; N],
    a: f64,
    b: f64,
    abs_tol: f64,
) -> ([f64; N], f64) {
    if b <= a {
        return ([0.0; N], 0.0);
    }
    let (v, e) = gk15(&mut f, a, b);
    let mut parts = vec![(a, b, v, e)];
    loop {
        let mut total_err = [0.0; N];
        for p in &parts {
            for n in 0..N {
                total_err[n] += p.3[n];
            }
        }
        if max_err(&total_err) <= abs_tol || parts.len() >= MAX_INTERVALS {
            let mut sum = [0.0; N];
            for p in &parts {
                for n in 0..N {
                    sum[n] += p.2[n];
                }
            }
            return (sum, max_err(&total_err));
        }
        let worst = parts
            .iter()
            .enumerate()
            .max_by(|x, y| max_err(&x.1 .3).total_cmp(&max_err(&y.1 .3)))
            .map(|(i, _)| i)
            .unwrap();
        let (lo, hi, _, _) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            // Interval is at machine resolution; keep it as is.
            let (v, _) = gk15(&mut f, lo, hi);
            parts.push((lo, hi, v, [0.0; N]));
            continue;
        }
        let (v1, e1) = gk15(&mut f, lo, mid);
        let (v2, e2) = gk15(&mut f, mid, hi);
        parts.push((lo, mid, v1, e1));
        parts.push((mid, hi, v2, e2));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_are_exact() {
        let (v, e) = integrate(|x| [x.powi(5), 1.0], 0.0, 2.0, 1e-12);
        assert!((v[0] - 64.0 / 6.0).abs() < 1e-12);
        assert!((v[1] - 2.0).abs() < 1e-14);
        assert!(e < 1e-12);
    }

    #[test]
    fn smooth_and_peaked_integrands() {
        let (v, _) = integrate(|x| [(-x).exp()], 0.0, 30.0, 1e-12);
        assert!((v[0] - (1.0 - (-30f64).exp())).abs() < 1e-11);
        let (v, _) = integrate(|x| [1.0 / (1e-4 + x * x)], -1.0, 1.0, 1e-9);
        let exact = 2.0 * (1.0f64 / 1e-2).atan() / 1e-2;
        assert!((v[0] - exact).abs() < 1e-7);
    }

    #[test]
    fn empty_interval() {
        assert_eq!(integrate(|_| [1.0], 1.0, 1.0, 1e-9).0, [0.0]);
    }
}
