//! Config-driven experiment driver.
//!
//! Each experiment turns a validated config into CSV tables and a list of
//! gates. Random streams derive from the config seed and the experiment
//! name only, so outputs do not depend on the worker count.

mod config;
mod report;

pub use config::{
    EnvironmentSection, ExperimentConfig, GateSection, QueueSection, SpecialSection, ValidatedConfig, DEFAULT_ALPHAS,
    DEFAULT_EPSILONS, DEFAULT_JUMP_EPSILONS,
};
pub use report::{num, Gate, Report, Table};

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::env::MarkovEnv;
use crate::error::{Error, Result};
use crate::expansion::{
    first_order_area_term, psi_limits, sum_estimates, AiConvention, CoefficientEstimate, Estimators, ExpansionResult, JumpKind,
    Method, Quantity,
};
use crate::mm1::{auxey_rhs, closed_form_busy_stats, constant_p_taylor, QueueParams};
use crate::parallel::Pool;
use crate::rng::StreamKey;
use crate::sim::{simulate_s_busy_period, CoupledStreams, TraceWriter};
use crate::stats::{MultiMoments, Z95};

/// Replications written to a trace file.
pub const TRACE_REPLICATIONS: u64 = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    ValidateBaseline,
    Coeffs,
    EpsSweep,
    FastSlow,
    SpecialCases,
}

impl Experiment {
    pub const ALL: [Self; 5] = [Self::ValidateBaseline, Self::Coeffs, Self::EpsSweep, Self::FastSlow, Self::SpecialCases];

    pub fn tag(self) -> &'static str {
        match self {
            Self::ValidateBaseline => "validate-baseline",
            Self::Coeffs => "coeffs",
            Self::EpsSweep => "eps-sweep",
            Self::FastSlow => "fast-slow",
            Self::SpecialCases => "special-cases",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|e| e.tag() == s).ok_or_else(|| Error::Config(format!("unknown experiment {s}")))
    }
}

/// Settings that do not change numerics.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub workers: usize,
    pub trace: Option<PathBuf>,
}

/// Header comment of every table.
pub fn header_comment(exp: Experiment, cfg: &ValidatedConfig) -> String {
    let name = cfg.raw.experiment.as_deref().unwrap_or(exp.tag());
    format!(
        "pslab {} experiment={} config_sha256={} seed={} replications={}",
        crate::VERSION,
        name.replace([',', '\n'], "_"),
        cfg.sha256,
        cfg.seed(),
        cfg.replications()
    )
}

/// Runs `exp` and returns its report without writing anything.
pub fn run(exp: Experiment, cfg: &ValidatedConfig, pool: &Pool) -> Result<Report> {
    match exp {
        Experiment::ValidateBaseline => validate_baseline(cfg, pool),
        Experiment::Coeffs => coeffs(cfg, pool),
        Experiment::EpsSweep => eps_sweep(cfg, pool),
        Experiment::FastSlow => fast_slow(cfg, pool),
        Experiment::SpecialCases => special_cases(cfg, pool),
    }
}

/// Runs `exp`, writes its tables and optional trace, and returns the report
/// with the written paths.
pub fn run_and_write(exp: Experiment, cfg: &ValidatedConfig, opts: &RunOptions) -> Result<(Report, Vec<PathBuf>)> {
    let pool = Pool::new(opts.workers);
    let report = run(exp, cfg, &pool)?;
    let out = opts
        .out
        .clone()
        .or_else(|| cfg.raw.output_path.clone())
        .unwrap_or_else(|| PathBuf::from(format!("{}.csv", exp.tag())));
    let comment = header_comment(exp, cfg);
    let mut paths = Vec::new();
    for t in &report.tables {
        paths.push(t.write(&out, &comment)?);
    }
    if let Some(trace) = &opts.trace {
        write_trace(exp, cfg, trace)?;
        paths.push(trace.clone());
    }
    Ok((report, paths))
}

fn key(cfg: &ValidatedConfig, exp: Experiment) -> StreamKey {
    StreamKey::new(cfg.seed()).child(exp.tag())
}

fn estimators<'p>(cfg: &ValidatedConfig, exp: Experiment, env: MarkovEnv, pool: &'p Pool) -> Estimators<'p> {
    Estimators::new(cfg.queue, env, key(cfg, exp), pool)
}

/// Event trace of the first replications: standard busy periods for the
/// baseline, the coupled replay at the largest `eps` otherwise.
pub fn write_trace(exp: Experiment, cfg: &ValidatedConfig, path: &Path) -> Result<()> {
    let mut w = TraceWriter::new(BufWriter::new(File::create(path)?))?;
    let n = cfg.replications().min(TRACE_REPLICATIONS);
    if exp == Experiment::ValidateBaseline {
        let k = key(cfg, exp);
        for i in 0..n {
            w.set_replication(i);
            let mut rng = k.replication(i);
            w.write_path(&simulate_s_busy_period(&cfg.queue, &mut rng))?;
        }
    } else {
        let k = key(cfg, exp).child("sweep");
        let eps = *cfg.epsilons.last().unwrap();
        for i in 0..n {
            w.set_replication(i);
            let mut s = CoupledStreams::new(&cfg.queue, &cfg.env, eps, k.replication(i))?;
            s.replay(eps, &mut w);
        }
    }
    w.finish()?;
    Ok(())
}

/// Standard-queue moment suite against the closed forms.
pub fn validate_baseline(cfg: &ValidatedConfig, pool: &Pool) -> Result<Report> {
    let q = cfg.queue;
    let k = key(cfg, Experiment::ValidateBaseline);
    let m = pool.fold(
        cfg.replications(),
        || MultiMoments::new(6),
        |acc, i| {
            let mut rng = k.replication(i);
            let p = simulate_s_busy_period(&q, &mut rng);
            let b = p.duration();
            let n = p.n_served() as f64;
            let d: f64 = p.departures().iter().sum();
            acc.push(&[b, p.area(), n, b * b, d, n * b]);
        },
    );
    let s = closed_form_busy_stats(&q);
    let names = ["E(B)", "E(A)", "E(N)", "E(B^2)", "E(sum D)", "E(NB)"];
    let exact = [s.e_b, s.e_a, s.e_n, s.e_b2, s.e_d_sum, s.e_nb];
    let mean = m.mean();
    let cov = m.cov_of_mean();
    let mut t = Table::new("", &["statistic", "closed_form", "estimate", "std_error", "z"]);
    let mut report = Report::default();
    for i in 0..6 {
        let se = cov[(i, i)].max(0.0).sqrt();
        let z = crate::stats::z_score(mean[i], exact[i], se);
        t.push(vec![names[i].into(), num(exact[i]), num(mean[i]), num(se), num(z)]);
        report.gates.push(Gate::z(format!("baseline.{}", names[i]), mean[i], se, exact[i], 0.0, cfg.raw.gates.z));
        report.notes.push(format!("{:<9} closed {:>10.6} estimate {:>10.6} se {:.2e} z {:+.2}", names[i], exact[i], mean[i], se, z));
    }
    report.tables.push(t);
    Ok(report)
}

use crate::sim::Area as _;

fn coefficient_row(t: &mut Table, name: &str, e: &CoefficientEstimate) {
    t.push(vec![name.into(), num(e.value), num(e.std_error), e.n_samples.to_string(), e.method.tag().into()]);
}

/// Expansion coefficients of one route, with the alternate `A_i` reading.
pub struct CoefficientRun {
    pub method: Method,
    pub result: ExpansionResult,
    pub a_pm_alternate: CoefficientEstimate,
}

pub fn coefficient_runs(cfg: &ValidatedConfig, pool: &Pool) -> Result<Vec<CoefficientRun>> {
    let est = estimators(cfg, Experiment::Coeffs, cfg.env.clone(), pool);
    let n = cfg.replications();
    cfg.methods
        .iter()
        .map(|&m| {
            let result = est.expansion(n, m)?;
            let a_pm_alternate = est.a_pm(n, m, AiConvention::Alternate)?;
            Ok(CoefficientRun { method: m, result, a_pm_alternate })
        })
        .collect()
}

pub fn coeffs(cfg: &ValidatedConfig, pool: &Pool) -> Result<Report> {
    let runs = coefficient_runs(cfg, pool)?;
    let g = &cfg.raw.gates;
    let mut t = Table::new("", &["coefficient", "value", "std_error", "n_samples", "method"]);
    let mut report = Report::default();
    let pm = cfg.env.p_moments();
    for run in &runs {
        let r = &run.result;
        let tag = run.method.tag();
        let area2 = sum_estimates(&[(-1.0, r.a_sum())]);
        let busy2 = sum_estimates(&[(1.0, r.b_minus), (-1.0, r.b_plus)]);
        let rows = [
            ("first_order_area", CoefficientEstimate::closed_form(r.first_order_area)),
            ("a_plus", r.a_plus),
            ("a_minus", r.a_minus),
            ("a_pm", r.a_pm),
            ("a_pm_alternate", run.a_pm_alternate),
            ("b_plus", r.b_plus),
            ("b_minus", r.b_minus),
            ("c", r.c),
            ("area_eps2", area2),
            ("busy_eps2", busy2),
        ];
        for (name, e) in &rows {
            coefficient_row(&mut t, name, e);
            report.notes.push(format!("[{tag}] {name:<16} {:>12.6} ± {:.2e}", e.value, e.std_error));
        }
        if pm.variance() == 0.0 {
            let (ta, tb, tc) = constant_p_taylor(&cfg.queue, pm.mean);
            report.gates.push(Gate::z(format!("coeffs.{tag}.area_eps2"), area2.value, area2.std_error, ta, 0.0, g.z));
            report.gates.push(Gate::z(format!("coeffs.{tag}.busy_eps2"), busy2.value, busy2.std_error, tb, 0.0, g.z));
            report.gates.push(Gate::z(format!("coeffs.{tag}.c"), r.c.value, r.c.std_error, tc, 0.0, g.z));
        }
        if pm.mean_plus == 0.0 || pm.mean_minus == 0.0 {
            report.gates.push(Gate::check(format!("coeffs.{tag}.a_pm_zero"), r.a_pm.value, 0.0, r.a_pm.value == 0.0, "constant sign"));
        }
    }
    if let [a, b] = runs.as_slice() {
        let pairs = [
            ("a_plus", a.result.a_plus, b.result.a_plus),
            ("a_minus", a.result.a_minus, b.result.a_minus),
            ("a_pm", a.result.a_pm, b.result.a_pm),
            ("b_plus", a.result.b_plus, b.result.b_plus),
            ("b_minus", a.result.b_minus, b.result.b_minus),
        ];
        for (name, x, y) in pairs {
            report.gates.push(Gate::z(format!("coeffs.agreement.{name}"), x.value, x.std_error, y.value, y.std_error, g.z));
        }
    }
    report.tables.push(t);
    Ok(report)
}

/// Sweep with its expansion and fits.
pub fn eps_sweep(cfg: &ValidatedConfig, pool: &Pool) -> Result<Report> {
    let q = cfg.queue;
    let n = cfg.replications();
    let g = &cfg.raw.gates;
    let est = estimators(cfg, Experiment::EpsSweep, cfg.env.clone(), pool);
    let sweep = est.sweep(&cfg.epsilons, n)?;
    let exp = est.expansion(n, Method::QuadratureHybrid)?;
    let pm = cfg.env.p_moments();
    let mut report = Report::default();

    let mut t = Table::new(
        "",
        &["epsilon", "e_area", "se_area", "e_busy", "se_busy", "e_bitrate", "se_bitrate", "rsr_bitrate", "expansion_bitrate"],
    );
    let rows = sweep.rows(exp.c.value)?;
    for r in &rows {
        t.push(
            [r.epsilon, r.e_area, r.se_area, r.e_busy, r.se_busy, r.e_bitrate, r.se_bitrate, r.rsr_bitrate, r.expansion_bitrate]
                .iter()
                .map(|&v| num(v))
                .collect(),
        );
    }
    let s = closed_form_busy_stats(&q);
    let r0 = &rows[0];
    report.gates.push(Gate::z("sweep.eps0.e_area", r0.e_area, r0.se_area, s.e_a, 0.0, g.z));
    report.gates.push(Gate::z("sweep.eps0.e_busy", r0.e_busy, r0.se_busy, s.e_b, 0.0, g.z));
    report.tables.push(t);

    let mut f = Table::new("fits", &["quantity", "power", "value", "std_error", "ci_lo", "ci_hi", "reference", "reference_se"]);
    let first = [
        first_order_area_term(&q, pm.mean),
        -pm.mean / (q.mu() - q.lambda()).powi(2),
        q.rho() * pm.mean / q.mu(),
    ];
    let busy2 = sum_estimates(&[(1.0, exp.b_minus), (-1.0, exp.b_plus)]);
    let second = [sum_estimates(&[(-1.0, exp.a_sum())]), busy2, exp.c];
    for (i, (which, name)) in [(Quantity::Area, "area"), (Quantity::Busy, "busy"), (Quantity::Bitrate, "bitrate")].into_iter().enumerate() {
        let fit = match sweep.fit(which, 1, 3) {
            Ok(fit) => fit,
            Err(e) => {
                report.gates.push(Gate::check(format!("sweep.{name}.fit"), f64::NAN, f64::NAN, false, e.to_string()));
                continue;
            }
        };
        for power in 1..=3u32 {
            let (v, se) = fit.coefficient(power).unwrap();
            let (rv, rse) = match power {
                1 => (first[i], 0.0),
                2 => (second[i].value, second[i].std_error),
                _ => (f64::NAN, f64::NAN),
            };
            f.push(vec![name.into(), power.to_string(), num(v), num(se), num(v - Z95 * se), num(v + Z95 * se), num(rv), num(rse)]);
            if power <= 2 {
                report.gates.push(Gate::z(format!("sweep.{name}.eps{power}"), v, se, rv, rse, g.ci_z));
                report.notes.push(format!("{name} eps^{power}: fit {v:.5} ± {se:.2e}, reference {rv:.5} ± {rse:.2e}"));
            }
        }
    }
    if pm.variance() > 0.0 {
        match sweep.residual_loglog_slope() {
            Ok((slope, se)) => {
                f.push(vec![
                    "residual_loglog".into(),
                    "slope".into(),
                    num(slope),
                    num(se),
                    num(slope - Z95 * se),
                    num(slope + Z95 * se),
                    num(g.loglog_target),
                    num(0.0),
                ]);
                report.gates.push(Gate::absolute("sweep.residual_loglog_slope", slope, g.loglog_target, g.loglog_tol));
                report.notes.push(format!("residual log-log slope {slope:.3} ± {se:.3}"));
            }
            Err(e) => report.gates.push(Gate::check("sweep.residual_loglog_slope", f64::NAN, g.loglog_target, false, e.to_string())),
        }
    }
    report.tables.push(f);
    Ok(report)
}

/// `Psi(alpha)` per time scale, with the two limits.
pub fn fast_slow(cfg: &ValidatedConfig, pool: &Pool) -> Result<Report> {
    let q = cfg.queue;
    let n = cfg.replications();
    let g = &cfg.raw.gates;
    let est = estimators(cfg, Experiment::FastSlow, cfg.env.clone(), pool);
    let (fast, slow) = psi_limits(&q, &cfg.env);
    let pm = cfg.env.p_moments();
    let c_rsr = -q.rho() * pm.mean * pm.mean / (q.mu() * q.mu());
    let mut t = Table::new("", &["kind", "alpha", "value", "std_error", "n_samples"]);
    let mut report = Report::default();
    let mut estimates = Vec::new();
    for &a in &cfg.alphas {
        let psi = est.estimate_psi(a, &cfg.epsilons, n)?;
        t.push(vec!["psi".into(), num(a), num(psi.value), num(psi.std_error), n.to_string()]);
        t.push(vec!["c_equiv".into(), num(a), num(psi.value + c_rsr), num(psi.std_error), n.to_string()]);
        report.notes.push(format!("alpha {a:>8}: psi {:.5} ± {:.2e} (psi + c_rsr = {:.5})", psi.value, psi.std_error, psi.value + c_rsr));
        estimates.push((a, psi));
    }
    t.push(vec!["psi_fast".into(), "inf".into(), num(fast), num(0.0), "0".into()]);
    t.push(vec!["psi_slow".into(), "0".into(), num(slow), num(0.0), "0".into()]);
    let limit_gate = |name: &str, e: &CoefficientEstimate, limit: f64, rel: f64| {
        if limit == 0.0 {
            Gate::z(name, e.value, e.std_error, 0.0, 0.0, g.z)
        } else {
            Gate::relative(name, e.value, limit, rel)
        }
    };
    if estimates.len() >= 2 {
        let (_, hi) = estimates.iter().max_by(|a, b| a.0.total_cmp(&b.0)).unwrap();
        let (_, lo) = estimates.iter().min_by(|a, b| a.0.total_cmp(&b.0)).unwrap();
        report.gates.push(limit_gate("fast_slow.fast_limit", hi, fast, g.fast_rel));
        report.gates.push(limit_gate("fast_slow.slow_limit", lo, slow, g.slow_rel));
    }
    report.tables.push(t);
    Ok(report)
}

/// Decay rate of the covariance of a two-state environment.
pub fn two_state_decay(env: &MarkovEnv) -> Option<f64> {
    (env.state_count() == 2).then(|| env.alpha() * (env.rate(0, 1) + env.rate(1, 0)))
}

/// The two small-`alpha` candidate limits of the non-negative case.
pub fn arbitration_candidates(q: &QueueParams, var_p: f64) -> [(&'static str, f64); 2] {
    let (r, m) = (q.rho(), q.mu());
    [("var_scaled", -2.0 * r * var_p / ((1.0 - r) * m * m)), ("unscaled", -2.0 * r / (m * m))]
}

/// Non-negative and non-positive cases, hitting probabilities and the
/// small-`alpha` arbitration.
pub fn special_cases(cfg: &ValidatedConfig, pool: &Pool) -> Result<Report> {
    let q = cfg.queue;
    let n = cfg.replications();
    let g = &cfg.raw.gates;
    let env = &cfg.env;
    let pm = env.p_moments();
    let mut t = Table::new("", &["check", "alpha", "value", "std_error", "reference", "reference_se"]);
    let mut report = Report::default();
    let row = |t: &mut Table, name: &str, a: f64, e: &CoefficientEstimate, r: f64, rse: f64| {
        t.push(vec![name.into(), num(a), num(e.value), num(e.std_error), num(r), num(rse)]);
    };
    let nonneg = env.max_p_minus() == 0.0;
    let nonpos = env.max_p_plus() == 0.0;
    if nonneg && pm.variance() > 0.0 {
        for &a in &cfg.special_alphas {
            let e = estimators(cfg, Experiment::SpecialCases, env.with_alpha(a)?, pool);
            let hyb = e.cheval2_rhs(n, Method::QuadratureHybrid)?;
            let mc = e.cheval2_rhs(n, Method::McJoint)?;
            let scaled = env.with_alpha(a)?;
            match two_state_decay(&scaled) {
                Some(decay) => {
                    let r = auxey_rhs(&q, decay, pm.variance())?;
                    row(&mut t, "cheval2_hybrid", a, &hyb, r, 0.0);
                    row(&mut t, "cheval2_mc", a, &mc, r, 0.0);
                    report.gates.push(Gate::z(format!("special.cheval2.alpha={a}"), hyb.value, hyb.std_error, r, 0.0, g.z));
                    report.notes.push(format!("alpha {a}: cheval2 {:.5} ± {:.2e}, transform {r:.5}", hyb.value, hyb.std_error));
                }
                None => {
                    row(&mut t, "cheval2_hybrid", a, &hyb, f64::NAN, f64::NAN);
                    row(&mut t, "cheval2_mc", a, &mc, f64::NAN, f64::NAN);
                }
            }
            report.gates.push(Gate::z(format!("special.cheval2_routes.alpha={a}"), hyb.value, hyb.std_error, mc.value, mc.std_error, g.z));
        }
    }
    if nonpos && pm.variance() > 0.0 {
        for &a in &cfg.special_alphas {
            let e = estimators(cfg, Experiment::SpecialCases, env.with_alpha(a)?, pool);
            let d = e.dif1_rhs(n)?;
            row(&mut t, "dif1", a, &d.plain, 0.0, 0.0);
            row(&mut t, "dif1_kappa", a, &d.with_kappa, 0.0, 0.0);
            report.gates.push(Gate::check(format!("special.dif1_nonpositive.alpha={a}"), d.plain.value, 0.0, d.plain.value <= 0.0, "value <= 0"));
            report.notes.push(format!(
                "alpha {a}: dif1 {:.5} ± {:.2e}, with kappa {:.5} ± {:.2e}{}",
                d.plain.value,
                d.plain.std_error,
                d.with_kappa.value,
                d.with_kappa.std_error,
                if d.disagree() { " (readings disagree)" } else { "" }
            ));
        }
    }
    let est = estimators(cfg, Experiment::SpecialCases, env.clone(), pool);
    let mut kinds = Vec::new();
    if env.max_p_plus() > 0.0 {
        kinds.extend([JumpKind::Plus, JumpKind::DoublePlus]);
    }
    if env.max_p_minus() > 0.0 {
        kinds.push(JumpKind::Minus);
    }
    for kind in kinds {
        let fit = est.prob_first_jump_expansion(kind, &cfg.jump_epsilons, n, n)?;
        let name = match kind {
            JumpKind::Plus => "jump_plus",
            JumpKind::Minus => "jump_minus",
            JumpKind::DoublePlus => "jump_double_plus",
        };
        let lead = fit.leading_power();
        let c_lead = fit.fit.estimate(lead, n).unwrap();
        if lead == 1 {
            row(&mut t, &format!("{name}_eps1"), env.alpha(), &c_lead, fit.analytic_first, 0.0);
            report.gates.push(Gate::z(format!("special.{name}.eps1"), c_lead.value, c_lead.std_error, fit.analytic_first, 0.0, g.ci_z));
        }
        let c2 = fit.fit.estimate(2, n).unwrap();
        let (r2, r2se) = fit.analytic_second.map_or((f64::NAN, f64::NAN), |e| (e.value, e.std_error));
        row(&mut t, &format!("{name}_eps2"), env.alpha(), &c2, r2, r2se);
        if fit.analytic_second.is_some() {
            report.gates.push(Gate::z(format!("special.{name}.eps2"), c2.value, c2.std_error, r2, r2se, g.ci_z));
        }
        report.notes.push(format!("{name}: eps^{lead} {:.5} ± {:.2e}, eps^2 {:.5} ± {:.2e} (analytic {r2:.5})", c_lead.value, c_lead.std_error, c2.value, c2.std_error));
    }
    if let Some(a) = cfg.raw.special.arbitration_alpha {
        if !nonneg {
            return Err(Error::Config("arbitration requires p >= 0".into()));
        }
        let psi = est.estimate_psi(a, &cfg.epsilons, n)?;
        let cands = arbitration_candidates(&q, pm.variance());
        let reference = two_state_decay(&env.with_alpha(a)?).map(|d| auxey_rhs(&q, d, pm.variance())).transpose()?;
        for (name, v) in cands {
            row(&mut t, &format!("arbitration_{name}"), a, &psi, v, 0.0);
        }
        if let Some(r) = reference {
            row(&mut t, "arbitration_transform", a, &psi, r, 0.0);
        }
        let z: Vec<f64> = cands.iter().map(|(_, v)| psi.z_against(*v)).collect();
        let (best, other) = if z[0].abs() <= z[1].abs() { (0, 1) } else { (1, 0) };
        report.gates.push(Gate::check(
            "special.arbitration",
            psi.value,
            cands[best].1,
            z[other].abs() > g.ci_z,
            format!("supports={} z_supported={:.2} z_rejected={:.2}", cands[best].0, z[best], z[other]),
        ));
        report.notes.push(format!(
            "arbitration alpha {a}: psi {:.5} ± {:.2e}; data supports {} ({:.4}, z {:.2}) over {} ({:.4}, z {:.2})",
            psi.value, psi.std_error, cands[best].0, cands[best].1, z[best], cands[other].0, cands[other].1, z[other]
        ));
    }
    report.tables.push(t);
    Ok(report)
}
