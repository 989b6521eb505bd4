//! Empirical checks of the convergence theory: Sinkhorn contraction and
//! potential bounds, Lipschitz continuity of the potentials in TV and MMD,
//! MMD concentration of empirical measures, and the sample complexity of the
//! potentials.
//!
//! Every experiment returns a [`Report`]. Trials run in parallel, each on
//! its own RNG stream keyed by `(seed, trial)`, so results do not depend on
//! the thread count.

use std::collections::BTreeMap;

use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;

use crate::cost::{sq_dist, CostSpec};
use crate::error::{Error, Result};
use crate::measure::{sample_empirical, total_variation, DiscreteMeasure, Domain, Points, Sampler};
use crate::rng::{self, streams, Rng};
use crate::sinkhorn::{
    contraction_lambda, hilbert_distance, potential_extend, sinkhorn_knopp, PotentialFn,
    SinkhornConfig, SinkhornSolver,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelKind {
    /// `exp(-|x - y|^2 / (2 sigma^2))`.
    GaussianRbf { bandwidth: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// Unit diagonal. Otherwise the rbf is scaled to a probability density.
    pub normalized: bool,
}

impl KernelSpec {
    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "kernel bandwidth must be > 0, got {bandwidth}"
            )));
        }
        Ok(Self {
            kind: KernelKind::GaussianRbf { bandwidth },
            normalized: true,
        })
    }

    /// Bandwidth = median pairwise distance over (at most) the first 1000
    /// points.
    pub fn median_heuristic(points: &Points) -> Result<Self> {
        let n = points.len().min(1000);
        let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in 0..i {
                d.push(sq_dist(points.get(i), points.get(j)).sqrt());
            }
        }
        if d.is_empty() {
            return Self::gaussian(1.0);
        }
        d.sort_by(f64::total_cmp);
        let med = d[d.len() / 2];
        Self::gaussian(if med > 0.0 { med } else { 1.0 })
    }

    pub fn bandwidth(&self) -> f64 {
        match self.kind {
            KernelKind::GaussianRbf { bandwidth } => bandwidth,
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let s = self.bandwidth();
        let v = (-sq_dist(x, y) / (2.0 * s * s)).exp();
        if self.normalized {
            v
        } else {
            v / (2.0 * std::f64::consts::PI * s * s).powf(0.5 * x.len() as f64)
        }
    }

    /// `sum_ij a_i b_j h(x_i, y_j)`.
    pub fn cross_sum(&self, a: &DiscreteMeasure, b: &DiscreteMeasure) -> f64 {
        let rows: Vec<f64> = (0..a.len())
            .into_par_iter()
            .with_min_len(64)
            .map(|i| {
                let x = a.points().get(i);
                let s: f64 = b
                    .points()
                    .iter()
                    .zip(b.weights())
                    .map(|(y, w)| w * self.eval(x, y))
                    .sum();
                a.weights()[i] * s
            })
            .collect();
        rows.iter().sum()
    }

    /// `sum_ij a_i a_j h(x_i, x_j)`, using symmetry.
    pub fn self_sum(&self, a: &DiscreteMeasure) -> f64 {
        let rows: Vec<f64> = (0..a.len())
            .into_par_iter()
            .with_min_len(64)
            .map(|i| {
                let x = a.points().get(i);
                let mut s = 0.0;
                for j in 0..i {
                    s += a.weights()[j] * self.eval(x, a.points().get(j));
                }
                a.weights()[i] * (2.0 * s + a.weights()[i] * self.eval(x, x))
            })
            .collect();
        rows.iter().sum()
    }
}

fn check_dims(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(())
}

/// Closed-form MMD between two discrete measures.
pub fn mmd(a: &DiscreteMeasure, b: &DiscreteMeasure, kernel: &KernelSpec) -> Result<f64> {
    check_dims(a, b)?;
    let sq = kernel.self_sum(a) - 2.0 * kernel.cross_sum(a, b) + kernel.self_sum(b);
    Ok(sq.max(0.0).sqrt())
}

/// A fixed measure with its kernel self-term precomputed, for repeated MMD
/// evaluations against it.
#[derive(Debug, Clone)]
pub struct MmdReference {
    measure: DiscreteMeasure,
    kernel: KernelSpec,
    self_term: f64,
}

impl MmdReference {
    pub fn new(measure: DiscreteMeasure, kernel: KernelSpec) -> Self {
        let self_term = kernel.self_sum(&measure);
        Self {
            measure,
            kernel,
            self_term,
        }
    }

    pub fn distance(&self, other: &DiscreteMeasure) -> Result<f64> {
        check_dims(&self.measure, other)?;
        let sq = self.self_term - 2.0 * self.kernel.cross_sum(other, &self.measure)
            + self.kernel.self_sum(other);
        Ok(sq.max(0.0).sqrt())
    }
}

/// Least-squares line through `(ln n, ln error)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub sample_sizes: Vec<usize>,
    pub errors: Vec<f64>,
    pub fitted_slope: f64,
    pub fitted_intercept: f64,
}

impl RateFit {
    pub fn fit(sample_sizes: &[usize], errors: &[f64]) -> Result<Self> {
        if sample_sizes.len() != errors.len() {
            return Err(Error::LengthMismatch {
                left: sample_sizes.len(),
                right: errors.len(),
            });
        }
        if sample_sizes.len() < 2 {
            return Err(Error::InvalidInput("a rate fit needs at least two sizes".into()));
        }
        if errors.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::InvalidInput("rate fit errors must be positive".into()));
        }
        let xs: Vec<f64> = sample_sizes.iter().map(|&n| (n as f64).ln()).collect();
        let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
        let k = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / k;
        let my = ys.iter().sum::<f64>() / k;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let slope = sxy / sxx;
        Ok(Self {
            sample_sizes: sample_sizes.to_vec(),
            errors: errors.to_vec(),
            fitted_slope: slope,
            fitted_intercept: my - slope * mx,
        })
    }
}

/// Outcome of one experiment: pass flag, summary statistics and a table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub name: String,
    pub pass: bool,
    pub statistics: BTreeMap<String, f64>,
    #[serde(skip)]
    pub columns: Vec<String>,
    #[serde(skip)]
    pub rows: Vec<Vec<f64>>,
}

impl Report {
    fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            pass: true,
            statistics: BTreeMap::new(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn stat(&self, key: &str) -> Option<f64> {
        self.statistics.get(key).copied()
    }

    fn set(&mut self, key: &str, value: f64) {
        self.statistics.insert(key.to_string(), value);
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(f64::to_string))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// `{name, pass, statistics}`.
    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn unit_box(dim: usize) -> Domain {
    Domain::new(vec![0.0; dim], vec![1.0; dim]).expect("unit box is valid")
}

fn random_measure(n: usize, domain: &Domain, rng: &mut Rng) -> DiscreteMeasure {
    let mut pts = Points::new(domain.dim(), Vec::new()).expect("dim >= 1");
    for _ in 0..n {
        pts.push(&domain.sample_uniform(rng));
    }
    random_weights_on(pts, rng)
}

fn random_weights_on(points: Points, rng: &mut Rng) -> DiscreteMeasure {
    let masses = (0..points.len()).map(|_| rng.random_range(0.05..1.0)).collect();
    DiscreteMeasure::from_masses(points, masses).expect("positive masses")
}

fn probe_points(domain: &Domain, count: usize, extra: &[&Points], rng: &mut Rng) -> Points {
    let mut pts = Points::new(domain.dim(), Vec::new()).expect("dim >= 1");
    for _ in 0..count {
        pts.push(&domain.sample_uniform(rng));
    }
    for set in extra {
        for x in set.iter() {
            pts.push(x);
        }
    }
    pts
}

fn sup_diff(f: &PotentialFn, g: &PotentialFn, probes: &Points) -> f64 {
    probes
        .iter()
        .map(|x| (f.eval(x) - g.eval(x)).abs())
        .fold(0.0, f64::max)
}

/// The extension of `u` (the potential on alpha's side) built from a solve.
fn u_function(
    alpha: &DiscreteMeasure,
    beta: &DiscreteMeasure,
    cost: &CostSpec,
    cfg: &SinkhornConfig,
) -> Result<PotentialFn> {
    let r = sinkhorn_knopp(alpha, beta, cost, cfg)?.ensure_converged()?;
    potential_extend(beta.points(), beta.weights(), &r.v_values, cfg.epsilon, cost)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Random instances for [`sinkhorn_rate_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct RateCheckConfig {
    pub trials: usize,
    /// Inclusive range of atoms per side.
    pub atoms: (usize, usize),
    /// `D / eps` is drawn uniformly from this range; eps follows from D.
    pub d_over_eps: (f64, f64),
    pub dim: usize,
    pub seed: u64,
}

impl Default for RateCheckConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            atoms: (5, 20),
            d_over_eps: (0.5, 3.0),
            dim: 2,
            seed: 0,
        }
    }
}

/// Hilbert distances below this are dominated by rounding and not recorded.
const HILBERT_FLOOR: f64 = 1e-5;

/// Per-sweep contraction of the log-iterate towards the fixed point, the
/// a-priori error bound and the sup-norm bounds on the anchored potentials.
///
/// Returns two reports: `sinkhorn-rate` and `potential-bounds`. `scfg`
/// supplies the tolerance and iteration budget; eps is set per instance.
pub fn sinkhorn_rate_check(
    cfg: &RateCheckConfig,
    scfg: &SinkhornConfig,
    cost: &CostSpec,
) -> Result<(Report, Report)> {
    if cfg.atoms.0 < 1 || cfg.atoms.0 > cfg.atoms.1 {
        return Err(Error::InvalidConfig("atom range must satisfy 1 <= lo <= hi".into()));
    }
    if !(cfg.d_over_eps.0 > 0.0 && cfg.d_over_eps.0 <= cfg.d_over_eps.1) {
        return Err(Error::InvalidConfig("D/eps range must be positive".into()));
    }
    let domain = unit_box(cfg.dim);
    let outcomes = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::trial_stream(cfg.seed, streams::EXPERIMENT, t as u64);
            let na = rng.random_range(cfg.atoms.0..=cfg.atoms.1);
            let nb = rng.random_range(cfg.atoms.0..=cfg.atoms.1);
            let alpha = random_measure(na, &domain, &mut rng);
            let beta = random_measure(nb, &domain, &mut rng);
            let ratio = rng.random_range(cfg.d_over_eps.0..=cfg.d_over_eps.1);
            let d = cost.cost_matrix(alpha.points(), beta.points())?.max();
            let d = cost.diameter.map_or(d, |o| o.max(d));
            rate_instance(&alpha, &beta, cost, scfg, d / ratio)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rate = Report::new(
        "sinkhorn-rate",
        &["trial", "diameter", "epsilon", "lambda", "sweeps_recorded", "max_ratio", "max_excess"],
    );
    let mut bounds = Report::new(
        "potential-bounds",
        &["trial", "diameter", "epsilon", "lambda", "sup_u", "sup_v", "iterations"],
    );
    let (mut ratio_violations, mut err_violations, mut bound_violations) = (0usize, 0usize, 0usize);
    let mut recorded = 0usize;
    let mut worst_ratio_gap = f64::NEG_INFINITY;
    let mut worst = 0.0f64;
    let (mut lam_max, mut d_max, mut eps_min) = (0.0f64, 0.0f64, f64::INFINITY);
    for (t, o) in outcomes.iter().enumerate() {
        let lam2 = o.lambda * o.lambda;
        let max_ratio = o.ratios.iter().copied().fold(0.0, f64::max);
        ratio_violations += o.ratios.iter().filter(|&&r| r > lam2 + 1e-9).count();
        err_violations += o.error_excess.iter().filter(|&&e| e > 1e-9).count();
        recorded += o.ratios.len();
        if !o.ratios.is_empty() {
            worst_ratio_gap = worst_ratio_gap.max(max_ratio - lam2);
            worst = worst.max(max_ratio / lam2);
        }
        let excess = o.error_excess.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        rate.rows.push(vec![
            t as f64,
            o.diameter,
            o.epsilon,
            o.lambda,
            o.ratios.len() as f64,
            max_ratio,
            excess,
        ]);
        if !o.converged
            || o.sup_u > o.diameter + scfg.tolerance
            || o.sup_v > 2.0 * o.diameter + scfg.tolerance
        {
            bound_violations += 1;
        }
        bounds.rows.push(vec![
            t as f64,
            o.diameter,
            o.epsilon,
            o.lambda,
            o.sup_u,
            o.sup_v,
            o.iterations as f64,
        ]);
        lam_max = lam_max.max(o.lambda);
        d_max = d_max.max(o.diameter);
        eps_min = eps_min.min(o.epsilon);
    }
    for r in [&mut rate, &mut bounds] {
        r.set("trials", cfg.trials as f64);
        r.set("lambda", lam_max);
        r.set("diameter", d_max);
        r.set("epsilon", eps_min);
    }
    rate.set("sweeps_recorded", recorded as f64);
    rate.set("ratio_violations", ratio_violations as f64);
    rate.set("error_bound_violations", err_violations as f64);
    rate.set("max_ratio_over_lambda_sq", worst);
    rate.set("max_ratio_minus_lambda_sq", worst_ratio_gap);
    rate.pass = ratio_violations == 0 && err_violations == 0;
    bounds.set("violations", bound_violations as f64);
    bounds.pass = bound_violations == 0;
    Ok((rate, bounds))
}

#[derive(Debug, Clone)]
struct RateOutcome {
    diameter: f64,
    epsilon: f64,
    lambda: f64,
    /// `d_H(f_{l+1}, f*) / d_H(f_l, f*)` for sweeps above the rounding floor.
    ratios: Vec<f64>,
    /// `d_H(f_l, f*) - lambda^(2l) D / eps`, one per sweep.
    error_excess: Vec<f64>,
    sup_u: f64,
    sup_v: f64,
    iterations: usize,
    converged: bool,
}

fn rate_instance(
    alpha: &DiscreteMeasure,
    beta: &DiscreteMeasure,
    cost: &CostSpec,
    scfg: &SinkhornConfig,
    epsilon: f64,
) -> Result<RateOutcome> {
    let cfg = SinkhornConfig {
        epsilon,
        anchor_index: 0,
        ..scfg.clone()
    };
    // fixed point to rounding precision
    let mut reference = SinkhornSolver::new(alpha, beta, cost, &cfg, None)?;
    let mut stalled = 0;
    for _ in 0..100_000 {
        let change = reference.sweep()? / epsilon;
        stalled = if change < 1e-15 { stalled + 1 } else { 0 };
        if stalled >= 3 {
            break;
        }
    }
    let f_star = reference.log_u().to_vec();
    let diameter = reference.diameter();
    let lambda = reference.lambda();

    let mut solver = SinkhornSolver::new(alpha, beta, cost, &cfg, None)?;
    let mut prev = hilbert_distance(solver.log_u(), &f_star)?;
    let mut ratios = Vec::new();
    let mut error_excess = vec![prev - diameter / epsilon];
    for l in 1..=200 {
        solver.sweep()?;
        let cur = hilbert_distance(solver.log_u(), &f_star)?;
        let bound = lambda.powi(2 * l) * diameter / epsilon;
        error_excess.push(cur - bound);
        if prev > HILBERT_FLOOR && cur > HILBERT_FLOOR {
            ratios.push(cur / prev);
        }
        prev = cur;
        if cur <= HILBERT_FLOOR {
            break;
        }
    }

    let r = sinkhorn_knopp(alpha, beta, cost, &cfg)?;
    let sup = |v: &[f64]| v.iter().map(|x| x.abs()).fold(0.0, f64::max);
    Ok(RateOutcome {
        diameter,
        epsilon,
        lambda,
        ratios,
        error_excess,
        sup_u: sup(&r.u_values),
        sup_v: sup(&r.v_values),
        iterations: r.iterations_used,
        converged: r.converged,
    })
}

/// Shared-support trials for the TV-Lipschitz bound of the potentials.
#[derive(Debug, Clone, PartialEq)]
pub struct TvCheckConfig {
    pub trials: usize,
    pub support_size: usize,
    pub dim: usize,
    pub probes: usize,
    pub seed: u64,
}

impl Default for TvCheckConfig {
    fn default() -> Self {
        Self {
            trials: 200,
            support_size: 8,
            dim: 2,
            probes: 200,
            seed: 0,
        }
    }
}

/// Checks `|u - u'|_inf <= 2 eps e^{3D/eps} (TV(a,a') + TV(b,b'))` over
/// random weight vectors on two fixed random supports in the unit box. D is
/// the cost diameter of the box; every tenth trial repeats the same pair and
/// is skipped.
pub fn lipschitz_tv_check(cfg: &TvCheckConfig, scfg: &SinkhornConfig, cost: &CostSpec) -> Result<Report> {
    if cfg.support_size < 2 {
        return Err(Error::InvalidConfig("shared support needs at least 2 atoms".into()));
    }
    let domain = unit_box(cfg.dim);
    let eps = scfg.epsilon;
    let d = cost.eval(domain.lo(), domain.hi());
    let d = cost.diameter.map_or(d, |o| o.max(d));
    let constant = 2.0 * eps * (3.0 * d / eps).exp();
    let scfg = SinkhornConfig {
        anchor_index: 0,
        ..scfg.clone()
    };

    let mut rng = rng::stream(cfg.seed, streams::INSTANCE);
    let xs = random_measure(cfg.support_size, &domain, &mut rng).points().clone();
    let ys = random_measure(cfg.support_size, &domain, &mut rng).points().clone();
    let probes = probe_points(&domain, cfg.probes, &[&xs, &ys], &mut rng);

    let rows = (0..cfg.trials)
        .into_par_iter()
        .map(|t| -> Result<Vec<f64>> {
            let mut rng = rng::trial_stream(cfg.seed, streams::EXPERIMENT, t as u64);
            let a = random_weights_on(xs.clone(), &mut rng);
            let b = random_weights_on(ys.clone(), &mut rng);
            let (a2, b2) = if t % 10 == 0 {
                (a.clone(), b.clone())
            } else {
                // mixtures with a random measure at a random scale, so that
                // both tiny and large TV distances occur
                let s = 10f64.powf(rng.random_range(-3.0..0.0));
                let ta = rng.random_range(0.0..=1.0) * s;
                let tb = rng.random_range(0.0..=1.0) * s;
                let a2 = a.mix(&random_weights_on(xs.clone(), &mut rng), ta)?;
                let b2 = b.mix(&random_weights_on(ys.clone(), &mut rng), tb)?;
                (a2, b2)
            };
            let tv = total_variation(&a, &a2)? + total_variation(&b, &b2)?;
            let lhs = if tv > 0.0 {
                let u = u_function(&a, &b, cost, &scfg)?;
                let u2 = u_function(&a2, &b2, cost, &scfg)?;
                sup_diff(&u, &u2, &probes)
            } else {
                0.0
            };
            let rhs = constant * tv;
            Ok(vec![t as f64, tv, lhs, rhs, if tv > 0.0 { lhs / rhs } else { f64::NAN }])
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = Report::new("lipschitz-tv", &["trial", "tv_sum", "sup_diff", "bound", "ratio"]);
    let tol = scfg.tolerance;
    let mut violations = 0usize;
    let mut skipped = 0usize;
    let mut max_ratio = 0.0f64;
    for row in &rows {
        if row[1] == 0.0 {
            skipped += 1;
            if row[2] > 2.0 * tol {
                violations += 1;
            }
        } else {
            max_ratio = max_ratio.max(row[4]);
            if row[2] > row[3] + 2.0 * tol {
                violations += 1;
            }
        }
    }
    report.rows = rows;
    report.set("trials", cfg.trials as f64);
    report.set("skipped", skipped as f64);
    report.set("violations", violations as f64);
    report.set("max_ratio", max_ratio);
    report.set("lipschitz_constant", constant);
    report.set("diameter", d);
    report.set("epsilon", eps);
    report.set("lambda", contraction_lambda(d, eps));
    report.pass = violations == 0;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmdConcentrationConfig {
    pub n_list: Vec<usize>,
    pub trials: usize,
    pub tau: f64,
    /// `n_ref = ref_factor * max(n_list)`.
    pub ref_factor: usize,
    pub seed: u64,
}

impl Default for MmdConcentrationConfig {
    fn default() -> Self {
        Self {
            n_list: vec![25, 100, 400],
            trials: 50,
            tau: 0.05,
            ref_factor: 100,
            seed: 0,
        }
    }
}

/// `4 log(3 / tau) / sqrt(n)`.
pub fn mmd_concentration_bound(n: usize, tau: f64) -> f64 {
    4.0 * (3.0 / tau).ln() / (n as f64).sqrt()
}

/// Empirical `(1 - tau)`-quantile of `MMD(beta_n, beta_ref)` against the
/// concentration bound. `kernel = None` picks the median heuristic on the
/// reference sample.
pub fn mmd_concentration_experiment(
    sampler: &Sampler,
    cfg: &MmdConcentrationConfig,
    kernel: Option<KernelSpec>,
) -> Result<Report> {
    if cfg.trials < 20 {
        return Err(Error::InvalidConfig("need at least 20 trials".into()));
    }
    if !(cfg.tau > 0.0 && cfg.tau < 1.0) {
        return Err(Error::InvalidConfig("tau must lie in (0, 1)".into()));
    }
    let n_max = cfg.n_list.iter().copied().max().ok_or(Error::EmptySupport)?;
    let n_ref = cfg.ref_factor.max(1) * n_max;
    let mut rng = rng::stream(cfg.seed, streams::SAMPLING);
    let reference = sample_empirical(sampler, n_ref, &mut rng)?;
    let kernel = match kernel {
        Some(k) => k,
        None => KernelSpec::median_heuristic(reference.points())?,
    };
    let reference = MmdReference::new(reference, kernel);

    let mut report = Report::new("mmd-concentration", &["n", "bound", "quantile", "median", "pass"]);
    let mut violations = 0usize;
    let mut medians = Vec::new();
    for (ni, &n) in cfg.n_list.iter().enumerate() {
        let mut values = (0..cfg.trials)
            .into_par_iter()
            .map(|t| {
                let index = (ni * cfg.trials + t) as u64;
                let mut rng = rng::trial_stream(cfg.seed, streams::EXPERIMENT, index);
                let sample = sample_empirical(sampler, n, &mut rng)?;
                reference.distance(&sample)
            })
            .collect::<Result<Vec<_>>>()?;
        values.sort_by(f64::total_cmp);
        let q = quantile(&values, 1.0 - cfg.tau);
        let med = median(&values);
        let bound = mmd_concentration_bound(n, cfg.tau);
        let ok = q <= bound;
        violations += usize::from(!ok);
        medians.push(med);
        report.rows.push(vec![n as f64, bound, q, med, f64::from(u8::from(ok))]);
    }
    report.set("trials", cfg.trials as f64);
    report.set("tau", cfg.tau);
    report.set("n_ref", n_ref as f64);
    report.set("bandwidth", kernel.bandwidth());
    report.set("violations", violations as f64);
    if medians.len() >= 2 && medians.iter().all(|&m| m > 0.0) {
        let fit = RateFit::fit(&cfg.n_list, &medians)?;
        report.set("median_slope", fit.fitted_slope);
    }
    report.pass = violations == 0;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleComplexityConfig {
    pub n_list: Vec<usize>,
    pub trials: usize,
    pub n_ref: usize,
    pub reference_tolerance: f64,
    pub probes: usize,
    pub seed: u64,
}

impl Default for SampleComplexityConfig {
    fn default() -> Self {
        Self {
            n_list: vec![16, 64, 256, 1024],
            trials: 30,
            n_ref: 20_000,
            reference_tolerance: 1e-9,
            probes: 200,
            seed: 0,
        }
    }
}

/// Median `|u - u_n|_inf` over `n_list` and its log-log slope, where `u` is
/// the potential on alpha's side against a large reference sample of beta
/// and `u_n` the one against an `n`-sample. Probes are uniform in the
/// bounding box of alpha and the reference sample, plus alpha's atoms. The
/// report passes when the slope is at most `max_slope`. If every median is
/// within `2 tol` (e.g. a point-mass sampler) the slope is NaN and the
/// report passes.
pub fn sample_complexity_experiment(
    sampler: &Sampler,
    alpha: &DiscreteMeasure,
    cfg: &SampleComplexityConfig,
    scfg: &SinkhornConfig,
    cost: &CostSpec,
    max_slope: f64,
) -> Result<(RateFit, Report)> {
    if cfg.n_list.len() < 2 {
        return Err(Error::InvalidConfig("need at least two sample sizes".into()));
    }
    let scfg = SinkhornConfig {
        anchor_index: 0,
        ..scfg.clone()
    };
    let mut rng = rng::stream(cfg.seed, streams::SAMPLING);
    let reference = sample_empirical(sampler, cfg.n_ref, &mut rng)?;
    let ref_cfg = SinkhornConfig {
        tolerance: cfg.reference_tolerance,
        ..scfg.clone()
    };
    let u_ref = u_function(alpha, &reference, cost, &ref_cfg)?;
    let domain = Domain::bounding(&[alpha.points(), reference.points()], 0.0)?;
    let mut probe_rng = rng::stream(cfg.seed, streams::PROBE);
    let probes = probe_points(&domain, cfg.probes, &[alpha.points()], &mut probe_rng);
    let u_ref_values: Vec<f64> = probes.iter().map(|x| u_ref.eval(x)).collect();

    let mut report = Report::new("sample-complexity", &["n", "median_error", "max_error"]);
    let mut medians = Vec::new();
    for (ni, &n) in cfg.n_list.iter().enumerate() {
        let errors = (0..cfg.trials)
            .into_par_iter()
            .map(|t| {
                let index = (ni * cfg.trials + t) as u64;
                let mut rng = rng::trial_stream(cfg.seed, streams::EXPERIMENT, index);
                let sample = sample_empirical(sampler, n, &mut rng)?;
                let u = u_function(alpha, &sample, cost, &scfg)?;
                Ok(probes
                    .iter()
                    .zip(&u_ref_values)
                    .map(|(x, r)| (u.eval(x) - r).abs())
                    .fold(0.0, f64::max))
            })
            .collect::<Result<Vec<f64>>>()?;
        let med = median(&errors);
        medians.push(med);
        report.rows.push(vec![n as f64, med, errors.iter().copied().fold(0.0, f64::max)]);
    }
    let exact = medians.iter().all(|&m| m <= 2.0 * scfg.tolerance);
    let fit = if exact {
        RateFit {
            sample_sizes: cfg.n_list.clone(),
            errors: medians.clone(),
            fitted_slope: f64::NAN,
            fitted_intercept: f64::NAN,
        }
    } else {
        RateFit::fit(&cfg.n_list, &medians)?
    };
    let d = cost.diameter_over(&[alpha.points(), reference.points()]);
    report.set("slope", fit.fitted_slope);
    report.set("intercept", fit.fitted_intercept);
    report.set("max_slope", max_slope);
    report.set("trials", cfg.trials as f64);
    report.set("n_ref", cfg.n_ref as f64);
    report.set("epsilon", scfg.epsilon);
    report.set("diameter", d);
    report.set("lambda", contraction_lambda(d, scfg.epsilon));
    report.pass = exact || fit.fitted_slope <= max_slope;
    Ok((fit, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmdLipschitzConfig {
    pub trials: usize,
    pub atoms: usize,
    pub dim: usize,
    pub probes: usize,
    /// Range of the jitter scale applied to the perturbed measures.
    pub jitter: (f64, f64),
    /// Trials use the streams `first_trial..first_trial + trials`, so two
    /// runs with disjoint ranges are independent batches.
    pub first_trial: usize,
    pub seed: u64,
}

impl Default for MmdLipschitzConfig {
    fn default() -> Self {
        Self {
            trials: 1000,
            atoms: 8,
            dim: 2,
            probes: 200,
            jitter: (0.01, 0.1),
            first_trial: 0,
            seed: 0,
        }
    }
}

/// Smallest `C` with `|u - u'|_inf <= C (MMD(a,a') + MMD(b,b'))` over
/// jittered copies of one random pair `(a, b)` drawn from `seed`. Both
/// potentials are anchored at the centre of the unit box. Every tenth trial
/// leaves the pair unchanged, and then both sides must vanish.
pub fn mmd_lipschitz_check(
    cfg: &MmdLipschitzConfig,
    scfg: &SinkhornConfig,
    cost: &CostSpec,
    kernel: &KernelSpec,
) -> Result<Report> {
    let domain = unit_box(cfg.dim);
    let x_o = domain.center();
    let scfg = SinkhornConfig {
        anchor_index: 0,
        ..scfg.clone()
    };
    let mut probe_rng = rng::stream(cfg.seed, streams::PROBE);
    let probes = probe_points(&domain, cfg.probes, &[], &mut probe_rng);
    let jitter = |m: &DiscreteMeasure, s: f64, rng: &mut Rng| -> Result<DiscreteMeasure> {
        let mut pts = Points::new(m.dim(), Vec::new())?;
        for x in m.points().iter() {
            let mut y: Vec<f64> = x.iter().map(|v| v + s * rng.random_range(-1.0..1.0)).collect();
            domain.clamp(&mut y);
            pts.push(&y);
        }
        DiscreteMeasure::new(pts, m.weights().to_vec())
    };
    let mut base_rng = rng::stream(cfg.seed, streams::INSTANCE);
    let a = random_measure(cfg.atoms, &domain, &mut base_rng);
    let b = random_measure(cfg.atoms, &domain, &mut base_rng);
    let u = u_function(&a, &b, cost, &scfg)?.anchored_at(&x_o);
    let rows = (cfg.first_trial..cfg.first_trial + cfg.trials)
        .into_par_iter()
        .map(|t| -> Result<Vec<f64>> {
            let mut rng = rng::trial_stream(cfg.seed, streams::EXPERIMENT, t as u64);
            let unchanged = t % 10 == 0;
            let (a2, b2) = if unchanged {
                (a.clone(), b.clone())
            } else {
                let s = rng.random_range(cfg.jitter.0..=cfg.jitter.1);
                (jitter(&a, s, &mut rng)?, jitter(&b, s, &mut rng)?)
            };
            // the kernel-sum form leaves ~1e-8 of cancellation noise on equal inputs
            let dist = if unchanged {
                0.0
            } else {
                mmd(&a, &a2, kernel)? + mmd(&b, &b2, kernel)?
            };
            let u2 = u_function(&a2, &b2, cost, &scfg)?.anchored_at(&x_o);
            let lhs = sup_diff(&u, &u2, &probes);
            Ok(vec![t as f64, dist, lhs, if dist > 0.0 { lhs / dist } else { f64::NAN }])
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = Report::new("mmd-lipschitz", &["trial", "mmd_sum", "sup_diff", "ratio"]);
    let mut c = 0.0f64;
    let mut degenerate_failures = 0usize;
    for row in &rows {
        if row[1] > 0.0 {
            c = c.max(row[3]);
        } else if row[2] > 2.0 * scfg.tolerance {
            degenerate_failures += 1;
        }
    }
    let d = cost.eval(domain.lo(), domain.hi());
    report.rows = rows;
    report.set("constant", c);
    report.set("trials", cfg.trials as f64);
    report.set("epsilon", scfg.epsilon);
    report.set("diameter", d);
    report.set("lambda", contraction_lambda(d, scfg.epsilon));
    report.set("growth_factor", (3.0 * d / scfg.epsilon).exp());
    report.set("degenerate_failures", degenerate_failures as f64);
    report.pass = c.is_finite() && degenerate_failures == 0;
    Ok(report)
}
