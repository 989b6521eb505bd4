//! Free-support Frank-Wolfe for Sinkhorn divergence barycenters.
//!
//! Each step linearizes `B(alpha) = sum_j w_j S(alpha, beta_j)` at the current
//! iterate, whose gradient is the continuous function
//! `phi = sum_j w_j u_j - p`, moves toward the Dirac at an (approximate)
//! minimizer of `phi` with step `2 / (k + 2)`, and so grows the support by at
//! most one atom per iteration.

use std::collections::HashSet;

use rayon::prelude::*;

use crate::cost::CostSpec;
use crate::error::{Error, Result};
use crate::measure::{DiscreteMeasure, Domain, Points};
use crate::rng::{self, Rng};
use crate::sinkhorn::{
    potential_extend, sinkhorn_divergence, PotentialFn, SinkhornConfig, SinkhornResult,
    sinkhorn_symmetric, SinkhornSolver,
};
use rand::seq::index::sample;

#[derive(Debug, Clone)]
pub struct BarycenterProblem {
    measures: Vec<DiscreteMeasure>,
    mix_weights: Vec<f64>,
    cost: CostSpec,
}

impl BarycenterProblem {
    /// `mix_weights = None` means uniform weights.
    pub fn new(
        measures: Vec<DiscreteMeasure>,
        mix_weights: Option<Vec<f64>>,
        cost: CostSpec,
    ) -> Result<Self> {
        let m = measures.len();
        if m == 0 {
            return Err(Error::EmptySupport);
        }
        let dim = measures[0].dim();
        if let Some(bad) = measures.iter().find(|b| b.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.dim(),
            });
        }
        let mix_weights = mix_weights.unwrap_or_else(|| vec![1.0 / m as f64; m]);
        if mix_weights.len() != m {
            return Err(Error::LengthMismatch {
                left: mix_weights.len(),
                right: m,
            });
        }
        if let Some((index, &value)) = mix_weights.iter().enumerate().find(|(_, &w)| w < 0.0) {
            return Err(Error::NegativeWeight { index, value });
        }
        let sum: f64 = mix_weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::WeightSumOutOfTolerance { sum });
        }
        Ok(Self {
            measures,
            mix_weights,
            cost,
        })
    }

    pub fn measures(&self) -> &[DiscreteMeasure] {
        &self.measures
    }

    pub fn mix_weights(&self) -> &[f64] {
        &self.mix_weights
    }

    pub fn cost(&self) -> &CostSpec {
        &self.cost
    }

    pub fn dim(&self) -> usize {
        self.measures[0].dim()
    }

    /// Concatenated supports of all input measures.
    pub fn all_atoms(&self) -> Points {
        let parts: Vec<&Points> = self.measures.iter().map(DiscreteMeasure::points).collect();
        Points::concat(&parts).expect("dimensions validated")
    }

    /// Exact maximum cost over the union of the input supports.
    pub fn diameter(&self) -> f64 {
        self.cost.diameter_over(&[&self.all_atoms()])
    }

    pub fn domain(&self, pad: f64) -> Domain {
        let parts: Vec<&Points> = self.measures.iter().map(DiscreteMeasure::points).collect();
        Domain::bounding(&parts, pad).expect("nonempty problem")
    }

    /// Mixture mean `sum_j w_j mean(beta_j)`.
    pub fn default_start(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        for (b, w) in self.measures.iter().zip(&self.mix_weights) {
            for (xi, mi) in x.iter_mut().zip(b.mean()) {
                *xi += w * mi;
            }
        }
        x
    }
}

/// Per-iteration precisions `(Delta_1k, Delta_2k)` for the gradient and the
/// inner minimization. `Delta_k (k + 2)` must be nondecreasing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeltaSchedule {
    /// `Delta_ik = c_i / (k + 2)`.
    Harmonic { c1: f64, c2: f64 },
    Constant { c1: f64, c2: f64 },
}

impl DeltaSchedule {
    pub fn at(&self, k: usize) -> (f64, f64) {
        let s = (k + 2) as f64;
        match *self {
            DeltaSchedule::Harmonic { c1, c2 } => (c1 / s, c2 / s),
            DeltaSchedule::Constant { c1, c2 } => (c1, c2),
        }
    }

    fn validate(&self) -> Result<()> {
        let (c1, c2) = match *self {
            DeltaSchedule::Harmonic { c1, c2 } | DeltaSchedule::Constant { c1, c2 } => (c1, c2),
        };
        if !(c1 > 0.0 && c2 > 0.0) {
            return Err(Error::InvalidConfig("delta schedule constants must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MinimizeMode {
    /// Exact argmin over a finite candidate set: the union of the input
    /// supports (when `include_supports`) followed by `extra`.
    Grid {
        extra: Option<Points>,
        include_supports: bool,
    },
    /// Multistart projected gradient descent with Armijo backtracking.
    Continuous {
        starts: usize,
        initial_step: f64,
        iterations: usize,
    },
}

impl MinimizeMode {
    pub fn grid_over_supports() -> Self {
        MinimizeMode::Grid {
            extra: None,
            include_supports: true,
        }
    }

    pub fn grid(points: Points) -> Self {
        MinimizeMode::Grid {
            extra: Some(points),
            include_supports: false,
        }
    }

    pub fn continuous() -> Self {
        MinimizeMode::Continuous {
            starts: 8,
            initial_step: 0.1,
            iterations: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FwConfig {
    pub iterations: usize,
    pub minimize: MinimizeMode,
    /// `None` uses `Harmonic { c1: eps, c2: eps }`.
    pub delta: Option<DeltaSchedule>,
    /// `None` uses [`BarycenterProblem::default_start`].
    pub initial_point: Option<Vec<f64>>,
    pub merge_radius: f64,
    pub seed: u64,
}

impl Default for FwConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            minimize: MinimizeMode::continuous(),
            delta: None,
            initial_point: None,
            merge_radius: 0.0,
            seed: 0,
        }
    }
}

impl FwConfig {
    pub fn schedule(&self, epsilon: f64) -> DeltaSchedule {
        self.delta.unwrap_or(DeltaSchedule::Harmonic {
            c1: epsilon,
            c2: epsilon,
        })
    }
}

#[derive(Debug, Clone, Default)]
struct FwCache {
    beta_self: Option<Vec<f64>>,
    warm_sym: Option<Vec<f64>>,
    warm_cross: Vec<Option<Vec<f64>>>,
    candidates: Option<Points>,
}

/// Frank-Wolfe iterate and traces.
#[derive(Debug, Clone)]
pub struct FwState {
    /// Current iterate. New atoms are appended; landing exactly on an
    /// existing atom adds to its weight instead.
    pub iterate: DiscreteMeasure,
    pub k: usize,
    /// `B(alpha_k)` for every iterate visited.
    pub objective_trace: Vec<f64>,
    /// `<phi_k, alpha_k> - phi_k(x_{k+1})`.
    pub gap_trace: Vec<f64>,
    pub selected_points: Vec<Vec<f64>>,
    /// Total Sinkhorn sweeps spent in each step.
    pub sinkhorn_iters: Vec<usize>,
    /// Sinkhorn solves that hit `max_iterations`; their partial potentials
    /// were still used.
    pub nonconverged_solves: usize,
    /// Final iterate merged with the configured radius (set by [`barycenter`]).
    pub consolidated: Option<DiscreteMeasure>,
    cache: FwCache,
}

impl FwState {
    pub fn new(x0: &[f64]) -> Self {
        Self {
            iterate: DiscreteMeasure::dirac(x0),
            k: 0,
            objective_trace: Vec::new(),
            gap_trace: Vec::new(),
            selected_points: Vec::new(),
            sinkhorn_iters: Vec::new(),
            nonconverged_solves: 0,
            consolidated: None,
            cache: FwCache::default(),
        }
    }

    /// The reported barycenter: the consolidated iterate when available.
    pub fn result(&self) -> &DiscreteMeasure {
        self.consolidated.as_ref().unwrap_or(&self.iterate)
    }
}

/// The linearized objective `x -> sum_j w_j u_j(x) - p(x) + offset`.
#[derive(Debug, Clone)]
pub struct Phi {
    pub parts: Vec<(f64, PotentialFn)>,
    pub subtract: Option<PotentialFn>,
    pub offset: f64,
}

impl Phi {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut s = self.offset;
        for (w, u) in &self.parts {
            s += w * u.eval(x);
        }
        if let Some(p) = &self.subtract {
            s -= p.eval(x);
        }
        s
    }

    pub fn eval_with_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut s = self.offset;
        let mut g = vec![0.0; x.len()];
        for (w, u) in &self.parts {
            let (val, grad) = u.eval_with_gradient(x)?;
            s += w * val;
            for (gi, di) in g.iter_mut().zip(grad) {
                *gi += w * di;
            }
        }
        if let Some(p) = &self.subtract {
            let (val, grad) = p.eval_with_gradient(x)?;
            s -= val;
            for (gi, di) in g.iter_mut().zip(grad) {
                *gi -= di;
            }
        }
        Ok((s, g))
    }
}

/// Finds an approximate minimizer of `phi`.
///
/// `pool` supplies candidate starting points for continuous mode (input
/// atoms and the current iterate's atoms); in grid mode `pool` is the
/// candidate set itself.
pub fn minimize_phi(
    phi: &Phi,
    mode: &MinimizeMode,
    domain: &Domain,
    pool: &Points,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    match mode {
        MinimizeMode::Grid { .. } => grid_argmin(phi, pool)
            .map(|i| pool.get(i).to_vec())
            .ok_or(Error::InnerMinimizationFailed),
        MinimizeMode::Continuous {
            starts,
            initial_step,
            iterations,
        } => {
            const SCREEN: usize = 512;
            let starts = (*starts).max(1);
            let screened: Vec<usize> = if pool.len() > SCREEN {
                sample(rng, pool.len(), SCREEN).into_vec()
            } else {
                (0..pool.len()).collect()
            };
            let mut scored: Vec<(f64, usize)> = screened
                .into_iter()
                .map(|i| (phi.eval(pool.get(i)), i))
                .filter(|(v, _)| v.is_finite())
                .collect();
            scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let from_pool = starts.div_ceil(2).min(scored.len());
            let mut inits: Vec<Vec<f64>> = scored[..from_pool]
                .iter()
                .map(|&(_, i)| pool.get(i).to_vec())
                .collect();
            while inits.len() < starts {
                inits.push(domain.sample_uniform(rng));
            }
            let mut best: Option<(f64, Vec<f64>)> = None;
            for mut x in inits {
                domain.clamp(&mut x);
                let Ok((val, x)) = descend(phi, x, domain, *initial_step, *iterations) else {
                    continue;
                };
                if val.is_finite() && best.as_ref().is_none_or(|(b, _)| val < *b) {
                    best = Some((val, x));
                }
            }
            best.map(|(_, x)| x).ok_or(Error::InnerMinimizationFailed)
        }
    }
}

/// Lowest-index argmin over the candidate points; `None` when no value is finite.
pub fn grid_argmin(phi: &Phi, candidates: &Points) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (i, x) in candidates.iter().enumerate() {
        let v = phi.eval(x);
        if v.is_finite() && best.is_none_or(|(b, _)| v < b) {
            best = Some((v, i));
        }
    }
    best.map(|(_, i)| i)
}

fn descend(
    phi: &Phi,
    mut x: Vec<f64>,
    domain: &Domain,
    initial_step: f64,
    iterations: usize,
) -> Result<(f64, Vec<f64>)> {
    const ARMIJO: f64 = 1e-4;
    let (mut fx, mut g) = phi.eval_with_gradient(&x)?;
    let mut step = initial_step;
    let mut trial = vec![0.0; x.len()];
    for _ in 0..iterations {
        if g.iter().all(|v| v.abs() < 1e-12) {
            break;
        }
        let mut accepted = false;
        for _ in 0..40 {
            for ((t, xi), gi) in trial.iter_mut().zip(&x).zip(&g) {
                *t = xi - step * gi;
            }
            domain.clamp(&mut trial);
            let decrease: f64 = g.iter().zip(x.iter().zip(&trial)).map(|(gi, (a, b))| gi * (a - b)).sum();
            if decrease <= 0.0 {
                break;
            }
            let ft = phi.eval(&trial);
            if ft <= fx - ARMIJO * decrease {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        std::mem::swap(&mut x, &mut trial);
        let (f_new, g_new) = phi.eval_with_gradient(&x)?;
        let progress = fx - f_new;
        fx = f_new;
        g = g_new;
        step *= 2.0;
        if progress < 1e-15 * fx.abs().max(1.0) {
            break;
        }
    }
    Ok((fx, x))
}

fn dedup_points(sets: &[&Points]) -> Points {
    let dim = sets[0].dim();
    let mut seen = HashSet::new();
    let mut coords = Vec::new();
    for set in sets {
        for x in set.iter() {
            let key: Vec<u64> = x.iter().map(|v| (v + 0.0).to_bits()).collect();
            if seen.insert(key) {
                coords.extend_from_slice(x);
            }
        }
    }
    Points::new(dim, coords).expect("valid points")
}

fn grid_candidates(problem: &BarycenterProblem, mode: &MinimizeMode) -> Result<Option<Points>> {
    let MinimizeMode::Grid {
        extra,
        include_supports,
    } = mode
    else {
        return Ok(None);
    };
    let atoms = problem.all_atoms();
    let mut sets: Vec<&Points> = Vec::new();
    if *include_supports {
        sets.push(&atoms);
    }
    if let Some(e) = extra {
        if e.dim() != problem.dim() {
            return Err(Error::DimensionMismatch {
                expected: problem.dim(),
                found: e.dim(),
            });
        }
        sets.push(e);
    }
    if sets.is_empty() {
        return Err(Error::InvalidConfig("grid mode has no candidate points".into()));
    }
    Ok(Some(dedup_points(&sets)))
}

/// One inexact Frank-Wolfe iteration.
pub fn fw_step(
    mut state: FwState,
    problem: &BarycenterProblem,
    scfg: &SinkhornConfig,
    fcfg: &FwConfig,
) -> Result<FwState> {
    let k = state.k;
    let eps = scfg.epsilon;
    let cost = problem.cost();
    let m = problem.measures().len();
    let (delta1, _) = fcfg.schedule(eps).at(k);
    // potentials to within Delta_1k / 8
    let step_cfg = SinkhornConfig {
        tolerance: scfg.tolerance.min(delta1 / 8.0),
        anchor_index: 0,
        ..scfg.clone()
    };

    if state.cache.beta_self.is_none() {
        let selfs = problem
            .measures()
            .par_iter()
            .map(|b| {
                let cfg = SinkhornConfig {
                    tolerance: scfg.tolerance,
                    anchor_index: 0,
                    ..scfg.clone()
                };
                sinkhorn_symmetric(b, cost, &cfg, None)
                    .map(|r| (r.dual_value(b, b), r.converged))
            })
            .collect::<Result<Vec<_>>>()?;
        state.nonconverged_solves += selfs.iter().filter(|(_, c)| !c).count();
        state.cache.beta_self = Some(selfs.into_iter().map(|(v, _)| v).collect());
        state.cache.warm_cross = vec![None; m];
    }
    if state.cache.candidates.is_none() {
        state.cache.candidates = grid_candidates(problem, &fcfg.minimize)?;
    }

    let alpha = &state.iterate;
    let solve = |beta: &DiscreteMeasure, warm: Option<&Vec<f64>>| -> Result<SinkhornResult> {
        SinkhornSolver::new(alpha, beta, cost, &step_cfg, warm.map(Vec::as_slice))?.run(&step_cfg)
    };
    // index 0 is the symmetric problem, then one per input measure
    let results: Vec<SinkhornResult> = (0..=m)
        .into_par_iter()
        .map(|j| {
            if j == 0 {
                sinkhorn_symmetric(alpha, cost, &step_cfg, state.cache.warm_sym.as_deref())
            } else {
                solve(&problem.measures()[j - 1], state.cache.warm_cross[j - 1].as_ref())
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let sweeps: usize = results.iter().map(|r| r.iterations_used).sum();
    state.nonconverged_solves += results.iter().filter(|r| !r.converged).count();

    let sym = &results[0];
    let beta_self = state.cache.beta_self.as_ref().expect("cached above");
    let ot_aa = sym.dual_value(alpha, alpha);
    let mut objective = 0.0;
    let mut parts = Vec::with_capacity(m);
    for (j, beta) in problem.measures().iter().enumerate() {
        let r = &results[j + 1];
        let w = problem.mix_weights()[j];
        objective += w * (r.dual_value(alpha, beta) - 0.5 * ot_aa - 0.5 * beta_self[j]);
        parts.push((
            w,
            potential_extend(beta.points(), beta.weights(), &r.v_values, eps, cost)?,
        ));
    }
    let p = potential_extend(alpha.points(), alpha.weights(), &sym.v_values, eps, cost)?;
    let phi = Phi {
        parts,
        subtract: Some(p),
        offset: 0.0,
    };

    let domain = {
        let x0 = Points::new(problem.dim(), alpha.points().get(0).to_vec())?;
        let mut sets: Vec<&Points> = problem.measures().iter().map(DiscreteMeasure::points).collect();
        sets.push(&x0);
        Domain::bounding(&sets, fcfg.merge_radius)?
    };
    let pool_storage;
    let pool = match &state.cache.candidates {
        Some(c) => c,
        None => {
            pool_storage = Points::concat(&[&problem.all_atoms(), alpha.points()])?;
            &pool_storage
        }
    };
    let mut rng = rng::trial_stream(fcfg.seed, rng::streams::MULTISTART, k as u64);
    let x_next = minimize_phi(&phi, &fcfg.minimize, &domain, pool, &mut rng)?;

    let phi_alpha = alpha.pair(|x| phi.eval(x));
    let gap = phi_alpha - phi.eval(&x_next);

    // a repeat of an existing atom only adds to its weight
    let repeat = alpha.points().iter().position(|x| x == x_next.as_slice());

    // warm starts for alpha_{k+1}: old values plus the extension at the new atom
    let mut warm_sym = sym.u_values.clone();
    let mut warm_cross: Vec<Option<Vec<f64>>> = results[1..].iter().map(|r| Some(r.u_values.clone())).collect();
    if repeat.is_none() {
        warm_sym.push(phi.subtract.as_ref().expect("p").eval(&x_next));
        for ((_, u), w) in phi.parts.iter().zip(&mut warm_cross) {
            w.as_mut().expect("set above").push(u.eval(&x_next));
        }
    }

    let kf = k as f64;
    let mut points = alpha.points().clone();
    let mut weights: Vec<f64> = alpha.weights().iter().map(|a| kf * a / (kf + 2.0)).collect();
    match repeat {
        Some(i) => weights[i] += 2.0 / (kf + 2.0),
        None => {
            points.push(&x_next);
            weights.push(2.0 / (kf + 2.0));
        }
    }
    let next = DiscreteMeasure::new(points, weights)?;

    state.objective_trace.push(objective);
    state.gap_trace.push(gap);
    state.selected_points.push(x_next);
    state.sinkhorn_iters.push(sweeps);
    state.cache.warm_sym = Some(warm_sym);
    state.cache.warm_cross = warm_cross;
    state.iterate = next;
    state.k += 1;
    Ok(state)
}

/// Runs `fcfg.iterations` Frank-Wolfe steps from `delta_{x0}`.
///
/// The returned state carries `B(alpha_k)` for `k = 0..=K` and the final
/// iterate consolidated with `fcfg.merge_radius`.
pub fn barycenter(
    problem: &BarycenterProblem,
    scfg: &SinkhornConfig,
    fcfg: &FwConfig,
) -> Result<FwState> {
    scfg.validate()?;
    if fcfg.iterations == 0 {
        return Err(Error::InvalidConfig("iterations must be >= 1".into()));
    }
    if !(fcfg.merge_radius >= 0.0) {
        return Err(Error::InvalidConfig("merge radius must be >= 0".into()));
    }
    fcfg.schedule(scfg.epsilon).validate()?;
    if let MinimizeMode::Continuous { .. } = fcfg.minimize {
        if !problem.cost().is_differentiable() {
            return Err(Error::UnsupportedCost);
        }
    }
    let x0 = fcfg
        .initial_point
        .clone()
        .unwrap_or_else(|| problem.default_start());
    if x0.len() != problem.dim() {
        return Err(Error::DimensionMismatch {
            expected: problem.dim(),
            found: x0.len(),
        });
    }
    let candidates = grid_candidates(problem, &fcfg.minimize)?;
    let mut sets: Vec<&Points> = problem.measures().iter().map(DiscreteMeasure::points).collect();
    if let Some(c) = &candidates {
        sets.push(c);
    }
    if !Domain::bounding(&sets, fcfg.merge_radius)?.contains(&x0) {
        return Err(Error::InvalidConfig("initial point lies outside the domain".into()));
    }

    let mut state = FwState::new(&x0);
    state.cache.candidates = candidates;
    for _ in 0..fcfg.iterations {
        state = fw_step(state, problem, scfg, fcfg)?;
    }
    let final_value = final_objective(&state, problem, scfg)?;
    state.objective_trace.push(final_value);
    state.consolidated = Some(state.iterate.consolidate(fcfg.merge_radius));
    Ok(state)
}

fn final_objective(state: &FwState, problem: &BarycenterProblem, scfg: &SinkhornConfig) -> Result<f64> {
    let alpha = &state.iterate;
    let cost = problem.cost();
    let cfg = SinkhornConfig {
        anchor_index: 0,
        ..scfg.clone()
    };
    let sym = sinkhorn_symmetric(alpha, cost, &cfg, state.cache.warm_sym.as_deref())?;
    let ot_aa = sym.dual_value(alpha, alpha);
    let beta_self = state.cache.beta_self.as_ref().expect("at least one step ran");
    let mut value = 0.0;
    for (j, beta) in problem.measures().iter().enumerate() {
        let warm = state.cache.warm_cross.get(j).and_then(|w| w.as_deref());
        let r = SinkhornSolver::new(alpha, beta, cost, &cfg, warm)?.run(&cfg)?;
        value += problem.mix_weights()[j] * (r.dual_value(alpha, beta) - 0.5 * ot_aa - 0.5 * beta_self[j]);
    }
    Ok(value)
}

/// `B(alpha) = sum_j w_j S(alpha, beta_j)`.
pub fn objective(
    alpha: &DiscreteMeasure,
    problem: &BarycenterProblem,
    scfg: &SinkhornConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for (beta, w) in problem.measures().iter().zip(problem.mix_weights()) {
        total += w * sinkhorn_divergence(alpha, beta, problem.cost(), scfg)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::dirac;

    fn segment(n: usize) -> Points {
        let coords = (0..n).flat_map(|i| [i as f64 / (n - 1) as f64, 0.0]).collect();
        Points::new(2, coords).unwrap()
    }

    fn two_diracs() -> BarycenterProblem {
        BarycenterProblem::new(
            vec![dirac(&[0.0, 0.0]), dirac(&[1.0, 0.0])],
            None,
            CostSpec::squared_euclidean(),
        )
        .unwrap()
    }

    #[test]
    fn problem_validation() {
        let c = CostSpec::squared_euclidean();
        assert!(BarycenterProblem::new(vec![], None, c.clone()).is_err());
        assert!(BarycenterProblem::new(vec![dirac(&[0.0]), dirac(&[0.0, 1.0])], None, c.clone()).is_err());
        assert!(BarycenterProblem::new(vec![dirac(&[0.0])], Some(vec![0.5]), c.clone()).is_err());
        assert!(BarycenterProblem::new(vec![dirac(&[0.0])], Some(vec![1.0, 0.0]), c).is_err());
    }

    #[test]
    fn schedule_product_is_nondecreasing() {
        for s in [
            DeltaSchedule::Harmonic { c1: 0.1, c2: 0.3 },
            DeltaSchedule::Constant { c1: 0.1, c2: 0.3 },
        ] {
            let mut prev = 0.0;
            for k in 0..10_000 {
                let (d1, d2) = s.at(k);
                let prod = d1.min(d2) * (k + 2) as f64;
                assert!(d1 > 0.0 && d2 > 0.0);
                assert!(prod >= prev - 1e-12);
                prev = prod;
            }
        }
    }

    #[test]
    fn dirac_target_is_a_fixed_point() {
        let y = [0.3, -0.2];
        let problem = BarycenterProblem::new(vec![dirac(&y)], None, CostSpec::squared_euclidean()).unwrap();
        let scfg = SinkhornConfig::new(0.1);
        for minimize in [MinimizeMode::grid_over_supports(), MinimizeMode::continuous()] {
            let fcfg = FwConfig {
                iterations: 10,
                minimize,
                initial_point: Some(y.to_vec()),
                ..Default::default()
            };
            let state = barycenter(&problem, &scfg, &fcfg).unwrap();
            for x in &state.selected_points {
                assert!((x[0] - y[0]).abs() < 1e-6 && (x[1] - y[1]).abs() < 1e-6, "{x:?}");
            }
            assert_eq!(state.result().len(), 1);
        }
    }

    #[test]
    fn first_step_replaces_the_start() {
        let problem = two_diracs();
        let scfg = SinkhornConfig::new(0.1);
        let fcfg = FwConfig {
            iterations: 1,
            minimize: MinimizeMode::grid(segment(41)),
            initial_point: Some(vec![0.0, 0.0]),
            ..Default::default()
        };
        let s = fw_step(FwState::new(&[0.0, 0.0]), &problem, &scfg, &fcfg).unwrap();
        let x1 = &s.selected_points[0];
        let (last, w) = s.iterate.atom(s.iterate.len() - 1);
        assert_eq!(last, x1.as_slice());
        assert_eq!(w, 1.0);
        assert_eq!(s.iterate.weights().iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn weight_recursion_and_support_growth() {
        let problem = two_diracs();
        let scfg = SinkhornConfig::new(0.1);
        let fcfg = FwConfig {
            iterations: 12,
            minimize: MinimizeMode::grid(segment(41)),
            ..Default::default()
        };
        let state = barycenter(&problem, &scfg, &fcfg).unwrap();
        let mut expected = vec![1.0];
        for k in 0..12 {
            let kf = k as f64;
            expected = expected.iter().map(|a| kf * a / (kf + 2.0)).collect();
            expected.push(2.0 / (kf + 2.0));
        }
        // fold the per-step masses onto distinct points, first occurrence order
        let mut seq = vec![problem.default_start()];
        seq.extend(state.selected_points.iter().cloned());
        let mut distinct: Vec<(Vec<f64>, f64)> = Vec::new();
        for (x, e) in seq.into_iter().zip(&expected) {
            match distinct.iter_mut().find(|(y, _)| *y == x) {
                Some(slot) => slot.1 += e,
                None => distinct.push((x, *e)),
            }
        }
        assert_eq!(state.iterate.len(), distinct.len());
        for (i, (x, e)) in distinct.iter().enumerate() {
            let (y, w) = state.iterate.atom(i);
            assert_eq!(y, x.as_slice());
            assert!((w - e).abs() < 1e-14);
        }
        assert!((state.iterate.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn step_five_weights() {
        let problem = two_diracs();
        let scfg = SinkhornConfig::new(0.1);
        let fcfg = FwConfig {
            iterations: 5,
            minimize: MinimizeMode::grid(segment(41)),
            ..Default::default()
        };
        let mut state = FwState::new(&problem.default_start());
        for _ in 0..5 {
            state = fw_step(state, &problem, &scfg, &fcfg).unwrap();
        }
        let before = state.iterate.weights().to_vec();
        let after = fw_step(state, &problem, &scfg, &fcfg).unwrap();
        let x6 = after.selected_points[5].clone();
        let w = after.iterate.weights();
        let hit = after.iterate.points().iter().position(|x| x == x6.as_slice()).unwrap();
        let mut expected: Vec<f64> = before.iter().map(|b| 5.0 / 7.0 * b).collect();
        if hit == before.len() {
            expected.push(2.0 / 7.0);
        } else {
            expected[hit] += 2.0 / 7.0;
        }
        assert_eq!(w.len(), expected.len());
        for (a, e) in w.iter().zip(&expected) {
            assert!((a - e).abs() < 1e-15);
        }
    }

    #[test]
    fn gap_certificate_and_determinism() {
        let problem = two_diracs();
        let scfg = SinkhornConfig::new(0.1);
        let fcfg = FwConfig {
            iterations: 15,
            minimize: MinimizeMode::continuous(),
            seed: 3,
            ..Default::default()
        };
        let a = barycenter(&problem, &scfg, &fcfg).unwrap();
        let b = barycenter(&problem, &scfg, &fcfg).unwrap();
        assert_eq!(a.iterate, b.iterate);
        assert_eq!(a.gap_trace, b.gap_trace);
        let sched = fcfg.schedule(scfg.epsilon);
        for (k, g) in a.gap_trace.iter().enumerate() {
            assert!(*g >= -sched.at(k).1 / 2.0, "gap {g} at {k}");
        }
        assert_eq!(a.objective_trace.len(), 16);
    }

    #[test]
    fn grid_argmin_matches_enumeration() {
        let c = CostSpec::squared_euclidean();
        let support = Points::from_rows(vec![vec![0.1, 0.2], vec![0.8, 0.5], vec![0.4, 0.9]]).unwrap();
        let u = potential_extend(&support, &[0.2, 0.5, 0.3], &[0.1, -0.3, 0.2], 0.05, &c).unwrap();
        let phi = Phi {
            parts: vec![(1.0, u)],
            subtract: None,
            offset: 0.0,
        };
        let cands = Points::from_rows(vec![
            vec![0.0, 0.0],
            vec![0.5, 0.5],
            vec![0.8, 0.4],
            vec![0.2, 0.2],
            vec![1.0, 1.0],
        ])
        .unwrap();
        let mut best = (f64::INFINITY, 0);
        for i in 0..5 {
            let v = phi.eval(cands.get(i));
            if v < best.0 {
                best = (v, i);
            }
        }
        assert_eq!(grid_argmin(&phi, &cands), Some(best.1));
        let shifted = Phi { offset: 12.5, ..phi.clone() };
        assert_eq!(grid_argmin(&shifted, &cands), Some(best.1));
    }

    #[test]
    fn continuous_mode_finds_single_atom_minimizer() {
        let c = CostSpec::squared_euclidean();
        let y = Points::from_rows(vec![vec![0.3, 0.7]]).unwrap();
        let u = potential_extend(&y, &[1.0], &[0.4], 0.1, &c).unwrap();
        let domain = Domain::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let far = Points::from_rows(vec![vec![0.9, 0.1]]).unwrap();
        for offset in [0.0, -3.0] {
            let phi = Phi {
                parts: vec![(1.0, u.clone())],
                subtract: None,
                offset,
            };
            let x = minimize_phi(&phi, &MinimizeMode::continuous(), &domain, &far, &mut rng::stream(1, 2))
                .unwrap();
            assert!((x[0] - 0.3).abs() < 1e-6 && (x[1] - 0.7).abs() < 1e-6, "{x:?}");
        }
    }

    #[test]
    fn objective_properties() {
        let c = CostSpec::squared_euclidean();
        let scfg = SinkhornConfig::new(0.2).with_tolerance(1e-11);
        let b1 = DiscreteMeasure::from_rows(vec![vec![0.0], vec![1.0]], vec![0.3, 0.7]).unwrap();
        let b2 = DiscreteMeasure::from_rows(vec![vec![0.5], vec![2.0]], vec![0.6, 0.4]).unwrap();
        let single = BarycenterProblem::new(vec![b1.clone()], None, c.clone()).unwrap();
        assert!(objective(&b1, &single, &scfg).unwrap().abs() < 2.0 * scfg.tolerance);

        let p = BarycenterProblem::new(vec![b1.clone(), b2.clone()], Some(vec![0.25, 0.75]), c.clone()).unwrap();
        let q = BarycenterProblem::new(vec![b2, b1], Some(vec![0.75, 0.25]), c).unwrap();
        let a = DiscreteMeasure::from_rows(vec![vec![0.2], vec![1.4]], vec![0.5, 0.5]).unwrap();
        let a2 = DiscreteMeasure::from_rows(vec![vec![-0.3]], vec![1.0]).unwrap();
        let (pa, qa) = (objective(&a, &p, &scfg).unwrap(), objective(&a, &q, &scfg).unwrap());
        assert!((pa - qa).abs() < 1e-12);
        let mid = a.mix(&a2, 0.5).unwrap();
        let lhs = objective(&mid, &p, &scfg).unwrap();
        let rhs = 0.5 * pa + 0.5 * objective(&a2, &p, &scfg).unwrap();
        assert!(lhs <= rhs + 4.0 * scfg.tolerance);
    }

    #[test]
    fn start_outside_domain_is_rejected() {
        let fcfg = FwConfig {
            iterations: 1,
            initial_point: Some(vec![5.0, 5.0]),
            ..Default::default()
        };
        assert!(barycenter(&two_diracs(), &SinkhornConfig::new(0.1), &fcfg).is_err());
    }
}
