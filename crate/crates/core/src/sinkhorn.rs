//! Log-domain Sinkhorn-Knopp between discrete measures, continuous
//! extensions of the dual potentials, and the Sinkhorn divergence.
//!
//! Potentials are anchored: `u(x_o) = 0` where `x_o` is the atom
//! `anchor_index` of the first measure. With that normalization the pair
//! `(u, v)` is unique and the fixed-point map contracts in Hilbert's
//! projective metric with ratio `lambda^2`, `lambda = tanh(D / 2 eps)`.

use serde::Serialize;

use crate::cost::{CostSpec, Matrix};
use crate::error::{Error, Result};
use crate::measure::{DiscreteMeasure, Points};

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    /// Sup-norm threshold, in cost units, on the change of the anchored
    /// potential `u` between sweeps. Also the target of the a-priori bound.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub anchor_index: usize,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            tolerance: 1e-9,
            max_iterations: 100_000,
            anchor_index: 0,
        }
    }
}

impl SinkhornConfig {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Self::default()
        }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "tolerance must be > 0, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// Converged (or partial) potentials evaluated on the two supports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SinkhornResult {
    #[serde(rename = "u")]
    pub u_values: Vec<f64>,
    #[serde(rename = "v")]
    pub v_values: Vec<f64>,
    #[serde(rename = "iters")]
    pub iterations_used: usize,
    /// A-priori bound `lambda^(2l) (D/eps + osc(u0)/eps)` on the log-domain
    /// error of `u` after `l` sweeps.
    pub certified_error: f64,
    pub converged: bool,
    #[serde(skip)]
    pub diameter: f64,
}

impl SinkhornResult {
    pub fn ensure_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::MaxIterationsExceeded {
                iterations: self.iterations_used,
            })
        }
    }

    /// `<u, alpha> + <v, beta>`.
    pub fn dual_value(&self, alpha: &DiscreteMeasure, beta: &DiscreteMeasure) -> f64 {
        dot(alpha.weights(), &self.u_values) + dot(beta.weights(), &self.v_values)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(e^{D/eps} - 1) / (e^{D/eps} + 1)`.
pub fn contraction_lambda(diameter: f64, epsilon: f64) -> f64 {
    (0.5 * diameter / epsilon).tanh()
}

/// Hilbert projective distance between `f` and `g` given their logarithms.
pub fn hilbert_distance(log_f: &[f64], log_g: &[f64]) -> Result<f64> {
    if log_f.len() != log_g.len() {
        return Err(Error::LengthMismatch {
            left: log_f.len(),
            right: log_g.len(),
        });
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (a, b) in log_f.iter().zip(log_g) {
        let d = a - b;
        lo = lo.min(d);
        hi = hi.max(d);
    }
    Ok(if log_f.is_empty() { 0.0 } else { hi - lo })
}

/// `-log sum_i exp(s_i - k_i)`, shifted by the max term.
#[inline]
fn neg_lse(shift: &[f64], kernel_row: &[f64]) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for (s, k) in shift.iter().zip(kernel_row) {
        let t = s - k;
        if t > m {
            m = t;
        }
    }
    if m == f64::NEG_INFINITY {
        return f64::INFINITY;
    }
    let mut acc = 0.0;
    for (s, k) in shift.iter().zip(kernel_row) {
        acc += (s - k - m).exp();
    }
    -(m + acc.ln())
}

/// Stateful log-domain solver, exposed so that diagnostics can observe every
/// sweep. Works on the positive-weight atoms only and in units of `eps`:
/// `f = u / eps`, `g = v / eps`.
pub struct SinkhornSolver<'a> {
    alpha: &'a DiscreteMeasure,
    beta: &'a DiscreteMeasure,
    cost: &'a CostSpec,
    epsilon: f64,
    keep_a: Vec<usize>,
    keep_b: Vec<usize>,
    log_a: Vec<f64>,
    log_b: Vec<f64>,
    /// `C / eps`, rows over alpha atoms.
    k_ab: Matrix,
    /// `C^T / eps`, rows over beta atoms.
    k_ba: Matrix,
    /// `c(x_o, y_j) / eps` when the anchor atom carries zero weight.
    anchor_row: Option<Vec<f64>>,
    anchor_reduced: Option<usize>,
    f: Vec<f64>,
    g: Vec<f64>,
    shift: Vec<f64>,
    diameter: f64,
    log_lambda: f64,
    initial_osc: f64,
    sweeps: usize,
}

impl<'a> SinkhornSolver<'a> {
    /// `init_u` (cost units, one entry per atom of `alpha`) warm-starts the
    /// iteration; the default is `u = 0`.
    pub fn new(
        alpha: &'a DiscreteMeasure,
        beta: &'a DiscreteMeasure,
        cost: &'a CostSpec,
        cfg: &SinkhornConfig,
        init_u: Option<&[f64]>,
    ) -> Result<Self> {
        cfg.validate()?;
        if alpha.dim() != beta.dim() {
            return Err(Error::DimensionMismatch {
                expected: alpha.dim(),
                found: beta.dim(),
            });
        }
        if cfg.anchor_index >= alpha.len() {
            return Err(Error::InvalidConfig(format!(
                "anchor index {} out of range for {} atoms",
                cfg.anchor_index,
                alpha.len()
            )));
        }
        let eps = cfg.epsilon;
        let (ra, keep_a) = alpha.positive_part();
        let (rb, keep_b) = beta.positive_part();
        let c = cost.cost_matrix(ra.points(), rb.points())?;
        let mut diameter = c.max().max(0.0);
        if let Some(d) = cost.diameter {
            diameter = diameter.max(d);
        }
        let scaled: Vec<f64> = c.as_slice().iter().map(|v| v / eps).collect();
        let k_ab = Matrix::from_vec(c.rows(), c.cols(), scaled)?;
        let k_ba = k_ab.transpose();

        let anchor_reduced = keep_a.iter().position(|&i| i == cfg.anchor_index);
        let anchor_row = match anchor_reduced {
            Some(_) => None,
            None => {
                let x_o = alpha.points().get(cfg.anchor_index);
                Some(rb.points().iter().map(|y| cost.eval(x_o, y) / eps).collect())
            }
        };

        let f = match init_u {
            Some(u) => {
                if u.len() != alpha.len() {
                    return Err(Error::LengthMismatch {
                        left: u.len(),
                        right: alpha.len(),
                    });
                }
                keep_a.iter().map(|&i| u[i] / eps).collect()
            }
            None => vec![0.0; keep_a.len()],
        };
        let initial_osc = osc(&f);
        let lambda = contraction_lambda(diameter, eps);
        Ok(Self {
            alpha,
            beta,
            cost,
            epsilon: eps,
            log_a: ra.weights().iter().map(|w| w.ln()).collect(),
            log_b: rb.weights().iter().map(|w| w.ln()).collect(),
            keep_a,
            keep_b,
            k_ab,
            k_ba,
            anchor_row,
            anchor_reduced,
            g: vec![0.0; rb.len()],
            shift: Vec::new(),
            f,
            diameter,
            log_lambda: lambda.ln(),
            initial_osc,
            sweeps: 0,
        })
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn lambda(&self) -> f64 {
        self.log_lambda.exp()
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    /// Anchored `u / eps` on the positive-weight atoms of alpha.
    pub fn log_u(&self) -> &[f64] {
        &self.f
    }

    /// `lambda^(2l) (D/eps + osc(f0))`.
    pub fn certified_error(&self) -> f64 {
        let bound = self.diameter / self.epsilon + self.initial_osc;
        if self.log_lambda == f64::NEG_INFINITY {
            return if self.sweeps == 0 { bound } else { 0.0 };
        }
        (2.0 * self.sweeps as f64 * self.log_lambda).exp() * bound
    }

    /// One full sweep `v <- T_alpha(u)`, `u <- T_beta(v)`, then re-anchoring.
    /// Returns the sup-norm change of `u` in cost units.
    pub fn sweep(&mut self) -> Result<f64> {
        self.shift.clear();
        self.shift
            .extend(self.log_a.iter().zip(&self.f).map(|(la, f)| la + f));
        for (j, g) in self.g.iter_mut().enumerate() {
            *g = neg_lse(&self.shift, self.k_ba.row(j));
        }
        self.shift.clear();
        self.shift
            .extend(self.log_b.iter().zip(&self.g).map(|(lb, g)| lb + g));
        let t = match (&self.anchor_row, self.anchor_reduced) {
            (Some(row), _) => neg_lse(&self.shift, row),
            (None, Some(r)) => neg_lse(&self.shift, self.k_ab.row(r)),
            (None, None) => unreachable!("anchor is either kept or has a cost row"),
        };
        if !t.is_finite() {
            return Err(Error::NumericalOverflow);
        }
        let mut change = 0.0f64;
        for (i, f) in self.f.iter_mut().enumerate() {
            let next = neg_lse(&self.shift, self.k_ab.row(i)) - t;
            if !next.is_finite() {
                return Err(Error::NumericalOverflow);
            }
            change = change.max((next - *f).abs());
            *f = next;
        }
        if let Some(r) = self.anchor_reduced {
            self.f[r] = 0.0;
        }
        for g in &mut self.g {
            *g += t;
        }
        self.sweeps += 1;
        Ok(change * self.epsilon)
    }

    /// Sweeps until the a-posteriori or a-priori criterion certifies
    /// `tolerance`, or the iteration budget runs out.
    pub fn run(mut self, cfg: &SinkhornConfig) -> Result<SinkhornResult> {
        let mut converged = false;
        while self.sweeps < cfg.max_iterations {
            let change = self.sweep()?;
            if change < cfg.tolerance || self.epsilon * self.certified_error() <= cfg.tolerance {
                converged = true;
                break;
            }
        }
        Ok(self.finish(converged))
    }

    /// Lifts the reduced potentials back onto every atom; zero-weight atoms
    /// get the pointwise extension.
    pub fn finish(self, converged: bool) -> SinkhornResult {
        let eps = self.epsilon;
        let mut u = vec![0.0; self.alpha.len()];
        let mut v = vec![0.0; self.beta.len()];
        let (ra_pts, rb_pts) = (
            self.alpha.points().select(&self.keep_a),
            self.beta.points().select(&self.keep_b),
        );
        let fill = |out: &mut [f64], keep: &[usize], vals: &[f64], all: &Points, other: &Points, other_shift: &[f64]| {
            let mut kept = keep.iter().zip(vals).peekable();
            let mut row = Vec::with_capacity(other.len());
            for (i, x) in all.iter().enumerate() {
                if let Some((&k, &val)) = kept.peek() {
                    if k == i {
                        out[i] = val * eps;
                        kept.next();
                        continue;
                    }
                }
                row.clear();
                row.extend(other.iter().map(|y| self.cost.eval(x, y) / eps));
                out[i] = neg_lse(other_shift, &row) * eps;
            }
        };
        let shift_b: Vec<f64> = self.log_b.iter().zip(&self.g).map(|(l, g)| l + g).collect();
        let shift_a: Vec<f64> = self.log_a.iter().zip(&self.f).map(|(l, f)| l + f).collect();
        fill(&mut u, &self.keep_a, &self.f, self.alpha.points(), &rb_pts, &shift_b);
        fill(&mut v, &self.keep_b, &self.g, self.beta.points(), &ra_pts, &shift_a);
        if self.anchor_reduced.is_none() {
            // the extension reproduces the anchor value only up to rounding
            let anchor = self
                .anchor_row
                .as_ref()
                .map(|row| neg_lse(&shift_b, row) * eps)
                .unwrap_or(0.0);
            for (i, ui) in u.iter_mut().enumerate() {
                if !self.keep_a.contains(&i) {
                    *ui -= anchor;
                }
            }
        }
        SinkhornResult {
            certified_error: self.certified_error(),
            u_values: u,
            v_values: v,
            iterations_used: self.sweeps,
            converged,
            diameter: self.diameter,
        }
    }
}

fn osc(values: &[f64]) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

/// Solves the entropic dual between `alpha` and `beta` starting from `u = 0`.
///
/// Hitting `max_iterations` is not an error here: the partial result comes
/// back with `converged == false`.
pub fn sinkhorn_knopp(
    alpha: &DiscreteMeasure,
    beta: &DiscreteMeasure,
    cost: &CostSpec,
    cfg: &SinkhornConfig,
) -> Result<SinkhornResult> {
    SinkhornSolver::new(alpha, beta, cost, cfg, None)?.run(cfg)
}

/// Same as [`sinkhorn_knopp`] with a warm start for `u` on alpha's atoms.
pub fn sinkhorn_knopp_warm(
    alpha: &DiscreteMeasure,
    beta: &DiscreteMeasure,
    cost: &CostSpec,
    cfg: &SinkhornConfig,
    init_u: &[f64],
) -> Result<SinkhornResult> {
    SinkhornSolver::new(alpha, beta, cost, cfg, Some(init_u))?.run(cfg)
}

/// Self-transport problem `(alpha, alpha)` solved with the averaged update
/// `f <- (f + T_alpha(f)) / 2`, whose fixed point is the symmetric potential.
/// Plain alternation oscillates here and can take thousands of sweeps.
///
/// The result is reported in the anchored convention of [`sinkhorn_knopp`]:
/// `u = f - f(x_o)`, `v = f + f(x_o)`. `init_u` may be any potential on
/// alpha's atoms; only its shape matters. `certified_error` holds the last
/// sup-norm residual `|T(f) - f| / eps`.
pub fn sinkhorn_symmetric(
    alpha: &DiscreteMeasure,
    cost: &CostSpec,
    cfg: &SinkhornConfig,
    init_u: Option<&[f64]>,
) -> Result<SinkhornResult> {
    cfg.validate()?;
    if cfg.anchor_index >= alpha.len() {
        return Err(Error::InvalidConfig(format!(
            "anchor index {} out of range for {} atoms",
            cfg.anchor_index,
            alpha.len()
        )));
    }
    let eps = cfg.epsilon;
    let (ra, keep) = alpha.positive_part();
    let c = cost.cost_matrix(ra.points(), ra.points())?;
    let mut diameter = c.max().max(0.0);
    if let Some(d) = cost.diameter {
        diameter = diameter.max(d);
    }
    let kernel: Vec<f64> = c.as_slice().iter().map(|v| v / eps).collect();
    let n = keep.len();
    let log_a: Vec<f64> = ra.weights().iter().map(|w| w.ln()).collect();
    let mut f: Vec<f64> = match init_u {
        Some(u) => {
            if u.len() != alpha.len() {
                return Err(Error::LengthMismatch {
                    left: u.len(),
                    right: alpha.len(),
                });
            }
            keep.iter().map(|&i| u[i] / eps).collect()
        }
        None => vec![0.0; n],
    };
    let mut shift = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut sweeps = 0;
    let mut residual = f64::INFINITY;
    let mut converged = false;
    while sweeps < cfg.max_iterations {
        for ((s, la), fi) in shift.iter_mut().zip(&log_a).zip(&f) {
            *s = la + fi;
        }
        residual = 0.0f64;
        for (i, out) in next.iter_mut().enumerate() {
            let t = neg_lse(&shift, &kernel[i * n..(i + 1) * n]);
            if !t.is_finite() {
                return Err(Error::NumericalOverflow);
            }
            residual = residual.max((t - f[i]).abs());
            *out = 0.5 * (f[i] + t);
        }
        std::mem::swap(&mut f, &mut next);
        sweeps += 1;
        if residual * eps < cfg.tolerance {
            converged = true;
            break;
        }
    }

    // values on every atom, zero-weight ones by pointwise extension
    for ((s, la), fi) in shift.iter_mut().zip(&log_a).zip(&f) {
        *s = la + fi;
    }
    let mut full = vec![0.0; alpha.len()];
    let mut kept = keep.iter().zip(&f).peekable();
    let mut row = Vec::with_capacity(n);
    for (i, x) in alpha.points().iter().enumerate() {
        if let Some((&k, &val)) = kept.peek() {
            if k == i {
                full[i] = val * eps;
                kept.next();
                continue;
            }
        }
        row.clear();
        row.extend(ra.points().iter().map(|y| cost.eval(x, y) / eps));
        full[i] = neg_lse(&shift, &row) * eps;
    }
    let anchor = full[cfg.anchor_index];
    let u: Vec<f64> = full.iter().map(|v| v - anchor).collect();
    let v: Vec<f64> = full.iter().map(|v| v + anchor).collect();
    Ok(SinkhornResult {
        u_values: u,
        v_values: v,
        iterations_used: sweeps,
        certified_error: residual,
        converged,
        diameter,
    })
}

/// The map `x -> -eps log sum_i b_i exp((v_i - c(x, y_i)) / eps)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialFn {
    support: Points,
    log_weights: Vec<f64>,
    dual_values: Vec<f64>,
    epsilon: f64,
    cost: CostSpec,
}

impl PotentialFn {
    pub fn support(&self) -> &Points {
        &self.support
    }

    pub fn dual_values(&self) -> &[f64] {
        &self.dual_values
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn cost(&self) -> &CostSpec {
        &self.cost
    }

    pub fn dim(&self) -> usize {
        self.support.dim()
    }

    /// Adds `t` to the function (equivalently to every dual value).
    pub fn shifted(mut self, t: f64) -> Self {
        for v in &mut self.dual_values {
            *v += t;
        }
        self
    }

    /// Re-anchors so that the function vanishes at `x_o`.
    pub fn anchored_at(self, x_o: &[f64]) -> Self {
        let t = self.eval(x_o);
        self.shifted(-t)
    }

    #[inline]
    fn exponent(&self, i: usize, x: &[f64]) -> f64 {
        self.log_weights[i]
            + (self.dual_values[i] - self.cost.eval(x, self.support.get(i))) / self.epsilon
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let n = self.dual_values.len();
        let mut m = f64::NEG_INFINITY;
        for i in 0..n {
            m = m.max(self.exponent(i, x));
        }
        if m == f64::NEG_INFINITY {
            return f64::INFINITY;
        }
        let mut acc = 0.0;
        for i in 0..n {
            acc += (self.exponent(i, x) - m).exp();
        }
        -self.epsilon * (m + acc.ln())
    }

    /// Value and spatial gradient at `x`.
    pub fn eval_with_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        if !self.cost.is_differentiable() {
            return Err(Error::UnsupportedCost);
        }
        let n = self.dual_values.len();
        let d = self.dim();
        let mut m = f64::NEG_INFINITY;
        for i in 0..n {
            m = m.max(self.exponent(i, x));
        }
        let mut acc = 0.0;
        let mut grad = vec![0.0; d];
        let mut gc = vec![0.0; d];
        for i in 0..n {
            let w = (self.exponent(i, x) - m).exp();
            if w == 0.0 {
                continue;
            }
            acc += w;
            self.cost.gradient_x(x, self.support.get(i), &mut gc)?;
            for (g, c) in grad.iter_mut().zip(&gc) {
                *g += w * c;
            }
        }
        for g in &mut grad {
            *g /= acc;
        }
        Ok((-self.epsilon * (m + acc.ln()), grad))
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.eval_with_gradient(x)?.1)
    }
}

/// Builds the continuous extension from a support, its weights and the dual
/// values on it.
pub fn potential_extend(
    support: &Points,
    weights: &[f64],
    dual_values: &[f64],
    epsilon: f64,
    cost: &CostSpec,
) -> Result<PotentialFn> {
    if support.len() != weights.len() || support.len() != dual_values.len() {
        return Err(Error::LengthMismatch {
            left: support.len(),
            right: weights.len().min(dual_values.len()),
        });
    }
    if weights.iter().any(|&w| w < 0.0) {
        return Err(Error::InvalidInput("potential weights must be nonnegative".into()));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidConfig("epsilon must be > 0".into()));
    }
    Ok(PotentialFn {
        support: support.clone(),
        log_weights: weights.iter().map(|w| w.ln()).collect(),
        dual_values: dual_values.to_vec(),
        epsilon,
        cost: cost.clone(),
    })
}

pub fn potential_gradient(f: &PotentialFn, x: &[f64]) -> Result<Vec<f64>> {
    f.gradient(x)
}

/// Entropic OT value in the primal-consistent convention `<u,alpha> + <v,beta>`.
pub fn ot_eps(
    alpha: &DiscreteMeasure,
    beta: &DiscreteMeasure,
    cost: &CostSpec,
    cfg: &SinkhornConfig,
) -> Result<f64> {
    if alpha == beta {
        return ot_self(alpha, cost, cfg);
    }
    let r = sinkhorn_knopp(alpha, beta, cost, cfg)?.ensure_converged()?;
    Ok(r.dual_value(alpha, beta))
}

/// `OT(alpha, alpha)` through the symmetric solver.
pub fn ot_self(alpha: &DiscreteMeasure, cost: &CostSpec, cfg: &SinkhornConfig) -> Result<f64> {
    let r = sinkhorn_symmetric(alpha, cost, cfg, None)?.ensure_converged()?;
    Ok(r.dual_value(alpha, alpha))
}

/// `OT(a,b) - OT(a,a)/2 - OT(b,b)/2`.
pub fn sinkhorn_divergence(
    alpha: &DiscreteMeasure,
    beta: &DiscreteMeasure,
    cost: &CostSpec,
    cfg: &SinkhornConfig,
) -> Result<f64> {
    let ab = ot_eps(alpha, beta, cost, cfg)?;
    let aa = ot_self(alpha, cost, cfg)?;
    let bb = ot_self(beta, cost, &SinkhornConfig { anchor_index: 0, ..cfg.clone() })?;
    Ok(ab - 0.5 * aa - 0.5 * bb)
}

/// Gradient of `S_eps(., beta)` at `alpha` as the pair `(u, p)`; the gradient
/// itself is `u - p`. Both are anchored at alpha's anchor atom.
pub fn grad_divergence(
    alpha: &DiscreteMeasure,
    beta: &DiscreteMeasure,
    cost: &CostSpec,
    cfg: &SinkhornConfig,
) -> Result<(PotentialFn, PotentialFn)> {
    let ab = sinkhorn_knopp(alpha, beta, cost, cfg)?.ensure_converged()?;
    let aa = sinkhorn_symmetric(alpha, cost, cfg, None)?.ensure_converged()?;
    let u = potential_extend(beta.points(), beta.weights(), &ab.v_values, cfg.epsilon, cost)?;
    let p = potential_extend(alpha.points(), alpha.weights(), &aa.v_values, cfg.epsilon, cost)?;
    Ok((u, p))
}
