//! Discrete probability measures on R^d.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Weight sums closer to 1 than this are silently renormalized.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-9;

/// A list of points in R^d stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    dim: usize,
    coords: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: 0,
            });
        }
        if !coords.len().is_multiple_of(dim) {
            return Err(Error::LengthMismatch {
                left: coords.len(),
                right: dim,
            });
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("non-finite coordinate".into()));
        }
        Ok(Self { dim, coords })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).ok_or(Error::EmptySupport)?;
        let mut coords = Vec::with_capacity(rows.len() * dim);
        for row in &rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            coords.extend_from_slice(row);
        }
        Self::new(dim, coords)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.coords
    }

    pub fn push(&mut self, x: &[f64]) {
        assert_eq!(x.len(), self.dim, "point dimension");
        self.coords.extend_from_slice(x);
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.iter().map(<[f64]>::to_vec).collect()
    }

    pub fn select(&self, indices: &[usize]) -> Points {
        let mut coords = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            coords.extend_from_slice(self.get(i));
        }
        Points {
            dim: self.dim,
            coords,
        }
    }

    pub fn concat(parts: &[&Points]) -> Result<Points> {
        let dim = parts.first().ok_or(Error::EmptySupport)?.dim;
        let mut coords = Vec::new();
        for p in parts {
            if p.dim != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.dim,
                });
            }
            coords.extend_from_slice(&p.coords);
        }
        Ok(Points { dim, coords })
    }
}

/// Weighted point cloud whose weights are nonnegative and sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    points: Points,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Validates and builds a measure. Weight sums within
    /// [`RENORMALIZE_TOLERANCE`] of 1 are rescaled, anything else is rejected.
    pub fn new(points: Points, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptySupport);
        }
        if points.len() != weights.len() {
            return Err(Error::LengthMismatch {
                left: points.len(),
                right: weights.len(),
            });
        }
        for (index, &value) in weights.iter().enumerate() {
            if value < 0.0 || value.is_nan() {
                return Err(Error::NegativeWeight { index, value });
            }
        }
        let sum: f64 = weights.iter().sum();
        if !sum.is_finite() || (sum - 1.0).abs() >= RENORMALIZE_TOLERANCE {
            return Err(Error::WeightSumOutOfTolerance { sum });
        }
        let weights = if sum == 1.0 {
            weights
        } else {
            weights.into_iter().map(|w| w / sum).collect()
        };
        Ok(Self { points, weights })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        Self::new(Points::from_rows(rows)?, weights)
    }

    /// Uniform weights over the given points.
    pub fn uniform(points: Points) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::EmptySupport);
        }
        Self::new(points, vec![1.0 / n as f64; n])
    }

    /// Normalizes arbitrary nonnegative masses into a measure.
    pub fn from_masses(points: Points, masses: Vec<f64>) -> Result<Self> {
        if let Some((index, &value)) = masses.iter().enumerate().find(|(_, &m)| m < 0.0) {
            return Err(Error::NegativeWeight { index, value });
        }
        let total: f64 = masses.iter().sum();
        if total <= 0.0 || !total.is_finite() {
            return Err(Error::WeightSumOutOfTolerance { sum: total });
        }
        Self::new(points, masses.into_iter().map(|m| m / total).collect())
    }

    pub fn dirac(x: &[f64]) -> Self {
        Self {
            points: Points::new(x.len().max(1), x.to_vec()).expect("dirac point"),
            weights: vec![1.0],
        }
    }

    pub fn points(&self) -> &Points {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn atom(&self, i: usize) -> (&[f64], f64) {
        (self.points.get(i), self.weights[i])
    }

    /// `<w, alpha> = sum_i a_i w(x_i)`.
    pub fn pair<F: FnMut(&[f64]) -> f64>(&self, mut w: F) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(x, a)| a * w(x))
            .sum()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for (x, &a) in self.points.iter().zip(&self.weights) {
            for (mi, xi) in m.iter_mut().zip(x) {
                *mi += a * xi;
            }
        }
        m
    }

    /// Weighted covariance (population form).
    pub fn covariance(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        let m = self.mean();
        let mut c = vec![vec![0.0; d]; d];
        for (x, &a) in self.points.iter().zip(&self.weights) {
            for r in 0..d {
                for s in 0..d {
                    c[r][s] += a * (x[r] - m[r]) * (x[s] - m[s]);
                }
            }
        }
        c
    }

    /// `(1 - t) * self + t * other`, concatenating supports.
    pub fn mix(&self, other: &DiscreteMeasure, t: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidInput(format!("mixing weight {t} not in [0,1]")));
        }
        let points = Points::concat(&[&self.points, &other.points])?;
        let weights = self
            .weights
            .iter()
            .map(|a| (1.0 - t) * a)
            .chain(other.weights.iter().map(|b| t * b))
            .collect();
        Self::new(points, weights)
    }

    /// Drops atoms with exactly zero weight, returning the kept indices.
    pub fn positive_part(&self) -> (Self, Vec<usize>) {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| self.weights[i] > 0.0).collect();
        let m = Self {
            points: self.points.select(&keep),
            weights: keep.iter().map(|&i| self.weights[i]).collect(),
        };
        (m, keep)
    }

    /// Merges atoms lying within `merge_radius` of each other.
    ///
    /// Groups are formed greedily: the heaviest remaining atom absorbs every
    /// remaining atom within the radius, and the group is placed at its
    /// weight-weighted centroid. With radius 0 only exact duplicates merge and
    /// coordinates are kept bit-for-bit. Zero-weight atoms are dropped. Output
    /// atoms follow the original index of each group's seed.
    pub fn consolidate(&self, merge_radius: f64) -> Self {
        assert!(merge_radius >= 0.0, "merge radius must be nonnegative");
        let n = self.len();
        let mut order: Vec<usize> = (0..n).filter(|&i| self.weights[i] > 0.0).collect();
        order.sort_by(|&a, &b| self.weights[b].total_cmp(&self.weights[a]).then(a.cmp(&b)));

        let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
        if merge_radius == 0.0 {
            let mut by_key: HashMap<Vec<u64>, usize> = HashMap::new();
            for &i in &order {
                let key = coord_key(self.points.get(i));
                match by_key.get(&key) {
                    Some(&g) => groups[g].1.push(i),
                    None => {
                        by_key.insert(key, groups.len());
                        groups.push((i, vec![i]));
                    }
                }
            }
        } else {
            let r2 = merge_radius * merge_radius;
            let mut taken = vec![false; n];
            for &seed in &order {
                if taken[seed] {
                    continue;
                }
                let center = self.points.get(seed);
                let members: Vec<usize> = order
                    .iter()
                    .copied()
                    .filter(|&j| !taken[j] && crate::cost::sq_dist(center, self.points.get(j)) <= r2)
                    .collect();
                for &j in &members {
                    taken[j] = true;
                }
                groups.push((seed, members));
            }
        }
        groups.sort_by_key(|(seed, _)| *seed);

        let d = self.dim();
        let mut coords = Vec::with_capacity(groups.len() * d);
        let mut weights = Vec::with_capacity(groups.len());
        for (seed, members) in &groups {
            let mass: f64 = members.iter().map(|&j| self.weights[j]).sum();
            if members.len() == 1 || merge_radius == 0.0 {
                coords.extend_from_slice(self.points.get(*seed));
            } else {
                let mut c = vec![0.0; d];
                for &j in members {
                    for (ck, xk) in c.iter_mut().zip(self.points.get(j)) {
                        *ck += self.weights[j] * xk;
                    }
                }
                coords.extend(c.into_iter().map(|v| v / mass));
            }
            weights.push(mass);
        }
        let total: f64 = weights.iter().sum();
        Self {
            points: Points { dim: d, coords },
            weights: weights.into_iter().map(|w| w / total).collect(),
        }
    }

    /// Axis-aligned bounding box of the support.
    pub fn bounding_box(&self) -> Domain {
        Domain::bounding(&[&self.points], 0.0).expect("nonempty measure")
    }
}

fn coord_key(x: &[f64]) -> Vec<u64> {
    // +0.0 folds -0.0 onto 0.0
    x.iter().map(|v| (v + 0.0).to_bits()).collect()
}

pub fn dirac(x: &[f64]) -> DiscreteMeasure {
    DiscreteMeasure::dirac(x)
}

/// Total variation `sum_z |alpha({z}) - alpha'({z})|` after merging exact
/// duplicates in each measure.
pub fn total_variation(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let (ca, cb) = (a.consolidate(0.0), b.consolidate(0.0));
    let mut diff: HashMap<Vec<u64>, f64> = HashMap::new();
    for (x, w) in ca.points.iter().zip(&ca.weights) {
        *diff.entry(coord_key(x)).or_default() += w;
    }
    for (x, w) in cb.points.iter().zip(&cb.weights) {
        *diff.entry(coord_key(x)).or_default() -= w;
    }
    let mut values: Vec<f64> = diff.into_values().map(f64::abs).collect();
    values.sort_by(f64::total_cmp);
    Ok(values.iter().sum())
}

/// Compact working set X, an axis-aligned box.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Domain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                found: hi.len(),
            });
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l <= h)) {
            return Err(Error::InvalidInput("domain requires lo <= hi".into()));
        }
        Ok(Self { lo, hi })
    }

    /// Bounding box of all given point sets, padded by `pad` on every side.
    pub fn bounding(sets: &[&Points], pad: f64) -> Result<Self> {
        let dim = sets.first().ok_or(Error::EmptySupport)?.dim();
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for set in sets {
            if set.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: set.dim(),
                });
            }
            for x in set.iter() {
                for k in 0..dim {
                    lo[k] = lo[k].min(x[k]);
                    hi[k] = hi[k].max(x[k]);
                }
            }
        }
        if lo[0] > hi[0] {
            return Err(Error::EmptySupport);
        }
        Self::new(
            lo.into_iter().map(|v| v - pad).collect(),
            hi.into_iter().map(|v| v + pad).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (l, h)) in x.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            *v = v.clamp(*l, *h);
        }
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    pub fn sample_uniform(&self, rng: &mut Rng) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| if h > l { rng.random_range(l..=h) } else { l })
            .collect()
    }

    /// Largest squared-euclidean cost between two points of the box.
    pub fn squared_diameter(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| (h - l) * (h - l)).sum()
    }
}

/// Converts a nonnegative 2-D intensity grid (row-major, `rows` x `cols`)
/// into a measure with atoms at pixel centers.
///
/// Pixel `(r, c)` sits at `((c + 0.5) * extent, (r + 0.5) * extent)`; zero
/// pixels are dropped.
pub fn image_to_measure(
    grid: &[f64],
    rows: usize,
    cols: usize,
    pixel_extent: f64,
) -> Result<DiscreteMeasure> {
    if grid.len() != rows * cols {
        return Err(Error::LengthMismatch {
            left: grid.len(),
            right: rows * cols,
        });
    }
    if let Some((index, &value)) = grid.iter().enumerate().find(|(_, &v)| v < 0.0 || v.is_nan()) {
        return Err(Error::NegativeWeight { index, value });
    }
    let mut coords = Vec::new();
    let mut masses = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let v = grid[r * cols + c];
            if v > 0.0 {
                coords.push((c as f64 + 0.5) * pixel_extent);
                coords.push((r as f64 + 0.5) * pixel_extent);
                masses.push(v);
            }
        }
    }
    if masses.is_empty() {
        return Err(Error::AllZeroImage);
    }
    DiscreteMeasure::from_masses(Points::new(2, coords)?, masses)
}

/// Inverse of [`image_to_measure`]: deposits each atom's weight into the
/// pixel containing it and rescales to `[0, 255]`.
pub fn rasterize(
    measure: &DiscreteMeasure,
    rows: usize,
    cols: usize,
    pixel_extent: f64,
) -> Result<Vec<u8>> {
    if measure.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: measure.dim(),
        });
    }
    let mut acc = vec![0.0f64; rows * cols];
    for (x, &w) in measure.points().iter().zip(measure.weights()) {
        let c = (x[0] / pixel_extent).floor();
        let r = (x[1] / pixel_extent).floor();
        if c >= 0.0 && r >= 0.0 && (c as usize) < cols && (r as usize) < rows {
            acc[r as usize * cols + c as usize] += w;
        }
    }
    let max = acc.iter().copied().fold(0.0, f64::max);
    Ok(acc
        .iter()
        .map(|&v| if max > 0.0 { (255.0 * v / max).round() as u8 } else { 0 })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSpec {
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

/// Distributions that [`sample_empirical`] can draw from.
#[derive(Debug, Clone, PartialEq)]
pub enum Sampler {
    Gaussian(GaussianSpec),
    /// Components with nonnegative relative weights (normalized on use).
    Mixture(Vec<(f64, GaussianSpec)>),
    UniformBox(Domain),
    /// Degenerate point mass.
    Dirac(Vec<f64>),
}

impl Sampler {
    pub fn dim(&self) -> usize {
        match self {
            Sampler::Gaussian(g) => g.mean.len(),
            Sampler::Mixture(c) => c.first().map_or(0, |(_, g)| g.mean.len()),
            Sampler::UniformBox(d) => d.dim(),
            Sampler::Dirac(x) => x.len(),
        }
    }
}

struct PreparedGaussian {
    mean: DVector<f64>,
    chol: DMatrix<f64>,
}

fn prepare(g: &GaussianSpec) -> Result<PreparedGaussian> {
    let d = g.mean.len();
    if g.covariance.len() != d || g.covariance.iter().any(|r| r.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: g.covariance.len(),
        });
    }
    let cov = DMatrix::from_fn(d, d, |r, c| g.covariance[r][c]);
    if (0..d).any(|r| (0..d).any(|c| cov[(r, c)] != cov[(c, r)])) {
        return Err(Error::NonPositiveDefiniteCovariance);
    }
    let chol = cov
        .cholesky()
        .ok_or(Error::NonPositiveDefiniteCovariance)?
        .l();
    Ok(PreparedGaussian {
        mean: DVector::from_vec(g.mean.clone()),
        chol,
    })
}

fn draw(g: &PreparedGaussian, rng: &mut Rng, out: &mut Vec<f64>) {
    let d = g.mean.len();
    let z = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
    let x = &g.mean + &g.chol * z;
    out.extend(x.iter());
}

/// Draws `n` i.i.d. atoms of weight `1/n` from `sampler`.
pub fn sample_empirical(sampler: &Sampler, n: usize, rng: &mut Rng) -> Result<DiscreteMeasure> {
    if n == 0 {
        return Err(Error::EmptySupport);
    }
    let d = sampler.dim();
    let mut coords = Vec::with_capacity(n * d);
    match sampler {
        Sampler::Gaussian(g) => {
            let p = prepare(g)?;
            for _ in 0..n {
                draw(&p, rng, &mut coords);
            }
        }
        Sampler::Mixture(components) => {
            if components.is_empty() {
                return Err(Error::EmptySupport);
            }
            let prepared = components
                .iter()
                .map(|(_, g)| prepare(g))
                .collect::<Result<Vec<_>>>()?;
            let total: f64 = components.iter().map(|(w, _)| *w).sum();
            if components.iter().any(|(w, _)| *w < 0.0) || total <= 0.0 {
                return Err(Error::InvalidInput("mixture weights must be nonnegative".into()));
            }
            for _ in 0..n {
                let mut u = rng.random::<f64>() * total;
                let mut pick = components.len() - 1;
                for (k, (w, _)) in components.iter().enumerate() {
                    if u < *w {
                        pick = k;
                        break;
                    }
                    u -= w;
                }
                draw(&prepared[pick], rng, &mut coords);
            }
        }
        Sampler::UniformBox(domain) => {
            for _ in 0..n {
                coords.extend(domain.sample_uniform(rng));
            }
        }
        Sampler::Dirac(x) => {
            for _ in 0..n {
                coords.extend_from_slice(x);
            }
        }
    }
    DiscreteMeasure::uniform(Points::new(d, coords)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    #[test]
    fn one_atom_measure() {
        let m = DiscreteMeasure::from_rows(vec![vec![0.0, 0.0]], vec![1.0]).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m, dirac(&[0.0, 0.0]));
    }

    #[test]
    fn weight_sum_too_large_is_rejected() {
        let r = DiscreteMeasure::from_rows(vec![vec![0.0], vec![1.0]], vec![0.5, 0.6]);
        assert!(matches!(r, Err(Error::WeightSumOutOfTolerance { .. })));
    }

    #[test]
    fn tiny_deviation_is_renormalized() {
        let m = DiscreteMeasure::from_rows(vec![vec![0.0], vec![1.0]], vec![0.5, 0.5 + 1e-12])
            .unwrap();
        assert!((m.weights().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(
            DiscreteMeasure::from_rows(vec![vec![0.0], vec![1.0, 2.0]], vec![0.5, 0.5]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            DiscreteMeasure::from_rows(vec![vec![0.0], vec![1.0]], vec![-0.5, 1.5]),
            Err(Error::NegativeWeight { .. })
        ));
        assert!(matches!(
            DiscreteMeasure::from_rows(vec![], vec![]),
            Err(Error::EmptySupport)
        ));
    }

    #[test]
    fn dirac_pairing_is_evaluation() {
        let x = [1.0, 2.0];
        let w = |p: &[f64]| p[0].sin() + p[1] * p[1];
        assert_eq!(dirac(&x).pair(w), w(&x));
    }

    #[test]
    fn total_variation_basics() {
        let a = dirac(&[0.0]);
        let b = dirac(&[1.0]);
        assert_eq!(total_variation(&a, &a).unwrap(), 0.0);
        assert_eq!(total_variation(&a, &b).unwrap(), 2.0);
        assert!(total_variation(&a, &dirac(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn consolidate_duplicates_and_radius() {
        let m = DiscreteMeasure::from_rows(
            vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 0.0]],
            vec![0.25, 0.5, 0.25],
        )
        .unwrap();
        let c = m.consolidate(0.0);
        assert_eq!(c.len(), 2);
        assert_eq!(c.points().get(0), &[0.0, 0.0]);
        assert_eq!(c.weights(), &[0.5, 0.5]);

        let distinct =
            DiscreteMeasure::from_rows(vec![vec![0.0], vec![1.0], vec![2.0]], vec![0.2, 0.3, 0.5])
                .unwrap();
        assert_eq!(distinct.consolidate(0.0), distinct);

        let pair =
            DiscreteMeasure::from_rows(vec![vec![0.0, 0.0], vec![0.01, 0.0]], vec![0.5, 0.5])
                .unwrap();
        let merged = pair.consolidate(0.1);
        assert_eq!(merged.len(), 1);
        assert!((merged.points().get(0)[0] - 0.005).abs() < 1e-15);
        assert_eq!(merged.points().get(0)[1], 0.0);
        assert!((merged.weights()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn image_conversion() {
        let m = image_to_measure(&[5.0], 1, 1, 1.0).unwrap();
        assert_eq!(m.points().get(0), &[0.5, 0.5]);
        let m = image_to_measure(&[1.0, 3.0], 2, 1, 1.0).unwrap();
        assert_eq!(m.weights(), &[0.25, 0.75]);
        assert!(matches!(
            image_to_measure(&[0.0; 4], 2, 2, 1.0),
            Err(Error::AllZeroImage)
        ));
    }

    #[test]
    fn nested_ellipse_raster() {
        let n = 50;
        let mut grid = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                let (x, y) = ((c as f64 - 24.5) / 20.0, (r as f64 - 24.5) / 12.0);
                let q = x * x + y * y;
                if (0.8..=1.0).contains(&q) || (0.3..=0.4).contains(&q) {
                    grid[r * n + c] = 1.0;
                }
            }
        }
        let m = image_to_measure(&grid, n, n, 1.0 / n as f64).unwrap();
        assert!(m.len() <= 2500);
        assert!((m.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rasterize_round_trip() {
        let grid = [0.0, 2.0, 1.0, 4.0, 0.0, 0.0];
        let m = image_to_measure(&grid, 2, 3, 0.5).unwrap();
        let img = rasterize(&m, 2, 3, 0.5).unwrap();
        for (p, v) in img.iter().zip(grid) {
            assert!((f64::from(*p) - 255.0 * v / 4.0).abs() <= 0.5 + 1e-9);
        }
    }

    #[test]
    fn gaussian_sampling() {
        let g = GaussianSpec {
            mean: vec![1.0, -2.0],
            covariance: vec![vec![0.5, 0.1], vec![0.1, 0.3]],
        };
        let one = sample_empirical(&Sampler::Gaussian(g.clone()), 1, &mut rng::stream(1, 0)).unwrap();
        assert_eq!(one.weights(), &[1.0]);
        // sigma_max <= sqrt(trace) bounds the largest standard deviation
        let bound = 5.0 * (0.8f64).sqrt() / (500.0f64).sqrt();
        for seed in 0..5 {
            let m = sample_empirical(&Sampler::Gaussian(g.clone()), 500, &mut rng::stream(seed, 0))
                .unwrap();
            let mean = m.mean();
            assert!((mean[0] - 1.0).abs() < bound && (mean[1] + 2.0).abs() < bound);
        }
        let bad = GaussianSpec {
            mean: vec![0.0],
            covariance: vec![vec![0.0]],
        };
        assert!(matches!(
            sample_empirical(&Sampler::Gaussian(bad), 3, &mut rng::stream(0, 0)),
            Err(Error::NonPositiveDefiniteCovariance)
        ));
    }

    #[test]
    fn mixture_occupancy() {
        let comp = |m: f64| GaussianSpec {
            mean: vec![m],
            covariance: vec![vec![1e-4]],
        };
        let s = Sampler::Mixture(vec![(0.1, comp(0.0)), (0.9, comp(10.0))]);
        let m = sample_empirical(&s, 20_000, &mut rng::stream(9, 0)).unwrap();
        let low = m.points().iter().filter(|x| x[0] < 5.0).count() as f64 / 20_000.0;
        assert!((low - 0.1).abs() < 0.01, "{low}");
    }

    #[test]
    fn sampling_is_reproducible() {
        let s = Sampler::UniformBox(Domain::new(vec![0.0, 0.0], vec![1.0, 2.0]).unwrap());
        let a = sample_empirical(&s, 50, &mut rng::stream(42, 1)).unwrap();
        let b = sample_empirical(&s, 50, &mut rng::stream(42, 1)).unwrap();
        assert_eq!(a, b);
    }

    fn arb_measure(max_atoms: usize) -> impl Strategy<Value = DiscreteMeasure> {
        (1..=max_atoms).prop_flat_map(|n| {
            (
                prop::collection::vec(prop::collection::vec(-2i32..3, 2), n),
                prop::collection::vec(0.01f64..1.0, n),
            )
                .prop_map(|(pts, masses)| {
                    let rows = pts
                        .into_iter()
                        .map(|p| p.into_iter().map(|v| v as f64 * 0.5).collect())
                        .collect();
                    DiscreteMeasure::from_masses(Points::from_rows(rows).unwrap(), masses).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn constructed_measures_are_valid(m in arb_measure(12)) {
            prop_assert!((m.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(m.weights().iter().all(|&w| w >= 0.0));
        }

        #[test]
        fn consolidate_preserves_mass(m in arb_measure(12), r in 0.0f64..1.5) {
            let c = m.consolidate(r);
            prop_assert!((c.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(c.len() <= m.len());
        }

        #[test]
        fn total_variation_is_a_metric(a in arb_measure(6), b in arb_measure(6), c in arb_measure(6)) {
            let ab = total_variation(&a, &b).unwrap();
            let ba = total_variation(&b, &a).unwrap();
            let ac = total_variation(&a, &c).unwrap();
            let cb = total_variation(&c, &b).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ab <= ac + cb + 1e-12);
            prop_assert!(total_variation(&a, &a).unwrap() < 1e-15);
            prop_assert!(ab <= 2.0 + 1e-12);
        }

        #[test]
        fn squared_cost_matrix_symmetric(m in arb_measure(8)) {
            let c = crate::cost::CostSpec::squared_euclidean()
                .cost_matrix(m.points(), m.points()).unwrap();
            for i in 0..m.len() {
                prop_assert_eq!(c.get(i, i), 0.0);
                for j in 0..m.len() {
                    prop_assert_eq!(c.get(i, j), c.get(j, i));
                }
            }
        }
    }
}
