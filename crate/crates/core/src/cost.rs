//! Ground costs and dense cost matrices.

use crate::error::{Error, Result};
use crate::measure::Points;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                left: data.len(),
                right: rows * cols,
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// A cost given explicitly on a fixed, finite set of points.
///
/// Lookups match points by exact coordinates; any point outside the set costs
/// `+inf`, which keeps it out of every argmin.
#[derive(Debug, Clone, PartialEq)]
pub struct UserCost {
    points: Points,
    values: Matrix,
}

impl UserCost {
    pub fn new(points: Points, values: Matrix) -> Result<Self> {
        let n = points.len();
        if values.rows() != n || values.cols() != n {
            return Err(Error::LengthMismatch {
                left: values.rows() * values.cols(),
                right: n * n,
            });
        }
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (values.get(i, j), values.get(j, i));
                if a != b {
                    return Err(Error::InvalidInput(format!(
                        "user cost is not symmetric at ({i}, {j})"
                    )));
                }
                if a < 0.0 || !a.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "user cost entry ({i}, {j}) must be finite and nonnegative"
                    )));
                }
            }
        }
        Ok(Self { points, values })
    }

    pub fn points(&self) -> &Points {
        &self.points
    }

    fn index_of(&self, x: &[f64]) -> Option<usize> {
        self.points.iter().position(|p| p == x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CostKind {
    SquaredEuclidean,
    Euclidean,
    UserMatrix(UserCost),
}

/// Symmetric ground cost plus an optional user bound on its diameter.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    pub kind: CostKind,
    /// Upper bound on the cost over the working domain. `None` means "use the
    /// exact maximum over the supports at hand".
    pub diameter: Option<f64>,
}

impl Default for CostSpec {
    fn default() -> Self {
        Self::squared_euclidean()
    }
}

impl CostSpec {
    pub fn squared_euclidean() -> Self {
        Self {
            kind: CostKind::SquaredEuclidean,
            diameter: None,
        }
    }

    pub fn euclidean() -> Self {
        Self {
            kind: CostKind::Euclidean,
            diameter: None,
        }
    }

    pub fn user(cost: UserCost) -> Self {
        Self {
            kind: CostKind::UserMatrix(cost),
            diameter: None,
        }
    }

    pub fn with_diameter(mut self, diameter: f64) -> Self {
        self.diameter = Some(diameter);
        self
    }

    pub fn is_differentiable(&self) -> bool {
        !matches!(self.kind, CostKind::UserMatrix(_))
    }

    #[inline]
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match &self.kind {
            CostKind::SquaredEuclidean => sq_dist(x, y),
            CostKind::Euclidean => sq_dist(x, y).sqrt(),
            CostKind::UserMatrix(user) => match (user.index_of(x), user.index_of(y)) {
                (Some(i), Some(j)) => user.values.get(i, j),
                _ => f64::INFINITY,
            },
        }
    }

    /// Writes the gradient of `x -> c(x, y)` into `out`.
    ///
    /// The euclidean cost is not differentiable at `x == y`; the zero vector
    /// (a valid subgradient) is returned there.
    pub fn gradient_x(&self, x: &[f64], y: &[f64], out: &mut [f64]) -> Result<()> {
        match &self.kind {
            CostKind::SquaredEuclidean => {
                for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
                    *o = 2.0 * (a - b);
                }
            }
            CostKind::Euclidean => {
                let r = sq_dist(x, y).sqrt();
                for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
                    *o = if r > 0.0 { (a - b) / r } else { 0.0 };
                }
            }
            CostKind::UserMatrix(_) => return Err(Error::UnsupportedCost),
        }
        Ok(())
    }

    /// `M[i][j] = c(x_i, y_j)`.
    pub fn cost_matrix(&self, xs: &Points, ys: &Points) -> Result<Matrix> {
        if xs.dim() != ys.dim() {
            return Err(Error::DimensionMismatch {
                expected: xs.dim(),
                found: ys.dim(),
            });
        }
        let mut m = Matrix::zeros(xs.len(), ys.len());
        match &self.kind {
            CostKind::UserMatrix(user) => {
                let xi = lookup_all(user, xs)?;
                let yi = lookup_all(user, ys)?;
                for (i, &a) in xi.iter().enumerate() {
                    for (j, &b) in yi.iter().enumerate() {
                        m.set(i, j, user.values.get(a, b));
                    }
                }
            }
            _ => {
                for (i, x) in xs.iter().enumerate() {
                    for (j, y) in ys.iter().enumerate() {
                        m.set(i, j, self.eval(x, y));
                    }
                }
            }
        }
        Ok(m)
    }

    /// Exact maximum of the cost over all pairs drawn from `sets`, or the
    /// user override when it is larger.
    pub fn diameter_over(&self, sets: &[&Points]) -> f64 {
        let mut max = 0.0f64;
        for (a, xs) in sets.iter().enumerate() {
            for ys in &sets[a..] {
                for x in xs.iter() {
                    for y in ys.iter() {
                        let c = self.eval(x, y);
                        if c > max {
                            max = c;
                        }
                    }
                }
            }
        }
        match self.diameter {
            Some(d) if d > max => d,
            _ => max,
        }
    }
}

fn lookup_all(user: &UserCost, pts: &Points) -> Result<Vec<usize>> {
    pts.iter()
        .map(|p| user.index_of(p).ok_or(Error::UnknownPoint))
        .collect()
}

#[inline]
pub fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn pts(rows: &[&[f64]]) -> Points {
        Points::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn squared_euclidean_two_points() {
        let x = pts(&[&[0.0, 0.0], &[1.0, 0.0]]);
        let m = CostSpec::squared_euclidean().cost_matrix(&x, &x).unwrap();
        assert_eq!(m.as_slice(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn random_matrix_matches_scalar_loop() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut rows = |n: usize| -> Points {
            Points::from_rows(
                (0..n)
                    .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .collect(),
            )
            .unwrap()
        };
        let (x, y) = (rows(3), rows(4));
        for cost in [CostSpec::squared_euclidean(), CostSpec::euclidean()] {
            let m = cost.cost_matrix(&x, &y).unwrap();
            for i in 0..3 {
                for j in 0..4 {
                    let mut s = 0.0;
                    for k in 0..3 {
                        let d = x.get(i)[k] - y.get(j)[k];
                        s += d * d;
                    }
                    let expected = match cost.kind {
                        CostKind::Euclidean => s.sqrt(),
                        _ => s,
                    };
                    assert!((m.get(i, j) - expected).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let x = pts(&[&[0.0, 0.0]]);
        let y = pts(&[&[0.0]]);
        assert!(matches!(
            CostSpec::euclidean().cost_matrix(&x, &y),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn user_matrix_lookup() {
        let p = pts(&[&[0.0], &[1.0], &[5.0]]);
        let values =
            Matrix::from_vec(3, 3, vec![0.0, 2.0, 3.0, 2.0, 0.0, 4.0, 3.0, 4.0, 0.0]).unwrap();
        let cost = CostSpec::user(UserCost::new(p.clone(), values).unwrap());
        let m = cost.cost_matrix(&p, &p).unwrap();
        assert_eq!(m.get(1, 2), 4.0);
        assert_eq!(cost.eval(&[0.5], &[0.0]), f64::INFINITY);
        assert!(matches!(
            cost.cost_matrix(&pts(&[&[0.5]]), &p),
            Err(Error::UnknownPoint)
        ));
        let mut g = [0.0];
        assert!(matches!(
            cost.gradient_x(&[0.0], &[1.0], &mut g),
            Err(Error::UnsupportedCost)
        ));
    }

    #[test]
    fn asymmetric_user_matrix_rejected() {
        let p = pts(&[&[0.0], &[1.0]]);
        let values = Matrix::from_vec(2, 2, vec![0.0, 1.0, 2.0, 0.0]).unwrap();
        assert!(UserCost::new(p, values).is_err());
    }

    #[test]
    fn diameter_override_only_raises() {
        let p = pts(&[&[0.0], &[2.0]]);
        let c = CostSpec::squared_euclidean();
        assert_eq!(c.diameter_over(&[&p]), 4.0);
        assert_eq!(c.clone().with_diameter(1.0).diameter_over(&[&p]), 4.0);
        assert_eq!(c.with_diameter(9.0).diameter_over(&[&p]), 9.0);
    }
}
