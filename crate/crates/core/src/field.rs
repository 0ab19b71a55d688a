use std::ops::{Index, IndexMut};

use crate::lattice::Torus;
use crate::scalar::Scalar;

/// A real grid function on the torus, read as a density on the rescaled
/// unit torus (grid spacing `1/side`).
#[derive(Clone, Debug, PartialEq)]
pub struct DensityField<T: Scalar = f64> {
    torus: Torus,
    values: Vec<T>,
}

impl<T: Scalar> DensityField<T> {
    pub fn new(torus: Torus, values: Vec<T>) -> Self {
        assert_eq!(torus.len(), values.len(), "field length must match torus");
        DensityField { torus, values }
    }

    pub fn constant(torus: Torus, value: T) -> Self {
        DensityField {
            torus,
            values: vec![value; torus.len()],
        }
    }

    /// Samples `f` at each site's coordinates (integer lattice coordinates).
    pub fn from_fn(torus: Torus, mut f: impl FnMut(&[usize]) -> T) -> Self {
        let values = (0..torus.len()).map(|s| f(&torus.coords(s))).collect();
        DensityField { torus, values }
    }

    #[inline]
    pub fn torus(&self) -> Torus {
        self.torus
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sum(&self) -> T {
        self.values.iter().fold(T::zero(), |a, &b| a + b)
    }

    /// Integral over the unit torus, `side^-d * sum`.
    pub fn integral(&self) -> T {
        self.sum() / T::of(self.len() as f64)
    }

    pub fn max(&self) -> T {
        self.values.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn min(&self) -> T {
        self.values.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        DensityField {
            torus: self.torus,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// L1 distance on the unit torus.
    pub fn l1_distance(&self, other: &Self) -> T {
        assert_eq!(self.torus, other.torus);
        let s = self
            .values
            .iter()
            .zip(&other.values)
            .fold(T::zero(), |acc, (&a, &b)| acc + (a - b).abs());
        s / T::of(self.len() as f64)
    }

    pub fn sup_distance(&self, other: &Self) -> T {
        assert_eq!(self.torus, other.torus);
        self.values
            .iter()
            .zip(&other.values)
            .fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs()))
    }

    /// Squared L2 distance on the unit torus.
    pub fn l2_distance_sq(&self, other: &Self) -> T {
        assert_eq!(self.torus, other.torus);
        let s = self
            .values
            .iter()
            .zip(&other.values)
            .fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
        s / T::of(self.len() as f64)
    }

    /// Sitewise average over the sup-norm ball of radius `l`.
    pub fn block_average(&self, l: usize) -> Self {
        let ball = self.torus.ball(l);
        let w = T::of(ball.len() as f64);
        let values = (0..self.len())
            .map(|x| {
                ball.iter()
                    .fold(T::zero(), |acc, &o| acc + self.values[self.torus.add(x, o)])
                    / w
            })
            .collect();
        DensityField {
            torus: self.torus,
            values,
        }
    }

    pub fn cast<U: Scalar>(&self) -> DensityField<U> {
        DensityField {
            torus: self.torus,
            values: self.values.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

impl<T: Scalar> Index<usize> for DensityField<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.values[i]
    }
}

impl<T: Scalar> IndexMut<usize> for DensityField<T> {
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.values[i]
    }
}

/// A two-point grid function `G(x, y)` on the torus, stored densely with
/// `x` varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct PairField<T: Scalar = f64> {
    torus: Torus,
    values: Vec<T>,
}

impl<T: Scalar> PairField<T> {
    pub fn zeros(torus: Torus) -> Self {
        PairField {
            torus,
            values: vec![T::zero(); torus.len() * torus.len()],
        }
    }

    pub fn from_fn(torus: Torus, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let n = torus.len();
        let mut values = Vec::with_capacity(n * n);
        for y in 0..n {
            for x in 0..n {
                values.push(f(x, y));
            }
        }
        PairField { torus, values }
    }

    /// `G(x, y) = f(x) - f(y)`.
    pub fn gradient_of(f: &DensityField<T>) -> Self {
        let v = f.values();
        Self::from_fn(f.torus(), |x, y| v[x] - v[y])
    }

    #[inline]
    pub fn torus(&self) -> Torus {
        self.torus
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.values[x + self.torus.len() * y]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        let n = self.torus.len();
        self.values[x + n * y] = v;
    }

    /// Largest `|G(x,y) + G(y,x)|`.
    pub fn antisymmetry_defect(&self) -> T {
        let n = self.torus.len();
        let mut worst = T::zero();
        for y in 0..n {
            for x in 0..=y {
                worst = worst.max((self.get(x, y) + self.get(y, x)).abs());
            }
        }
        worst
    }

    pub fn axpy(&self, eps: T, other: &Self) -> Self {
        assert_eq!(self.torus, other.torus);
        PairField {
            torus: self.torus,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| a + eps * b)
                .collect(),
        }
    }
}
