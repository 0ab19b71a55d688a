use serde::{Deserialize, Serialize};

/// The discrete torus `(Z / side Z)^dim`, sites stored flat in row-major order
/// with axis 0 varying fastest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Torus {
    side: usize,
    dim: usize,
    len: usize,
}

impl Torus {
    pub fn new(side: usize, dim: usize) -> Self {
        assert!(side > 0 && dim > 0, "torus needs positive side and dimension");
        let len = side
            .checked_pow(dim as u32)
            .expect("torus volume overflows usize");
        Torus { side, dim, len }
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.side
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of sites, `side^dim`.
    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn coords(&self, site: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.dim);
        let mut s = site;
        for _ in 0..self.dim {
            out.push(s % self.side);
            s /= self.side;
        }
        out
    }

    pub fn site(&self, coords: &[usize]) -> usize {
        debug_assert_eq!(coords.len(), self.dim);
        coords
            .iter()
            .rev()
            .fold(0, |acc, &c| acc * self.side + (c % self.side))
    }

    /// Site of an integer vector reduced mod `side` componentwise.
    pub fn site_of_vector(&self, v: &[i64]) -> usize {
        debug_assert_eq!(v.len(), self.dim);
        let n = self.side as i64;
        v.iter()
            .rev()
            .fold(0, |acc, &c| acc * self.side + c.rem_euclid(n) as usize)
    }

    /// Group addition of two flat sites.
    #[inline]
    pub fn add(&self, a: usize, b: usize) -> usize {
        if self.dim == 1 {
            let s = a + b;
            return if s >= self.side { s - self.side } else { s };
        }
        let (mut a, mut b) = (a, b);
        let mut out = 0;
        let mut stride = 1;
        for _ in 0..self.dim {
            let c = (a % self.side + b % self.side) % self.side;
            out += c * stride;
            stride *= self.side;
            a /= self.side;
            b /= self.side;
        }
        out
    }

    /// Group inverse of a flat site.
    #[inline]
    pub fn neg(&self, a: usize) -> usize {
        if self.dim == 1 {
            return if a == 0 { 0 } else { self.side - a };
        }
        let mut a = a;
        let mut out = 0;
        let mut stride = 1;
        for _ in 0..self.dim {
            let c = a % self.side;
            out += ((self.side - c) % self.side) * stride;
            stride *= self.side;
            a /= self.side;
        }
        out
    }

    #[inline]
    pub fn sub(&self, a: usize, b: usize) -> usize {
        self.add(a, self.neg(b))
    }

    /// Representative of a residue in `(-side/2, side/2]` per axis.
    pub fn centered(&self, site: usize) -> Vec<i64> {
        let n = self.side as i64;
        self.coords(site)
            .into_iter()
            .map(|c| {
                let c = c as i64;
                if c > n / 2 {
                    c - n
                } else {
                    c
                }
            })
            .collect()
    }

    /// Sup-norm distance to the origin, measured on the torus.
    pub fn sup_norm(&self, site: usize) -> usize {
        self.centered(site)
            .into_iter()
            .map(|c| c.unsigned_abs() as usize)
            .max()
            .unwrap_or(0)
    }

    /// All sites within sup-distance `radius` of the origin, as flat offsets.
    pub fn ball(&self, radius: usize) -> Vec<usize> {
        let r = radius as i64;
        let width = (2 * radius + 1).pow(self.dim as u32);
        let mut out = Vec::with_capacity(width);
        let mut v = vec![-r; self.dim];
        loop {
            out.push(self.site_of_vector(&v));
            let mut axis = 0;
            loop {
                if axis == self.dim {
                    return out;
                }
                v[axis] += 1;
                if v[axis] <= r {
                    break;
                }
                v[axis] = -r;
                axis += 1;
            }
        }
    }
}
