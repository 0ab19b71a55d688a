//! Symmetric long-jump kernels `h(z) ~ |z|^{-(d+alpha)}`, folded onto a
//! periodic lattice, with the discrete generator, carré-du-champ and energy
//! operators built from them.

use std::io::{self, Write};

use num_complex::Complex;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{DensityField, PairField};
use crate::lattice::Torus;
use crate::quad::{self, QuadError};
use crate::scalar::Scalar;
use crate::spectral::SpectralPlan;

pub const DEFAULT_FOLD_CUTOFF: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("alpha must lie in (0, 2], got {0}")]
    Alpha(f64),
    #[error("lattice size must be even and at least 4, got {0}")]
    Size(usize),
    #[error("dimension must be positive")]
    Dim,
    #[error("angular profile: {0}")]
    Angular(String),
    #[error("field lives on {found:?}, kernel on {expected:?}")]
    GridMismatch { expected: Torus, found: Torus },
    #[error("Fourier mode {0:?} out of range")]
    Mode(Vec<usize>),
    #[error("two-point field is not antisymmetric (defect {0:e})")]
    NotAntisymmetric(f64),
    #[error(transparent)]
    Quadrature(#[from] QuadError),
}

/// Angular part of the homogeneous profile `h`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngularProfile {
    /// `h(z) = c_scale / |z|^{d+alpha}`, Euclidean norm.
    Isotropic { c_scale: f64 },
    /// Planar only: `h(z) = weights[bin(angle z)] / |z|^{2+alpha}` with
    /// `weights.len()` equal angular sectors starting at angle 0. Must satisfy
    /// `weights[k] == weights[k + len/2]`.
    Sectors { weights: Vec<f64> },
}

/// How macroscopic time is sped up relative to microscopic time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeScale {
    /// `theta = n^alpha`.
    Power,
    /// `theta = n^2 / ln n`, the borderline `alpha = 2` case.
    LogCorrected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub dim: usize,
    pub alpha: f64,
    pub angular: AngularProfile,
}

impl KernelSpec {
    /// `h(z) = c_scale / |z|^{1+alpha}` on Z.
    pub fn one_dim(alpha: f64, c_scale: f64) -> Self {
        KernelSpec {
            dim: 1,
            alpha,
            angular: AngularProfile::Isotropic { c_scale },
        }
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        if self.dim == 0 {
            return Err(KernelError::Dim);
        }
        if !(self.alpha > 0.0 && self.alpha <= 2.0) {
            return Err(KernelError::Alpha(self.alpha));
        }
        match &self.angular {
            AngularProfile::Isotropic { c_scale } => {
                if !(*c_scale > 0.0 && c_scale.is_finite()) {
                    return Err(KernelError::Angular(format!("c_scale must be positive, got {c_scale}")));
                }
            }
            AngularProfile::Sectors { weights } => {
                if self.dim != 2 {
                    return Err(KernelError::Angular("sector weights need dim = 2".into()));
                }
                let b = weights.len();
                if b == 0 || b % 2 != 0 {
                    return Err(KernelError::Angular(format!("need an even number of sectors, got {b}")));
                }
                if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
                    return Err(KernelError::Angular("sector weights must be strictly positive".into()));
                }
                for k in 0..b / 2 {
                    if weights[k] != weights[k + b / 2] {
                        return Err(KernelError::Angular(format!(
                            "weights not even: sector {k} has {}, opposite sector has {}",
                            weights[k],
                            weights[k + b / 2]
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn time_scale(&self) -> TimeScale {
        if self.alpha == 2.0 {
            TimeScale::LogCorrected
        } else {
            TimeScale::Power
        }
    }

    /// Time speed-up for scale parameter `n`.
    pub fn theta(&self, n: f64) -> f64 {
        match self.time_scale() {
            TimeScale::Power => n.powf(self.alpha),
            TimeScale::LogCorrected => n * n / n.ln(),
        }
    }

    /// `h(z)` at a nonzero real vector.
    pub fn rate(&self, z: &[f64]) -> f64 {
        debug_assert_eq!(z.len(), self.dim);
        let r2: f64 = z.iter().map(|c| c * c).sum();
        if r2 == 0.0 {
            return 0.0;
        }
        let radial = r2.powf(-0.5 * (self.dim as f64 + self.alpha));
        match &self.angular {
            AngularProfile::Isotropic { c_scale } => c_scale * radial,
            AngularProfile::Sectors { weights } => weights[sector_of(z, weights.len())] * radial,
        }
    }
}

// Sector of a planar vector; computed on the upper half-plane and reflected so
// that sector(-z) = sector(z) + B/2 holds exactly.
fn sector_of(z: &[f64], sectors: usize) -> usize {
    let upper = z[1] > 0.0 || (z[1] == 0.0 && z[0] > 0.0);
    let (x, y) = if upper { (z[0], z[1]) } else { (-z[0], -z[1]) };
    let width = std::f64::consts::PI / (sectors / 2) as f64;
    let k = ((y.atan2(x) / width).floor() as usize).min(sectors / 2 - 1);
    if upper {
        k
    } else {
        k + sectors / 2
    }
}

/// Precomputed jump law over centered displacements. Entries whose residue
/// sits on the antipodal face `±N/2` are split evenly between the sign
/// choices so that the unwrapped displacement law is exactly symmetric.
#[derive(Clone, Debug)]
pub struct JumpTable {
    dim: usize,
    displacements: Vec<i64>,
    residues: Vec<usize>,
    weights: Vec<f64>,
    cumulative: Vec<f64>,
}

impl JumpTable {
    fn build(torus: Torus, rates: &[f64]) -> Self {
        let dim = torus.dim();
        let half = (torus.side() / 2) as i64;
        let mut displacements = Vec::new();
        let mut residues = Vec::new();
        let mut weights = Vec::new();
        for (r, &p) in rates.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            let base = torus.centered(r);
            let faces: Vec<usize> = (0..dim).filter(|&i| base[i] == half).collect();
            let variants = 1usize << faces.len();
            for mask in 0..variants {
                let mut v = base.clone();
                for (bit, &axis) in faces.iter().enumerate() {
                    if mask >> bit & 1 == 1 {
                        v[axis] = -half;
                    }
                }
                displacements.extend_from_slice(&v);
                residues.push(r);
                weights.push(p / variants as f64);
            }
        }
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = weights
            .iter()
            .map(|w| {
                acc += w;
                acc / total
            })
            .collect();
        if let Some(last) = cumulative.last_mut() {
            *last = 1.0;
        }
        JumpTable {
            dim,
            displacements,
            residues,
            weights,
            cumulative,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Centered displacement vector of entry `j`.
    #[inline]
    pub fn displacement(&self, j: usize) -> &[i64] {
        &self.displacements[j * self.dim..(j + 1) * self.dim]
    }

    /// Torus residue of entry `j`, for adding to flat sites.
    #[inline]
    pub fn residue(&self, j: usize) -> usize {
        self.residues[j]
    }

    /// Un-normalized rate carried by entry `j`.
    #[inline]
    pub fn weight(&self, j: usize) -> f64 {
        self.weights[j]
    }

    /// Normalized cumulative table; the last entry is exactly 1.
    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        self.cumulative.partition_point(|&c| c <= u).min(self.len() - 1)
    }
}

/// A kernel folded onto the torus of side `N`:
/// `p_N(z) = sum_{|k| <= K} h(z + kN)`, with `p_N(0)` set to zero (wrap-around
/// jumps that return to the starting site are no-ops on the torus).
#[derive(Clone, Debug)]
pub struct LatticeKernel<T: Scalar = f64> {
    spec: KernelSpec,
    torus: Torus,
    fold_cutoff: usize,
    rates: Vec<T>,
    p_star: T,
    symbol: Vec<T>,
    jumps: JumpTable,
}

impl<T: Scalar> LatticeKernel<T> {
    pub fn build(spec: KernelSpec, side: usize, fold_cutoff: usize) -> Result<Self, KernelError> {
        spec.validate()?;
        if side < 4 || !side.is_multiple_of(2) {
            return Err(KernelError::Size(side));
        }
        let torus = Torus::new(side, spec.dim);
        let rates_f64 = periodized_rates(&spec, torus, fold_cutoff);
        let p_star_f64: f64 = rates_f64.iter().sum();
        let jumps = JumpTable::build(torus, &rates_f64);

        let rates: Vec<T> = rates_f64.iter().map(|&r| T::of(r)).collect();
        let p_star = T::of(p_star_f64);

        // psi(m) = Re sum_z p(z) e^{-2 pi i m.z/N} - p_star
        let plan = SpectralPlan::<f64>::new(torus);
        let spec_p = plan.forward_real(&rates_f64);
        let symbol = spec_p
            .iter()
            .enumerate()
            .map(|(m, c)| if m == 0 { T::zero() } else { T::of(c.re - p_star_f64) })
            .collect();

        Ok(LatticeKernel {
            spec,
            torus,
            fold_cutoff,
            rates,
            p_star,
            symbol,
            jumps,
        })
    }

    #[inline]
    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    #[inline]
    pub fn torus(&self) -> Torus {
        self.torus
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.torus.side()
    }

    pub fn fold_cutoff(&self) -> usize {
        self.fold_cutoff
    }

    pub fn alpha(&self) -> f64 {
        self.spec.alpha
    }

    /// Time speed-up at scale `n`.
    pub fn theta(&self, n: f64) -> f64 {
        self.spec.theta(n)
    }

    /// `p_N` indexed by flat torus residue.
    #[inline]
    pub fn rates(&self) -> &[T] {
        &self.rates
    }

    #[inline]
    pub fn rate(&self, residue: usize) -> T {
        self.rates[residue]
    }

    #[inline]
    pub fn p_star(&self) -> T {
        self.p_star
    }

    #[inline]
    pub fn jumps(&self) -> &JumpTable {
        &self.jumps
    }

    /// Draws a jump-table entry with probability `p_N(z) / p_star`.
    #[inline]
    pub fn sample_jump<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.jumps.sample(rng)
    }

    /// Draws a centered displacement (d = 1 convenience).
    pub fn sample_displacement<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        let j = self.jumps.sample(rng);
        self.jumps.displacement(j)[0]
    }

    /// The diagonal of the lattice generator in Fourier space, indexed by flat mode.
    pub fn symbol_table(&self) -> &[T] {
        &self.symbol
    }

    /// `psi_N(m) = sum_z p_N(z) (cos(2 pi m.z/N) - 1)`.
    pub fn levy_symbol(&self, mode: &[usize]) -> Result<T, KernelError> {
        if mode.len() != self.torus.dim() || mode.iter().any(|&m| m >= self.side()) {
            return Err(KernelError::Mode(mode.to_vec()));
        }
        Ok(self.symbol[self.torus.site(mode)])
    }

    fn check_grid(&self, torus: Torus) -> Result<(), KernelError> {
        if torus != self.torus {
            return Err(KernelError::GridMismatch {
                expected: self.torus,
                found: torus,
            });
        }
        Ok(())
    }

    /// `x -> theta * sum_z p_N(z) (G(x+z) - G(x))` by direct summation.
    pub fn apply_ln(&self, g: &DensityField<T>, theta: T) -> Result<DensityField<T>, KernelError> {
        self.check_grid(g.torus())?;
        let v = g.values();
        let t = self.torus;
        let out = (0..t.len())
            .map(|x| {
                let gx = v[x];
                let s = self
                    .rates
                    .iter()
                    .enumerate()
                    .skip(1)
                    .fold(T::zero(), |acc, (r, &p)| acc + p * (v[t.add(x, r)] - gx));
                theta * s
            })
            .collect();
        Ok(DensityField::new(t, out))
    }

    /// Same operator, applied as the Fourier multiplier `theta * psi_N(m)`.
    pub fn apply_ln_spectral(&self, g: &DensityField<T>, theta: T) -> Result<DensityField<T>, KernelError> {
        self.check_grid(g.torus())?;
        let plan = SpectralPlan::<T>::new(self.torus);
        let mult: Vec<T> = self.symbol.iter().map(|&s| theta * s).collect();
        Ok(DensityField::new(self.torus, plan.filter(g.values(), &mult)))
    }

    /// Discrete energy form at scale `n`:
    /// `1/2 n^{-d} theta(n) sum_{x,y} p_N(y-x) (u(y)-u(x)) (v(y)-v(x))`.
    pub fn energy(&self, u: &DensityField<T>, v: &DensityField<T>, n: f64) -> Result<T, KernelError> {
        self.check_grid(u.torus())?;
        self.check_grid(v.torus())?;
        let (a, b) = (u.values(), v.values());
        let t = self.torus;
        let mut s = T::zero();
        for x in 0..t.len() {
            for (r, &p) in self.rates.iter().enumerate().skip(1) {
                let y = t.add(x, r);
                s = s + p * (a[y] - a[x]) * (b[y] - b[x]);
            }
        }
        let scale = 0.5 * self.theta(n) / n.powi(self.torus.dim() as i32);
        Ok(T::of(scale) * s)
    }

    /// One-point carré du champ: `x -> theta * sum_z p_N(z) (G(x+z) - G(x))^2`.
    pub fn apply_qn(&self, g: &DensityField<T>, theta: T) -> Result<DensityField<T>, KernelError> {
        self.check_grid(g.torus())?;
        let v = g.values();
        let t = self.torus;
        let out = (0..t.len())
            .map(|x| {
                let gx = v[x];
                let s = self.rates.iter().enumerate().skip(1).fold(T::zero(), |acc, (r, &p)| {
                    let d = v[t.add(x, r)] - gx;
                    acc + p * d * d
                });
                theta * s
            })
            .collect();
        Ok(DensityField::new(t, out))
    }

    fn check_pair(&self, g: &PairField<T>) -> Result<(), KernelError> {
        self.check_grid(g.torus())?;
        let defect = g.antisymmetry_defect().as_f64();
        let scale = 1.0 + (0..self.torus.len()).map(|x| g.get(x, 0).abs().as_f64()).fold(0.0, f64::max);
        if defect > 1e3 * T::eps() * scale {
            return Err(KernelError::NotAntisymmetric(defect));
        }
        Ok(())
    }

    /// Generator extended to antisymmetric two-point fields:
    /// `x -> theta * sum_z p_N(z) (G(x+z, x) + G(x-z, x))`.
    ///
    /// For `G(x, y) = f(x) - f(y)` this is `2 * apply_ln(f)`.
    pub fn apply_ln_pair(&self, g: &PairField<T>, theta: T) -> Result<DensityField<T>, KernelError> {
        self.check_pair(g)?;
        let t = self.torus;
        let out = (0..t.len())
            .map(|x| {
                let s = self.rates.iter().enumerate().skip(1).fold(T::zero(), |acc, (r, &p)| {
                    acc + p * (g.get(t.add(x, r), x) + g.get(t.sub(x, r), x))
                });
                theta * s
            })
            .collect();
        Ok(DensityField::new(t, out))
    }

    /// Two-point carré du champ: `x -> theta * sum_z p_N(z) G(x+z, x)^2`.
    pub fn apply_qn_pair(&self, g: &PairField<T>, theta: T) -> Result<DensityField<T>, KernelError> {
        self.check_pair(g)?;
        let t = self.torus;
        let out = (0..t.len())
            .map(|x| {
                let s = self.rates.iter().enumerate().skip(1).fold(T::zero(), |acc, (r, &p)| {
                    let v = g.get(t.add(x, r), x);
                    acc + p * v * v
                });
                theta * s
            })
            .collect();
        Ok(DensityField::new(t, out))
    }

    /// `n^{-d} sum_{x,y} theta p(y-x) (g_y - g_x) F(x,y)` for sitewise rates `g_x`.
    pub fn rate_energy(&self, rates: &[T], f: &PairField<T>, n: f64) -> Result<T, KernelError> {
        self.check_grid(f.torus())?;
        let t = self.torus;
        let mut s = T::zero();
        for x in 0..t.len() {
            for (r, &p) in self.rates.iter().enumerate().skip(1) {
                let y = t.add(x, r);
                s = s + p * (rates[y] - rates[x]) * f.get(x, y);
            }
        }
        Ok(T::of(self.theta(n) / n.powi(t.dim() as i32)) * s)
    }

    /// `n^{-d} sum_{x,y} theta p(y-x) (g_x + g_y) F(x,y)^2`.
    pub fn rate_gamma(&self, rates: &[T], f: &PairField<T>, n: f64) -> Result<T, KernelError> {
        self.check_grid(f.torus())?;
        let t = self.torus;
        let mut s = T::zero();
        for x in 0..t.len() {
            for (r, &p) in self.rates.iter().enumerate().skip(1) {
                let y = t.add(x, r);
                let v = f.get(x, y);
                s = s + p * (rates[x] + rates[y]) * v * v;
            }
        }
        Ok(T::of(self.theta(n) / n.powi(t.dim() as i32)) * s)
    }

    /// Writes the folded rate table as CSV (`z,p_N` in d = 1, `z0,..,p_N` otherwise).
    pub fn write_rate_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let d = self.torus.dim();
        if d == 1 {
            writeln!(w, "z,p_N")?;
        } else {
            let cols: Vec<String> = (0..d).map(|i| format!("z{i}")).collect();
            writeln!(w, "{},p_N", cols.join(","))?;
        }
        let mut order: Vec<usize> = (0..self.torus.len()).collect();
        order.sort_by_key(|&r| self.torus.centered(r));
        for r in order {
            let z: Vec<String> = self.torus.centered(r).iter().map(|c| c.to_string()).collect();
            writeln!(w, "{},{:.17e}", z.join(","), self.rates[r].as_f64())?;
        }
        Ok(())
    }
}

/// `z -> sum_{|k| <= K} h(z + kN)` by flat residue, with the zero residue set
/// to 0. Works for any side, including the tiny lattices of the exact tools.
pub fn periodized_rates(spec: &KernelSpec, torus: Torus, cutoff: usize) -> Vec<f64> {
    let d = torus.dim();
    let n = torus.side() as f64;
    let k = cutoff as i64;
    let images = (2 * cutoff + 1).pow(d as u32);
    let mut rates = vec![0.0; torus.len()];
    let mut z = vec![0.0; d];
    let mut img = vec![0i64; d];
    for (r, slot) in rates.iter_mut().enumerate().skip(1) {
        let base = torus.centered(r);
        let mut acc = 0.0;
        for i in 0..images {
            let mut rem = i;
            for a in 0..d {
                img[a] = (rem % (2 * cutoff + 1)) as i64 - k;
                rem /= 2 * cutoff + 1;
                z[a] = base[a] as f64 + img[a] as f64 * n;
            }
            acc += spec.rate(&z);
        }
        *slot = acc;
    }
    // Terms of equal size are summed in different orders for z and -z.
    for r in 1..torus.len() {
        let m = torus.neg(r);
        if m > r {
            let avg = 0.5 * (rates[r] + rates[m]);
            rates[r] = avg;
            rates[m] = avg;
        }
    }
    rates
}

/// `int_R c_scale |x|^{-1-alpha} (cos(theta x) - 1) dx`, by quadrature at the
/// given `theta` (no use of homogeneity).
pub fn continuum_symbol(alpha: f64, c_scale: f64, theta: f64) -> Result<f64, KernelError> {
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(KernelError::Alpha(alpha));
    }
    let theta = theta.abs();
    if theta == 0.0 {
        return Ok(0.0);
    }
    // [0, b] with theta b = 1: termwise integration of the cosine series.
    let b = 1.0 / theta;
    let mut head = 0.0;
    let mut fact = 1.0;
    for k in 1..40 {
        let two_k = 2.0 * k as f64;
        fact *= (two_k - 1.0) * two_k;
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        let term = sign * theta.powf(two_k) * b.powf(two_k - alpha) / (fact * (two_k - alpha));
        head += term;
        if term.abs() < 1e-18 * head.abs() {
            break;
        }
    }
    // [b, X] period by period, X = 2 pi M / theta.
    let periods = 400;
    let period = 2.0 * std::f64::consts::PI / theta;
    let big_x = periods as f64 * period;
    let f = |x: f64| (1.0 - (theta * x).cos()) * x.powf(-1.0 - alpha);
    let mut body = quad::integrate(f, b, period, 1e-15, 1e-13)?;
    for p in 1..periods {
        body += quad::integrate(f, p as f64 * period, (p + 1) as f64 * period, 1e-17, 1e-13)?;
    }
    // Tail: int_X^inf x^{-beta} - cos(theta x) x^{-beta}, theta X a multiple of 2 pi.
    let beta = 1.0 + alpha;
    let plain = big_x.powf(-alpha) / alpha;
    let t2 = theta * theta;
    let cos_tail = beta * big_x.powf(-beta - 1.0) / t2
        - beta * (beta + 1.0) * (beta + 2.0) * big_x.powf(-beta - 3.0) / (t2 * t2);
    let tail = plain - cos_tail;
    Ok(-2.0 * c_scale * (head + body + tail))
}

/// The constant `c > 0` with `int h(x) (cos x - 1) dx = -c` for
/// `h(x) = c_scale / |x|^{1+alpha}`.
pub fn continuum_c(alpha: f64, c_scale: f64) -> Result<f64, KernelError> {
    continuum_symbol(alpha, c_scale, 1.0).map(|v| -v)
}

/// Helper for tests and diagnostics: the spectral representation of a real
/// field as a complex vector.
pub fn spectrum<T: Scalar>(f: &DensityField<T>) -> Vec<Complex<T>> {
    SpectralPlan::<T>::new(f.torus()).forward_real(f.values())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn k1(alpha: f64, n: usize, cutoff: usize) -> Kernel {
        Kernel::build(KernelSpec::one_dim(alpha, 1.0), n, cutoff).unwrap()
    }

    type Kernel = LatticeKernel<f64>;

    #[test]
    fn p_star_converges_to_zeta_two() {
        let k = k1(1.0, 4096, 64);
        assert!((k.p_star() - PI * PI / 3.0).abs() < 1e-3, "{}", k.p_star());
    }

    #[test]
    fn rate_ratio_follows_homogeneity() {
        for &alpha in &[0.5, 1.0, 1.5] {
            let k = k1(alpha, 4096, 64);
            let ratio = k.rate(2) / k.rate(1);
            // the periodic images add O(N^{-1-alpha}) to both rates
            assert!((ratio - 2f64.powf(-1.0 - alpha)).abs() < 1e-4, "alpha {alpha}: {ratio}");
        }
    }

    #[test]
    fn folding_adds_mass() {
        assert!(k1(1.5, 64, 64).p_star() > k1(1.5, 64, 0).p_star());
    }

    #[test]
    fn rejects_bad_specs() {
        let spec = |a| KernelSpec::one_dim(a, 1.0);
        assert!(matches!(Kernel::build(spec(0.0), 16, 4), Err(KernelError::Alpha(_))));
        assert!(matches!(Kernel::build(spec(2.5), 16, 4), Err(KernelError::Alpha(_))));
        assert!(matches!(Kernel::build(spec(1.0), 2, 4), Err(KernelError::Size(2))));
        assert!(matches!(Kernel::build(spec(1.0), 15, 4), Err(KernelError::Size(15))));
        let odd = KernelSpec {
            dim: 2,
            alpha: 1.0,
            angular: AngularProfile::Sectors {
                weights: vec![1.0, 2.0, 1.0, 1.0],
            },
        };
        assert!(matches!(Kernel::build(odd, 8, 1), Err(KernelError::Angular(_))));
    }

    #[test]
    fn rates_are_symmetric_and_centered() {
        let spec = KernelSpec {
            dim: 2,
            alpha: 0.7,
            angular: AngularProfile::Sectors {
                weights: vec![1.0, 3.0, 0.5, 2.0, 1.0, 3.0, 0.5, 2.0],
            },
        };
        let k = Kernel::build(spec, 12, 3).unwrap();
        let t = k.torus();
        assert_eq!(k.rate(0), 0.0);
        for r in 1..t.len() {
            assert!(k.rate(r) > 0.0);
            assert_eq!(k.rate(r), k.rate(t.neg(r)));
        }
        let jt = k.jumps();
        let mut first = [0.0; 2];
        for j in 0..jt.len() {
            for (a, m) in first.iter_mut().enumerate() {
                *m += jt.weight(j) * jt.displacement(j)[a] as f64;
            }
        }
        assert!(first.iter().all(|m| m.abs() < 1e-12), "{first:?}");
        assert_eq!(*jt.cumulative().last().unwrap(), 1.0);
    }

    #[test]
    fn sampler_matches_rate_table() {
        let k = k1(1.2, 16, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 1_000_000;
        let mut counts = [0u64; 17];
        for _ in 0..draws {
            counts[(k.sample_displacement(&mut rng) + 8) as usize] += 1;
        }
        for z in -8i64..=8 {
            if z == 0 {
                assert_eq!(counts[8], 0);
                continue;
            }
            let r = k.torus().site_of_vector(&[z]);
            let mut p = k.rate(r) / k.p_star();
            if z.abs() == 8 {
                p /= 2.0;
            }
            let se = (p * (1.0 - p) / draws as f64).sqrt();
            let freq = counts[(z + 8) as usize] as f64 / draws as f64;
            assert!((freq - p).abs() < 5.0 * se, "z={z}: {freq} vs {p}");
            let mirror = counts[(8 - z) as usize] as f64 / draws as f64;
            assert!((freq - mirror).abs() < 5.0 * se * 2f64.sqrt(), "z={z}");
        }
    }

    #[test]
    fn sampler_is_reproducible() {
        let k = k1(1.5, 64, 8);
        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            assert_eq!(k.sample_jump(&mut a), k.sample_jump(&mut b));
        }
    }

    #[test]
    fn generator_kills_constants_and_diagonalizes_cosines() {
        let n = 64;
        let k = k1(1.5, n, 16);
        let t = k.torus();
        let theta = k.theta(n as f64);
        let c = DensityField::constant(t, 0.7);
        assert!(k.apply_ln(&c, theta).unwrap().values().iter().all(|v| v.abs() < 1e-9));
        for m in [1usize, 5, 32] {
            let g = DensityField::from_fn(t, |x| (2.0 * PI * (m * x[0]) as f64 / n as f64).cos());
            let lg = k.apply_ln(&g, theta).unwrap();
            let psi = k.levy_symbol(&[m]).unwrap();
            for x in 0..n {
                assert!((lg[x] - theta * psi * g[x]).abs() < 1e-9 * theta, "m={m} x={x}");
            }
        }
    }

    #[test]
    fn symbol_properties() {
        let k = k1(1.0, 256, 16);
        assert_eq!(k.levy_symbol(&[0]).unwrap(), 0.0);
        for m in 1..256 {
            let psi = k.levy_symbol(&[m]).unwrap();
            assert!(psi < 0.0, "m={m}");
            assert!((psi - k.levy_symbol(&[256 - m]).unwrap()).abs() < 1e-12);
        }
        assert!(matches!(k.levy_symbol(&[256]), Err(KernelError::Mode(_))));
        let big = k1(1.0, 4096, 64);
        let half = big.levy_symbol(&[2048]).unwrap();
        assert!((half + PI * PI / 2.0).abs() < 1e-2, "{half}");
    }

    #[test]
    fn spectral_route_matches_direct_sum() {
        let n = 256;
        let k = k1(1.5, n, 16);
        let t = k.torus();
        let g = DensityField::from_fn(t, |x| {
            let s = x[0] as f64 / n as f64;
            (2.0 * PI * s).sin().exp() + 0.3 * (6.0 * PI * s).cos()
        });
        let theta = k.theta(n as f64);
        let a = k.apply_ln(&g, theta).unwrap();
        let b = k.apply_ln_spectral(&g, theta).unwrap();
        let scale = a.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(a.sup_distance(&b) < 1e-10 * scale);
        assert!(a.sum().abs() < 1e-12 * scale * n as f64);
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let k = k1(1.5, 16, 2);
        let g = DensityField::constant(Torus::new(32, 1), 1.0);
        assert!(matches!(k.apply_ln(&g, 1.0), Err(KernelError::GridMismatch { .. })));
    }

    #[test]
    fn energy_is_summation_by_parts_of_generator() {
        let n = 128;
        let k = k1(1.3, n, 8);
        let t = k.torus();
        let u = DensityField::from_fn(t, |x| (2.0 * PI * x[0] as f64 / n as f64).sin());
        let v = DensityField::from_fn(t, |x| (4.0 * PI * x[0] as f64 / n as f64).cos().powi(3));
        let e = k.energy(&u, &v, n as f64).unwrap();
        let lv = k.apply_ln(&v, k.theta(n as f64)).unwrap();
        let sbp = -u.values().iter().zip(lv.values()).map(|(a, b)| a * b).sum::<f64>() / n as f64;
        assert!((e - sbp).abs() < 1e-10 * e.abs().max(1.0));
        assert!(k.energy(&u, &u, n as f64).unwrap() > 0.0);
        let c = DensityField::constant(t, 2.0);
        assert_eq!(k.energy(&c, &c, n as f64).unwrap(), 0.0);
    }

    #[test]
    fn one_point_carre_du_champ_of_cosine() {
        let n = 64;
        let k = k1(1.5, n, 8);
        let t = k.torus();
        let m = 3;
        let w = 2.0 * PI * m as f64 / n as f64;
        let g = DensityField::from_fn(t, |x| (w * x[0] as f64).cos());
        let q = k.apply_qn(&g, 1.0).unwrap();
        let psi1 = k.levy_symbol(&[m]).unwrap();
        let psi2 = k.levy_symbol(&[2 * m]).unwrap();
        for x in 0..n {
            let closed = -psi1 + (2.0 * w * x as f64).cos() * (0.5 * psi2 - psi1);
            assert!((q[x] - closed).abs() < 1e-10, "x={x}: {} vs {closed}", q[x]);
        }
    }

    #[test]
    fn pair_operators_reduce_to_one_point_ones() {
        let n = 32;
        let k = k1(1.1, n, 4);
        let t = k.torus();
        let f = DensityField::from_fn(t, |x| (x[0] as f64 * 0.37).sin() + 0.1 * x[0] as f64);
        let grad = PairField::gradient_of(&f);
        let theta = 2.5;
        let lp = k.apply_ln_pair(&grad, theta).unwrap();
        let l = k.apply_ln(&f, theta).unwrap();
        let qp = k.apply_qn_pair(&grad, theta).unwrap();
        let q = k.apply_qn(&f, theta).unwrap();
        for x in 0..n {
            assert!((lp[x] - 2.0 * l[x]).abs() < 1e-10);
            assert!((qp[x] - q[x]).abs() < 1e-10);
        }
        let zero = PairField::zeros(t);
        assert!(k.apply_qn_pair(&zero, theta).unwrap().values().iter().all(|v| *v == 0.0));
        let sym = PairField::from_fn(t, |x, y| (x + y) as f64);
        assert!(matches!(k.apply_ln_pair(&sym, theta), Err(KernelError::NotAntisymmetric(_))));
    }

    #[test]
    fn rate_functionals_match_pair_operators() {
        let n = 24;
        let k = k1(1.4, n, 4);
        let t = k.torus();
        let g: Vec<f64> = (0..n).map(|x| 1.0 + (x % 5) as f64).collect();
        let f = PairField::from_fn(t, |x, y| ((x * 7 + y * 3) % 11) as f64 - ((y * 7 + x * 3) % 11) as f64);
        let nn = n as f64;
        let theta = k.theta(nn);
        let lp = k.apply_ln_pair(&f, theta).unwrap();
        let qp = k.apply_qn_pair(&f, theta).unwrap();
        let via_l: f64 = g.iter().zip(lp.values()).map(|(a, b)| a * b).sum::<f64>() / nn;
        let via_q: f64 = 2.0 * g.iter().zip(qp.values()).map(|(a, b)| a * b).sum::<f64>() / nn;
        let e = k.rate_energy(&g, &f, nn).unwrap();
        let gam = k.rate_gamma(&g, &f, nn).unwrap();
        assert!((e - via_l).abs() < 1e-9 * e.abs().max(1.0), "{e} {via_l}");
        assert!((gam - via_q).abs() < 1e-9 * gam.abs().max(1.0), "{gam} {via_q}");
    }

    #[test]
    fn continuum_constant() {
        assert!((continuum_c(1.0, 1.0).unwrap() - PI).abs() < 1e-9);
        for &alpha in &[0.3, 0.8, 1.2, 1.5, 1.9] {
            let c = continuum_c(alpha, 1.0).unwrap();
            let gamma = statrs::function::gamma::gamma(-alpha);
            let exact = -2.0 * gamma * (PI * alpha / 2.0).cos();
            assert!((c - exact).abs() < 1e-8 * exact, "alpha {alpha}: {c} vs {exact}");
            let at2 = continuum_symbol(alpha, 1.0, 2.0).unwrap();
            assert!((at2 + c * 2f64.powf(alpha)).abs() < 1e-6 * c * 2f64.powf(alpha));
            assert!((continuum_c(alpha, 2.0).unwrap() - 2.0 * c).abs() < 1e-12 * c);
        }
        assert!(continuum_c(2.0, 1.0).is_err());
        assert!(continuum_c(0.0, 1.0).is_err());
    }

    #[test]
    fn rate_csv_is_ordered_and_complete() {
        let k = k1(1.5, 8, 2);
        let mut buf = Vec::new();
        k.write_rate_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "z,p_N");
        assert_eq!(lines.len(), 9);
        assert!(lines[1].starts_with("-3,"));
        assert!(lines[8].starts_with("4,"));
    }

    #[test]
    fn log_corrected_time_scale() {
        let spec = KernelSpec::one_dim(2.0, 1.0);
        assert_eq!(spec.time_scale(), TimeScale::LogCorrected);
        assert!((spec.theta(512.0) - 512.0 * 512.0 / 512f64.ln()).abs() < 1e-9);
        assert_eq!(KernelSpec::one_dim(1.5, 1.0).time_scale(), TimeScale::Power);
    }
}
