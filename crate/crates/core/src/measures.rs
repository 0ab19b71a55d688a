//! Zero-range invariant measures: partition function, density/fugacity maps,
//! moment generating function, entropy, site laws and their monotone couplings,
//! plus macroscopic initial profiles.

use std::collections::HashMap;
use std::io::{self, Write};
use std::sync::OnceLock;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::DensityField;
use crate::lattice::Torus;
use crate::quad::{self, QuadError};

pub const DEFAULT_MARGIN: f64 = 1e-3;
const SERIES_CAP: usize = 100_000;
const SERIES_TOL: f64 = 1e-16;
const LAW_TAIL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("invalid rate function: {0}")]
    Rate(String),
    #[error("fugacity {phi} is at or beyond the usable radius {limit}")]
    SupercriticalFugacity { phi: f64, limit: f64 },
    #[error("density {rho} is at or beyond the usable critical density {limit}")]
    SupercriticalDensity { rho: f64, limit: f64 },
    #[error("series did not reach tolerance within {0} terms")]
    Truncation(usize),
    #[error("rate is not monotone, classification refused")]
    NotMonotone,
    #[error("densities out of order: {0} > {1}")]
    Unordered(f64, f64),
    #[error("value {0} outside the admissible range {1}")]
    Range(f64, &'static str),
    #[error("density inversion failed near {0}")]
    Inversion(f64),
    #[error(transparent)]
    Quadrature(#[from] QuadError),
}

/// Interaction rate `g`, tabulated on `0..table.len()` and extended affinely
/// beyond: `g(n) = g(last) + tail_slope * (n - last)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFunction {
    table: Vec<f64>,
    tail_slope: f64,
}

/// Growth class of a nondecreasing rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Growth {
    /// `g(n) -> infinity`: all fugacities admissible.
    Unbounded,
    /// `g` bounded, radius of convergence `phi_c = lim g`.
    Bounded { phi_c: f64 },
}

impl RateFunction {
    pub fn new(table: Vec<f64>, tail_slope: f64) -> Result<Self, MeasureError> {
        if table.len() < 2 {
            return Err(MeasureError::Rate("table needs g(0) and g(1)".into()));
        }
        if table[0] != 0.0 {
            return Err(MeasureError::Rate(format!("g(0) must be 0, got {}", table[0])));
        }
        if let Some(k) = table.iter().skip(1).position(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(MeasureError::Rate(format!("g({}) must be positive", k + 1)));
        }
        if !(tail_slope >= 0.0 && tail_slope.is_finite()) {
            return Err(MeasureError::Rate(format!("tail slope must be nonnegative, got {tail_slope}")));
        }
        Ok(RateFunction { table, tail_slope })
    }

    /// `g(n) = n`.
    pub fn linear() -> Self {
        RateFunction {
            table: vec![0.0, 1.0],
            tail_slope: 1.0,
        }
    }

    /// `g(n) = 1{n >= 1}`.
    pub fn indicator() -> Self {
        RateFunction {
            table: vec![0.0, 1.0],
            tail_slope: 0.0,
        }
    }

    /// `g(n) = min(n, cap)`.
    pub fn capped(cap: u32) -> Self {
        RateFunction {
            table: (0..=cap.max(1)).map(f64::from).collect(),
            tail_slope: 0.0,
        }
    }

    #[inline]
    pub fn g(&self, n: u32) -> f64 {
        let n = n as usize;
        let last = self.table.len() - 1;
        if n <= last {
            self.table[n]
        } else {
            self.table[last] + self.tail_slope * (n - last) as f64
        }
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn tail_slope(&self) -> f64 {
        self.tail_slope
    }

    /// Largest tabulated occupancy.
    pub fn cap(&self) -> usize {
        self.table.len() - 1
    }

    /// `sup |g(n+1) - g(n)|`.
    pub fn kappa(&self) -> f64 {
        self.table
            .windows(2)
            .map(|w| (w[1] - w[0]).abs())
            .fold(self.tail_slope, f64::max)
    }

    pub fn is_monotone(&self) -> bool {
        self.table.windows(2).all(|w| w[1] >= w[0])
    }

    /// Radius of convergence of `sum phi^k / g(k)!`.
    pub fn phi_c(&self) -> f64 {
        if self.tail_slope > 0.0 {
            f64::INFINITY
        } else {
            self.table[self.cap()]
        }
    }

    pub fn classify(&self) -> Result<Growth, MeasureError> {
        if !self.is_monotone() {
            return Err(MeasureError::NotMonotone);
        }
        Ok(if self.tail_slope > 0.0 {
            Growth::Unbounded
        } else {
            Growth::Bounded { phi_c: self.phi_c() }
        })
    }
}

/// First three moments of the site marginal at a fugacity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SiteMoments {
    pub log_z: f64,
    pub mean: f64,
    pub var: f64,
}

/// Thermodynamics of the product invariant measures for a fixed rate.
#[derive(Clone, Debug)]
pub struct Thermo {
    rate: RateFunction,
    phi_c: f64,
    margin: f64,
    // density at the fugacity margin, computed on first use
    top: OnceLock<f64>,
}

impl Thermo {
    pub fn new(rate: RateFunction) -> Self {
        Self::with_margin(rate, DEFAULT_MARGIN)
    }

    pub fn with_margin(rate: RateFunction, margin: f64) -> Self {
        let phi_c = rate.phi_c();
        Thermo {
            rate,
            phi_c,
            margin,
            top: OnceLock::new(),
        }
    }

    pub fn rate(&self) -> &RateFunction {
        &self.rate
    }

    pub fn phi_c(&self) -> f64 {
        self.phi_c
    }

    fn phi_limit(&self) -> f64 {
        self.phi_c * (1.0 - self.margin)
    }

    fn check_phi(&self, phi: f64) -> Result<(), MeasureError> {
        if phi.is_nan() || phi < 0.0 {
            return Err(MeasureError::Range(phi, "[0, phi_c)"));
        }
        if phi >= self.phi_limit() {
            return Err(MeasureError::SupercriticalFugacity {
                phi,
                limit: self.phi_limit(),
            });
        }
        Ok(())
    }

    /// Log-terms `k ln phi - ln g(k)!` until the tail bound drops below `tol`
    /// relative to the partial sum.
    fn log_terms(&self, phi: f64, tol: f64) -> Result<Vec<f64>, MeasureError> {
        self.check_phi(phi)?;
        if phi == 0.0 {
            return Ok(vec![0.0]);
        }
        let lphi = phi.ln();
        let mut out = vec![0.0];
        let (mut lmax, mut sum) = (0.0f64, 1.0f64);
        let mut lgf = 0.0;
        for k in 1..SERIES_CAP {
            lgf += self.rate.g(k as u32).ln();
            let lt = k as f64 * lphi - lgf;
            out.push(lt);
            if lt > lmax {
                sum = sum * (lmax - lt).exp() + 1.0;
                lmax = lt;
            } else {
                sum += (lt - lmax).exp();
            }
            if k >= self.rate.cap() {
                let r = phi / self.rate.g(k as u32 + 1);
                if r < 1.0 && (lt - lmax).exp() * r / (1.0 - r) < tol * sum {
                    return Ok(out);
                }
            }
        }
        Err(MeasureError::Truncation(SERIES_CAP))
    }

    pub fn moments(&self, phi: f64) -> Result<SiteMoments, MeasureError> {
        let lt = self.log_terms(phi, SERIES_TOL)?;
        let lmax = lt.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = lt.iter().map(|l| (l - lmax).exp()).collect();
        let s: f64 = w.iter().sum();
        let mean = w.iter().enumerate().map(|(k, w)| k as f64 * w).sum::<f64>() / s;
        let var = w
            .iter()
            .enumerate()
            .map(|(k, w)| (k as f64 - mean).powi(2) * w)
            .sum::<f64>()
            / s;
        Ok(SiteMoments {
            log_z: lmax + s.ln(),
            mean,
            var,
        })
    }

    /// `Z(phi) = sum_k phi^k / g(k)!`.
    pub fn partition(&self, phi: f64) -> Result<f64, MeasureError> {
        Ok(self.moments(phi)?.log_z.exp())
    }

    pub fn log_partition(&self, phi: f64) -> Result<f64, MeasureError> {
        Ok(self.moments(phi)?.log_z)
    }

    /// `rho(phi)`, the mean occupancy at fugacity `phi`.
    pub fn density(&self, phi: f64) -> Result<f64, MeasureError> {
        Ok(self.moments(phi)?.mean)
    }

    /// Largest density reachable below the fugacity margin.
    pub fn max_density(&self) -> Result<f64, MeasureError> {
        if self.phi_c.is_infinite() {
            Ok(f64::INFINITY)
        } else {
            self.density(self.phi_limit() * (1.0 - 1e-12))
        }
    }

    /// `phi(rho)`, inverse of [`Thermo::density`], by safeguarded Newton.
    pub fn fugacity(&self, rho: f64) -> Result<f64, MeasureError> {
        if !(rho >= 0.0 && rho.is_finite()) {
            return Err(MeasureError::Range(rho, "[0, rho_c)"));
        }
        if rho == 0.0 {
            return Ok(0.0);
        }
        let (mut lo, mut hi);
        if self.phi_c.is_finite() {
            lo = 0.0;
            hi = self.phi_limit() * (1.0 - 1e-12);
            let top = match self.top.get() {
                Some(&t) => t,
                None => {
                    let t = self.density(hi)?;
                    *self.top.get_or_init(|| t)
                }
            };
            if top <= rho {
                return Err(MeasureError::SupercriticalDensity { rho, limit: top });
            }
        } else {
            lo = 0.0;
            hi = rho.max(1.0) * self.rate.g(1);
            while self.density(hi)? <= rho {
                lo = hi;
                hi *= 2.0;
            }
        }
        let tol = 1e-13 * rho.max(1.0);
        let mut phi = 0.5 * (lo + hi);
        for _ in 0..300 {
            let m = self.moments(phi)?;
            let err = m.mean - rho;
            if err.abs() < tol {
                return Ok(phi);
            }
            if err > 0.0 {
                hi = phi;
            } else {
                lo = phi;
            }
            let newton = phi - err * phi / m.var;
            phi = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if hi - lo < 1e-15 * hi {
                break;
            }
        }
        let m = self.moments(phi)?;
        if (m.mean - rho).abs() < 1e-10 * rho.max(1.0) {
            Ok(phi)
        } else {
            Err(MeasureError::Inversion(rho))
        }
    }

    /// `E[g(xi(0))]` under the site law of density `rho`, summed from the pmf.
    pub fn expected_rate(&self, rho: f64) -> Result<f64, MeasureError> {
        let law = self.site_law(rho)?;
        Ok(law
            .pmf()
            .iter()
            .enumerate()
            .map(|(k, p)| p * self.rate.g(k as u32))
            .sum())
    }

    /// `M_rho(theta) = Z(phi e^theta) / Z(phi)`.
    pub fn mgf(&self, rho: f64, theta: f64) -> Result<f64, MeasureError> {
        let phi = self.fugacity(rho)?;
        Ok((self.log_partition(phi * theta.exp())? - self.log_partition(phi)?).exp())
    }

    pub fn log_mgf(&self, rho: f64, theta: f64) -> Result<f64, MeasureError> {
        let phi = self.fugacity(rho)?;
        Ok(self.log_partition(phi * theta.exp())? - self.log_partition(phi)?)
    }

    /// `H(a) = int_rho^a ln(phi(x)/phi(rho)) dx`, closed form
    /// `a ln(phi_a/phi_rho) - ln Z(phi_a) + ln Z(phi_rho)`.
    pub fn entropy(&self, a: f64, rho: f64) -> Result<f64, MeasureError> {
        if rho.is_nan() || rho <= 0.0 {
            return Err(MeasureError::Range(rho, "(0, rho_c)"));
        }
        let pr = self.fugacity(rho)?;
        let pa = self.fugacity(a)?;
        let lead = if a == 0.0 { 0.0 } else { a * (pa / pr).ln() };
        Ok(lead - self.log_partition(pa)? + self.log_partition(pr)?)
    }

    /// Same function by adaptive quadrature of its defining integral.
    pub fn entropy_fn(&self, a: f64, rho: f64) -> Result<f64, MeasureError> {
        if rho.is_nan() || rho <= 0.0 {
            return Err(MeasureError::Range(rho, "(0, rho_c)"));
        }
        if a.is_nan() || a < 0.0 {
            return Err(MeasureError::Range(a, "[0, rho_c)"));
        }
        let lpr = self.fugacity(rho)?.ln();
        let failure = std::cell::RefCell::new(None);
        let v = quad::integrate(
            |x| match self.fugacity(x) {
                Ok(p) => p.ln() - lpr,
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    f64::NAN
                }
            },
            rho,
            a,
            1e-13,
            1e-11,
        );
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        Ok(v?)
    }

    /// `sup_theta { a theta - ln M_rho(theta) }`, by grid search and golden
    /// section on the concave objective.
    pub fn entropy_legendre(&self, a: f64, rho: f64) -> Result<f64, MeasureError> {
        let phi = self.fugacity(rho)?;
        let lz = self.log_partition(phi)?;
        let top = if self.phi_c.is_finite() {
            (self.phi_limit() / phi).ln() - 1e-9
        } else {
            let mut t = 1.0f64;
            while self.density(phi * t.exp())? < 2.0 * a + 5.0 {
                t += 1.0;
            }
            t
        };
        let f = |t: f64| -> Result<f64, MeasureError> { Ok(a * t - (self.log_partition(phi * t.exp())? - lz)) };
        let (lo0, steps) = (-40.0f64, 400);
        let h = (top - lo0) / steps as f64;
        let mut best = (lo0, f(lo0)?);
        for i in 1..=steps {
            let t = lo0 + i as f64 * h;
            let v = f(t)?;
            if v > best.1 {
                best = (t, v);
            }
        }
        let (mut lo, mut hi) = ((best.0 - h).max(lo0), (best.0 + h).min(top));
        let gr = 0.5 * (5f64.sqrt() - 1.0);
        let mut c = hi - gr * (hi - lo);
        let mut d = lo + gr * (hi - lo);
        let (mut fc, mut fd) = (f(c)?, f(d)?);
        for _ in 0..200 {
            if hi - lo < 1e-12 {
                break;
            }
            if fc > fd {
                hi = d;
                d = c;
                fd = fc;
                c = hi - gr * (hi - lo);
                fc = f(c)?;
            } else {
                lo = c;
                c = d;
                fc = fd;
                d = lo + gr * (hi - lo);
                fd = f(d)?;
            }
        }
        Ok(fc.max(fd).max(best.1))
    }

    /// Site marginal `q_rho` as a finite table; the neglected tail is below 1e-12.
    pub fn site_law(&self, rho: f64) -> Result<SiteLaw, MeasureError> {
        let phi = self.fugacity(rho)?;
        let lt = self.log_terms(phi, LAW_TAIL * 1e-2)?;
        let lmax = lt.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = lt.iter().map(|l| (l - lmax).exp()).collect();
        let s: f64 = w.iter().sum();
        Ok(SiteLaw::from_pmf(w.into_iter().map(|v| v / s).collect()))
    }

    /// Writes `phi,Z,rho` rows for the given fugacities.
    pub fn write_thermo_csv<W: Write>(&self, mut w: W, phis: &[f64]) -> io::Result<()> {
        writeln!(w, "phi,Z,rho")?;
        for &phi in phis {
            match self.moments(phi) {
                Ok(m) => writeln!(w, "{phi},{:.15e},{:.15e}", m.log_z.exp(), m.mean)?,
                Err(_) => writeln!(w, "{phi},inf,inf")?,
            }
        }
        Ok(())
    }
}

/// A distribution on `{0, 1, ..}` given by a finite pmf table.
#[derive(Clone, Debug, PartialEq)]
pub struct SiteLaw {
    pmf: Vec<f64>,
    cdf: Vec<f64>,
}

impl SiteLaw {
    pub fn from_pmf(pmf: Vec<f64>) -> Self {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = pmf
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        let total = acc;
        for c in cdf.iter_mut() {
            *c /= total;
        }
        *cdf.last_mut().expect("nonempty pmf") = 1.0;
        SiteLaw { pmf, cdf }
    }

    pub fn bernoulli(p: f64) -> Result<Self, MeasureError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(MeasureError::Range(p, "[0, 1]"));
        }
        Ok(Self::from_pmf(vec![1.0 - p, p]))
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn cdf(&self) -> &[f64] {
        &self.cdf
    }

    pub fn prob(&self, k: usize) -> f64 {
        self.pmf.get(k).copied().unwrap_or(0.0)
    }

    pub fn mean(&self) -> f64 {
        self.pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.pmf.iter().enumerate().map(|(k, p)| (k as f64 - m).powi(2) * p).sum()
    }

    /// Smallest `k` with `F(k) > u`.
    #[inline]
    pub fn quantile(&self, u: f64) -> u32 {
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1) as u32
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        self.quantile(rng.random())
    }

    /// The size-biased law `k q(k) / mean`, shifted down by one: the law of
    /// the other particles at a typical particle's site.
    pub fn palm(&self) -> SiteLaw {
        let m = self.mean();
        let pmf: Vec<f64> = self.pmf.iter().enumerate().skip(1).map(|(k, p)| k as f64 * p / m).collect();
        SiteLaw::from_pmf(if pmf.is_empty() { vec![1.0] } else { pmf })
    }

    /// `sum_k q(k) ln(q(k)/r(k))`; infinite when `q` is not dominated by `r`.
    pub fn relative_entropy(&self, reference: &SiteLaw) -> f64 {
        let mut h = 0.0;
        for (k, &q) in self.pmf.iter().enumerate() {
            if q == 0.0 {
                continue;
            }
            let r = reference.prob(k);
            if r == 0.0 {
                return f64::INFINITY;
            }
            h += q * (q / r).ln();
        }
        h
    }

    pub fn write_pmf_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "k,q")?;
        for (k, p) in self.pmf.iter().enumerate() {
            writeln!(w, "{k},{p:.17e}")?;
        }
        Ok(())
    }
}

/// Couples several site laws through one shared uniform, so that
/// stochastically ordered laws give ordered samples.
pub fn quantile_coupling<R: Rng + ?Sized>(laws: &[&SiteLaw], rng: &mut R) -> Vec<u32> {
    let u: f64 = rng.random();
    laws.iter().map(|l| l.quantile(u)).collect()
}

/// Marginal family of a product invariant measure.
#[derive(Clone, Debug)]
pub enum SiteFamily {
    Bernoulli,
    ZeroRange(Thermo),
}

impl SiteFamily {
    pub fn site_law(&self, rho: f64) -> Result<SiteLaw, MeasureError> {
        match self {
            SiteFamily::Bernoulli => SiteLaw::bernoulli(rho),
            SiteFamily::ZeroRange(t) => t.site_law(rho),
        }
    }

    /// Laws `q_rho1 <= q_rho2` sampled with one shared uniform.
    pub fn monotone_pair<R: Rng + ?Sized>(&self, rho1: f64, rho2: f64, rng: &mut R) -> Result<(u32, u32), MeasureError> {
        if rho1 > rho2 {
            return Err(MeasureError::Unordered(rho1, rho2));
        }
        let (a, b) = (self.site_law(rho1)?, self.site_law(rho2)?);
        let v = quantile_coupling(&[&a, &b], rng);
        Ok((v[0], v[1]))
    }

    /// Entropy density of `q_a` relative to `q_rho` per site.
    pub fn entropy(&self, a: f64, rho: f64) -> Result<f64, MeasureError> {
        match self {
            SiteFamily::Bernoulli => {
                let term = |x: f64, y: f64| {
                    if x == 0.0 {
                        0.0
                    } else if y == 0.0 {
                        f64::INFINITY
                    } else {
                        x * (x / y).ln()
                    }
                };
                if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&rho) {
                    return Err(MeasureError::Range(a, "[0, 1]"));
                }
                Ok(term(a, rho) + term(1.0 - a, 1.0 - rho))
            }
            SiteFamily::ZeroRange(t) => {
                if rho == 0.0 {
                    return Ok(if a == 0.0 { 0.0 } else { f64::INFINITY });
                }
                t.entropy(a, rho)
            }
        }
    }

    /// One independent sample per site with means given by `field`.
    pub fn sample_product<R: Rng + ?Sized>(&self, field: &DensityField, rng: &mut R) -> Result<Vec<u32>, MeasureError> {
        let mut laws: HashMap<u64, SiteLaw> = HashMap::new();
        let mut out = Vec::with_capacity(field.len());
        for &rho in field.values() {
            let law = match laws.entry(rho.to_bits()) {
                std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
                std::collections::hash_map::Entry::Vacant(e) => e.insert(self.site_law(rho)?),
            };
            out.push(law.sample(rng));
        }
        Ok(out)
    }

    /// `H(nu^n | nu_rho)` for the product measure with means `field`, summed
    /// site by site from the pmf tables.
    pub fn product_relative_entropy(&self, field: &DensityField, rho_ref: f64) -> Result<f64, MeasureError> {
        let reference = self.site_law(rho_ref)?;
        let mut cache: HashMap<u64, f64> = HashMap::new();
        let mut h = 0.0;
        for &u in field.values() {
            let v = match cache.get(&u.to_bits()) {
                Some(v) => *v,
                None => {
                    let v = self.site_relative_entropy(u, rho_ref, &reference)?;
                    cache.insert(u.to_bits(), v);
                    v
                }
            };
            h += v;
        }
        Ok(h)
    }

    fn site_relative_entropy(&self, u: f64, rho: f64, reference: &SiteLaw) -> Result<f64, MeasureError> {
        let law = self.site_law(u)?;
        match self {
            SiteFamily::Bernoulli => Ok(law.relative_entropy(reference)),
            SiteFamily::ZeroRange(t) => {
                // Reference tables are truncated, so use exact log-ratios
                // ln q_u(k) - ln q_rho(k) = k ln(phi_u/phi_rho) - ln Z_u + ln Z_rho.
                let (pu, pr) = (t.fugacity(u)?, t.fugacity(rho)?);
                if pr == 0.0 {
                    return Ok(if u == 0.0 { 0.0 } else { f64::INFINITY });
                }
                let slope = if pu == 0.0 { 0.0 } else { (pu / pr).ln() };
                let shift = t.log_partition(pr)? - t.log_partition(pu)?;
                Ok(law
                    .pmf()
                    .iter()
                    .enumerate()
                    .filter(|(_, q)| **q > 0.0)
                    .map(|(k, q)| q * (k as f64 * slope + shift))
                    .sum())
            }
        }
    }
}

/// Macroscopic profile on the unit torus, depending on the first coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    Constant { value: f64 },
    /// Piecewise constant: `values[i]` on `[breaks[i-1], breaks[i])`, with
    /// `breaks` increasing inside `(0, 1)` and one more value than breaks.
    Steps { breaks: Vec<f64>, values: Vec<f64> },
    /// `mean + amplitude * cos(2 pi mode x)`.
    Cosine { mean: f64, amplitude: f64, mode: u32 },
}

impl Profile {
    /// `base + height * 1{x in [from, to)}`.
    pub fn step(base: f64, height: f64, from: f64, to: f64) -> Self {
        Profile::Steps {
            breaks: vec![from, to],
            values: vec![base, base + height, base],
        }
    }

    pub fn validate(&self) -> Result<(), MeasureError> {
        match self {
            Profile::Constant { value } if !value.is_finite() => Err(MeasureError::Range(*value, "finite")),
            Profile::Steps { breaks, values } => {
                if values.len() != breaks.len() + 1 {
                    return Err(MeasureError::Range(values.len() as f64, "one more value than breaks"));
                }
                if breaks.iter().any(|b| !(*b > 0.0 && *b < 1.0)) || breaks.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(MeasureError::Range(f64::NAN, "increasing breaks inside (0, 1)"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let x = x.rem_euclid(1.0);
        match self {
            Profile::Constant { value } => *value,
            Profile::Steps { breaks, values } => values[breaks.partition_point(|&b| b <= x)],
            Profile::Cosine { mean, amplitude, mode } => {
                mean + amplitude * (2.0 * std::f64::consts::PI * *mode as f64 * x).cos()
            }
        }
    }

    fn primitive_period(&self, x: f64) -> f64 {
        // Antiderivative on [0, x] for x in [0, 1].
        match self {
            Profile::Constant { value } => value * x,
            Profile::Steps { breaks, values } => {
                let mut acc = 0.0;
                let mut left = 0.0;
                for (i, &b) in breaks.iter().enumerate() {
                    if x <= b {
                        return acc + values[i] * (x - left);
                    }
                    acc += values[i] * (b - left);
                    left = b;
                }
                acc + values[breaks.len()] * (x - left)
            }
            Profile::Cosine { mean, amplitude, mode } => {
                if *mode == 0 {
                    (mean + amplitude) * x
                } else {
                    let w = 2.0 * std::f64::consts::PI * *mode as f64;
                    mean * x + amplitude * (w * x).sin() / w
                }
            }
        }
    }

    fn primitive(&self, x: f64) -> f64 {
        let whole = x.floor();
        whole * self.primitive_period(1.0) + self.primitive_period(x - whole)
    }

    /// Exact average over `[a, b]`.
    pub fn average(&self, a: f64, b: f64) -> f64 {
        (self.primitive(b) - self.primitive(a)) / (b - a)
    }

    /// Cell averages `u0^n(z)` over `[(z - 1/2)/n, (z + 1/2)/n]` on the torus.
    pub fn discretize(&self, torus: Torus, n: f64) -> DensityField {
        DensityField::from_fn(torus, |c| {
            let z = c[0] as f64;
            self.average((z - 0.5) / n, (z + 0.5) / n)
        })
    }

    pub fn sup(&self) -> f64 {
        match self {
            Profile::Constant { value } => *value,
            Profile::Steps { values, .. } => values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            Profile::Cosine { mean, amplitude, .. } => mean + amplitude.abs(),
        }
    }

    pub fn inf(&self) -> f64 {
        match self {
            Profile::Constant { value } => *value,
            Profile::Steps { values, .. } => values.iter().cloned().fold(f64::INFINITY, f64::min),
            Profile::Cosine { mean, amplitude, .. } => mean - amplitude.abs(),
        }
    }
}

/// The hydrodynamic flux `phi(rho)`.
#[derive(Clone, Debug)]
pub enum Flux {
    Identity,
    Tabulated(FluxTable),
}

impl Flux {
    #[inline]
    pub fn eval(&self, rho: f64) -> f64 {
        match self {
            Flux::Identity => rho,
            Flux::Tabulated(t) => t.eval(rho),
        }
    }

    /// Lipschitz bound used for time-step control.
    pub fn lipschitz(&self) -> f64 {
        match self {
            Flux::Identity => 1.0,
            Flux::Tabulated(t) => t.thermo.rate().kappa(),
        }
    }
}

/// `phi(rho)` on `[0, rho_max]` by cubic Hermite interpolation using the exact
/// slope `phi'(rho) = phi / Var`.
#[derive(Clone, Debug)]
pub struct FluxTable {
    thermo: Thermo,
    h: f64,
    rho_max: f64,
    phi: Vec<f64>,
    dphi: Vec<f64>,
}

impl FluxTable {
    pub fn build(thermo: &Thermo, rho_max: f64, tol: f64) -> Result<Self, MeasureError> {
        let node = |rho: f64| -> Result<(f64, f64), MeasureError> {
            if rho == 0.0 {
                return Ok((0.0, thermo.rate().g(1)));
            }
            let phi = thermo.fugacity(rho)?;
            Ok((phi, phi / thermo.moments(phi)?.var))
        };
        let mut cells = 64usize;
        loop {
            let h = rho_max / cells as f64;
            let mut phi = Vec::with_capacity(cells + 1);
            let mut dphi = Vec::with_capacity(cells + 1);
            for i in 0..=cells {
                let (p, d) = node(i as f64 * h)?;
                phi.push(p);
                dphi.push(d);
            }
            let table = FluxTable {
                thermo: thermo.clone(),
                h,
                rho_max,
                phi,
                dphi,
            };
            let mut worst = 0.0f64;
            for i in 0..cells {
                let x = (i as f64 + 0.5) * h;
                worst = worst.max((table.eval(x) - thermo.fugacity(x)?).abs());
            }
            if worst < tol {
                return Ok(table);
            }
            if cells >= 1 << 16 {
                return Err(MeasureError::Inversion(rho_max));
            }
            cells *= 2;
        }
    }

    pub fn rho_max(&self) -> f64 {
        self.rho_max
    }

    pub fn eval(&self, rho: f64) -> f64 {
        if rho <= 0.0 {
            return self.dphi[0] * rho;
        }
        if rho >= self.rho_max {
            return self.thermo.fugacity(rho).unwrap_or(f64::NAN);
        }
        let s = rho / self.h;
        let i = (s as usize).min(self.phi.len() - 2);
        let t = s - i as f64;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.phi[i] + h10 * self.h * self.dphi[i] + h01 * self.phi[i + 1] + h11 * self.h * self.dphi[i + 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::E;

    fn poisson() -> Thermo {
        Thermo::new(RateFunction::linear())
    }

    fn geometric() -> Thermo {
        Thermo::new(RateFunction::indicator())
    }

    #[test]
    fn partition_closed_forms() {
        assert!((poisson().partition(1.0).unwrap() - E).abs() < 1e-10);
        assert!((geometric().partition(0.5).unwrap() - 2.0).abs() < 1e-10);
        assert_eq!(poisson().partition(0.0).unwrap(), 1.0);
        assert!(matches!(
            geometric().partition(1.0),
            Err(MeasureError::SupercriticalFugacity { .. })
        ));
        let z = poisson();
        let mut prev = 0.0;
        for i in 0..50 {
            let v = z.partition(i as f64 * 0.3).unwrap();
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn fugacity_inverts_density() {
        let p = poisson();
        for &rho in &[0.0, 0.1, 1.0, 7.5, 40.0] {
            assert!((p.fugacity(rho).unwrap() - rho).abs() < 1e-10);
        }
        let g = geometric();
        assert!((g.fugacity(1.0).unwrap() - 0.5).abs() < 1e-10);
        assert!((g.fugacity(3.0).unwrap() - 0.75).abs() < 1e-10);
        assert_eq!(g.fugacity(0.0).unwrap(), 0.0);
        assert!(matches!(g.fugacity(5000.0), Err(MeasureError::SupercriticalDensity { .. })));
        let c = Thermo::new(RateFunction::capped(5));
        for i in 1..40 {
            let phi = i as f64 * 0.12;
            let back = c.fugacity(c.density(phi).unwrap()).unwrap();
            assert!((back - phi).abs() < 1e-8, "{phi} {back}");
        }
    }

    #[test]
    fn expected_rate_is_fugacity() {
        for t in [poisson(), geometric(), Thermo::new(RateFunction::capped(3))] {
            for &rho in &[0.3, 1.0, 2.5] {
                let phi = t.fugacity(rho).unwrap();
                assert!((t.expected_rate(rho).unwrap() - phi).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn moment_generating_function() {
        let p = poisson();
        assert!((p.mgf(1.0, 1.0).unwrap() - (E - 1.0).exp()).abs() < 1e-6);
        assert!((p.mgf(2.0, 0.0).unwrap() - 1.0).abs() < 1e-14);
        let g = geometric();
        let series: f64 = (0..2000).map(|k| 0.5f64.powi(k) * 0.5 * (0.3 * k as f64).exp()).sum();
        assert!((g.mgf(1.0, 0.3).unwrap() - series).abs() < 1e-10);
        assert!((g.mgf(1.0, 0.3).unwrap() - 0.5 / (1.0 - 0.5 * 0.3f64.exp())).abs() < 1e-10);
        assert!(g.mgf(1.0, 0.8).is_err());
        for t in [poisson(), geometric()] {
            let h = 0.05;
            let lm: Vec<f64> = (0..30).map(|i| t.log_mgf(1.0, -0.8 + i as f64 * h).unwrap()).collect();
            for w in lm.windows(3) {
                assert!(w[0] - 2.0 * w[1] + w[2] >= -1e-8);
            }
        }
    }

    #[test]
    fn entropy_three_ways() {
        let p = poisson();
        let exact = 2.0 * 2f64.ln() - 1.0;
        assert!((p.entropy(2.0, 1.0).unwrap() - exact).abs() < 1e-10);
        assert!((p.entropy_fn(2.0, 1.0).unwrap() - exact).abs() < 1e-8);
        assert!(p.entropy(1.0, 1.0).unwrap().abs() < 1e-14);
        for t in [poisson(), geometric()] {
            for &a in &[0.0, 0.2, 0.7, 1.0, 1.6, 3.0] {
                let closed = t.entropy(a, 1.0).unwrap();
                let leg = t.entropy_legendre(a, 1.0).unwrap();
                assert!(closed >= -1e-14);
                assert!((closed - leg).abs() < 1e-6, "a={a}: {closed} vs {leg}");
                if a > 0.0 {
                    assert!((closed - t.entropy_fn(a, 1.0).unwrap()).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn site_laws_and_palm() {
        let law = poisson().site_law(2.0).unwrap();
        assert!((law.mean() - 2.0).abs() < 1e-12);
        assert!((law.variance() - 2.0).abs() < 1e-10);
        assert_eq!(*law.cdf().last().unwrap(), 1.0);
        // Poisson is its own Palm law.
        let palm = law.palm();
        for k in 0..10 {
            assert!((palm.prob(k) - law.prob(k)).abs() < 1e-12);
        }
        let b = SiteLaw::bernoulli(0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..100).all(|_| b.sample(&mut rng) == 0));
    }

    #[test]
    fn quantile_coupling_orders_samples() {
        let fam = SiteFamily::ZeroRange(poisson());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10_000 {
            let (a, b) = fam.monotone_pair(0.5, 2.0, &mut rng).unwrap();
            assert!(a <= b);
            let (c, d) = fam.monotone_pair(1.0, 1.0, &mut rng).unwrap();
            assert_eq!(c, d);
        }
        assert!(fam.monotone_pair(2.0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn relative_entropy_of_products() {
        let fam = SiteFamily::ZeroRange(poisson());
        let t = Torus::new(64, 1);
        let two = DensityField::constant(t, 2.0);
        let h = fam.product_relative_entropy(&two, 1.0).unwrap();
        assert!((h - 64.0 * (2.0 * 2f64.ln() - 1.0)).abs() < 1e-9, "{h}");
        assert_eq!(fam.product_relative_entropy(&DensityField::constant(t, 1.0), 1.0).unwrap(), 0.0);
        let profile = Profile::Cosine {
            mean: 1.0,
            amplitude: 0.6,
            mode: 1,
        };
        let per_site: Vec<f64> = [64usize, 256, 1024]
            .iter()
            .map(|&n| {
                let f = profile.discretize(Torus::new(n, 1), n as f64);
                fam.product_relative_entropy(&f, 1.0).unwrap() / n as f64
            })
            .collect();
        assert!((per_site[0] / per_site[2] - 1.0).abs() < 0.01, "{per_site:?}");
        let bern = SiteFamily::Bernoulli;
        assert_eq!(bern.product_relative_entropy(&DensityField::constant(t, 0.5), 0.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn classification() {
        assert_eq!(RateFunction::linear().classify().unwrap(), Growth::Unbounded);
        assert_eq!(RateFunction::indicator().classify().unwrap(), Growth::Bounded { phi_c: 1.0 });
        assert_eq!(RateFunction::capped(5).classify().unwrap(), Growth::Bounded { phi_c: 5.0 });
        let bumpy = RateFunction::new(vec![0.0, 2.0, 1.0], 1.0).unwrap();
        assert_eq!(bumpy.classify(), Err(MeasureError::NotMonotone));
        assert_eq!(bumpy.kappa(), 2.0);
        assert!(RateFunction::new(vec![1.0, 2.0], 0.0).is_err());
        assert!(RateFunction::new(vec![0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn profile_cell_averages() {
        let p = Profile::step(0.2, 0.6, 0.25, 0.5);
        p.validate().unwrap();
        let f = p.discretize(Torus::new(128, 1), 128.0);
        assert!((f.values().iter().sum::<f64>() / 128.0 - (0.2 + 0.6 * 0.25)).abs() < 1e-12);
        assert!((f[32] - 0.5).abs() < 1e-12);
        assert!((f[40] - 0.8).abs() < 1e-12);
        assert!((f[0] - 0.2).abs() < 1e-12);
        let c = Profile::Cosine {
            mean: 1.0,
            amplitude: 0.5,
            mode: 2,
        };
        let g = c.discretize(Torus::new(64, 1), 64.0);
        assert!((g.values().iter().sum::<f64>() / 64.0 - 1.0).abs() < 1e-12);
        assert!((c.average(0.1, 0.1 + 1e-7) - c.eval(0.1)).abs() < 1e-6);
        assert!(Profile::Steps {
            breaks: vec![0.5, 0.2],
            values: vec![0.0, 1.0, 0.0]
        }
        .validate()
        .is_err());
    }

    #[test]
    fn flux_table_interpolates() {
        let g = geometric();
        let table = FluxTable::build(&g, 2.0, 1e-10).unwrap();
        for i in 0..=400 {
            let rho = i as f64 * 0.005;
            assert!((table.eval(rho) - rho / (1.0 + rho)).abs() < 1e-8, "{rho}");
        }
        assert!((table.eval(3.0) - 0.75).abs() < 1e-10);
    }

    #[test]
    fn csv_exports() {
        let mut buf = Vec::new();
        poisson().write_thermo_csv(&mut buf, &[0.0, 1.0]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("phi,Z,rho\n0,1"));
        let mut buf = Vec::new();
        SiteLaw::bernoulli(0.25).unwrap().write_pmf_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }
}
