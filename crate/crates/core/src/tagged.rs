//! A tagged particle in the zero-range process, simulated either jointly with
//! the full configuration or through the environment seen from the tag.

use std::io::{self, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dynamics::{exp_sample, SimClock, SumTree};
use crate::kernel::LatticeKernel;
use crate::lattice::Torus;
use crate::measures::{MeasureError, RateFunction, Thermo};

/// Fewest samples accepted by [`empirical_cf`].
pub const MIN_CF_SAMPLES: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaggedError {
    #[error("environment has {found} sites, lattice has {expected}")]
    Size { expected: usize, found: usize },
    #[error("trajectory has no segments")]
    EmptyTrajectory,
    #[error("trajectory segment {0} starts before its predecessor")]
    Unordered(usize),
    #[error("exponential martingale needs a one-dimensional walk")]
    Dim,
    #[error("need at least {MIN_CF_SAMPLES} samples, got {0}")]
    TooFewSamples(usize),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// Translation rate factor `g(k+1)/(k+1)` when `k` other particles share the
/// tag's site, i.e. `b` evaluated at the tag's site occupation.
#[inline]
pub fn tag_rate(rate: &RateFunction, k: u32) -> f64 {
    rate.g(k + 1) / (k + 1) as f64
}

/// Departure rate factor of the other particles at the tag's site,
/// `k g(k+1)/(k+1)`.
#[inline]
pub fn origin_rate(rate: &RateFunction, k: u32) -> f64 {
    k as f64 * tag_rate(rate, k)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Construction {
    /// Full configuration; a particle leaving the tag's site is the tag with
    /// probability `1/xi(X)`.
    Joint,
    /// Environment process with separate translation clock.
    Environment,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TaggedEvent {
    /// Jump table entry used.
    pub entry: usize,
    pub tag_moved: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaggedStep {
    pub dt: f64,
    pub event: Option<TaggedEvent>,
}

/// A piece of path on which `X` and `zeta(0)` are constant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub x: i64,
    pub zeta0: u32,
}

/// Piecewise-constant record of `(X, zeta(0))` in macroscopic time.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub segments: Vec<Segment>,
    pub end: f64,
    /// Microscopic time per unit of macroscopic time.
    pub theta: f64,
}

impl Trajectory {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "macro_time,X,zeta0")?;
        for s in &self.segments {
            writeln!(w, "{},{},{}", s.start, s.x, s.zeta0)?;
        }
        if let Some(last) = self.segments.last() {
            writeln!(w, "{},{},{}", self.end, last.x, last.zeta0)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TaggedSim {
    kernel: Arc<LatticeKernel>,
    rate: RateFunction,
    construction: Construction,
    // Joint: absolute occupancy including the tag. Environment: zeta in the
    // tag's frame.
    occ: Vec<u32>,
    // Joint: torus site of the tag.
    site: usize,
    x: Vec<i64>,
    counters: Vec<u64>,
    tree: SumTree,
    clock: SimClock,
    rng: ChaCha8Rng,
    compensator: f64,
    wound: bool,
}

impl TaggedSim {
    /// `env` is `zeta` in the tag's frame: the other particles, with the tag
    /// at site 0.
    pub fn new(
        kernel: Arc<LatticeKernel>,
        rate: RateFunction,
        env: Vec<u32>,
        construction: Construction,
        theta: f64,
        n: f64,
        seed: u64,
    ) -> Result<Self, TaggedError> {
        let torus = kernel.torus();
        if env.len() != torus.len() {
            return Err(TaggedError::Size {
                expected: torus.len(),
                found: env.len(),
            });
        }
        let mut occ = env;
        let weights: Vec<f64> = match construction {
            Construction::Joint => {
                occ[0] += 1;
                occ.iter().map(|&k| rate.g(k)).collect()
            }
            Construction::Environment => occ
                .iter()
                .enumerate()
                .map(|(x, &k)| if x == 0 { origin_rate(&rate, k) } else { rate.g(k) })
                .collect(),
        };
        let jumps = kernel.jumps().len();
        Ok(TaggedSim {
            x: vec![0; torus.dim()],
            counters: vec![0; jumps],
            tree: SumTree::new(&weights),
            kernel,
            rate,
            construction,
            occ,
            site: 0,
            clock: SimClock::new(theta, n),
            rng: ChaCha8Rng::seed_from_u64(seed),
            compensator: 0.0,
            wound: false,
        })
    }

    pub fn construction(&self) -> Construction {
        self.construction
    }

    pub fn clock(&self) -> &SimClock {
        &self.clock
    }

    pub fn torus(&self) -> Torus {
        self.kernel.torus()
    }

    /// Unwrapped tag position.
    pub fn position(&self) -> &[i64] {
        &self.x
    }

    /// First coordinate of the unwrapped position.
    pub fn x(&self) -> i64 {
        self.x[0]
    }

    /// Other particles at the tag's site.
    pub fn zeta0(&self) -> u32 {
        match self.construction {
            Construction::Joint => self.occ[self.site] - 1,
            Construction::Environment => self.occ[0],
        }
    }

    /// The environment `zeta` in the tag's frame.
    pub fn environment(&self) -> Vec<u32> {
        match self.construction {
            Construction::Environment => self.occ.clone(),
            Construction::Joint => {
                let t = self.torus();
                let mut env: Vec<u32> = (0..t.len()).map(|x| self.occ[t.add(self.site, x)]).collect();
                env[0] -= 1;
                env
            }
        }
    }

    /// Number of tag jumps per jump table entry.
    pub fn counters(&self) -> &[u64] {
        &self.counters
    }

    /// `sum_z z N^z`, which equals the unwrapped position.
    pub fn counter_displacement(&self) -> Vec<i64> {
        let jumps = self.kernel.jumps();
        let mut s = vec![0i64; self.x.len()];
        for (j, &c) in self.counters.iter().enumerate() {
            for (a, &z) in s.iter_mut().zip(jumps.displacement(j)) {
                *a += z * c as i64;
            }
        }
        s
    }

    /// Integral of the translation rate factor over microscopic time, i.e.
    /// `n^alpha` times the macroscopic integral.
    pub fn compensator(&self) -> f64 {
        self.compensator
    }

    /// Whether the tag ever left the centered fundamental domain.
    pub fn wound(&self) -> bool {
        self.wound
    }

    fn translation_rate(&self) -> f64 {
        match self.construction {
            Construction::Joint => 0.0,
            Construction::Environment => tag_rate(&self.rate, self.occ[0]),
        }
    }

    pub fn step_until(&mut self, micro_limit: f64) -> TaggedStep {
        let now = self.clock.micro;
        if now >= micro_limit {
            return TaggedStep { dt: 0.0, event: None };
        }
        let base = self.tree.total() + self.translation_rate();
        let rate = base * self.kernel.p_star();
        let dt = if rate > 0.0 {
            exp_sample(&mut self.rng, rate)
        } else {
            f64::INFINITY
        };
        let b = tag_rate(&self.rate, self.zeta0());
        // a frozen system only advances to a finite limit
        if !dt.is_finite() || now + dt > micro_limit {
            if !micro_limit.is_finite() {
                return TaggedStep { dt, event: None };
            }
            self.compensator += b * (micro_limit - now);
            self.clock.micro = micro_limit;
            return TaggedStep {
                dt: micro_limit - now,
                event: None,
            };
        }
        self.compensator += b * dt;
        self.clock.micro = now + dt;
        self.clock.events += 1;
        let torus = self.kernel.torus();
        let u = self.rng.random::<f64>() * base;
        let entry = self.kernel.sample_jump(&mut self.rng);
        let r = self.kernel.jumps().residue(entry);
        let tag_moved = match self.construction {
            Construction::Joint => {
                let x = self.tree.find(u.min(self.tree.total()));
                let tag = x == self.site && self.rng.random::<f64>() * (self.occ[x] as f64) < 1.0;
                let y = torus.add(x, r);
                self.occ[x] -= 1;
                self.occ[y] += 1;
                self.tree.set(x, self.rate.g(self.occ[x]));
                self.tree.set(y, self.rate.g(self.occ[y]));
                if tag {
                    self.site = y;
                }
                tag
            }
            Construction::Environment => {
                if u < self.tree.total() {
                    let x = self.tree.find(u);
                    let y = torus.add(x, r);
                    self.occ[x] -= 1;
                    self.occ[y] += 1;
                    for s in [x, y] {
                        let k = self.occ[s];
                        self.tree.set(s, if s == 0 { origin_rate(&self.rate, k) } else { self.rate.g(k) });
                    }
                    false
                } else {
                    // zeta'(x) = zeta(x + z): the tag's old site keeps zeta(0)
                    // others and the new origin holds zeta(z).
                    let shifted: Vec<u32> = (0..torus.len()).map(|x| self.occ[torus.add(x, r)]).collect();
                    self.occ = shifted;
                    let w: Vec<f64> = self
                        .occ
                        .iter()
                        .enumerate()
                        .map(|(x, &k)| if x == 0 { origin_rate(&self.rate, k) } else { self.rate.g(k) })
                        .collect();
                    self.tree = SumTree::new(&w);
                    true
                }
            }
        };
        if tag_moved {
            self.counters[entry] += 1;
            let half = (torus.side() / 2) as i64;
            let disp = self.kernel.jumps().displacement(entry);
            for (a, &z) in self.x.iter_mut().zip(disp) {
                *a += z;
                if *a > half || *a <= -half {
                    self.wound = true;
                }
            }
        }
        TaggedStep {
            dt,
            event: Some(TaggedEvent { entry, tag_moved }),
        }
    }

    pub fn run_until(&mut self, t_macro: f64) {
        let limit = t_macro * self.clock.theta();
        while self.clock.micro < limit {
            self.step_until(limit);
        }
    }

    /// Runs to `t_macro`, recording a segment whenever `X` or `zeta(0)`
    /// changes.
    pub fn run_recording(&mut self, t_macro: f64) -> Trajectory {
        let theta = self.clock.theta();
        let limit = t_macro * theta;
        let mut segments = vec![Segment {
            start: self.clock.macro_time(),
            x: self.x(),
            zeta0: self.zeta0(),
        }];
        while self.clock.micro < limit {
            self.step_until(limit);
            let last = segments.last().unwrap();
            if (last.x, last.zeta0) != (self.x(), self.zeta0()) {
                segments.push(Segment {
                    start: self.clock.macro_time(),
                    x: self.x(),
                    zeta0: self.zeta0(),
                });
            }
        }
        Trajectory {
            segments,
            end: self.clock.macro_time(),
            theta,
        }
    }
}

/// Environment drawn from the Palm measure: the origin holds the size-biased
/// site law shifted by one, every other site the plain site law at `rho`.
pub fn palm_environment<R: Rng + ?Sized>(
    thermo: &Thermo,
    rho: f64,
    torus: Torus,
    rng: &mut R,
) -> Result<Vec<u32>, TaggedError> {
    let law = thermo.site_law(rho)?;
    let palm = law.palm();
    Ok((0..torus.len())
        .map(|x| if x == 0 { palm.sample(rng) } else { law.sample(rng) })
        .collect())
}

/// `sum_z p(z) (e^{i theta z / n} - 1)` over the jump table (d = 1).
pub fn jump_symbol(kernel: &LatticeKernel, theta: f64, n: f64) -> Result<Complex64, TaggedError> {
    if kernel.torus().dim() != 1 {
        return Err(TaggedError::Dim);
    }
    let jumps = kernel.jumps();
    let mut s = Complex64::new(0.0, 0.0);
    for j in 0..jumps.len() {
        let a = theta * jumps.displacement(j)[0] as f64 / n;
        s += jumps.weight(j) * Complex64::new(a.cos() - 1.0, a.sin());
    }
    Ok(s)
}

/// `exp{i theta X_t/n - n^alpha sum_z p(z)(e^{i theta z/n} - 1) int_0^t b(zeta_s(0)) ds}`
/// at the start of each segment and at the end of the trajectory. The time
/// integral is accumulated exactly segment by segment; `n^alpha` is the
/// trajectory's own time scale.
pub fn exp_martingale(
    traj: &Trajectory,
    theta: f64,
    kernel: &LatticeKernel,
    rate: &RateFunction,
    n: f64,
) -> Result<Vec<(f64, Complex64)>, TaggedError> {
    if traj.segments.is_empty() {
        return Err(TaggedError::EmptyTrajectory);
    }
    let symbol = jump_symbol(kernel, theta, n)?;
    let scale = traj.theta;
    let value = |x: i64, integral: f64| (Complex64::new(0.0, theta * x as f64 / n) - symbol * scale * integral).exp();
    let mut out = Vec::with_capacity(traj.segments.len() + 1);
    let mut integral = 0.0;
    for (i, s) in traj.segments.iter().enumerate() {
        if i > 0 {
            let prev = &traj.segments[i - 1];
            if s.start < prev.start {
                return Err(TaggedError::Unordered(i));
            }
            integral += tag_rate(rate, prev.zeta0) * (s.start - prev.start);
        }
        out.push((s.start, value(s.x, integral)));
    }
    let last = traj.segments.last().unwrap();
    if traj.end < last.start {
        return Err(TaggedError::Unordered(traj.segments.len()));
    }
    integral += tag_rate(rate, last.zeta0) * (traj.end - last.start);
    out.push((traj.end, value(last.x, integral)));
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CfPoint {
    pub theta: f64,
    pub re: f64,
    pub im: f64,
    /// Jackknife standard errors of the real and imaginary parts.
    pub se_re: f64,
    pub se_im: f64,
}

impl CfPoint {
    pub fn value(&self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }

    /// Combined standard error `sqrt(se_re^2 + se_im^2)`.
    pub fn se(&self) -> f64 {
        self.se_re.hypot(self.se_im)
    }
}

fn jackknife_se(values: &[f64]) -> f64 {
    let m = values.len() as f64;
    let total: f64 = values.iter().sum();
    let loo: Vec<f64> = values.iter().map(|v| (total - v) / (m - 1.0)).collect();
    let mean = loo.iter().sum::<f64>() / m;
    ((m - 1.0) / m * loo.iter().map(|l| (l - mean).powi(2)).sum::<f64>()).sqrt()
}

/// Sample mean of `e^{i theta x}` with jackknife standard errors.
pub fn empirical_cf(samples: &[f64], thetas: &[f64]) -> Result<Vec<CfPoint>, TaggedError> {
    if samples.len() < MIN_CF_SAMPLES {
        return Err(TaggedError::TooFewSamples(samples.len()));
    }
    let m = samples.len() as f64;
    Ok(thetas
        .iter()
        .map(|&theta| {
            let re: Vec<f64> = samples.iter().map(|x| (theta * x).cos()).collect();
            let im: Vec<f64> = samples.iter().map(|x| (theta * x).sin()).collect();
            CfPoint {
                theta,
                re: re.iter().sum::<f64>() / m,
                im: im.iter().sum::<f64>() / m,
                se_re: jackknife_se(&re),
                se_im: jackknife_se(&im),
            }
        })
        .collect())
}

pub fn write_cf_csv<W: Write>(mut w: W, points: &[CfPoint]) -> io::Result<()> {
    writeln!(w, "theta,re,im,se")?;
    for p in points {
        writeln!(w, "{},{},{},{}", p.theta, p.re, p.im, p.se())?;
    }
    Ok(())
}

/// Characteristic function of `X_T/n` for a tag that jumps at the full kernel
/// rate regardless of its environment: `exp(T n^alpha sum_z p(z)(cos(theta z/n) - 1))`.
/// `time_scale` is the microscopic time per unit macroscopic time.
pub fn free_walk_cf(kernel: &LatticeKernel, theta: f64, t_macro: f64, n: f64, time_scale: f64) -> Result<f64, TaggedError> {
    Ok((t_macro * time_scale * jump_symbol(kernel, theta, n)?.re).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelSpec;

    fn kernel(n: usize) -> Arc<LatticeKernel> {
        Arc::new(LatticeKernel::build(KernelSpec::one_dim(1.5, 1.0), n, 8).unwrap())
    }

    #[test]
    fn rate_split() {
        let g = RateFunction::capped(2);
        for k in 0..6 {
            let total = origin_rate(&g, k) + tag_rate(&g, k);
            assert!((total - g.g(k + 1)).abs() < 1e-15);
        }
        assert_eq!(tag_rate(&g, 0), g.g(1));
        let lin = RateFunction::linear();
        assert!((0..10).all(|k| tag_rate(&lin, k) == 1.0 && origin_rate(&lin, k) == k as f64));
    }

    #[test]
    fn lone_tag_only_translates() {
        for c in [Construction::Joint, Construction::Environment] {
            let mut s = TaggedSim::new(kernel(32), RateFunction::capped(1), vec![0; 32], c, 1.0, 32.0, 1).unwrap();
            for _ in 0..2000 {
                let e = s.step_until(f64::INFINITY).event.unwrap();
                assert!(e.tag_moved);
                assert!(s.environment().iter().all(|&v| v == 0));
            }
            assert_eq!(s.counter_displacement(), s.position());
        }
    }

    #[test]
    fn environment_view_agrees_and_counters_add_up() {
        let k = kernel(24);
        let env: Vec<u32> = (0..24).map(|x| (x % 4) as u32).collect();
        for c in [Construction::Joint, Construction::Environment] {
            let mut s = TaggedSim::new(k.clone(), RateFunction::capped(2), env.clone(), c, 1.0, 24.0, 3).unwrap();
            let mass: u32 = env.iter().sum();
            for _ in 0..5000 {
                s.step_until(f64::INFINITY);
                assert_eq!(s.environment().iter().sum::<u32>(), mass);
                assert_eq!(s.environment()[0], s.zeta0());
            }
            assert_eq!(s.counter_displacement(), s.position());
        }
    }

    #[test]
    fn martingale_trivial_cases() {
        let g = RateFunction::linear();
        let mut s = TaggedSim::new(kernel(32), g.clone(), vec![1; 32], Construction::Joint, 4.0, 32.0, 5).unwrap();
        let traj = s.run_recording(0.5);
        let m0 = exp_martingale(&traj, 0.0, &kernel(32), &g, 32.0).unwrap();
        assert!(m0.iter().all(|(_, v)| *v == Complex64::new(1.0, 0.0)));
        let m = exp_martingale(&traj, 0.7, &kernel(32), &g, 32.0).unwrap();
        // compensator accumulated by segments matches the running one
        let last = m.last().unwrap().1;
        let symbol = jump_symbol(&kernel(32), 0.7, 32.0).unwrap();
        let direct = (Complex64::new(0.0, 0.7 * s.x() as f64 / 32.0) - symbol * s.compensator()).exp();
        assert!((last - direct).norm() < 1e-9 * direct.norm());
        let empty = Trajectory { segments: vec![], end: 1.0, theta: 1.0 };
        assert_eq!(exp_martingale(&empty, 1.0, &kernel(32), &g, 32.0), Err(TaggedError::EmptyTrajectory));
    }

    #[test]
    fn cf_basics() {
        let samples: Vec<f64> = (0..200).map(|i| (i as f64 * 0.37).sin()).collect();
        let cf = empirical_cf(&samples, &[0.0, 1.0]).unwrap();
        assert_eq!((cf[0].re, cf[0].im, cf[0].se()), (1.0, 0.0, 0.0));
        // the jackknife SE of a mean is the usual s / sqrt(m)
        let v: Vec<f64> = samples.iter().map(|x| x.cos()).collect();
        let mean = v.iter().sum::<f64>() / 200.0;
        let s2 = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 199.0;
        assert!((cf[1].se_re - (s2 / 200.0).sqrt()).abs() < 1e-12);
        assert_eq!(empirical_cf(&samples[..10], &[1.0]).err(), Some(TaggedError::TooFewSamples(10)));
    }
}
