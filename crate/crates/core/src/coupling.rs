//! Ordered couplings of zero-range processes: first/second-class particles,
//! and the blue/green/red/white construction with annihilating third-class
//! particles.

use std::collections::HashMap;
use std::io::{self, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dynamics::{exp_sample, SimClock, SumTree};
use crate::kernel::LatticeKernel;
use crate::lattice::Torus;
use crate::measures::{quantile_coupling, MeasureError, Profile, RateFunction, SiteLaw, Thermo};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CouplingError {
    #[error("couplings need a nondecreasing rate")]
    NotMonotone,
    #[error("layer has {found} sites, lattice has {expected}")]
    Size { expected: usize, found: usize },
    #[error("red and white particles share site {0}")]
    SharedSite(usize),
    #[error("three-color runs need an empty white layer")]
    WhiteLayer,
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("profile value {value} at site {site} outside [{lo}, {hi}]")]
    Profile { site: usize, value: f64, lo: f64, hi: f64 },
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// Per-site counts of blue, green, red and white particles.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Colors {
    pub blue: Vec<u32>,
    pub green: Vec<u32>,
    pub red: Vec<u32>,
    pub white: Vec<u32>,
}

impl Colors {
    pub fn empty(len: usize) -> Self {
        Colors {
            blue: vec![0; len],
            green: vec![0; len],
            red: vec![0; len],
            white: vec![0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.blue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blue.is_empty()
    }

    fn layer(&self, f: impl Fn(usize) -> u32) -> Vec<u32> {
        (0..self.len()).map(f).collect()
    }

    pub fn bg(&self) -> Vec<u32> {
        self.layer(|x| self.blue[x] + self.green[x])
    }

    pub fn bgr(&self) -> Vec<u32> {
        self.layer(|x| self.blue[x] + self.green[x] + self.red[x])
    }

    pub fn bgw(&self) -> Vec<u32> {
        self.layer(|x| self.blue[x] + self.green[x] + self.white[x])
    }

    #[inline]
    fn site_total(&self, x: usize) -> u32 {
        self.blue[x] + self.green[x] + self.red[x] + self.white[x]
    }

    pub fn write_csv<W: Write>(&self, mut w: W, macro_time: f64, header: bool) -> io::Result<()> {
        if header {
            writeln!(w, "macro_time,site,B,G,R,W")?;
        }
        for x in 0..self.len() {
            writeln!(
                w,
                "{macro_time},{x},{},{},{},{}",
                self.blue[x], self.green[x], self.red[x], self.white[x]
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Class {
    Blue,
    Green,
    Red,
    White,
}

/// A colored jump; `annihilated` marks a third-class particle landing on the
/// opposite third class, producing a green particle at the target.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ColorMove {
    pub class: Class,
    pub from: usize,
    pub to: usize,
    pub annihilated: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColorStep {
    pub dt: f64,
    pub event: Option<ColorMove>,
}

/// Event counts by type: blue, green, red, white moves, then red and white
/// annihilations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EventCounts {
    pub blue: u64,
    pub green: u64,
    pub red: u64,
    pub white: u64,
    pub red_annihilations: u64,
    pub white_annihilations: u64,
}

/// The four-color process. With an empty white layer it is the three-color
/// process; with empty red and white layers it is the two-class process.
#[derive(Clone, Debug)]
pub struct ColoredSim {
    kernel: Arc<LatticeKernel>,
    rate: RateFunction,
    colors: Colors,
    tree: SumTree,
    clock: SimClock,
    rng: ChaCha8Rng,
    counts: EventCounts,
    three_color: bool,
}

impl ColoredSim {
    pub fn new(
        kernel: Arc<LatticeKernel>,
        rate: RateFunction,
        colors: Colors,
        theta: f64,
        n: f64,
        seed: u64,
    ) -> Result<Self, CouplingError> {
        if !rate.is_monotone() {
            return Err(CouplingError::NotMonotone);
        }
        let len = kernel.torus().len();
        for layer in [&colors.blue, &colors.green, &colors.red, &colors.white] {
            if layer.len() != len {
                return Err(CouplingError::Size {
                    expected: len,
                    found: layer.len(),
                });
            }
        }
        if let Some(x) = (0..len).find(|&x| colors.red[x] > 0 && colors.white[x] > 0) {
            return Err(CouplingError::SharedSite(x));
        }
        let w: Vec<f64> = (0..len).map(|x| rate.g(colors.site_total(x))).collect();
        Ok(ColoredSim {
            kernel,
            tree: SumTree::new(&w),
            rate,
            colors,
            clock: SimClock::new(theta, n),
            rng: ChaCha8Rng::seed_from_u64(seed),
            counts: EventCounts::default(),
            three_color: false,
        })
    }

    /// Blue/green/red process: the four-color generator restricted to
    /// configurations without white particles.
    pub fn three_color(
        kernel: Arc<LatticeKernel>,
        rate: RateFunction,
        colors: Colors,
        theta: f64,
        n: f64,
        seed: u64,
    ) -> Result<Self, CouplingError> {
        if colors.white.iter().any(|&w| w > 0) {
            return Err(CouplingError::WhiteLayer);
        }
        let mut sim = Self::new(kernel, rate, colors, theta, n, seed)?;
        sim.three_color = true;
        Ok(sim)
    }

    pub fn colors(&self) -> &Colors {
        &self.colors
    }

    pub fn clock(&self) -> &SimClock {
        &self.clock
    }

    pub fn counts(&self) -> EventCounts {
        self.counts
    }

    pub fn torus(&self) -> Torus {
        self.kernel.torus()
    }

    pub fn step_until(&mut self, micro_limit: f64) -> Result<ColorStep, CouplingError> {
        let now = self.clock_micro();
        if now >= micro_limit {
            return Ok(ColorStep { dt: 0.0, event: None });
        }
        let rate = self.tree.total() * self.kernel.p_star();
        let dt = if rate > 0.0 {
            exp_sample(&mut self.rng, rate)
        } else {
            f64::INFINITY
        };
        // a frozen system only advances to a finite limit
        if !dt.is_finite() || now + dt > micro_limit {
            if !micro_limit.is_finite() {
                return Ok(ColorStep { dt, event: None });
            }
            self.clock.micro = micro_limit;
            return Ok(ColorStep {
                dt: micro_limit - now,
                event: None,
            });
        }
        self.clock.micro = now + dt;
        self.clock.events += 1;
        let u = self.rng.random::<f64>() * self.tree.total();
        let x = self.tree.find(u);
        let entry = self.kernel.sample_jump(&mut self.rng);
        let y = self.kernel.torus().add(x, self.kernel.jumps().residue(entry));
        let v = self.rng.random::<f64>() * self.tree.get(x);
        let c = &mut self.colors;
        let g = &self.rate;
        let b = c.blue[x];
        let bg = b + c.green[x];
        let class = if v < g.g(b) {
            Class::Blue
        } else if v < g.g(bg) {
            Class::Green
        } else if c.red[x] > 0 {
            Class::Red
        } else {
            Class::White
        };
        let mut annihilated = false;
        match class {
            Class::Blue => {
                c.blue[x] -= 1;
                c.blue[y] += 1;
                self.counts.blue += 1;
            }
            Class::Green => {
                c.green[x] -= 1;
                c.green[y] += 1;
                self.counts.green += 1;
            }
            Class::Red => {
                c.red[x] -= 1;
                if c.white[y] > 0 {
                    c.white[y] -= 1;
                    c.green[y] += 1;
                    annihilated = true;
                    self.counts.red_annihilations += 1;
                } else {
                    c.red[y] += 1;
                }
                self.counts.red += 1;
            }
            Class::White => {
                if c.white[x] == 0 {
                    return Err(self.violation(format!("third-class event at site {x} without red or white")));
                }
                c.white[x] -= 1;
                if c.red[y] > 0 {
                    c.red[y] -= 1;
                    c.green[y] += 1;
                    annihilated = true;
                    self.counts.white_annihilations += 1;
                } else {
                    c.white[y] += 1;
                }
                self.counts.white += 1;
            }
        }
        let (tx, ty) = (self.colors.site_total(x), self.colors.site_total(y));
        self.tree.set(x, self.rate.g(tx));
        self.tree.set(y, self.rate.g(ty));
        for s in [x, y] {
            if self.colors.red[s] > 0 && self.colors.white[s] > 0 {
                return Err(self.violation(format!("red and white share site {s}")));
            }
        }
        if self.three_color && self.colors.white[y] > 0 {
            return Err(self.violation("white particle in a three-color run".into()));
        }
        Ok(ColorStep {
            dt,
            event: Some(ColorMove {
                class,
                from: x,
                to: y,
                annihilated,
            }),
        })
    }

    fn clock_micro(&self) -> f64 {
        self.clock.micro
    }

    fn violation(&self, what: String) -> CouplingError {
        let c = &self.colors;
        CouplingError::Invariant(format!(
            "{what}; events={} B={:?} G={:?} R={:?} W={:?}",
            self.clock.events(),
            c.blue,
            c.green,
            c.red,
            c.white
        ))
    }

    pub fn run_until(&mut self, t_macro: f64) -> Result<(), CouplingError> {
        let limit = t_macro * self.clock.theta();
        while self.clock_micro() < limit {
            self.step_until(limit)?;
        }
        Ok(())
    }
}

/// First-class particles `xi1` and second-class particles `delta`; `xi1` and
/// `xi1 + delta` are both zero-range processes.
#[derive(Clone, Debug)]
pub struct TwoClassSim {
    kernel: Arc<LatticeKernel>,
    rate: RateFunction,
    first: Vec<u32>,
    second: Vec<u32>,
    tree: SumTree,
    clock: SimClock,
    rng: ChaCha8Rng,
    moves: [u64; 2],
}

/// A two-class jump; `first_class` tells which layer moved.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClassMove {
    pub first_class: bool,
    pub from: usize,
    pub to: usize,
}

impl TwoClassSim {
    pub fn new(
        kernel: Arc<LatticeKernel>,
        rate: RateFunction,
        first: Vec<u32>,
        second: Vec<u32>,
        theta: f64,
        n: f64,
        seed: u64,
    ) -> Result<Self, CouplingError> {
        if !rate.is_monotone() {
            return Err(CouplingError::NotMonotone);
        }
        let len = kernel.torus().len();
        for layer in [&first, &second] {
            if layer.len() != len {
                return Err(CouplingError::Size {
                    expected: len,
                    found: layer.len(),
                });
            }
        }
        let w: Vec<f64> = (0..len).map(|x| rate.g(first[x] + second[x])).collect();
        Ok(TwoClassSim {
            kernel,
            tree: SumTree::new(&w),
            rate,
            first,
            second,
            clock: SimClock::new(theta, n),
            rng: ChaCha8Rng::seed_from_u64(seed),
            moves: [0; 2],
        })
    }

    pub fn first(&self) -> &[u32] {
        &self.first
    }

    pub fn second(&self) -> &[u32] {
        &self.second
    }

    /// `xi2 = xi1 + delta`.
    pub fn upper(&self) -> Vec<u32> {
        self.first.iter().zip(&self.second).map(|(a, b)| a + b).collect()
    }

    pub fn clock(&self) -> &SimClock {
        &self.clock
    }

    /// Numbers of first- and second-class moves so far.
    pub fn moves(&self) -> [u64; 2] {
        self.moves
    }

    pub fn step(&mut self) -> Option<ClassMove> {
        let rate = self.tree.total() * self.kernel.p_star();
        if rate <= 0.0 {
            return None;
        }
        let dt = exp_sample(&mut self.rng, rate);
        self.clock.micro += dt;
        self.clock.events += 1;
        let u = self.rng.random::<f64>() * self.tree.total();
        let x = self.tree.find(u);
        let entry = self.kernel.sample_jump(&mut self.rng);
        let y = self.kernel.torus().add(x, self.kernel.jumps().residue(entry));
        let v = self.rng.random::<f64>() * self.tree.get(x);
        let first_class = v < self.rate.g(self.first[x]);
        let layer = if first_class { &mut self.first } else { &mut self.second };
        layer[x] -= 1;
        layer[y] += 1;
        self.moves[!first_class as usize] += 1;
        for s in [x, y] {
            self.tree.set(s, self.rate.g(self.first[s] + self.second[s]));
        }
        Some(ClassMove { first_class, from: x, to: y })
    }
}

/// Site laws memoized by density, for building many initial states from
/// the same profile.
#[derive(Clone, Debug)]
pub struct SiteLawCache {
    thermo: Thermo,
    laws: HashMap<u64, SiteLaw>,
}

impl SiteLawCache {
    pub fn new(thermo: Thermo) -> Self {
        SiteLawCache {
            thermo,
            laws: HashMap::new(),
        }
    }

    pub fn thermo(&self) -> &Thermo {
        &self.thermo
    }

    fn load(&mut self, rho: f64) -> Result<(), MeasureError> {
        if !self.laws.contains_key(&rho.to_bits()) {
            let law = self.thermo.site_law(rho)?;
            self.laws.insert(rho.to_bits(), law);
        }
        Ok(())
    }

    fn get(&self, rho: f64) -> &SiteLaw {
        &self.laws[&rho.to_bits()]
    }

    pub fn law(&mut self, rho: f64) -> Result<&SiteLaw, MeasureError> {
        self.load(rho)?;
        Ok(self.get(rho))
    }

    /// One quantile-coupled draw from the laws at `rhos`.
    pub fn coupled<R: Rng + ?Sized>(&mut self, rhos: &[f64], rng: &mut R) -> Result<Vec<u32>, MeasureError> {
        for &r in rhos {
            self.load(r)?;
        }
        let laws: Vec<&SiteLaw> = rhos.iter().map(|&r| self.get(r)).collect();
        Ok(quantile_coupling(&laws, rng))
    }
}

/// Three-layer initial state bracketing `u0` between `u0^{M,-}` and `u0^{M,+}`,
/// which equal `u0` within sup-distance `m` of the origin (in macroscopic
/// units on the torus) and `rho0`, `rho1` outside. Layers are
/// `B ~ u0^{M,-}`, `B+G ~ u0`, `B+G+R ~ u0^{M,+}`, coupled by one uniform per site.
#[allow(clippy::too_many_arguments)]
pub fn sandwich_bounded<R: Rng + ?Sized>(
    u0: &Profile,
    m: f64,
    rho0: f64,
    rho1: f64,
    laws: &mut SiteLawCache,
    torus: Torus,
    n: f64,
    rng: &mut R,
) -> Result<Colors, CouplingError> {
    let field = u0.discretize(torus, n);
    let mut colors = Colors::empty(torus.len());
    for x in 0..torus.len() {
        let u = field[x];
        if !(rho0 <= u && u <= rho1) {
            return Err(CouplingError::Profile {
                site: x,
                value: u,
                lo: rho0,
                hi: rho1,
            });
        }
        let inside = torus.sup_norm(x) as f64 / n <= m;
        let (lo, hi) = if inside { (u, u) } else { (rho0, rho1) };
        let v = laws.coupled(&[lo, u, hi], rng)?;
        colors.blue[x] = v[0];
        colors.green[x] = v[1] - v[0];
        colors.red[x] = v[2] - v[1];
    }
    Ok(colors)
}

/// Four-layer initial state for a possibly large profile cut at level `m`:
/// `(xi1, xi2)` coupled with marginals `min(u0, m)` and `max(u0, m)`; blue is
/// `xi1`, and `xi2 - xi1` is red where `u0 > m`, white elsewhere. The split
/// uses the same cell average that sets the marginals.
pub fn sandwich_unbounded<R: Rng + ?Sized>(
    u0: &Profile,
    m: f64,
    laws: &mut SiteLawCache,
    torus: Torus,
    n: f64,
    rng: &mut R,
) -> Result<Colors, CouplingError> {
    let field = u0.discretize(torus, n);
    let mut colors = Colors::empty(torus.len());
    for x in 0..torus.len() {
        let u = field[x];
        let v = laws.coupled(&[u.min(m), u.max(m)], rng)?;
        colors.blue[x] = v[0];
        if u > m {
            colors.red[x] = v[1] - v[0];
        } else {
            colors.white[x] = v[1] - v[0];
        }
    }
    Ok(colors)
}
