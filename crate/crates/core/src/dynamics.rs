//! Event-driven simulation of the long-jump exclusion and zero-range
//! processes, Dynkin martingale probes, and exact finite-state generators.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::field::DensityField;
use crate::kernel::LatticeKernel;
use crate::lattice::Torus;
use crate::measures::{MeasureError, RateFunction, Thermo};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("event budget of {0} events exhausted")]
    Budget(u64),
    #[error("configuration has {found} sites, lattice has {expected}")]
    Size { expected: usize, found: usize },
    #[error("exclusion occupancy {0} at site {1}")]
    Exclusion(u32, usize),
    #[error("target time {target} is before the current time {now}")]
    Past { target: f64, now: f64 },
    #[error("block radius {0} is not below half the lattice side")]
    Block(usize),
    #[error("observation times must be increasing")]
    Schedule,
    #[error("displacement {0} is not a nonzero multiple of 6")]
    Path(i64),
    #[error("state space of {0} states exceeds the limit")]
    StateSpace(u128),
    #[error("reference measure vanishes on state {0}")]
    Singular(usize),
    #[error("{0}")]
    Mismatch(String),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// Which interacting system is being run.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Exclusion,
    ZeroRange(RateFunction),
}

/// Complete binary tree of nonnegative weights with O(log n) update and
/// sampling. Parents are recomputed from their children, so sums never drift.
#[derive(Clone, Debug)]
pub struct SumTree {
    size: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(weights: &[f64]) -> Self {
        let size = weights.len().next_power_of_two().max(1);
        let mut nodes = vec![0.0; 2 * size];
        nodes[size..size + weights.len()].copy_from_slice(weights);
        for i in (1..size).rev() {
            nodes[i] = nodes[2 * i] + nodes[2 * i + 1];
        }
        SumTree { size, nodes }
    }

    #[inline]
    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.size + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, w: f64) {
        let mut k = self.size + i;
        self.nodes[k] = w;
        while k > 1 {
            k /= 2;
            self.nodes[k] = self.nodes[2 * k] + self.nodes[2 * k + 1];
        }
    }

    /// Index `i` with `sum_{j<i} w_j <= u < sum_{j<=i} w_j`, for `0 <= u < total`.
    #[inline]
    pub fn find(&self, mut u: f64) -> usize {
        let mut k = 1;
        while k < self.size {
            let l = 2 * k;
            if u < self.nodes[l] || self.nodes[l + 1] == 0.0 {
                k = l;
            } else {
                u -= self.nodes[l];
                k = l + 1;
            }
        }
        k - self.size
    }
}

/// Microscopic and macroscopic time of a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimClock {
    pub(crate) micro: f64,
    theta: f64,
    n: f64,
    pub(crate) events: u64,
}

impl SimClock {
    pub fn new(theta: f64, n: f64) -> Self {
        assert!(theta > 0.0);
        SimClock {
            micro: 0.0,
            theta,
            n,
            events: 0,
        }
    }

    pub fn micro_time(&self) -> f64 {
        self.micro
    }

    pub fn macro_time(&self) -> f64 {
        self.micro / self.theta
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn n(&self) -> f64 {
        self.n
    }

    pub fn events(&self) -> u64 {
        self.events
    }
}

/// An attempted jump. `entry` indexes the kernel's jump table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Jump {
    pub from: usize,
    pub to: usize,
    pub entry: usize,
    pub moved: bool,
}

/// Outcome of [`ParticleSystem::step_until`]: the time advanced and the event,
/// if the clock rang before the limit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub dt: f64,
    pub jump: Option<Jump>,
}

#[inline]
pub(crate) fn exp_sample<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    let u: f64 = rng.random();
    -(1.0 - u).ln() / rate
}

/// Exclusion or zero-range process on the kernel's torus.
#[derive(Clone, Debug)]
pub struct ParticleSystem {
    kernel: Arc<LatticeKernel>,
    model: Model,
    occ: Vec<u32>,
    total: u64,
    particles: Vec<usize>,
    tree: SumTree,
    clock: SimClock,
    rng: ChaCha8Rng,
    max_events: u64,
}

impl ParticleSystem {
    /// `theta` is the time speed-up and `n` the spatial scale.
    pub fn new(
        kernel: Arc<LatticeKernel>,
        model: Model,
        occupancy: Vec<u32>,
        theta: f64,
        n: f64,
        seed: u64,
    ) -> Result<Self, DynamicsError> {
        Self::with_rng(kernel, model, occupancy, theta, n, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn with_rng(
        kernel: Arc<LatticeKernel>,
        model: Model,
        occupancy: Vec<u32>,
        theta: f64,
        n: f64,
        rng: ChaCha8Rng,
    ) -> Result<Self, DynamicsError> {
        let len = kernel.torus().len();
        if occupancy.len() != len {
            return Err(DynamicsError::Size {
                expected: len,
                found: occupancy.len(),
            });
        }
        let mut particles = Vec::new();
        let mut tree = SumTree::new(&[]);
        match &model {
            Model::Exclusion => {
                for (x, &k) in occupancy.iter().enumerate() {
                    match k {
                        0 => {}
                        1 => {
                            particles.push(x);
                        }
                        _ => return Err(DynamicsError::Exclusion(k, x)),
                    }
                }
            }
            Model::ZeroRange(g) => {
                let w: Vec<f64> = occupancy.iter().map(|&k| g.g(k)).collect();
                tree = SumTree::new(&w);
            }
        }
        let total = occupancy.iter().map(|&k| k as u64).sum();
        Ok(ParticleSystem {
            kernel,
            model,
            occ: occupancy,
            total,
            particles,
            tree,
            clock: SimClock::new(theta, n),
            rng,
            max_events: u64::MAX,
        })
    }

    pub fn set_event_budget(&mut self, max_events: u64) {
        self.max_events = max_events;
    }

    pub fn kernel(&self) -> &LatticeKernel {
        &self.kernel
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn torus(&self) -> Torus {
        self.kernel.torus()
    }

    pub fn occupancy(&self) -> &[u32] {
        &self.occ
    }

    pub fn clock(&self) -> &SimClock {
        &self.clock
    }

    pub fn total_particles(&self) -> u64 {
        self.total
    }

    /// Occupied sites (exclusion only; empty for zero-range).
    pub fn particles(&self) -> &[usize] {
        &self.particles
    }

    /// Current total clock rate in microscopic time.
    pub fn total_rate(&self) -> f64 {
        match self.model {
            Model::Exclusion => self.particles.len() as f64 * self.kernel.p_star(),
            Model::ZeroRange(_) => self.tree.total() * self.kernel.p_star(),
        }
    }

    /// Sitewise emission rate factor: `eta(x)` or `g(xi(x))`.
    pub fn site_weight(&self, x: usize) -> f64 {
        match &self.model {
            Model::Exclusion => self.occ[x] as f64,
            Model::ZeroRange(_) => self.tree.get(x),
        }
    }

    /// Advances to the next event or to `micro_limit`, whichever comes first.
    /// A clock ring past the limit is discarded; by memorylessness this leaves
    /// the law of the path unchanged.
    pub fn step_until(&mut self, micro_limit: f64) -> Result<StepRecord, DynamicsError> {
        let now = self.clock.micro;
        if now >= micro_limit {
            return Ok(StepRecord { dt: 0.0, jump: None });
        }
        let rate = self.total_rate();
        let dt = if rate > 0.0 {
            exp_sample(&mut self.rng, rate)
        } else {
            f64::INFINITY
        };
        // a frozen system only advances to a finite limit
        if !dt.is_finite() || now + dt > micro_limit {
            if !micro_limit.is_finite() {
                return Ok(StepRecord { dt, jump: None });
            }
            self.clock.micro = micro_limit;
            return Ok(StepRecord {
                dt: micro_limit - now,
                jump: None,
            });
        }
        if self.clock.events >= self.max_events {
            return Err(DynamicsError::Budget(self.max_events));
        }
        self.clock.micro = now + dt;
        self.clock.events += 1;
        let torus = self.kernel.torus();
        let jump = match &self.model {
            Model::Exclusion => {
                let i = self.rng.random_range(0..self.particles.len());
                let x = self.particles[i];
                let entry = self.kernel.sample_jump(&mut self.rng);
                let y = torus.add(x, self.kernel.jumps().residue(entry));
                let moved = self.occ[y] == 0;
                if moved {
                    self.occ[x] = 0;
                    self.occ[y] = 1;
                    self.particles[i] = y;
                }
                Jump {
                    from: x,
                    to: y,
                    entry,
                    moved,
                }
            }
            Model::ZeroRange(g) => {
                let u = self.rng.random::<f64>() * self.tree.total();
                let x = self.tree.find(u);
                let entry = self.kernel.sample_jump(&mut self.rng);
                let y = torus.add(x, self.kernel.jumps().residue(entry));
                self.occ[x] -= 1;
                self.occ[y] += 1;
                self.tree.set(x, g.g(self.occ[x]));
                self.tree.set(y, g.g(self.occ[y]));
                Jump {
                    from: x,
                    to: y,
                    entry,
                    moved: true,
                }
            }
        };
        Ok(StepRecord { dt, jump: Some(jump) })
    }

    /// Runs until macroscopic time `t_macro`.
    pub fn run_until(&mut self, t_macro: f64) -> Result<(), DynamicsError> {
        let now = self.clock.macro_time();
        if t_macro < now {
            return Err(DynamicsError::Past { target: t_macro, now });
        }
        let limit = t_macro * self.clock.theta;
        while self.clock.micro < limit {
            self.step_until(limit)?;
        }
        Ok(())
    }

    /// Runs a fixed number of events, ignoring time limits.
    pub fn run_events(&mut self, events: u64) -> Result<(), DynamicsError> {
        for _ in 0..events {
            if self.step_until(f64::INFINITY)?.jump.is_none() {
                break;
            }
        }
        Ok(())
    }

    pub fn empirical_field(&self, l: usize) -> Result<DensityField, DynamicsError> {
        empirical_field(&self.occ, self.torus(), l)
    }

    /// Recomputes the cached rates from scratch and reports the largest
    /// relative discrepancy.
    pub fn cache_defect(&self) -> f64 {
        match &self.model {
            Model::Exclusion => {
                let count = self.occ.iter().filter(|&&k| k == 1).count();
                (count as f64 - self.particles.len() as f64).abs()
            }
            Model::ZeroRange(g) => {
                let exact: f64 = self.occ.iter().map(|&k| g.g(k)).sum();
                (exact - self.tree.total()).abs() / exact.max(1.0)
            }
        }
    }
}

/// Block averages `(2l+1)^{-d} sum_{|y| <= l} xi(x+y)` over sup-norm balls.
pub fn empirical_field(occ: &[u32], torus: Torus, l: usize) -> Result<DensityField, DynamicsError> {
    if occ.len() != torus.len() {
        return Err(DynamicsError::Size {
            expected: torus.len(),
            found: occ.len(),
        });
    }
    if 2 * l >= torus.side() {
        return Err(DynamicsError::Block(l));
    }
    if torus.dim() == 1 {
        let n = torus.side();
        let w = (2 * l + 1) as f64;
        let mut s: u64 = (0..=2 * l).map(|i| occ[(n + i - l) % n] as u64).sum();
        let mut out = Vec::with_capacity(n);
        for x in 0..n {
            out.push(s as f64 / w);
            s += occ[(x + l + 1) % n] as u64;
            s -= occ[(n + x - l) % n] as u64;
        }
        return Ok(DensityField::new(torus, out));
    }
    let raw = DensityField::new(torus, occ.iter().map(|&k| k as f64).collect());
    Ok(raw.block_average(l))
}

/// `|block average of g(xi) - phi(block average of xi)|` at site `x`.
pub fn v_stat(occ: &[u32], torus: Torus, x: usize, l: usize, thermo: &Thermo) -> Result<f64, DynamicsError> {
    if 2 * l >= torus.side() {
        return Err(DynamicsError::Block(l));
    }
    let ball = torus.ball(l);
    let w = ball.len() as f64;
    let (mut mass, mut rate) = (0.0, 0.0);
    for &o in &ball {
        let k = occ[torus.add(x, o)];
        mass += k as f64;
        rate += thermo.rate().g(k);
    }
    Ok((rate / w - thermo.fugacity(mass / w)?).abs())
}

/// One observation of the Dynkin decomposition
/// `pi_t(G) = pi_0(G) + int_0^t pi_s(L_n G) ds + M_t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MartingaleSample {
    pub time: f64,
    pub pi: f64,
    pub martingale: f64,
    pub quadratic_variation: f64,
}

/// Tracks `pi(G)`, the compensator and the predictable quadratic variation
/// of `M(G)` incrementally along a run.
#[derive(Clone, Debug)]
pub struct MartingaleProbe {
    g: Vec<f64>,
    lg: Vec<f64>,
    qg: Vec<f64>,
    scale: f64,
    pi0: f64,
    pi: f64,
    drift_rate: f64,
    drift: f64,
    pair_term: f64,
    qv_rate: f64,
    qv: f64,
}

impl MartingaleProbe {
    pub fn new(sys: &ParticleSystem, g: &DensityField) -> Result<Self, DynamicsError> {
        let k = sys.kernel();
        let torus = sys.torus();
        let lg = k
            .apply_ln(g, 1.0)
            .map_err(|e| DynamicsError::Mismatch(e.to_string()))?
            .into_values();
        let qg = k.apply_qn(g, 1.0).map_err(|e| DynamicsError::Mismatch(e.to_string()))?.into_values();
        let scale = sys.clock().n().powi(torus.dim() as i32).recip();
        let g = g.values().to_vec();
        let occ = sys.occupancy();
        let pi = scale * occ.iter().zip(&g).map(|(&k, v)| k as f64 * v).sum::<f64>();
        let mut probe = MartingaleProbe {
            g,
            lg,
            qg,
            scale,
            pi0: pi,
            pi,
            drift_rate: 0.0,
            drift: 0.0,
            pair_term: 0.0,
            qv_rate: 0.0,
            qv: 0.0,
        };
        probe.drift_rate = scale * (0..torus.len()).map(|x| sys.site_weight(x) * probe.lg[x]).sum::<f64>();
        if let Model::Exclusion = sys.model() {
            let ps = sys.particles();
            for (i, &a) in ps.iter().enumerate() {
                for &b in &ps[i + 1..] {
                    probe.pair_term += 2.0 * probe.w(sys, a, b);
                }
            }
        }
        probe.qv_rate = probe.qv_rate_from_scratch(sys);
        Ok(probe)
    }

    #[inline]
    fn w(&self, sys: &ParticleSystem, a: usize, b: usize) -> f64 {
        let d = self.g[b] - self.g[a];
        sys.kernel().rate(sys.torus().sub(b, a)) * d * d
    }

    fn qv_rate_from_scratch(&self, sys: &ParticleSystem) -> f64 {
        let ones: f64 = (0..sys.torus().len()).map(|x| sys.site_weight(x) * self.qg[x]).sum();
        self.scale * self.scale * (ones - self.pair_term)
    }

    /// Integrates the compensators over `dt` microscopic time units.
    #[inline]
    pub fn advance(&mut self, dt: f64) {
        self.drift += self.drift_rate * dt;
        self.qv += self.qv_rate * dt;
    }

    /// Updates after `sys` has applied the jump.
    pub fn on_jump(&mut self, sys: &ParticleSystem, jump: &Jump) {
        if !jump.moved {
            return;
        }
        let (x, y) = (jump.from, jump.to);
        self.pi += self.scale * (self.g[y] - self.g[x]);
        match sys.model() {
            Model::Exclusion => {
                self.drift_rate += self.scale * (self.lg[y] - self.lg[x]);
                let mut delta = 0.0;
                for &b in sys.particles() {
                    if b != y {
                        delta += self.w(sys, y, b) - self.w(sys, x, b);
                    }
                }
                self.pair_term += 2.0 * delta;
                self.qv_rate += self.scale * self.scale * (self.qg[y] - self.qg[x] - 2.0 * delta);
            }
            Model::ZeroRange(g) => {
                let (nx, ny) = (sys.occupancy()[x], sys.occupancy()[y]);
                let dx = g.g(nx) - g.g(nx + 1);
                let dy = g.g(ny) - g.g(ny - 1);
                self.drift_rate += self.scale * (dx * self.lg[x] + dy * self.lg[y]);
                self.qv_rate += self.scale * self.scale * (dx * self.qg[x] + dy * self.qg[y]);
            }
        }
    }

    pub fn sample(&self, time: f64) -> MartingaleSample {
        MartingaleSample {
            time,
            pi: self.pi,
            martingale: self.pi - self.pi0 - self.drift,
            quadratic_variation: self.qv,
        }
    }
}

/// Runs `sys` through the macroscopic `schedule`, recording the Dynkin
/// decomposition of `pi(G)` at each time.
pub fn martingale_probe(
    sys: &mut ParticleSystem,
    g: &DensityField,
    schedule: &[f64],
) -> Result<Vec<MartingaleSample>, DynamicsError> {
    if schedule.windows(2).any(|w| w[1] <= w[0]) || schedule.first().is_some_and(|&t| t < sys.clock().macro_time()) {
        return Err(DynamicsError::Schedule);
    }
    let mut probe = MartingaleProbe::new(sys, g)?;
    let mut out = Vec::with_capacity(schedule.len());
    let theta = sys.clock().theta();
    for &t in schedule {
        let limit = t * theta;
        while sys.clock().micro_time() < limit {
            let rec = sys.step_until(limit)?;
            probe.advance(rec.dt);
            if let Some(j) = rec.jump {
                probe.on_jump(sys, &j);
            }
        }
        out.push(probe.sample(t));
    }
    Ok(out)
}

/// Moves one particle from `x` to `y` (`xi -> xi^{x,y}`).
pub fn apply_move(occ: &mut [u32], x: usize, y: usize) {
    assert!(occ[x] >= 1, "no particle at {x}");
    occ[x] -= 1;
    occ[y] += 1;
}

/// Nearest target at most 5 sites from `z`, towards `y`, whose distance to
/// `y` is a multiple of 6.
pub fn adjust_target(y: i64, z: i64) -> i64 {
    let m = z - y;
    y + m.signum() * (m.abs() / 6) * 6
}

/// Decomposes the displacement `z - y = 6 m0` into two jumps of length
/// `k = 2 m0 + j` and two of length `m0 - j`, `j = ceil(m0/2)`, dropping
/// zero-length jumps.
pub fn move_path(y: i64, z: i64) -> Result<Vec<i64>, DynamicsError> {
    let m = z - y;
    if m == 0 || m % 6 != 0 {
        return Err(DynamicsError::Path(m));
    }
    let m0 = m.abs() / 6;
    let j = (m0 + 1) / 2;
    let k = 2 * m0 + j;
    let s = m.signum();
    Ok([k, k, m0 - j, m0 - j].into_iter().filter(|&l| l != 0).map(|l| s * l).collect())
}

/// Sparse generator of a finite continuous-time chain. Off-diagonal rows are
/// sorted by column; the diagonal is minus the row sum.
#[derive(Clone, Debug, PartialEq)]
pub struct RateMatrix {
    rows: Vec<Vec<(usize, f64)>>,
    diag: Vec<f64>,
}

impl RateMatrix {
    fn from_rows(mut rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut diag = Vec::with_capacity(rows.len());
        for (s, row) in rows.iter_mut().enumerate() {
            row.sort_by_key(|e| e.0);
            // merge repeated columns
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for &(c, r) in row.iter() {
                debug_assert_ne!(c, s);
                match merged.last_mut() {
                    Some(last) if last.0 == c => last.1 += r,
                    _ => merged.push((c, r)),
                }
            }
            *row = merged;
            diag.push(-row.iter().map(|e| e.1).sum::<f64>());
        }
        RateMatrix { rows, diag }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, s: usize) -> &[(usize, f64)] {
        &self.rows[s]
    }

    pub fn diag(&self, s: usize) -> f64 {
        self.diag[s]
    }

    pub fn rate(&self, s: usize, t: usize) -> f64 {
        if s == t {
            return self.diag[s];
        }
        match self.rows[s].binary_search_by_key(&t, |e| e.0) {
            Ok(i) => self.rows[s][i].1,
            Err(_) => 0.0,
        }
    }

    /// `mu^T Q`.
    pub fn left_apply(&self, mu: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = mu.iter().zip(&self.diag).map(|(m, d)| m * d).collect();
        for (s, row) in self.rows.iter().enumerate() {
            for &(t, r) in row {
                out[t] += mu[s] * r;
            }
        }
        out
    }

    /// `Q f`.
    pub fn right_apply(&self, f: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .enumerate()
            .map(|(s, row)| self.diag[s] * f[s] + row.iter().map(|&(t, r)| r * f[t]).sum::<f64>())
            .collect()
    }

    pub fn max_exit_rate(&self) -> f64 {
        self.diag.iter().fold(0.0, |m, d| m.max(-d))
    }
}

/// Mixed-radix enumeration of configurations on a small lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StateSpace {
    sites: usize,
    radix: u32,
}

pub const STATE_LIMIT: u128 = 200_000;

impl StateSpace {
    pub fn new(sites: usize, radix: u32) -> Result<Self, DynamicsError> {
        let size = (radix as u128).checked_pow(sites as u32).unwrap_or(u128::MAX);
        if size > STATE_LIMIT {
            return Err(DynamicsError::StateSpace(size));
        }
        Ok(StateSpace { sites, radix })
    }

    pub fn len(&self) -> usize {
        (self.radix as usize).pow(self.sites as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn decode(&self, mut s: usize) -> Vec<u32> {
        let r = self.radix as usize;
        (0..self.sites)
            .map(|_| {
                let v = (s % r) as u32;
                s /= r;
                v
            })
            .collect()
    }

    pub fn encode(&self, occ: &[u32]) -> usize {
        occ.iter().rev().fold(0, |acc, &v| acc * self.radix as usize + v as usize)
    }

    /// Product weights `prod_x q(occ(x))`, normalized over the space.
    pub fn product_measure(&self, site_pmf: &[f64]) -> Vec<f64> {
        let mut w: Vec<f64> = (0..self.len())
            .map(|s| self.decode(s).iter().map(|&k| site_pmf[k as usize]).product())
            .collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        w
    }
}

/// Generator of exclusion (`cap` ignored) or zero-range truncated at `cap`
/// on a ring with jump rates `rates[r]` indexed by residue. Zero-range jumps
/// into a site already holding `cap` particles are deleted.
pub fn exact_generator(model: &Model, torus: Torus, cap: u32, rates: &[f64]) -> Result<(StateSpace, RateMatrix), DynamicsError> {
    if rates.len() != torus.len() {
        return Err(DynamicsError::Size {
            expected: torus.len(),
            found: rates.len(),
        });
    }
    let space = StateSpace::new(
        torus.len(),
        match model {
            Model::Exclusion => 2,
            Model::ZeroRange(_) => cap + 1,
        },
    )?;
    let mut rows = vec![Vec::new(); space.len()];
    for (s, row) in rows.iter_mut().enumerate() {
        let occ = space.decode(s);
        for x in 0..torus.len() {
            if occ[x] == 0 {
                continue;
            }
            for (r, &p) in rates.iter().enumerate().skip(1) {
                if p == 0.0 {
                    continue;
                }
                let y = torus.add(x, r);
                let rate = match model {
                    Model::Exclusion if occ[y] == 0 => p,
                    Model::ZeroRange(g) if occ[y] < cap => p * g.g(occ[x]),
                    _ => continue,
                };
                let mut next = occ.clone();
                next[x] -= 1;
                next[y] += 1;
                row.push((space.encode(&next), rate));
            }
        }
    }
    Ok((space, RateMatrix::from_rows(rows)))
}

/// Exclusion generator assembled the way the simulator works: every particle
/// rings at rate `p_star`, draws a jump-table entry, and is suppressed when the
/// target is occupied.
pub fn exact_exclusion_by_particles(kernel: &LatticeKernel) -> Result<(StateSpace, RateMatrix), DynamicsError> {
    let torus = kernel.torus();
    let space = StateSpace::new(torus.len(), 2)?;
    let jumps = kernel.jumps();
    let mut rows = vec![Vec::new(); space.len()];
    for (s, row) in rows.iter_mut().enumerate() {
        let occ = space.decode(s);
        let mut acc: Vec<(usize, f64)> = Vec::new();
        for x in (0..torus.len()).filter(|&x| occ[x] == 1) {
            for j in 0..jumps.len() {
                let y = torus.add(x, jumps.residue(j));
                if occ[y] == 1 {
                    continue;
                }
                let mut next = occ.clone();
                next[x] = 0;
                next[y] = 1;
                acc.push((space.encode(&next), jumps.weight(j)));
            }
        }
        *row = acc;
    }
    Ok((space, RateMatrix::from_rows(rows)))
}

/// Law at time `t` of the chain started from `dist`, by uniformization.
pub fn evolve(q: &RateMatrix, dist: &[f64], t: f64) -> Vec<f64> {
    let lambda = q.max_exit_rate();
    if lambda == 0.0 || t == 0.0 {
        return dist.to_vec();
    }
    // keep lambda * tau moderate so e^{-lambda tau} does not underflow
    let chunks = ((lambda * t) / 30.0).ceil().max(1.0) as usize;
    let x = lambda * t / chunks as f64;
    let mut cur = dist.to_vec();
    for _ in 0..chunks {
        let mut term = cur.clone();
        let mut weight = (-x).exp();
        let mut acc: Vec<f64> = term.iter().map(|v| v * weight).collect();
        let mut mass = weight;
        let mut k = 0usize;
        while mass < 1.0 - 1e-16 && k < 10_000 {
            k += 1;
            let qt = q.left_apply(&term);
            for (a, b) in term.iter_mut().zip(&qt) {
                *a += b / lambda;
            }
            weight *= x / k as f64;
            mass += weight;
            for (a, b) in acc.iter_mut().zip(&term) {
                *a += weight * b;
            }
            if weight < 1e-18 && k as f64 > x {
                break;
            }
        }
        cur = acc;
    }
    cur
}

/// Relative entropy, its exact time derivative, and the Dirichlet form of
/// `sqrt(f)`, where `f = dist / reference`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntropyPoint {
    pub time: f64,
    pub entropy: f64,
    pub entropy_rate: f64,
    pub dirichlet: f64,
}

pub fn entropy_point(q: &RateMatrix, dist: &[f64], reference: &[f64], time: f64) -> EntropyPoint {
    let f: Vec<f64> = dist.iter().zip(reference).map(|(d, r)| d / r).collect();
    let entropy = dist
        .iter()
        .zip(&f)
        .filter(|(d, _)| **d > 0.0)
        .map(|(d, fv)| d * fv.ln())
        .sum();
    let flow = q.left_apply(dist);
    let entropy_rate = flow
        .iter()
        .zip(&f)
        .filter(|(_, fv)| **fv > 0.0)
        .map(|(v, fv)| v * fv.ln())
        .sum();
    let root: Vec<f64> = f.iter().map(|v| v.sqrt()).collect();
    let qr = q.right_apply(&root);
    let dirichlet = -reference.iter().zip(&root).zip(&qr).map(|((r, a), b)| r * a * b).sum::<f64>();
    EntropyPoint {
        time,
        entropy,
        entropy_rate,
        dirichlet,
    }
}

pub fn entropy_decay_trace(
    q: &RateMatrix,
    dist0: &[f64],
    reference: &[f64],
    times: &[f64],
) -> Result<Vec<EntropyPoint>, DynamicsError> {
    if let Some(s) = reference.iter().position(|&r| r <= 0.0) {
        return Err(DynamicsError::Singular(s));
    }
    if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|&t| t < 0.0) {
        return Err(DynamicsError::Schedule);
    }
    let mut out = Vec::with_capacity(times.len());
    let mut dist = dist0.to_vec();
    let mut now = 0.0;
    for &t in times {
        dist = evolve(q, &dist, t - now);
        now = t;
        out.push(entropy_point(q, &dist, reference, t));
    }
    Ok(out)
}
