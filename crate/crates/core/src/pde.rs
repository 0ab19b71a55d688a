//! Periodic solvers for `u_t = L u` and `u_t = L phi(u)` built on the same
//! discrete operator as the particle systems, plus the entropy, energy and
//! Fisher functionals evaluated on solutions.

use std::io::{self, Write};
use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::field::{DensityField, PairField};
use crate::kernel::{KernelError, LatticeKernel};
use crate::measures::{Flux, MeasureError, SiteFamily};
use crate::spectral::SpectralPlan;

/// Explicit step as a fraction of `1 / (2 theta p_star kappa)`.
pub const DEFAULT_SAFETY: f64 = 0.25;
/// Allowed overshoot of the initial range before a step is redone.
pub const RANGE_TOL: f64 = 1e-9;
/// Negative values above `-CLIP_TOL * max u` are rounded to zero.
pub const CLIP_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PdeError {
    #[error("time step {dt:e} fell below 1e-12 of the horizon {horizon}")]
    Stiff { dt: f64, horizon: f64 },
    #[error("negative density {0:e} persists after step halving")]
    Negative(f64),
    #[error("Fisher check needs a positive field, found {0}")]
    NonPositive(f64),
    #[error("record time {0} outside [0, T]")]
    RecordTime(f64),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// `theta * L_N` on a grid of side `N` read at scale `n = N`.
#[derive(Debug)]
pub struct PdeOperator {
    kernel: Arc<LatticeKernel>,
    n: f64,
    theta: f64,
    plan: SpectralPlan<f64>,
    mult: Vec<f64>,
}

impl PdeOperator {
    pub fn new(kernel: Arc<LatticeKernel>) -> Self {
        let n = kernel.side() as f64;
        let theta = kernel.theta(n);
        let mult = kernel.symbol_table().iter().map(|&s| theta * s).collect();
        PdeOperator {
            plan: SpectralPlan::new(kernel.torus()),
            kernel,
            n,
            theta,
            mult,
        }
    }

    pub fn kernel(&self) -> &LatticeKernel {
        &self.kernel
    }

    pub fn n(&self) -> f64 {
        self.n
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Fourier multiplier `theta * psi_N(m)`.
    pub fn multiplier(&self) -> &[f64] {
        &self.mult
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        self.plan.filter(f, &self.mult)
    }

    /// Bound on the operator norm, `2 theta p_star`.
    pub fn norm_bound(&self) -> f64 {
        2.0 * self.theta * self.kernel.p_star()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PdeState {
    pub u: DensityField,
    pub t: f64,
}

impl PdeState {
    pub fn write_csv<W: Write>(&self, mut w: W, header: bool) -> io::Result<()> {
        if header {
            writeln!(w, "t,x,u")?;
        }
        let side = self.u.torus().side() as f64;
        for (s, v) in self.u.values().iter().enumerate() {
            writeln!(w, "{},{},{}", self.t, s as f64 / side, v)?;
        }
        Ok(())
    }
}

/// Exact propagation: mode `m` is multiplied by `exp(T theta psi_N(m))`.
pub fn linear_solve(u0: &DensityField, t: f64, op: &PdeOperator) -> PdeState {
    let mult: Vec<f64> = op.mult.iter().map(|&s| (t * s).exp()).collect();
    PdeState {
        u: DensityField::new(u0.torus(), op.plan.filter(u0.values(), &mult)),
        t,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOptions {
    pub safety: f64,
    /// Times at which snapshots are kept, in `[0, T]`.
    pub record: Vec<f64>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            safety: DEFAULT_SAFETY,
            record: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NonlinearSolution {
    pub state: PdeState,
    pub snapshots: Vec<PdeState>,
    /// `(t, grid sum)` after every accepted step.
    pub mass: Vec<(f64, f64)>,
    pub steps: usize,
    pub halvings: usize,
    pub clipped: usize,
    pub final_dt: f64,
}

fn rk4_step(u: &[f64], dt: f64, op: &PdeOperator, flux: &Flux) -> Vec<f64> {
    let rhs = |v: &[f64]| op.apply(&v.iter().map(|&x| flux.eval(x)).collect::<Vec<_>>());
    let shift = |v: &[f64], k: &[f64], h: f64| v.iter().zip(k).map(|(a, b)| a + h * b).collect::<Vec<_>>();
    let k1 = rhs(u);
    let k2 = rhs(&shift(u, &k1, 0.5 * dt));
    let k3 = rhs(&shift(u, &k2, 0.5 * dt));
    let k4 = rhs(&shift(u, &k3, dt));
    (0..u.len())
        .map(|i| u[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Method of lines for `u_t = theta L_N phi(u)` with classic fourth-order
/// Runge-Kutta. The step starts at `safety / (2 theta p_star kappa)` and is
/// halved whenever a step leaves the initial range by more than
/// [`RANGE_TOL`] or produces a negative value that is not roundoff.
pub fn nonlinear_solve(
    u0: &DensityField,
    t_end: f64,
    op: &PdeOperator,
    flux: &Flux,
    opts: &SolveOptions,
) -> Result<NonlinearSolution, PdeError> {
    let mut record = opts.record.clone();
    if let Some(&bad) = record.iter().find(|&&r| !(0.0..=t_end).contains(&r)) {
        return Err(PdeError::RecordTime(bad));
    }
    record.sort_by(f64::total_cmp);
    let (lo, hi) = (u0.min(), u0.max());
    let mut dt = opts.safety / (op.norm_bound() * flux.lipschitz());
    let mut u = u0.values().to_vec();
    let mut t = 0.0;
    let mut out = NonlinearSolution {
        state: PdeState { u: u0.clone(), t: 0.0 },
        snapshots: Vec::new(),
        mass: vec![(0.0, u.iter().sum())],
        steps: 0,
        halvings: 0,
        clipped: 0,
        final_dt: dt,
    };
    let mut next = 0;
    let torus = u0.torus();
    while next < record.len() && record[next] <= 0.0 {
        out.snapshots.push(PdeState { u: u0.clone(), t: 0.0 });
        next += 1;
    }
    while t < t_end {
        let target = record.get(next).copied().unwrap_or(t_end).min(t_end);
        let h = dt.min(target - t);
        let mut v = rk4_step(&u, h, op, flux);
        let vmax = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let vmin = v.iter().copied().fold(f64::INFINITY, f64::min);
        let roundoff = vmin < 0.0 && vmin > -CLIP_TOL * vmax.abs();
        let violation = vmax > hi + RANGE_TOL || (vmin < lo - RANGE_TOL && !roundoff) || (vmin < 0.0 && !roundoff);
        if violation {
            dt *= 0.5;
            out.halvings += 1;
            if dt < 1e-12 * t_end {
                return Err(if vmin < 0.0 {
                    PdeError::Negative(vmin)
                } else {
                    PdeError::Stiff { dt, horizon: t_end }
                });
            }
            continue;
        }
        if vmin < 0.0 {
            for x in v.iter_mut().filter(|x| **x < 0.0) {
                *x = 0.0;
            }
            out.clipped += 1;
        }
        u = v;
        t = if h == target - t { target } else { t + h };
        out.steps += 1;
        out.mass.push((t, u.iter().sum()));
        while next < record.len() && record[next] <= t {
            out.snapshots.push(PdeState {
                u: DensityField::new(torus, u.clone()),
                t,
            });
            next += 1;
        }
    }
    out.final_dt = dt;
    out.state = PdeState {
        u: DensityField::new(torus, u),
        t,
    };
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Diagnostics {
    pub t: f64,
    /// Grid integral `N^{-d} sum u`.
    pub mass: f64,
    pub max: f64,
    pub min: f64,
    /// `N^{-d} sum H(u(x) | rho_ref)`.
    pub entropy: f64,
    /// `E(phi(u), phi(u))`.
    pub energy: f64,
    pub fisher: f64,
}

/// `N^{-d} theta sum_{x,y} p(y-x) (f(y)-f(x))^2 / (f(x)+f(y))`; pairs with
/// `f(x) + f(y) = 0` contribute nothing.
pub fn fisher_information(op: &PdeOperator, f: &DensityField) -> f64 {
    let k = &op.kernel;
    let t = k.torus();
    let v = f.values();
    let mut s = 0.0;
    for x in 0..t.len() {
        for (r, &p) in k.rates().iter().enumerate().skip(1) {
            let y = t.add(x, r);
            let den = v[x] + v[y];
            if den > 0.0 {
                s += p * (v[y] - v[x]).powi(2) / den;
            }
        }
    }
    op.theta * s / op.n.powi(t.dim() as i32)
}

pub fn solution_diagnostics(
    state: &PdeState,
    op: &PdeOperator,
    flux: &Flux,
    family: &SiteFamily,
    rho_ref: f64,
) -> Result<Diagnostics, PdeError> {
    let u = &state.u;
    let cells = u.len() as f64;
    let phi = u.map(|x| flux.eval(x));
    let mut entropy = 0.0;
    for &a in u.values() {
        entropy += family.entropy(a.max(0.0), rho_ref)?;
    }
    Ok(Diagnostics {
        t: state.t,
        mass: u.sum() / cells,
        max: u.max(),
        min: u.min(),
        entropy: entropy / cells,
        energy: op.kernel.energy(&phi, &phi, op.n)?,
        fisher: fisher_information(op, &phi),
    })
}

pub fn write_diagnostics_csv<W: Write>(mut w: W, trace: &[Diagnostics]) -> io::Result<()> {
    writeln!(w, "t,mass,max,entropy,energy,fisher")?;
    for d in trace {
        writeln!(w, "{},{},{},{},{},{}", d.t, d.mass, d.max, d.entropy, d.energy, d.fisher)?;
    }
    Ok(())
}

/// Trapezoid rule for `int E(phi(u_t), phi(u_t)) dt` along a trace.
pub fn energy_integral(trace: &[Diagnostics]) -> f64 {
    trace.windows(2).map(|w| 0.5 * (w[1].t - w[0].t) * (w[0].energy + w[1].energy)).sum()
}

/// `J(G) = N^{-d} sum_x phi(x) L G(x) - N^{-d} theta sum_{x,y} (phi(x)+phi(y)) p(y-x) G(y,x)^2`
/// for antisymmetric `G`.
pub fn fisher_functional(op: &PdeOperator, phi: &DensityField, g: &PairField) -> Result<f64, PdeError> {
    let k = &op.kernel;
    let lg = k.apply_ln_pair(g, op.theta)?;
    let cells = op.n.powi(k.torus().dim() as i32);
    let lin: f64 = phi.values().iter().zip(lg.values()).map(|(a, b)| a * b).sum::<f64>() / cells;
    Ok(lin - k.rate_gamma(phi.values(), g, op.n)?)
}

/// `F*(x,y) = (phi(y) - phi(x)) / (2 (phi(x) + phi(y)))`.
pub fn fisher_maximizer(phi: &DensityField) -> PairField {
    let v = phi.values();
    PairField::from_fn(phi.torus(), |x, y| 0.5 * (v[y] - v[x]) / (v[x] + v[y]))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FisherCheck {
    /// Fisher information of `phi`.
    pub closed_form: f64,
    /// Functional at the maximizer; equals a quarter of `closed_form`.
    pub at_optimum: f64,
    /// Largest functional value among the perturbed fields.
    pub best_trial: f64,
}

/// Evaluates the variational functional at `F*` and at `trials` random
/// antisymmetric perturbations `F* + eps H` with `H(x,y)` uniform in `[-1, 1]`.
pub fn variational_fisher_check<R: Rng + ?Sized>(
    phi: &DensityField,
    op: &PdeOperator,
    trials: usize,
    eps: f64,
    rng: &mut R,
) -> Result<FisherCheck, PdeError> {
    let low = phi.min();
    if low.is_nan() || low <= 0.0 {
        return Err(PdeError::NonPositive(low));
    }
    let star = fisher_maximizer(phi);
    let at_optimum = fisher_functional(op, phi, &star)?;
    let len = phi.len();
    let mut best_trial = f64::NEG_INFINITY;
    for _ in 0..trials {
        let mut h = PairField::zeros(phi.torus());
        for x in 0..len {
            for y in x + 1..len {
                let v = rng.random_range(-1.0..=1.0);
                h.set(x, y, v);
                h.set(y, x, -v);
            }
        }
        best_trial = best_trial.max(fisher_functional(op, phi, &star.axpy(eps, &h))?);
    }
    Ok(FisherCheck {
        closed_form: fisher_information(op, phi),
        at_optimum,
        best_trial,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContractionReport {
    pub l1_initial: f64,
    pub l1_final: f64,
    pub l2_initial: f64,
    pub l2_final: f64,
    /// Largest `u_a - u_b` at the final time when `u_a <= u_b` initially;
    /// `None` for unordered data.
    pub order_defect: Option<f64>,
}

impl ContractionReport {
    pub fn nonexpansive(&self, tol: f64) -> bool {
        self.l1_final <= self.l1_initial * (1.0 + tol)
    }
}

/// Solves from both data to `T` and compares grid `L^1` and `L^2` distances.
pub fn contraction_check(
    u_a: &DensityField,
    u_b: &DensityField,
    t: f64,
    op: &PdeOperator,
    flux: &Flux,
) -> Result<(ContractionReport, NonlinearSolution, NonlinearSolution), PdeError> {
    let opts = SolveOptions::default();
    let a = nonlinear_solve(u_a, t, op, flux, &opts)?;
    let b = nonlinear_solve(u_b, t, op, flux, &opts)?;
    let ordered = u_a.values().iter().zip(u_b.values()).all(|(x, y)| x <= y);
    let (fa, fb) = (&a.state.u, &b.state.u);
    let order_defect = ordered.then(|| {
        fa.values()
            .iter()
            .zip(fb.values())
            .map(|(x, y)| x - y)
            .fold(f64::NEG_INFINITY, f64::max)
    });
    let report = ContractionReport {
        l1_initial: u_a.l1_distance(u_b),
        l1_final: fa.l1_distance(fb),
        l2_initial: u_a.l2_distance_sq(u_b),
        l2_final: fa.l2_distance_sq(fb),
        order_defect,
    };
    Ok((report, a, b))
}
