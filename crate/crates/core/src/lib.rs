//! Long-jump exclusion and zero-range processes on periodic lattices, the
//! fractional heat equations they converge to, and the thermodynamic and
//! coupling machinery around them.

pub mod coupling;
pub mod dynamics;
pub mod field;
pub mod kernel;
pub mod lattice;
pub mod measures;
pub mod pde;
pub mod quad;
pub mod scalar;
pub mod spectral;
pub mod tagged;

pub use coupling::{ColoredSim, Colors, TwoClassSim};
pub use dynamics::{Model, ParticleSystem, SimClock};
pub use field::{DensityField, PairField};
pub use kernel::{AngularProfile, JumpTable, KernelError, KernelSpec, LatticeKernel, TimeScale};
pub use lattice::Torus;
pub use measures::{Flux, FluxTable, Profile, RateFunction, SiteFamily, SiteLaw, Thermo};
pub use pde::{PdeOperator, PdeState};
pub use scalar::Scalar;
pub use tagged::{Construction, TaggedSim};

/// Double-precision kernel, the default used by the simulators.
pub type Kernel = LatticeKernel<f64>;
/// Double-precision grid field.
pub type Field = DensityField<f64>;
