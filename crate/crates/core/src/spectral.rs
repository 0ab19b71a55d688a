//! Multi-dimensional FFTs on the torus, one 1-d transform per axis.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::lattice::Torus;
use crate::scalar::Scalar;

#[derive(Clone)]
pub struct SpectralPlan<T: Scalar> {
    torus: Torus,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
}

impl<T: Scalar> fmt::Debug for SpectralPlan<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralPlan").field("torus", &self.torus).finish()
    }
}

impl<T: Scalar> SpectralPlan<T> {
    pub fn new(torus: Torus) -> Self {
        let mut planner = FftPlanner::new();
        SpectralPlan {
            torus,
            forward: planner.plan_fft_forward(torus.side()),
            inverse: planner.plan_fft_inverse(torus.side()),
        }
    }

    pub fn torus(&self) -> Torus {
        self.torus
    }

    fn run(&self, plan: &Arc<dyn Fft<T>>, data: &mut [Complex<T>]) {
        assert_eq!(data.len(), self.torus.len());
        let n = self.torus.side();
        if self.torus.dim() == 1 {
            plan.process(data);
            return;
        }
        let mut line = vec![Complex::new(T::zero(), T::zero()); n];
        let mut stride = 1;
        for _ in 0..self.torus.dim() {
            let block = stride * n;
            for base in (0..data.len()).step_by(block) {
                for off in 0..stride {
                    for (k, slot) in line.iter_mut().enumerate() {
                        *slot = data[base + off + k * stride];
                    }
                    plan.process(&mut line);
                    for (k, v) in line.iter().enumerate() {
                        data[base + off + k * stride] = *v;
                    }
                }
            }
            stride *= n;
        }
    }

    /// Unnormalized forward transform, `sum_x f(x) e^{-2 pi i m.x / N}`.
    pub fn forward(&self, data: &mut [Complex<T>]) {
        self.run(&self.forward, data);
    }

    /// Inverse transform including the `1/len` normalization.
    pub fn inverse(&self, data: &mut [Complex<T>]) {
        self.run(&self.inverse, data);
        let scale = T::one() / T::of(self.torus.len() as f64);
        for v in data.iter_mut() {
            *v = *v * scale;
        }
    }

    pub fn forward_real(&self, values: &[T]) -> Vec<Complex<T>> {
        let mut buf: Vec<Complex<T>> = values.iter().map(|&v| Complex::new(v, T::zero())).collect();
        self.forward(&mut buf);
        buf
    }

    /// Inverse transform, keeping the real part.
    pub fn inverse_real(&self, mut spectrum: Vec<Complex<T>>) -> Vec<T> {
        self.inverse(&mut spectrum);
        spectrum.into_iter().map(|c| c.re).collect()
    }

    /// Applies the diagonal multiplier `mult[m]` in Fourier space.
    pub fn filter(&self, values: &[T], mult: &[T]) -> Vec<T> {
        let mut spec = self.forward_real(values);
        for (c, &m) in spec.iter_mut().zip(mult) {
            *c = *c * m;
        }
        self.inverse_real(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_2d() {
        let t = Torus::new(8, 2);
        let plan = SpectralPlan::<f64>::new(t);
        let vals: Vec<f64> = (0..t.len()).map(|i| ((i * 7919) % 13) as f64).collect();
        let spec = plan.forward_real(&vals);
        let back = plan.inverse_real(spec);
        for (a, b) in vals.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn plane_wave_2d() {
        let t = Torus::new(8, 2);
        let plan = SpectralPlan::<f64>::new(t);
        // f(x) = cos(2 pi (x0 + 2 x1)/8) has spectral mass at m = ±(1, 2).
        let f: Vec<f64> = (0..t.len())
            .map(|s| {
                let c = t.coords(s);
                (2.0 * std::f64::consts::PI * (c[0] as f64 + 2.0 * c[1] as f64) / 8.0).cos()
            })
            .collect();
        let spec = plan.forward_real(&f);
        let peak = t.site(&[1, 2]);
        assert!((spec[peak].re - 32.0).abs() < 1e-10);
        let other = t.site(&[2, 1]);
        assert!(spec[other].norm() < 1e-10);
    }
}
