//! Butterworth band-pass design and zero-phase filtering.
//!
//! The design follows the usual analog route: an order-`N` Butterworth
//! low-pass prototype, a low-pass to band-pass transform around the
//! prewarped edges, then the bilinear transform. The band-pass has `2N`
//! poles and is run as `N` second-order sections, forward then backward,
//! so the magnitude response is squared and the phase cancels.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// One biquad `b0 + b1 z⁻¹ + b2 z⁻²` over `1 + a1 z⁻¹ + a2 z⁻²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Section {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Section {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let poly = |c: &[f64; 3]| c[0] + z_inv * (c[1] + z_inv * c[2]);
        poly(&self.b) / poly(&self.a)
    }

    /// Initial state of a transposed direct-form II section in steady state
    /// for a unit step input.
    fn step_state(&self) -> [f64; 2] {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        let r0 = b1 - a1 * b0;
        let r1 = b2 - a2 * b0;
        let z0 = (r0 + r1) / (1.0 + a1 + a2);
        [z0, r1 - a2 * z0]
    }
}

/// A cascade of second-order sections.
#[derive(Debug, Clone, PartialEq)]
pub struct SosFilter {
    pub sections: Vec<Section>,
}

impl SosFilter {
    /// Order-`order` Butterworth band-pass between `low` and `high` Hz.
    pub fn butterworth_bandpass(order: usize, low: f64, high: f64, sample_rate: f64) -> Result<Self> {
        let nyquist = sample_rate / 2.0;
        if order == 0 {
            return Err(Error::Signal("filter order must be at least 1".into()));
        }
        if !(low > 0.0 && low < high && high < nyquist) {
            return Err(Error::Signal(format!(
                "band {low}-{high} Hz must satisfy 0 < low < high < {nyquist} Hz (Nyquist)"
            )));
        }
        let fs2 = 2.0 * sample_rate;
        let warp = |f: f64| fs2 * (std::f64::consts::PI * f / sample_rate).tan();
        let (wl, wh) = (warp(low), warp(high));
        let bw = wh - wl;
        let w0_sq = wl * wh;

        let n = order as f64;
        let mut sections = Vec::with_capacity(order);
        let mut gain = bw.powi(order as i32);
        // Prototype poles in the upper half plane; each one and its
        // conjugate give two conjugate band-pass pole pairs.
        let proto: Vec<Complex64> = (0..order)
            .map(|k| {
                let m = -(n - 1.0) + 2.0 * k as f64;
                -Complex64::from_polar(1.0, std::f64::consts::PI * m / (2.0 * n))
            })
            .collect();
        let mut analog = Vec::with_capacity(2 * order);
        for p in &proto {
            let lp = p * (bw / 2.0);
            let root = (lp * lp - w0_sq).sqrt();
            analog.push(lp + root);
            analog.push(lp - root);
        }
        // Bilinear transform: s-plane zeros at 0 go to z = 1, the ones at
        // infinity to z = -1. Gain picks up prod(fs2 - z) / prod(fs2 - p).
        let mut num = Complex64::new(fs2.powi(order as i32), 0.0);
        let mut den = Complex64::new(1.0, 0.0);
        for p in &analog {
            den *= fs2 - p;
        }
        num /= den;
        gain *= num.re;

        let digital: Vec<Complex64> = analog.iter().map(|p| (fs2 + p) / (fs2 - p)).collect();
        let mut upper: Vec<Complex64> = digital.into_iter().filter(|p| p.im > 0.0).collect();
        upper.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
        if upper.len() != order {
            return Err(Error::Signal("band-pass poles are not in conjugate pairs".into()));
        }
        for (i, p) in upper.iter().enumerate() {
            let g = if i == 0 { gain } else { 1.0 };
            sections.push(Section {
                b: [g, 0.0, -g],
                a: [1.0, -2.0 * p.re, p.norm_sqr()],
            });
        }
        Ok(Self { sections })
    }

    /// Complex frequency response at `freq` Hz.
    pub fn response(&self, freq: f64, sample_rate: f64) -> Complex64 {
        let w = 2.0 * std::f64::consts::PI * freq / sample_rate;
        let z_inv = Complex64::from_polar(1.0, -w);
        self.sections.iter().map(|s| s.response(z_inv)).product()
    }

    /// Causal filtering from the given per-section state.
    fn run(&self, x: &mut [f64], mut state: Vec<[f64; 2]>) {
        for (s, z) in self.sections.iter().zip(&mut state) {
            let [b0, b1, b2] = s.b;
            let [_, a1, a2] = s.a;
            for v in x.iter_mut() {
                let input = *v;
                let y = b0 * input + z[0];
                z[0] = b1 * input - a1 * y + z[1];
                z[1] = b2 * input - a2 * y;
                *v = y;
            }
        }
    }

    /// Steady-state initial conditions of the cascade for a unit step.
    fn step_states(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let [z0, z1] = s.step_state();
                let out = [scale * z0, scale * z1];
                scale *= s.b.iter().sum::<f64>() / s.a.iter().sum::<f64>();
                out
            })
            .collect()
    }

    /// Forward-backward filtering with odd reflection at both ends and
    /// steady-state initial conditions, so edges carry little transient.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        if x.is_empty() {
            return Vec::new();
        }
        let pad = (3 * (2 * self.sections.len() + 1)).min(x.len() - 1);
        let n = x.len();
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let zi = self.step_states();
        let scaled = |z: &[[f64; 2]], v: f64| z.iter().map(|s| [s[0] * v, s[1] * v]).collect();
        let first = ext[0];
        self.run(&mut ext, scaled(&zi, first));
        ext.reverse();
        let first = ext[0];
        self.run(&mut ext, scaled(&zi, first));
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}
