//! Periodic sample sequences on uniform grids and their trigonometric interpolants.
//!
//! Every field living on a closed curve is stored as samples at `s_j = j·ℓ/n`; derivatives,
//! off-node evaluation and refinement go through the FFT.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::PI;

fn fft(data: &mut [Complex64], inverse: bool) {
    let mut planner = FftPlanner::new();
    let plan = if inverse {
        planner.plan_fft_inverse(data.len())
    } else {
        planner.plan_fft_forward(data.len())
    };
    plan.process(data);
}

/// Signed wavenumber of FFT slot `j` for a length-`n` transform.
fn wavenumber(j: usize, n: usize) -> i64 {
    if j <= n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

/// Samples of a real ℓ-periodic function at `n` uniform nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Periodic {
    pub values: Vec<f64>,
    pub period: f64,
}

impl Periodic {
    pub fn new(values: Vec<f64>, period: f64) -> Self {
        Self { values, period }
    }

    pub fn constant(value: f64, n: usize, period: f64) -> Self {
        Self::new(vec![value; n], period)
    }

    pub fn from_fn(n: usize, period: f64, f: impl Fn(f64) -> f64) -> Self {
        let h = period / n as f64;
        Self::new((0..n).map(|j| f(j as f64 * h)).collect(), period)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        self.period / self.len() as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        j as f64 * self.spacing()
    }

    /// Normalised DFT coefficients `c_m = n⁻¹ Σ v_j e^{-2πi jm/n}` in FFT order.
    pub fn coefficients(&self) -> Vec<Complex64> {
        let n = self.len();
        let mut data: Vec<Complex64> = self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft(&mut data, false);
        let scale = 1.0 / n as f64;
        data.iter_mut().for_each(|c| *c *= scale);
        data
    }

    fn from_coefficients(coeffs: Vec<Complex64>, period: f64) -> Self {
        let mut data = coeffs;
        fft(&mut data, true);
        Self::new(data.iter().map(|c| c.re).collect(), period)
    }

    /// `order`-th derivative of the trigonometric interpolant, sampled at the nodes.
    pub fn derivative(&self, order: u32) -> Self {
        if order == 0 {
            return self.clone();
        }
        let n = self.len();
        let omega = 2.0 * PI / self.period;
        let mut c = self.coefficients();
        for (j, cj) in c.iter_mut().enumerate() {
            let m = wavenumber(j, n);
            if n.is_multiple_of(2) && j == n / 2 && order % 2 == 1 {
                *cj = Complex64::new(0.0, 0.0);
                continue;
            }
            let ik = Complex64::new(0.0, omega * m as f64);
            *cj *= ik.powu(order);
        }
        Self::from_coefficients(c, self.period)
    }

    /// Mean-free antiderivative of the interpolant minus its mean (periodic part only).
    pub fn periodic_antiderivative(&self) -> Self {
        let n = self.len();
        let omega = 2.0 * PI / self.period;
        let mut c = self.coefficients();
        for (j, cj) in c.iter_mut().enumerate() {
            let m = wavenumber(j, n);
            if m == 0 || (n.is_multiple_of(2) && j == n / 2) {
                *cj = Complex64::new(0.0, 0.0);
            } else {
                *cj /= Complex64::new(0.0, omega * m as f64);
            }
        }
        Self::from_coefficients(c, self.period)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }

    /// Trapezoid (spectrally exact for the interpolant) integral over one period.
    pub fn integral(&self) -> f64 {
        self.mean() * self.period
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Interpolant sampled on `m` uniform nodes.
    pub fn resample(&self, m: usize) -> Self {
        let n = self.len();
        if m == n {
            return self.clone();
        }
        if m < n {
            let ser = self.series();
            return Self::from_fn(m, self.period, |s| ser.eval(s));
        }
        let c = self.coefficients();
        let mut out = vec![Complex64::new(0.0, 0.0); m];
        for (j, &cj) in c.iter().enumerate() {
            let k = wavenumber(j, n);
            if n.is_multiple_of(2) && j == n / 2 {
                // the Nyquist mode of the coarse grid is the cosine, split evenly
                out[n / 2] += cj * 0.5;
                out[m - n / 2] += cj * 0.5;
                continue;
            }
            let slot = if k >= 0 { k as usize } else { (m as i64 + k) as usize };
            out[slot] += cj;
        }
        Self::from_coefficients(out, self.period)
    }

    /// Coefficients of the real trigonometric series used for off-node evaluation.
    pub fn series(&self) -> TrigSeries {
        TrigSeries::new(self)
    }

    /// Magnitude of the highest quarter of the spectrum relative to the largest coefficient.
    pub fn spectral_tail(&self) -> f64 {
        let n = self.len();
        let c = self.coefficients();
        let top = c.iter().fold(0.0_f64, |m, v| m.max(v.norm()));
        if top == 0.0 {
            return 0.0;
        }
        let tail = (0..n)
            .filter(|&j| wavenumber(j, n).unsigned_abs() as usize > 3 * n / 8)
            .fold(0.0_f64, |m, j| m.max(c[j].norm()));
        tail / top
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::new(self.values.iter().map(|&v| f(v)).collect(), self.period)
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.len(), other.len(), "periodic fields on different grids");
        Self::new(
            self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
            self.period,
        )
    }

    pub fn scale(&self, a: f64) -> Self {
        self.map(|v| a * v)
    }
}

/// One-sided representation `f(s) = Re Σ_{m=0}^{n/2} d_m e^{imωs}` of a real interpolant.
#[derive(Clone, Debug)]
pub struct TrigSeries {
    coeffs: Vec<Complex64>,
    omega: f64,
}

impl TrigSeries {
    fn new(p: &Periodic) -> Self {
        let n = p.len();
        let c = p.coefficients();
        let top = n / 2;
        let mut d = Vec::with_capacity(top + 1);
        for m in 0..=top {
            let w = if m == 0 || (n.is_multiple_of(2) && m == top) { 1.0 } else { 2.0 };
            d.push(c[m] * w);
        }
        Self { coeffs: d, omega: 2.0 * PI / p.period }
    }

    pub fn modes(&self) -> usize {
        self.coeffs.len()
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.eval_with(&TrigBasis::new(s, self.omega, self.modes()), 0)
    }

    pub fn eval_derivative(&self, s: f64, order: u32) -> f64 {
        self.eval_with(&TrigBasis::new(s, self.omega, self.modes()), order)
    }

    /// Evaluate the `order`-th derivative with a precomputed exponential basis.
    pub fn eval_with(&self, basis: &TrigBasis, order: u32) -> f64 {
        let mut acc = 0.0;
        match order % 4 {
            0 => {
                for (m, (d, e)) in self.coeffs.iter().zip(&basis.exps).enumerate() {
                    acc += (d * e).re * basis.pow(m, order);
                }
            }
            1 => {
                for (m, (d, e)) in self.coeffs.iter().zip(&basis.exps).enumerate() {
                    acc -= (d * e).im * basis.pow(m, order);
                }
            }
            2 => {
                for (m, (d, e)) in self.coeffs.iter().zip(&basis.exps).enumerate() {
                    acc -= (d * e).re * basis.pow(m, order);
                }
            }
            _ => {
                for (m, (d, e)) in self.coeffs.iter().zip(&basis.exps).enumerate() {
                    acc += (d * e).im * basis.pow(m, order);
                }
            }
        }
        acc
    }
}

/// `e^{imωs}` for `m = 0..modes`, shared by every series evaluated at the same `s`.
#[derive(Clone, Debug)]
pub struct TrigBasis {
    exps: Vec<Complex64>,
    omega: f64,
}

impl TrigBasis {
    pub fn new(s: f64, omega: f64, modes: usize) -> Self {
        let mut exps = Vec::with_capacity(modes);
        // direct evaluation every 32 modes bounds the recurrence drift
        let step = Complex64::from_polar(1.0, omega * s);
        let mut cur = Complex64::new(1.0, 0.0);
        for m in 0..modes {
            if m % 32 == 0 {
                cur = Complex64::from_polar(1.0, omega * s * m as f64);
            }
            exps.push(cur);
            cur *= step;
        }
        Self { exps, omega }
    }

    fn pow(&self, m: usize, order: u32) -> f64 {
        (self.omega * m as f64).powi(order as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize) -> Periodic {
        Periodic::from_fn(n, 3.0, |s| (2.0 * PI * s / 3.0).sin().exp())
    }

    #[test]
    fn derivative_of_smooth_function_is_spectral() {
        let p = sample(64);
        let d = p.derivative(1);
        let w = 2.0 * PI / 3.0;
        for (j, v) in d.values.iter().enumerate() {
            let s = p.node(j);
            let exact = w * (w * s).cos() * (w * s).sin().exp();
            assert!((v - exact).abs() < 1e-11, "{v} vs {exact}");
        }
    }

    #[test]
    fn series_reproduces_nodes_and_interpolates() {
        let p = sample(48);
        let ser = p.series();
        for j in 0..p.len() {
            assert!((ser.eval(p.node(j)) - p.values[j]).abs() < 1e-13);
        }
        let s = 1.2345;
        let w = 2.0 * PI / 3.0;
        assert!((ser.eval(s) - (w * s).sin().exp()).abs() < 1e-12);
        let d2 = ser.eval_derivative(s, 2);
        let exact = w * w * ((w * s).cos().powi(2) - (w * s).sin()) * (w * s).sin().exp();
        assert!((d2 - exact).abs() < 1e-10);
    }

    #[test]
    fn resample_up_and_down_round_trips() {
        let p = sample(64);
        let up = p.resample(256);
        let back = up.resample(64);
        for (a, b) in p.values.iter().zip(&back.values) {
            assert!((a - b).abs() < 1e-13);
        }
        let w = 2.0 * PI / 3.0;
        for j in 0..up.len() {
            let s = up.node(j);
            assert!((up.values[j] - (w * s).sin().exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn antiderivative_inverts_derivative() {
        let p = sample(64);
        let back = p.derivative(1).periodic_antiderivative();
        let m = p.mean();
        for (a, b) in p.values.iter().zip(&back.values) {
            assert!((a - m - b).abs() < 1e-12);
        }
    }
}
