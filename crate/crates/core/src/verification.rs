//! Reference solutions, error norms, convergence orders and line spectra.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::geometry::MaterialParams;
use crate::scalar::Scalar;
use crate::slab_solver::FieldState;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VerificationError {
    #[error("need at least two (error, width) pairs of equal length, got {errors} and {widths}")]
    TooFewSamples { errors: usize, widths: usize },
    #[error("error {0} is not positive")]
    NonPositiveError(f64),
    #[error("refinement parameters must be positive and strictly decreasing")]
    NotRefining,
    #[error("sample count {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("no state covers t = {0}")]
    TimeNotCovered(f64),
}

/// Cavity mode `(m, n)` on `(0, pi)^2` with PEC walls.
pub fn cavity_fields<S: Scalar>(m: u32, n: u32, x: S, y: S, t: S) -> [S; 6] {
    let (mf, nf) = (S::from_usize(m as usize), S::from_usize(n as usize));
    let w = (mf * mf + nf * nf).sqrt();
    let (smx, cmx) = (mf * x).sin_cos();
    let (sny, cny) = (nf * y).sin_cos();
    let (swt, cwt) = (w * t).sin_cos();
    let z = S::zero();
    [z, z, w * smx * sny * cwt, -nf * smx * cny * swt, mf * cmx * sny * swt, z]
}

fn step<S: Scalar>(v: S) -> S {
    if v >= S::zero() {
        S::one()
    } else {
        S::zero()
    }
}

/// Periodic box profile `Theta(cos(pi (s - x0)/10)) Theta(cos(pi (s - x1)/10))`.
pub fn pulse_profile<S: Scalar>(s: S, x0: S, x1: S) -> S {
    let k = S::PI() / S::lit(10.0);
    step((k * (s - x0)).cos()) * step((k * (s - x1)).cos())
}

/// Right-travelling TM plane wave: `E3 = psi(x - t)`, `H2 = -psi(x - t)`.
pub fn pulse_fields<S: Scalar>(x: S, t: S, x0: S, x1: S) -> [S; 6] {
    let p = pulse_profile(x - t, x0, x1);
    let z = S::zero();
    [z, z, p, z, -p, z]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Descriptor<S> {
    Cavity { m: u32, n: u32 },
    Pulse { x0: S, x1: S },
    Custom,
}

pub type FieldFn<S> = Arc<dyn Fn(S, S, S) -> [S; 6] + Send + Sync>;

/// A closed-form field `(E, H)(x, y, t)`.
#[derive(Clone)]
pub struct AnalyticSolution<S> {
    pub descriptor: Descriptor<S>,
    evaluator: FieldFn<S>,
}

impl<S: Scalar> std::fmt::Debug for AnalyticSolution<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnalyticSolution").field("descriptor", &self.descriptor).finish()
    }
}

impl<S: Scalar> AnalyticSolution<S> {
    pub fn cavity(m: u32, n: u32) -> Self {
        Self { descriptor: Descriptor::Cavity { m, n }, evaluator: Arc::new(move |x, y, t| cavity_fields(m, n, x, y, t)) }
    }

    pub fn pulse(x0: S, x1: S) -> Self {
        Self { descriptor: Descriptor::Pulse { x0, x1 }, evaluator: Arc::new(move |x, _, t| pulse_fields(x, t, x0, x1)) }
    }

    pub fn custom(f: impl Fn(S, S, S) -> [S; 6] + Send + Sync + 'static) -> Self {
        Self { descriptor: Descriptor::Custom, evaluator: Arc::new(f) }
    }

    pub fn eval(&self, x: S, y: S, t: S) -> [S; 6] {
        (self.evaluator)(x, y, t)
    }

    /// The `t = 0` trace as initial data.
    pub fn initial(&self) -> impl Fn(S, S) -> [S; 6] + Sync + '_ {
        move |x, y| self.eval(x, y, S::zero())
    }
}

/// Space-time L2 error of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L2Error<S> {
    pub absolute: S,
    pub exact_norm: S,
    /// `absolute / exact_norm`, or `absolute` when the exact norm vanishes.
    pub relative: S,
    pub zero_norm: bool,
}

/// `sqrt(sum int |E_h - E|^2 + |H_h - H|^2) / sqrt(sum int |E|^2 + |H|^2)` over
/// all slabs, with the `p+3` space-time rule.
pub fn space_time_l2_error<S: Scalar>(states: &[FieldState<S>], exact: &AnalyticSolution<S>) -> L2Error<S> {
    let mut err = S::zero();
    let mut norm = S::zero();
    for state in states {
        let mesh = state.mesh();
        let bases = state.bases();
        let t_half = (state.t_hi() - state.t_lo()) * S::lit(0.5);
        let parts: Vec<(S, S)> = (0..mesh.n_elements())
            .into_par_iter()
            .map(|e| {
                let el = mesh.element(e);
                let tab = &bases.class(e).tables.volume_hi;
                let vals = tab.table.combine(state.element_coeffs(e));
                let jac = el.bbox.area() / S::lit(4.0) * t_half;
                let (mut de, mut ne) = (S::zero(), S::zero());
                for ((pt, w), u) in tab.rule.points.iter().zip(&tab.rule.weights).zip(&vals) {
                    let xy = el.to_physical(pt[0], pt[1]);
                    let t = state.t_lo() + t_half * (pt[2] + S::one());
                    let v = exact.eval(xy[0], xy[1], t);
                    for k in 0..6 {
                        let d = u[k] - v[k];
                        de += *w * d * d;
                        ne += *w * v[k] * v[k];
                    }
                }
                (jac * de, jac * ne)
            })
            .collect();
        for (d, n) in parts {
            err += d;
            norm += n;
        }
    }
    let absolute = err.sqrt();
    let exact_norm = norm.sqrt();
    let zero_norm = exact_norm == S::zero();
    L2Error { absolute, exact_norm, relative: if zero_norm { absolute } else { absolute / exact_norm }, zero_norm }
}

/// `log(e_i / e_{i+1}) / log(h_i / h_{i+1})` for consecutive pairs.
pub fn observed_order<S: Scalar>(errors: &[S], widths: &[S]) -> Result<Vec<S>, VerificationError> {
    if errors.len() != widths.len() || errors.len() < 2 {
        return Err(VerificationError::TooFewSamples { errors: errors.len(), widths: widths.len() });
    }
    if let Some(e) = errors.iter().find(|e| !(**e > S::zero())) {
        return Err(VerificationError::NonPositiveError(e.as_f64()));
    }
    if widths.iter().any(|h| !(*h > S::zero())) || widths.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(VerificationError::NotRefining);
    }
    Ok(errors.windows(2).zip(widths.windows(2)).map(|(e, h)| (e[0] / e[1]).ln() / (h[0] / h[1]).ln()).collect())
}

/// DFT magnitudes `|sum_k f_k exp(-2 pi i j k / n)| / n` for `j = 0..=n/2`.
pub fn dft_magnitudes<S: Scalar>(samples: &[S]) -> Result<Vec<S>, VerificationError> {
    let n = samples.len();
    if n == 0 || !n.is_power_of_two() {
        return Err(VerificationError::NotPowerOfTwo(n));
    }
    let mut buf: Vec<Complex<f64>> = samples.iter().map(|s| Complex::new(s.as_f64(), 0.0)).collect();
    FftPlanner::<f64>::new().plan_fft_forward(n).process(&mut buf);
    Ok(buf[..=n / 2].iter().map(|c| S::lit(c.norm() / n as f64)).collect())
}

/// Uniform sample points `x_lo + k L / n`, `k = 0..n`.
pub fn line_samples<S: Scalar>(x_lo: S, length: S, n: usize) -> Vec<S> {
    (0..n).map(|k| x_lo + length * S::from_usize(k) / S::from_usize(n)).collect()
}

/// Magnitude spectrum of `E3(., y, t)` sampled uniformly across the domain width.
/// Normalize against the `t = 0` peak with [`normalize_spectrum`].
pub fn line_spectrum<S: Scalar>(state: &FieldState<S>, y: S, t: S, n_samples: usize) -> Result<Vec<S>, VerificationError> {
    if !n_samples.is_power_of_two() {
        return Err(VerificationError::NotPowerOfTwo(n_samples));
    }
    let dom = state.mesh().domain();
    let samples: Vec<S> = line_samples(dom.x_lo, dom.width(), n_samples)
        .into_iter()
        .map(|x| state.eval(x, y, t).map_or(S::zero(), |u| u[2]))
        .collect();
    dft_magnitudes(&samples)
}

/// Divides by the largest entry of `reference`.
pub fn normalize_spectrum<S: Scalar>(spectrum: &[S], reference: &[S]) -> Vec<S> {
    let peak = reference.iter().fold(S::zero(), |m, v| m.max(*v));
    if peak == S::zero() {
        return spectrum.to_vec();
    }
    spectrum.iter().map(|v| *v / peak).collect()
}

/// Mean magnitude of the bottom and top thirds of a spectrum (zero bin excluded).
pub fn band_means<S: Scalar>(spectrum: &[S]) -> (S, S) {
    let bins = &spectrum[1.min(spectrum.len())..];
    let third = (bins.len() / 3).max(1);
    let mean = |b: &[S]| b.iter().copied().sum::<S>() / S::from_usize(b.len().max(1));
    (mean(&bins[..third]), mean(&bins[bins.len() - third..]))
}

/// Energy-weighted mean of `x` on a periodic domain of width `period`, by the
/// circular mean of `2 pi (x - x_lo) / period`.
pub fn periodic_energy_centroid<S: Scalar>(state: &FieldState<S>, t: S) -> Result<S, VerificationError> {
    if t < state.t_lo() || t > state.t_hi() {
        return Err(VerificationError::TimeNotCovered(t.as_f64()));
    }
    let mesh = state.mesh();
    let dom = mesh.domain();
    let period = dom.width();
    let two_pi = S::TAU();
    let parts: Vec<(S, S)> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|e| {
            let el = mesh.element(e);
            let rule = &state.bases().class(e).tables.start_hi.rule;
            let (mut c, mut s) = (S::zero(), S::zero());
            for (pt, w) in rule.points.iter().zip(&rule.weights) {
                let xy = el.to_physical(pt[0], pt[1]);
                let u = state.eval_in_element(e, xy[0], xy[1], t);
                let d = energy_density(&el.material, &u) * *w;
                let (sn, cs) = (two_pi * (xy[0] - dom.x_lo) / period).sin_cos();
                c += d * cs;
                s += d * sn;
            }
            (c * el.bbox.area(), s * el.bbox.area())
        })
        .collect();
    let (c, s) = parts.into_iter().fold((S::zero(), S::zero()), |a, b| (a.0 + b.0, a.1 + b.1));
    let mut ang = s.atan2(c);
    if ang < S::zero() {
        ang += two_pi;
    }
    Ok(dom.x_lo + period * ang / two_pi)
}

/// Distance between two points on a circle of circumference `period`.
pub fn periodic_distance<S: Scalar>(a: S, b: S, period: S) -> S {
    let d = (a - b).abs() % period;
    d.min(period - d)
}

fn energy_density<S: Scalar>(m: &MaterialParams<S>, u: &[S; 6]) -> S {
    m.eps * (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]) + m.mu * (u[3] * u[3] + u[4] * u[4] + u[5] * u[5])
}

/// Central-difference Maxwell residual of a z-independent field,
/// `max(|eps dE/dt - curl H|, |mu dH/dt + curl E|)` in the max-norm.
pub fn fd_maxwell_residual<S: Scalar>(f: &dyn Fn(S, S, S) -> [S; 6], mat: &MaterialParams<S>, x: S, y: S, t: S, h: S) -> S {
    let two_h = h + h;
    let d = |a: [S; 6], b: [S; 6]| -> [S; 6] { std::array::from_fn(|k| (a[k] - b[k]) / two_h) };
    let dx = d(f(x + h, y, t), f(x - h, y, t));
    let dy = d(f(x, y + h, t), f(x, y - h, t));
    let dt = d(f(x, y, t + h), f(x, y, t - h));
    // curl of (a1, a2, a3) with d/dz = 0
    let curl = |i: usize| [dy[i + 2], -dx[i + 2], dx[i + 1] - dy[i]];
    let ch = curl(3);
    let ce = curl(0);
    (0..3)
        .map(|k| (mat.eps * dt[k] - ch[k]).abs().max((mat.mu * dt[k + 3] + ce[k]).abs()))
        .fold(S::zero(), S::max)
}
