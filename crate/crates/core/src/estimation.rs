//! Resonance parameter estimation from recorded receive traces.
//!
//! Two-stage fit of the decaying sinusoid A exp(-t/tau) sin(2 pi f t + phi):
//! a Hann-windowed DFT peak seeds the frequency, a log-envelope line fit
//! seeds the decay, and a damped Gauss-Newton with analytic Jacobian refines
//! all four parameters.

use nalgebra::{Matrix4, Vector4};
use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Result, SimError};
use crate::trace::Trace;

/// Gauss-Newton iteration budget.
const MAX_ITERATIONS: usize = 200;
/// Convergence threshold on the scaled step norm.
const STEP_TOLERANCE: f64 = 1e-10;

/// Fitted resonance parameters for one receive window.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayFit {
    /// Oscillation frequency [Hz].
    pub frequency: f64,
    /// Amplitude at the start of the fitted trace [V].
    pub amplitude0: f64,
    /// Envelope decay constant [s].
    pub tau_decay: f64,
    /// Phase at the start of the fitted trace [rad].
    pub phase: f64,
    /// RMS of the fit residual [V].
    pub residual_rms: f64,
    pub ok: bool,
    /// Failure reason when `ok` is false.
    pub reason: Option<&'static str>,
}

impl DecayFit {
    fn failed(reason: &'static str) -> Self {
        DecayFit {
            frequency: 0.0,
            amplitude0: 0.0,
            tau_decay: 0.0,
            phase: 0.0,
            residual_rms: f64::NAN,
            ok: false,
            reason: Some(reason),
        }
    }

    /// Model value at time `t` from the trace start.
    pub fn evaluate(&self, t: f64) -> f64 {
        self.amplitude0
            * (-t / self.tau_decay).exp()
            * (2.0 * std::f64::consts::PI * self.frequency * t + self.phase).sin()
    }
}

/// Quality factor Q = pi f tau of a successful fit.
pub fn quality_factor(fit: &DecayFit) -> Result<f64> {
    if !fit.ok {
        return Err(SimError::Unsupported(
            "quality factor requested for a failed fit".into(),
        ));
    }
    Ok(std::f64::consts::PI * fit.frequency * fit.tau_decay)
}

/// Map a measured frequency to the magnet center distance via the
/// f ~ d^(-3/2) law, anchored at a calibration point.
pub fn frequency_to_gap(f: f64, calibration_f0: f64, calibration_d: f64) -> f64 {
    calibration_d * (calibration_f0 / f).powf(2.0 / 3.0)
}

/// Second-order Butterworth low-pass biquad (RBJ form).
struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
}

impl Biquad {
    fn lowpass(cutoff: f64, sample_rate: f64) -> Self {
        let w = 2.0 * std::f64::consts::PI * cutoff / sample_rate;
        let (sw, cw) = w.sin_cos();
        // Butterworth: Q = 1/sqrt(2)
        let alpha = sw / (2.0 * std::f64::consts::FRAC_1_SQRT_2);
        let a0 = 1.0 + alpha;
        Biquad {
            b0: (1.0 - cw) / 2.0 / a0,
            b1: (1.0 - cw) / a0,
            b2: (1.0 - cw) / 2.0 / a0,
            a1: -2.0 * cw / a0,
            a2: (1.0 - alpha) / a0,
        }
    }

    fn run(&self, x: &[f64]) -> Vec<f64> {
        let mut y = Vec::with_capacity(x.len());
        let (mut z1, mut z2) = (0.0, 0.0);
        for &xi in x {
            let yi = self.b0 * xi + z1;
            z1 = self.b1 * xi - self.a1 * yi + z2;
            z2 = self.b2 * xi - self.a2 * yi;
            y.push(yi);
        }
        y
    }
}

/// Blank the switch transient and low-pass the trace with zero phase shift
/// (forward-backward Butterworth with reflected padding).
///
/// `blank` seconds are dropped from the start of the trace before filtering.
pub fn preprocess(samples: &Trace, cutoff: f64, blank: f64) -> Result<Trace> {
    let fs = samples.sample_rate();
    if cutoff >= 0.5 * fs {
        return Err(SimError::invalid_field(
            "estimation.lowpass_cutoff",
            format!("cutoff {cutoff} Hz must stay below Nyquist ({} Hz)", 0.5 * fs),
        ));
    }
    if !(cutoff > 0.0) {
        return Err(SimError::invalid_field("estimation.lowpass_cutoff", "must be > 0"));
    }
    let skip = ((blank / samples.dt()).round().max(0.0) as usize).min(samples.len());
    let x = &samples.values()[skip..];
    if x.is_empty() {
        return Ok(Trace::new(
            samples.t0() + skip as f64 * samples.dt(),
            samples.dt(),
            Vec::new(),
        ));
    }

    // odd-reflection padding keeps the ends transient-free
    let pad = ((3.0 * fs / cutoff).ceil() as usize).min(x.len().saturating_sub(1));
    let mut buf = Vec::with_capacity(x.len() + 2 * pad);
    for k in (1..=pad).rev() {
        buf.push(2.0 * x[0] - x[k]);
    }
    buf.extend_from_slice(x);
    let last = x.len() - 1;
    for k in 1..=pad {
        buf.push(2.0 * x[last] - x[last - k]);
    }

    let bq = Biquad::lowpass(cutoff, fs);
    let mut y = bq.run(&buf);
    y.reverse();
    let mut y = bq.run(&y);
    y.reverse();

    let out = y[pad..pad + x.len()].to_vec();
    Ok(Trace::new(
        samples.t0() + skip as f64 * samples.dt(),
        samples.dt(),
        out,
    ))
}

/// Hann-windowed DFT peak inside the band, with parabolic refinement.
fn coarse_frequency(trace: &Trace, band: (f64, f64)) -> Option<f64> {
    let n = trace.len();
    if n < 8 {
        return None;
    }
    let fs = trace.sample_rate();
    let mut buf: Vec<Complex<f64>> = trace
        .values()
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let w = 0.5
                - 0.5 * (2.0 * std::f64::consts::PI * k as f64 / (n as f64 - 1.0)).cos();
            Complex::new(v * w, 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);

    let df = fs / n as f64;
    let k_lo = ((band.0 / df).ceil() as usize).max(1);
    let k_hi = ((band.1 / df).floor() as usize).min(n / 2 - 1);
    if k_lo > k_hi {
        return None;
    }
    let (mut k_pk, mut best) = (k_lo, 0.0);
    for k in k_lo..=k_hi {
        let m = buf[k].norm_sqr();
        if m > best {
            best = m;
            k_pk = k;
        }
    }
    if best <= 0.0 {
        return None;
    }
    // parabolic interpolation on log magnitude
    let mag = |k: usize| buf[k].norm().max(1e-300).ln();
    let delta = if k_pk > 0 && k_pk < n / 2 {
        let (a, b, c) = (mag(k_pk - 1), mag(k_pk), mag(k_pk + 1));
        let denom = a - 2.0 * b + c;
        if denom.abs() > 1e-12 {
            (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
        } else {
            0.0
        }
    } else {
        0.0
    };
    Some((k_pk as f64 + delta) * df)
}

/// Decay-constant seed from a log-linear fit of block RMS values.
fn envelope_tau(trace: &Trace) -> Option<f64> {
    let n = trace.len();
    let blocks = 16.min(n / 8).max(2);
    let len = n / blocks;
    let mut pts = Vec::new();
    let mut max_rms = 0.0f64;
    for b in 0..blocks {
        let seg = &trace.values()[b * len..(b + 1) * len];
        let rms = (seg.iter().map(|v| v * v).sum::<f64>() / seg.len() as f64).sqrt();
        max_rms = max_rms.max(rms);
        pts.push(((b as f64 + 0.5) * len as f64 * trace.dt(), rms));
    }
    let floor = 0.05 * max_rms;
    let usable: Vec<_> = pts.into_iter().filter(|&(_, r)| r > floor).collect();
    if usable.len() < 3 {
        return None;
    }
    let m = usable.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(t, r) in &usable {
        let y = r.ln();
        sx += t;
        sy += y;
        sxx += t * t;
        sxy += t * y;
    }
    let slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    if slope >= -1e-12 {
        // no measurable decay inside the window; seed with a long constant
        return Some(10.0 * trace.duration());
    }
    Some(-1.0 / slope)
}

/// Linear least squares for the in-phase/quadrature amplitudes given f, tau.
fn amplitude_phase_seed(trace: &Trace, f: f64, tau: f64) -> (f64, f64) {
    let w = 2.0 * std::f64::consts::PI * f;
    let (mut sss, mut scc, mut ssc, mut bs, mut bc) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (k, &v) in trace.values().iter().enumerate() {
        let t = k as f64 * trace.dt();
        let e = (-t / tau).exp();
        let (s, c) = (w * t).sin_cos();
        let (es, ec) = (e * s, e * c);
        sss += es * es;
        scc += ec * ec;
        ssc += es * ec;
        bs += v * es;
        bc += v * ec;
    }
    let det = sss * scc - ssc * ssc;
    if det.abs() < 1e-300 {
        return (0.0, 0.0);
    }
    let a = (bs * scc - bc * ssc) / det;
    let b = (bc * sss - bs * ssc) / det;
    ((a * a + b * b).sqrt(), b.atan2(a))
}

struct Model {
    a: f64,
    tau: f64,
    f: f64,
    phi: f64,
}

fn residual_ss(trace: &Trace, m: &Model) -> f64 {
    let w = 2.0 * std::f64::consts::PI * m.f;
    let mut ss = 0.0;
    for (k, &v) in trace.values().iter().enumerate() {
        let t = k as f64 * trace.dt();
        let r = v - m.a * (-t / m.tau).exp() * (w * t + m.phi).sin();
        ss += r * r;
    }
    ss
}

/// Damped Gauss-Newton refinement; returns the model and whether it converged.
fn gauss_newton(trace: &Trace, mut m: Model) -> (Model, bool) {
    let n = trace.len();
    let mut ss = residual_ss(trace, &m);
    for _ in 0..MAX_ITERATIONS {
        // normal equations J^T J dp = J^T r with the analytic Jacobian
        let mut jtj = Matrix4::<f64>::zeros();
        let mut jtr = Vector4::<f64>::zeros();
        let w = 2.0 * std::f64::consts::PI * m.f;
        for (k, &v) in trace.values().iter().enumerate() {
            let t = k as f64 * trace.dt();
            let e = (-t / m.tau).exp();
            let (s, c) = (w * t + m.phi).sin_cos();
            let model = m.a * e * s;
            let r = v - model;
            let j = Vector4::new(
                e * s,                                        // d/dA
                model * t / (m.tau * m.tau),                  // d/dtau
                m.a * e * c * 2.0 * std::f64::consts::PI * t, // d/df
                m.a * e * c,                                  // d/dphi
            );
            jtj += j * j.transpose();
            jtr += j * r;
        }
        let Some(delta) = jtj.lu().solve(&jtr) else {
            return (m, false);
        };

        // step-halving damping
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial = Model {
                a: m.a + lambda * delta[0],
                tau: m.tau + lambda * delta[1],
                f: m.f + lambda * delta[2],
                phi: m.phi + lambda * delta[3],
            };
            if trial.tau > 0.0 && trial.f > 0.0 {
                let trial_ss = residual_ss(trace, &trial);
                if trial_ss <= ss {
                    let scaled_step = (lambda * delta[0] / (m.a.abs() + 1e-30)).abs()
                        + (lambda * delta[1] / (m.tau.abs() + 1e-30)).abs()
                        + (lambda * delta[2] / (m.f.abs() + 1e-30)).abs()
                        + (lambda * delta[3]).abs();
                    m = trial;
                    ss = trial_ss;
                    accepted = true;
                    if scaled_step < STEP_TOLERANCE {
                        let _ = n;
                        return (m, true);
                    }
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            // no downhill step left: treat the current point as converged
            return (m, true);
        }
    }
    (m, false)
}

/// Fit a decaying sinusoid to `samples` with the spectral peak restricted to
/// `search_band` [Hz].
///
/// The phase is referenced to the first sample of the trace.
pub fn estimate_decay(samples: &Trace, search_band: (f64, f64)) -> DecayFit {
    let fs = samples.sample_rate();
    if search_band.0 <= 0.0 || search_band.1 <= search_band.0 {
        return DecayFit::failed("invalid search band");
    }
    if search_band.1 >= 0.5 * fs {
        return DecayFit::failed("search band beyond Nyquist");
    }
    // at least 10 oscillation periods at the low band edge
    if samples.duration() * search_band.0 < 10.0 {
        return DecayFit::failed("trace too short");
    }
    if samples.values().iter().all(|&v| v == 0.0) {
        return DecayFit::failed("all-zero trace");
    }

    let Some(f_seed) = coarse_frequency(samples, search_band) else {
        return DecayFit::failed("no spectral peak in band");
    };
    let tau_seed = envelope_tau(samples).unwrap_or(samples.duration());
    let (a_seed, phi_seed) = amplitude_phase_seed(samples, f_seed, tau_seed);
    if a_seed <= 0.0 {
        return DecayFit::failed("no oscillatory content");
    }

    let (m, converged) = gauss_newton(
        samples,
        Model {
            a: a_seed,
            tau: tau_seed,
            f: f_seed,
            phi: phi_seed,
        },
    );

    // canonical form: positive amplitude, phase in (-pi, pi]
    let (mut a, mut phi) = (m.a, m.phi);
    if a < 0.0 {
        a = -a;
        phi += std::f64::consts::PI;
    }
    phi = phi.rem_euclid(2.0 * std::f64::consts::PI);
    if phi > std::f64::consts::PI {
        phi -= 2.0 * std::f64::consts::PI;
    }

    let residual_rms = (residual_ss(samples, &m) / samples.len() as f64).sqrt();
    let ok = converged && a > 0.0 && m.tau > 0.0 && m.f > 0.0 && residual_rms <= 0.5 * a;
    DecayFit {
        frequency: m.f,
        amplitude0: a,
        tau_decay: m.tau,
        phase: phi,
        residual_rms,
        ok,
        reason: if ok {
            None
        } else if !converged {
            Some("no convergence within the iteration budget")
        } else {
            Some("residual too large")
        },
    }
}
