//! Receive chain: LNA gain/noise/clipping and ADC sampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, SimError};
use crate::trace::Trace;

/// Low-noise amplifier model.
#[derive(Debug, Clone, PartialEq)]
pub struct LnaConfig {
    /// Voltage gain [V/V].
    pub gain: f64,
    /// Input-referred white noise density [V/sqrt(Hz)].
    pub input_noise_density: f64,
    /// Input protection-diode clamp level [V].
    pub clip_level: f64,
    /// Noise bandwidth [Hz].
    pub bandwidth: f64,
}

impl Default for LnaConfig {
    fn default() -> Self {
        LnaConfig {
            gain: 100.0,
            input_noise_density: 1e-9,
            clip_level: 0.7,
            bandwidth: 25e3,
        }
    }
}

impl LnaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gain > 0.0) {
            return Err(SimError::invalid_field("acquisition.lna_gain", "must be > 0"));
        }
        if self.input_noise_density < 0.0 {
            return Err(SimError::invalid_field(
                "acquisition.lna_noise_density",
                "must be >= 0",
            ));
        }
        if !(self.clip_level > 0.0) {
            return Err(SimError::invalid_field("acquisition.lna_clip_level", "must be > 0"));
        }
        if !(self.bandwidth > 0.0) {
            return Err(SimError::invalid_field("acquisition.lna_bandwidth", "must be > 0"));
        }
        Ok(())
    }

    /// Output-referred RMS noise for the configured bandwidth [V].
    pub fn output_noise_rms(&self) -> f64 {
        self.input_noise_density * self.bandwidth.sqrt() * self.gain
    }
}

/// ADC model: mid-tread uniform quantizer with saturation.
#[derive(Debug, Clone, PartialEq)]
pub struct AdcConfig {
    pub bits: u32,
    /// Effective (decimated) sample rate [Hz].
    pub sample_rate: f64,
    /// Full-scale input [V]; codes span +/- full_scale.
    pub full_scale: f64,
    pub rng_seed: u64,
}

impl Default for AdcConfig {
    fn default() -> Self {
        AdcConfig {
            bits: 14,
            sample_rate: 50e3,
            full_scale: 1.0,
            rng_seed: 1,
        }
    }
}

impl AdcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bits < 1 || self.bits > 31 {
            return Err(SimError::invalid_field("acquisition.adc_bits", "must be in 1..=31"));
        }
        if !(self.sample_rate > 0.0) {
            return Err(SimError::invalid_field("acquisition.adc_sample_rate", "must be > 0"));
        }
        if !(self.full_scale > 0.0) {
            return Err(SimError::invalid_field("acquisition.adc_full_scale", "must be > 0"));
        }
        Ok(())
    }

    /// Least significant bit size [V].
    pub fn lsb(&self) -> f64 {
        self.full_scale / (1u64 << (self.bits - 1)) as f64
    }

    pub fn code_max(&self) -> i32 {
        ((1u64 << (self.bits - 1)) - 1) as i32
    }

    pub fn code_min(&self) -> i32 {
        -((1u64 << (self.bits - 1)) as i32)
    }

    /// Quantize one voltage to a code.
    pub fn quantize(&self, v: f64) -> i32 {
        let code = (v / self.lsb()).round();
        code.clamp(self.code_min() as f64, self.code_max() as f64) as i32
    }

    /// Reconstruct the voltage a code represents.
    pub fn code_to_volts(&self, code: i32) -> f64 {
        code as f64 * self.lsb()
    }
}

/// Deterministic Gaussian noise source (ChaCha8 keyed by the scenario seed).
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
    normal: Normal<f64>,
}

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        NoiseStream {
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal: Normal::new(0.0, 1.0).unwrap(),
        }
    }

    /// One standard-normal draw.
    pub fn standard(&mut self) -> f64 {
        self.normal.sample(&mut self.rng)
    }
}

/// LNA stage: clip the input against the protection diodes, apply the gain
/// and add the seeded Gaussian noise (output-referred).
pub fn amplify(v_in: &Trace, lna: &LnaConfig, noise: &mut NoiseStream) -> Trace {
    let sigma = lna.output_noise_rms();
    let values = v_in
        .values()
        .iter()
        .map(|&v| {
            let clipped = v.clamp(-lna.clip_level, lna.clip_level);
            let n = if sigma > 0.0 { sigma * noise.standard() } else { 0.0 };
            clipped * lna.gain + n
        })
        .collect();
    Trace::new(v_in.t0(), v_in.dt(), values)
}

/// ADC stage: decimate the trace to the ADC rate and quantize.
///
/// The trace step must divide the ADC sample period (the solver runs on an
/// integer subdivision of the acquisition clock).
pub fn sample(v: &Trace, adc: &AdcConfig) -> Result<Vec<i32>> {
    let adc_dt = 1.0 / adc.sample_rate;
    let ratio = adc_dt / v.dt();
    let k = ratio.round();
    if k < 1.0 || (ratio - k).abs() > 1e-6 {
        return Err(SimError::invalid_field(
            "acquisition.adc_sample_rate",
            format!(
                "trace step {} s does not divide the ADC period {} s",
                v.dt(),
                adc_dt
            ),
        ));
    }
    let k = k as usize;
    Ok(v.values().iter().step_by(k).map(|&x| adc.quantize(x)).collect())
}
