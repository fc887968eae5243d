//! Codec configuration: everything both ends must agree on, plus the
//! digest that proves they do.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inner::InnerParams;
use crate::lif::LifParams;
use crate::transform::{DelaySchedule, DoGParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Default calibration gain, amperes of drive current per unit coefficient
/// magnitude. Chosen so the 99th-percentile coefficient of a mid-contrast
/// natural test image maps to about 200 pA, which places typical activity
/// on the informative part of the companding curves and yields tens of
/// spikes by 50 ms.
pub const DEFAULT_CALIBRATION_GAIN: f64 = 2.05e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodecConfig {
    /// Image side in pixels; must be a power of two, at least 8.
    pub n: usize,
    pub dog: DoGParams,
    pub inner: InnerParams,
    pub lif: LifParams,
    /// Amperes of drive current per unit coefficient magnitude.
    pub a_cal: f64,
    /// Release time of the coarsest band, seconds.
    pub delay_t0_s: f64,
    /// Release-time increment per band, seconds.
    pub delay_step_s: f64,
    /// Default observation time used by `encode`, seconds.
    pub t_obs_s: f64,
    /// Samples in each companding table.
    pub cg_lut_samples: usize,
    /// Euler step for table construction, seconds.
    pub euler_dt_s: f64,
    /// Observation windows (milliseconds) for quantizer-table export.
    pub lut_export_durations_ms: Vec<f64>,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            n: 256,
            dog: DoGParams::default(),
            inner: InnerParams::default(),
            lif: LifParams::default(),
            a_cal: DEFAULT_CALIBRATION_GAIN,
            delay_t0_s: 5e-3,
            delay_step_s: 1e-3,
            t_obs_s: 50e-3,
            cg_lut_samples: 1024,
            euler_dt_s: 1e-5,
            lut_export_durations_ms: vec![10.0, 20.0, 30.0, 40.0, 50.0],
        }
    }
}

impl CodecConfig {
    /// Configuration sized for an `n x n` image, defaults elsewhere.
    pub fn for_side(n: usize) -> Self {
        CodecConfig {
            n,
            ..CodecConfig::default()
        }
    }

    pub fn levels(&self) -> usize {
        self.n.ilog2() as usize + 1
    }

    pub fn schedule(&self) -> DelaySchedule {
        DelaySchedule::with_params(self.levels(), self.delay_t0_s, self.delay_step_s)
    }

    /// Largest drive current any coefficient can produce: magnitudes are
    /// bounded by the kernel L1 norm, `w_c + w_s`, for images in [0, 1].
    pub fn max_drive_current(&self) -> f64 {
        self.a_cal * (self.dog.weight_center.abs() + self.dog.weight_surround.abs())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.n.is_power_of_two() || self.n < 8 {
            return Err(ConfigError::Invalid(format!(
                "n must be a power of two >= 8, got {}",
                self.n
            )));
        }
        self.inner
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("inner dynamics: {e}")))?;
        self.lif
            .validate()
            .map_err(|_| ConfigError::Invalid("leaky integrate-and-fire parameters".into()))?;
        if !(self.a_cal > 0.0) || !self.a_cal.is_finite() {
            return Err(ConfigError::Invalid(format!(
                "a_cal must be positive, got {}",
                self.a_cal
            )));
        }
        if !(self.delay_t0_s > 0.0) || !(self.delay_step_s > 0.0) {
            return Err(ConfigError::Invalid(
                "delay schedule must start positive and strictly increase".into(),
            ));
        }
        if !self.t_obs_s.is_finite() || self.t_obs_s < 0.0 {
            return Err(ConfigError::Invalid(format!(
                "t_obs_s must be non-negative, got {}",
                self.t_obs_s
            )));
        }
        if self.cg_lut_samples < 256 {
            return Err(ConfigError::Invalid(format!(
                "cg_lut_samples must be at least 256, got {}",
                self.cg_lut_samples
            )));
        }
        let dt_bound = (self.inner.conductance_tau / 100.0).min(self.inner.transient_tau / 100.0);
        if !(self.euler_dt_s > 0.0) || self.euler_dt_s > dt_bound {
            return Err(ConfigError::Invalid(format!(
                "euler_dt_s must be in (0, {dt_bound}], got {}",
                self.euler_dt_s
            )));
        }
        Ok(())
    }

    /// FNV-1a digest over the canonical byte form of every field that
    /// affects the coded symbols or their inverse maps. The observation
    /// time is carried per stream, not here, and export lists are
    /// cosmetic, so neither participates.
    pub fn digest(&self) -> u64 {
        let mut h = Fnv::new();
        h.eat_u64(1); // canonical-form version
        h.eat_u64(self.n as u64);
        h.eat_f64(self.dog.base_sigma);
        h.eat_f64(self.dog.weight_center);
        h.eat_f64(self.dog.weight_surround);
        h.eat_f64(self.dog.ratio);
        h.eat_f64(self.inner.membrane_capacitance);
        h.eat_f64(self.inner.leak_conductance);
        h.eat_f64(self.inner.feedback_gain);
        h.eat_f64(self.inner.conductance_tau);
        h.eat_f64(self.inner.transient_weight);
        h.eat_f64(self.inner.transient_tau);
        h.eat_f64(self.inner.rectifier_base);
        h.eat_f64(self.inner.rectifier_knee);
        h.eat_f64(self.inner.rectifier_slope);
        h.eat_f64(self.lif.threshold);
        h.eat_f64(self.lif.leak_conductance);
        h.eat_f64(self.lif.capacitance);
        h.eat_f64(self.lif.reset_potential);
        h.eat_f64(self.a_cal);
        h.eat_f64(self.delay_t0_s);
        h.eat_f64(self.delay_step_s);
        h.eat_u64(self.cg_lut_samples as u64);
        h.eat_f64(self.euler_dt_s);
        h.finish()
    }
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf29ce484222325)
    }

    fn eat_u64(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x100000001b3);
        }
    }

    fn eat_f64(&mut self, v: f64) {
        self.eat_u64(v.to_bits());
    }

    fn finish(&self) -> u64 {
        self.0
    }
}
