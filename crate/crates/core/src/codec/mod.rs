//! End-to-end encode/decode pipeline and the serialized stream format.
//!
//! Encoding: analyze the image, gate the pyramid at the observation time,
//! then per released band map each coefficient magnitude through the
//! calibration gain, the band's companding table (built at its release
//! time), and the quantizer table for the remaining window. The transmitted
//! symbol is the signed spike count. Decoding inverts each stage through
//! the same tables — the stream digest guarantees both ends built them from
//! identical parameters — and reconstructs pixels through the dual frame.

mod config;
mod stream;

pub use config::{CodecConfig, ConfigError, DEFAULT_CALIBRATION_GAIN};
pub use stream::{deserialize, serialize, EncodedImage, StreamError, STREAM_MAGIC};

use ndarray::Array2;
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};
use thiserror::Error;

use crate::inner::{build_cg_lut, uniform_grid, SimError};
use crate::lif::{build_lif_lut, count_from_lut, decode_count, LifError};
use crate::lut::{LutError, LutTable};
use crate::transform::{
    analyze, apply_delay, build_dog_bank, compute_duals_shared, DelaySchedule, DoGBank, DualBank,
    DualOptions, Pyramid, TransformError,
};
use crate::Image;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Lif(#[from] LifError),
    #[error(transparent)]
    Lut(#[from] LutError),
    #[error(transparent)]
    Stream(#[from] StreamError),
}

/// Rectified drive currents after the companding stage, signed by pathway.
/// This is the quantizer's input; carrying it verbatim (bypass mode) turns
/// the codec into the pure transform chain for exactness checks.
#[derive(Debug, Clone, PartialEq)]
pub struct RectifiedCurrents {
    pub bands: Vec<Option<Array2<f64>>>,
    pub dc: Option<f64>,
    pub t_obs_s: f64,
}

/// Reusable encode/decode context: filter bank, delay schedule, lookup
/// tables and dual frame are built once and shared across calls.
pub struct Codec {
    cfg: CodecConfig,
    bank: Arc<DoGBank>,
    schedule: DelaySchedule,
    digest: u64,
    duals: OnceLock<Result<DualBank, TransformError>>,
    cg_tables: Mutex<HashMap<u64, Arc<LutTable>>>,
    lif_tables: Mutex<HashMap<u64, Arc<LutTable>>>,
    lif_top: OnceLock<Result<f64, CecError>>,
}

// Internal clonable error snapshot for OnceLock-memoized results.
type CecError = String;

impl Codec {
    pub fn new(cfg: CodecConfig) -> Result<Self, CodecError> {
        cfg.validate()?;
        let bank = Arc::new(build_dog_bank(cfg.n, &cfg.dog)?);
        let schedule = cfg.schedule();
        let digest = cfg.digest();
        Ok(Codec {
            cfg,
            bank,
            schedule,
            digest,
            duals: OnceLock::new(),
            cg_tables: Mutex::new(HashMap::new()),
            lif_tables: Mutex::new(HashMap::new()),
            lif_top: OnceLock::new(),
        })
    }

    pub fn config(&self) -> &CodecConfig {
        &self.cfg
    }

    pub fn bank(&self) -> &DoGBank {
        &self.bank
    }

    pub fn digest(&self) -> u64 {
        self.digest
    }

    pub fn schedule(&self) -> &DelaySchedule {
        &self.schedule
    }

    /// The dual frame, built lazily on first decode.
    pub fn duals(&self) -> Result<&DualBank, CodecError> {
        self.duals
            .get_or_init(|| compute_duals_shared(Arc::clone(&self.bank), DualOptions::default()))
            .as_ref()
            .map_err(|e| CodecError::Transform(e.clone()))
    }

    /// Companding table sampled at release time `t_k`.
    pub fn cg_table(&self, t_k_s: f64) -> Result<Arc<LutTable>, CodecError> {
        let key = t_k_s.to_bits();
        if let Some(t) = self.cg_tables.lock().unwrap().get(&key) {
            return Ok(Arc::clone(t));
        }
        let grid = uniform_grid(self.cfg.max_drive_current(), self.cfg.cg_lut_samples);
        let table = Arc::new(build_cg_lut(
            t_k_s,
            &grid,
            &self.cfg.inner,
            self.cfg.euler_dt_s,
            self.digest,
        )?);
        self.cg_tables
            .lock()
            .unwrap()
            .entry(key)
            .or_insert_with(|| Arc::clone(&table));
        Ok(table)
    }

    /// Largest rectified current any band can feed the quantizer: the top
    /// of every companding table in the schedule.
    fn lif_current_top(&self) -> Result<f64, CodecError> {
        let memo = self.lif_top.get_or_init(|| {
            let mut top = 0.0f64;
            for &t_k in &self.schedule.band_delays {
                let table = self.cg_table(t_k).map_err(|e| e.to_string())?;
                top = top.max(*table.ys.last().expect("tables are non-empty"));
            }
            let dc_table = self
                .cg_table(self.schedule.dc_delay)
                .map_err(|e| e.to_string())?;
            top = top.max(*dc_table.ys.last().expect("tables are non-empty"));
            Ok(top)
        });
        match memo {
            Ok(v) => Ok(*v),
            Err(e) => Err(CodecError::Config(ConfigError::Invalid(e.clone()))),
        }
    }

    /// Quantizer table for one observation window.
    pub fn lif_table(&self, duration_s: f64) -> Result<Arc<LutTable>, CodecError> {
        let key = duration_s.to_bits();
        if let Some(t) = self.lif_tables.lock().unwrap().get(&key) {
            return Ok(Arc::clone(t));
        }
        let top = self.lif_current_top()?;
        let table = Arc::new(build_lif_lut(
            duration_s,
            &[0.0, top],
            &self.cfg.lif,
            self.digest,
        )?);
        self.lif_tables
            .lock()
            .unwrap()
            .entry(key)
            .or_insert_with(|| Arc::clone(&table));
        Ok(table)
    }

    /// Encodes at the configuration's default observation time.
    pub fn encode(&self, image: &Image) -> Result<EncodedImage, CodecError> {
        self.encode_at(image, self.cfg.t_obs_s)
    }

    pub fn encode_at(&self, image: &Image, t_obs_s: f64) -> Result<EncodedImage, CodecError> {
        let currents = self.encode_currents(image, t_obs_s)?;
        self.quantize(&currents)
    }

    /// Runs the analog front half only: transform, release gate,
    /// calibration and companding. Sign rides along with the magnitude.
    pub fn encode_currents(
        &self,
        image: &Image,
        t_obs_s: f64,
    ) -> Result<RectifiedCurrents, CodecError> {
        if !t_obs_s.is_finite() || t_obs_s < 0.0 {
            return Err(ConfigError::Invalid(format!(
                "observation time must be non-negative, got {t_obs_s}"
            ))
            .into());
        }
        // Round to stream resolution up front so encode and decode agree
        // on the observation windows exactly.
        let t_obs_s = micros_to_s(s_to_micros(t_obs_s));

        let mut pyramid = analyze(image, &self.bank)?;
        pyramid.delays = self.schedule.clone();
        let gated = apply_delay(&pyramid, t_obs_s);

        let mut bands = Vec::with_capacity(self.bank.levels);
        for (k, band) in gated.bands.iter().enumerate() {
            match band {
                None => bands.push(None),
                Some(coeffs) => {
                    let cg = self.cg_table(self.schedule.band_delays[k])?;
                    bands.push(Some(coeffs.mapv(|c| {
                        let i_r = cg.eval(c.abs() * self.cfg.a_cal);
                        if c < 0.0 {
                            -i_r
                        } else {
                            i_r
                        }
                    })));
                }
            }
        }
        let dc = match gated.dc {
            None => None,
            Some(c) => {
                let cg = self.cg_table(self.schedule.dc_delay)?;
                let i_r = cg.eval(c.abs() * self.cfg.a_cal);
                Some(if c < 0.0 { -i_r } else { i_r })
            }
        };
        Ok(RectifiedCurrents {
            bands,
            dc,
            t_obs_s,
        })
    }

    /// Quantizes rectified currents into a coded stream.
    pub fn quantize(&self, currents: &RectifiedCurrents) -> Result<EncodedImage, CodecError> {
        let t_obs_s = currents.t_obs_s;
        let mut bands = Vec::with_capacity(self.bank.levels);
        for (k, band) in currents.bands.iter().enumerate() {
            match band {
                None => bands.push(None),
                Some(values) => {
                    let lif = self.lif_table(t_obs_s - self.schedule.band_delays[k])?;
                    let counts: Vec<i32> = values
                        .iter()
                        .map(|&i_r| {
                            let n = count_from_lut(&lif, i_r.abs()) as i32;
                            if i_r < 0.0 {
                                -n
                            } else {
                                n
                            }
                        })
                        .collect();
                    bands.push(Some(counts));
                }
            }
        }
        let dc = match currents.dc {
            None => None,
            Some(i_r) => {
                let lif = self.lif_table(t_obs_s - self.schedule.dc_delay)?;
                let n = count_from_lut(&lif, i_r.abs()) as i32;
                Some(if i_r < 0.0 { -n } else { n })
            }
        };
        Ok(EncodedImage {
            n: self.cfg.n as u32,
            levels: self.bank.levels as u16,
            t_obs_us: s_to_micros(t_obs_s),
            digest: self.digest,
            dc,
            bands,
        })
    }

    /// Inverts the quantizer and the companding stage, returning estimated
    /// transform coefficients (zeros where bands were not released).
    pub fn decode_pyramid(&self, encoded: &EncodedImage) -> Result<Pyramid, CodecError> {
        encoded.validate()?;
        self.check_stream(encoded)?;
        let t_obs_s = encoded.t_obs_s();

        let mut pyramid = Pyramid::zeros_like(&self.bank);
        pyramid.delays = self.schedule.clone();
        for (k, band) in encoded.bands.iter().enumerate() {
            let Some(counts) = band else { continue };
            let cg = self.cg_table(self.schedule.band_delays[k])?;
            let lif = self.lif_table(t_obs_s - self.schedule.band_delays[k])?;
            let side = self.bank.band_side(k);
            let mut out = Array2::zeros((side, side));
            for (slot, &count) in out.iter_mut().zip(counts.iter()) {
                *slot = self.invert_coefficient(count, &cg, &lif);
            }
            pyramid.bands[k] = out;
        }
        if let Some(count) = encoded.dc {
            let cg = self.cg_table(self.schedule.dc_delay)?;
            let lif = self.lif_table(t_obs_s - self.schedule.dc_delay)?;
            pyramid.dc = self.invert_coefficient(count, &cg, &lif);
        }
        Ok(pyramid)
    }

    fn invert_coefficient(&self, count: i32, cg: &LutTable, lif: &LutTable) -> f64 {
        let i_r = decode_count(count.unsigned_abs(), lif);
        let magnitude = cg.invert(i_r) / self.cfg.a_cal;
        if count < 0 {
            -magnitude
        } else {
            magnitude
        }
    }

    /// Full decode: invert every stage and synthesize pixels through the
    /// dual frame.
    pub fn decode(&self, encoded: &EncodedImage) -> Result<Image, CodecError> {
        let pyramid = self.decode_pyramid(encoded)?;
        Ok(self.duals()?.synthesize(&pyramid)?)
    }

    /// Inverse of [`Self::encode_currents`]: bypasses the quantizer and
    /// reconstructs directly from rectified currents.
    pub fn decode_currents(&self, currents: &RectifiedCurrents) -> Result<Image, CodecError> {
        let mut pyramid = Pyramid::zeros_like(&self.bank);
        pyramid.delays = self.schedule.clone();
        for (k, band) in currents.bands.iter().enumerate() {
            let Some(values) = band else { continue };
            let cg = self.cg_table(self.schedule.band_delays[k])?;
            pyramid.bands[k] = values.mapv(|i_r| {
                let magnitude = cg.invert(i_r.abs()) / self.cfg.a_cal;
                if i_r < 0.0 {
                    -magnitude
                } else {
                    magnitude
                }
            });
        }
        if let Some(i_r) = currents.dc {
            let cg = self.cg_table(self.schedule.dc_delay)?;
            let magnitude = cg.invert(i_r.abs()) / self.cfg.a_cal;
            pyramid.dc = if i_r < 0.0 { -magnitude } else { magnitude };
        }
        Ok(self.duals()?.synthesize(&pyramid)?)
    }

    fn check_stream(&self, encoded: &EncodedImage) -> Result<(), CodecError> {
        if encoded.digest != self.digest {
            return Err(StreamError::DigestMismatch {
                stream: encoded.digest,
                config: self.digest,
            }
            .into());
        }
        if encoded.n as usize != self.cfg.n {
            return Err(StreamError::BadHeader(format!(
                "stream is for n = {}, configuration says {}",
                encoded.n, self.cfg.n
            ))
            .into());
        }
        Ok(())
    }
}

fn s_to_micros(t_s: f64) -> u64 {
    (t_s * 1e6).round() as u64
}

fn micros_to_s(t_us: u64) -> f64 {
    t_us as f64 * 1e-6
}

/// One-shot encode with a fresh context.
pub fn encode(image: &Image, cfg: &CodecConfig) -> Result<EncodedImage, CodecError> {
    Codec::new(cfg.clone())?.encode(image)
}

/// One-shot decode with a fresh context.
pub fn decode(encoded: &EncodedImage, cfg: &CodecConfig) -> Result<Image, CodecError> {
    Codec::new(cfg.clone())?.decode(encoded)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics;
    use crate::synth;

    fn codec(n: usize) -> Codec {
        Codec::new(CodecConfig::for_side(n)).unwrap()
    }

    #[test]
    fn zero_image_encodes_to_silence_and_decodes_to_zero() {
        let c = codec(16);
        let image = Array2::zeros((16, 16));
        let encoded = c.encode_at(&image, 50e-3).unwrap();
        assert_eq!(encoded.dc, Some(0));
        for band in encoded.bands.iter() {
            let counts = band.as_ref().expect("all bands release by 50 ms");
            assert!(counts.iter().all(|&v| v == 0));
        }
        assert_eq!(metrics::entropy_bpp(&encoded), 0.0);
        let decoded = c.decode(&encoded).unwrap();
        assert!(decoded.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_observation_time_releases_nothing() {
        let c = codec(16);
        let encoded = c.encode_at(&synth::scene(16, 1), 0.0).unwrap();
        assert!(encoded.dc.is_none());
        assert!(encoded.bands.iter().all(|b| b.is_none()));
        // Decoding an empty stream yields the all-zero image.
        let decoded = c.decode(&encoded).unwrap();
        assert!(decoded.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encoding_is_deterministic() {
        let c = codec(32);
        let image = synth::scene(32, 5);
        let a = serialize(&c.encode_at(&image, 30e-3).unwrap()).unwrap();
        let b = serialize(&c.encode_at(&image, 30e-3).unwrap()).unwrap();
        assert_eq!(a, b);
        // A fresh context produces the identical stream.
        let c2 = codec(32);
        let d = serialize(&c2.encode_at(&image, 30e-3).unwrap()).unwrap();
        assert_eq!(a, d);
    }

    #[test]
    fn bypass_mode_is_transform_exact() {
        let c = codec(16);
        let image = synth::scene(16, 9);
        let t_obs = 50e-3; // all bands released
        let currents = c.encode_currents(&image, t_obs).unwrap();
        let rec = c.decode_currents(&currents).unwrap();
        let err = rel_l2(&rec, &image);
        assert!(err <= 1e-6, "bypass reconstruction error {err}");
    }

    #[test]
    fn digest_mismatch_is_refused() {
        let c = codec(16);
        let mut encoded = c.encode_at(&synth::scene(16, 2), 20e-3).unwrap();
        encoded.digest ^= 1;
        assert!(matches!(
            c.decode(&encoded),
            Err(CodecError::Stream(StreamError::DigestMismatch { .. }))
        ));
    }

    #[test]
    fn constant_image_with_equal_weights_is_dc_only() {
        let c = codec(16);
        let image = synth::constant(16, 0.5);
        let encoded = c.encode_at(&image, 50e-3).unwrap();
        for band in encoded.bands.iter().flatten() {
            assert!(band.iter().all(|&v| v == 0));
        }
        let dc = encoded.dc.unwrap();
        assert!(dc > 0, "DC must carry the flat field, got {dc}");
    }

    #[test]
    fn progressive_quality_improves_with_observation_time() {
        let c = codec(64);
        let image = synth::scene(64, 11);
        let mut last_psnr = 0.0;
        let mut last_bpp = -1.0;
        for &t_ms in &[20.0, 30.0, 40.0, 50.0] {
            let encoded = c.encode_at(&image, t_ms * 1e-3).unwrap();
            let decoded = c.decode(&encoded).unwrap();
            let psnr = metrics::psnr(&decoded, &image, 1.0).unwrap();
            let bpp = metrics::entropy_bpp(&encoded);
            assert!(
                psnr > last_psnr,
                "PSNR must increase: {psnr} after {last_psnr} at {t_ms} ms"
            );
            assert!(bpp > last_bpp, "bpp must increase at {t_ms} ms");
            last_psnr = psnr;
            last_bpp = bpp;
        }
        assert!(last_psnr > 20.0, "final quality too low: {last_psnr} dB");
    }

    #[test]
    fn earlier_streams_release_a_subset_of_bands() {
        let c = codec(32);
        let image = synth::scene(32, 3);
        let early = c.encode_at(&image, 7e-3).unwrap();
        let late = c.encode_at(&image, 10e-3).unwrap();
        for (a, b) in early.bands.iter().zip(late.bands.iter()) {
            if a.is_some() {
                assert!(b.is_some(), "released band disappeared at later time");
            }
        }
        let early_released = early.bands.iter().filter(|b| b.is_some()).count();
        let late_released = late.bands.iter().filter(|b| b.is_some()).count();
        assert!(early_released < late_released);
    }

    #[test]
    fn stream_roundtrip_through_bytes_decodes_identically() {
        let c = codec(16);
        let image = synth::scene(16, 4);
        let encoded = c.encode_at(&image, 25e-3).unwrap();
        let bytes = serialize(&encoded).unwrap();
        let parsed = deserialize(&bytes).unwrap();
        assert_eq!(parsed, encoded);
        let a = c.decode(&encoded).unwrap();
        let b = c.decode(&parsed).unwrap();
        assert_eq!(a, b);
    }

    fn rel_l2(a: &Image, b: &Image) -> f64 {
        let num: f64 = a
            .iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
        num / den.max(1e-300)
    }
}
