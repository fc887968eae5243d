//! A time-scalable, retina-inspired still-image codec.
//!
//! The encoder mimics the front end of the mammalian retina in three stages:
//!
//! 1. **Spatial transform** ([`transform`]): the image is analyzed by a bank
//!    of difference-of-Gaussians filters arranged on a dyadic grid plus a
//!    Gaussian low-pass residue, and each sub-band is assigned a release
//!    delay so coarse content becomes available before fine detail.
//! 2. **Inner dynamics** ([`inner`]): each coefficient magnitude drives a
//!    conductance-controlled membrane equation followed by a transient
//!    filter and a static rectifier. Sampling the response at the sub-band
//!    release time yields an invertible, time-indexed companding map that is
//!    tabulated once and applied per coefficient.
//! 3. **Spike-count quantization** ([`lif`]): the rectified current feeds a
//!    leaky integrate-and-fire unit; the number of spikes observed in the
//!    remaining time window is the transmitted symbol. Longer observation
//!    windows refine the quantizer, which is what makes the codec
//!    progressive in time.
//!
//! Decoding inverts each stage through lookup tables and reconstructs the
//! image with the dual frame of the analysis bank. [`codec`] wires the
//! stages together and defines the serialized stream, [`metrics`] provides
//! the rate/quality measurements (entropy bits-per-pixel, PSNR, mean SSIM),
//! and [`synth`] generates deterministic test images.

pub mod codec;
pub mod inner;
pub mod lif;
pub mod lut;
pub mod metrics;
pub mod synth;
pub mod transform;

pub use codec::{
    decode, encode, Codec, CodecConfig, CodecError, ConfigError, EncodedImage, StreamError,
};
pub use inner::{InnerParams, SimError, Trajectory};
pub use lif::{LifParams, SpikeCount};
pub use lut::{LutError, LutKind, LutTable};
pub use metrics::{entropy_bpp, mean_ssim, psnr, MetricsError, RateQuality};
pub use transform::{
    analyze, apply_delay, build_dog_bank, compute_duals, synthesize, DelaySchedule,
    DelayedPyramid, DoGBank, DoGParams, DoGSpec, DualBank, Pyramid, TransformError,
};

/// Grayscale image with luminance values, row-major `(row, col)` indexing.
pub type Image = ndarray::Array2<f64>;

/// Caps the global thread pool. Reads `RETINA_CODEC_THREADS` when `n` is
/// `None`. Call once at startup; later calls are ignored.
pub fn init_threads(n: Option<usize>) {
    let n = n.or_else(|| {
        std::env::var("RETINA_CODEC_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = n.filter(|&n| n > 0) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}
