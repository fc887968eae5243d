//! Difference-of-Gaussians filter bank on a dyadic grid.
//!
//! Band `k` (k = 0 is the coarsest) holds `2^k x 2^k` filters whose surround
//! sigma halves from one level to the next, so successive bands cover
//! successively higher spatial frequencies. A unit-sum Gaussian low-pass
//! kernel carries the mean/coarse content that the zero-sum band filters
//! cannot represent.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::TransformError;

/// Tunable parameters of the analysis bank. Sigmas are in pixels, weights
/// are dimensionless.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DoGParams {
    /// Center sigma of the finest band; every coarser level doubles it.
    pub base_sigma: f64,
    pub weight_center: f64,
    pub weight_surround: f64,
    /// Surround-to-center sigma ratio, identical on every level.
    pub ratio: f64,
}

impl Default for DoGParams {
    fn default() -> Self {
        DoGParams {
            base_sigma: 0.5,
            weight_center: 1.0,
            weight_surround: 1.0,
            ratio: 3.0,
        }
    }
}

/// One band-pass filter of the bank.
#[derive(Debug, Clone)]
pub struct DoGSpec {
    /// Scale index, 0-based from the coarsest band.
    pub level: usize,
    pub sigma_center: f64,
    pub sigma_surround: f64,
    pub weight_center: f64,
    pub weight_surround: f64,
    /// Square tap matrix with odd side length; tap sum equals
    /// `weight_center - weight_surround`.
    pub kernel: Array2<f64>,
}

/// The full analysis family for an `n x n` image: `levels` DoG bands plus
/// the low-pass scaling kernel.
#[derive(Debug, Clone)]
pub struct DoGBank {
    pub specs: Vec<DoGSpec>,
    /// Unit-sum Gaussian low-pass kernel (the scaling function).
    pub lowpass: Array2<f64>,
    pub n: usize,
    pub levels: usize,
    pub params: DoGParams,
}

impl DoGBank {
    /// Coefficient grid side of band `k`: `2^k`.
    pub fn band_side(&self, k: usize) -> usize {
        1 << k
    }

    /// Sampling stride of band `k` on the pixel grid.
    pub fn band_stride(&self, k: usize) -> usize {
        self.n >> k
    }

    /// Pixel coordinate of coefficient index `i` in band `k` (same mapping
    /// on both axes): centered in each stride cell.
    pub fn lattice(&self, k: usize, i: usize) -> usize {
        let s = self.band_stride(k);
        i * s + s / 2
    }

    /// Total number of transmitted coefficients: `sum_k 4^k` plus the DC.
    pub fn coefficient_count(&self) -> usize {
        let bands: usize = (0..self.levels).map(|k| 1usize << (2 * k)).sum();
        bands + 1
    }
}

/// Builds the dyadic bank for an `n x n` image. `n` must be a power of two,
/// at least 8; the number of band levels is `log2(n) + 1`.
pub fn build_dog_bank(n: usize, params: &DoGParams) -> Result<DoGBank, TransformError> {
    if !n.is_power_of_two() {
        return Err(TransformError::NonPowerOfTwo(n));
    }
    if n < 8 {
        return Err(TransformError::SideTooSmall { got: n, min: 8 });
    }
    if !(params.ratio > 1.0) || !params.ratio.is_finite() {
        return Err(TransformError::BadRatio(params.ratio));
    }
    if !(params.base_sigma > 0.0) || !params.base_sigma.is_finite() {
        return Err(TransformError::BadSigma(params.base_sigma));
    }

    let levels = n.ilog2() as usize + 1;
    let mut specs = Vec::with_capacity(levels);
    for k in 0..levels {
        // Finest band (k = levels-1) uses base_sigma; each coarser level
        // doubles both sigmas, so sigma_surround halves going up in k.
        let sigma_center = params.base_sigma * (1u64 << (levels - 1 - k)) as f64;
        let sigma_surround = params.ratio * sigma_center;
        let kernel = dog_kernel(
            sigma_center,
            sigma_surround,
            params.weight_center,
            params.weight_surround,
        );
        debug_assert!(kernel.nrows() % 2 == 1);
        specs.push(DoGSpec {
            level: k,
            sigma_center,
            sigma_surround,
            weight_center: params.weight_center,
            weight_surround: params.weight_surround,
            kernel,
        });
    }

    let lowpass = gaussian_kernel(specs[0].sigma_surround);

    Ok(DoGBank {
        specs,
        lowpass,
        n,
        levels,
        params: *params,
    })
}

/// Truncation radius: 3 sigma per side keeps the discarded tail mass below
/// 1e-4 of the kernel.
fn kernel_radius(sigma: f64) -> usize {
    (3.0 * sigma).ceil() as usize
}

/// Square Gaussian kernel truncated at 3 sigma, normalized to unit tap sum.
pub(crate) fn gaussian_kernel(sigma: f64) -> Array2<f64> {
    gaussian_on_grid(sigma, kernel_radius(sigma))
}

fn gaussian_on_grid(sigma: f64, radius: usize) -> Array2<f64> {
    let side = 2 * radius + 1;
    let mut taps = Array2::zeros((side, side));
    let inv = -0.5 / (sigma * sigma);
    let mut sum = 0.0;
    for r in 0..side {
        let dy = r as f64 - radius as f64;
        for c in 0..side {
            let dx = c as f64 - radius as f64;
            let v = ((dy * dy + dx * dx) * inv).exp();
            taps[(r, c)] = v;
            sum += v;
        }
    }
    taps.mapv_inplace(|v| v / sum);
    taps
}

/// Weighted difference of two unit-sum Gaussians evaluated on the surround's
/// 3-sigma grid.
fn dog_kernel(sigma_center: f64, sigma_surround: f64, w_center: f64, w_surround: f64) -> Array2<f64> {
    let radius = kernel_radius(sigma_surround);
    let center = gaussian_on_grid(sigma_center, radius);
    let surround = gaussian_on_grid(sigma_surround, radius);
    let mut kernel = center;
    kernel.zip_mut_with(&surround, |c, &s| *c = w_center * *c - w_surround * s);
    kernel
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn n8_bank_has_four_levels_and_dyadic_band_sizes() {
        let bank = build_dog_bank(8, &DoGParams::default()).unwrap();
        assert_eq!(bank.levels, 4);
        let sides: Vec<usize> = (0..bank.levels).map(|k| bank.band_side(k)).collect();
        assert_eq!(sides, vec![1, 2, 4, 8]);
        // Band positions are 1 + 4 + 16 + 64; the DC residue rides on top.
        let positions: usize = sides.iter().map(|s| s * s).sum();
        assert_eq!(positions, 85);
        assert_eq!(bank.coefficient_count(), positions + 1);
    }

    #[test]
    fn gaussians_are_unit_sum() {
        let bank = build_dog_bank(16, &DoGParams::default()).unwrap();
        assert!((bank.lowpass.sum() - 1.0).abs() < 1e-10);
        for sigma in [0.5, 1.7, 12.0] {
            let g = gaussian_kernel(sigma);
            assert!((g.sum() - 1.0).abs() < 1e-10, "sigma {sigma}");
        }
    }

    #[test]
    fn kernel_tap_sum_is_weight_difference() {
        let bank = build_dog_bank(16, &DoGParams::default()).unwrap();
        for spec in &bank.specs {
            // w_c = w_s = 1 makes every band filter zero-sum.
            assert!(spec.kernel.sum().abs() < 1e-10, "level {}", spec.level);
        }
        let params = DoGParams {
            weight_center: 1.25,
            weight_surround: 0.75,
            ..DoGParams::default()
        };
        let bank = build_dog_bank(16, &params).unwrap();
        for spec in &bank.specs {
            assert!((spec.kernel.sum() - 0.5).abs() < 1e-10);
        }
    }

    #[test]
    fn sigma_progression_halves_per_level() {
        let bank = build_dog_bank(32, &DoGParams::default()).unwrap();
        assert_eq!(bank.levels, 6);
        for pair in bank.specs.windows(2) {
            assert!((pair[1].sigma_surround - 0.5 * pair[0].sigma_surround).abs() < 1e-12);
            assert!(pair[0].sigma_surround > pair[0].sigma_center);
            assert!(pair[0].sigma_center > 0.0);
        }
        let finest = bank.specs.last().unwrap();
        assert_eq!(finest.sigma_center, 0.5);
        assert_eq!(finest.sigma_surround, 1.5);
    }

    #[test]
    fn kernel_sides_are_odd_and_cover_six_sigma() {
        let bank = build_dog_bank(16, &DoGParams::default()).unwrap();
        for spec in &bank.specs {
            let side = spec.kernel.nrows();
            assert_eq!(side % 2, 1);
            assert!(side >= (6.0 * spec.sigma_surround).ceil() as usize);
            assert_eq!(spec.kernel.nrows(), spec.kernel.ncols());
        }
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(matches!(
            build_dog_bank(100, &DoGParams::default()),
            Err(TransformError::NonPowerOfTwo(100))
        ));
        assert!(matches!(
            build_dog_bank(4, &DoGParams::default()),
            Err(TransformError::SideTooSmall { got: 4, min: 8 })
        ));
        let bad_ratio = DoGParams {
            ratio: 1.0,
            ..DoGParams::default()
        };
        assert!(matches!(
            build_dog_bank(16, &bad_ratio),
            Err(TransformError::BadRatio(_))
        ));
        let bad_sigma = DoGParams {
            base_sigma: 0.0,
            ..DoGParams::default()
        };
        assert!(matches!(
            build_dog_bank(16, &bad_sigma),
            Err(TransformError::BadSigma(_))
        ));
    }
}
