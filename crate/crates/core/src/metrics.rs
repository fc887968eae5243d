//! Rate and quality measurement: entropy bits-per-pixel of the coded spike
//! counts, PSNR, and mean SSIM.

use std::collections::BTreeMap;
use thiserror::Error;

use crate::codec::EncodedImage;
use crate::Image;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("images are {a_rows}x{a_cols} and {b_rows}x{b_cols}")]
    DimensionMismatch {
        a_rows: usize,
        a_cols: usize,
        b_rows: usize,
        b_cols: usize,
    },
    #[error("image side {side} is smaller than the {window}-pixel SSIM window")]
    TooSmall { side: usize, window: usize },
}

/// One rate/quality measurement of a decoded image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateQuality {
    pub t_obs_s: f64,
    pub bpp: f64,
    pub psnr_db: f64,
    pub mean_ssim: f64,
}

impl RateQuality {
    pub fn csv_header() -> &'static str {
        "t_obs_ms,bpp,psnr_db,mean_ssim"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e}",
            self.t_obs_s * 1e3,
            self.bpp,
            self.psnr_db,
            self.mean_ssim
        )
    }
}

/// Shannon-entropy rate bound of the coded counts, in bits per pixel:
/// each band contributes its per-symbol entropy weighted by its population,
/// normalized by the pixel count. Sign is part of the symbol. The DC is a
/// one-element population and contributes nothing, as does any band that is
/// constant or not yet released.
pub fn entropy_bpp(encoded: &EncodedImage) -> f64 {
    let pixels = (encoded.n as f64) * (encoded.n as f64);
    let mut total_bits = 0.0;
    for band in encoded.bands.iter().flatten() {
        total_bits += band.len() as f64 * shannon_bits_per_symbol(band);
    }
    total_bits / pixels
}

fn shannon_bits_per_symbol(symbols: &[i32]) -> f64 {
    if symbols.len() <= 1 {
        return 0.0;
    }
    let mut histogram: BTreeMap<i32, usize> = BTreeMap::new();
    for &s in symbols {
        *histogram.entry(s).or_insert(0) += 1;
    }
    let total = symbols.len() as f64;
    histogram
        .values()
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum()
}

/// Peak signal-to-noise ratio in decibels; identical images report the
/// infinity sentinel.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64, MetricsError> {
    check_dims(a, b)?;
    let mse: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Mean structural similarity with the reference settings: 11x11 Gaussian
/// window (sigma 1.5), K1 = 0.01, K2 = 0.03, dynamic range 1.0. The map is
/// computed on fully interior windows and averaged.
pub fn mean_ssim(a: &Image, b: &Image) -> Result<f64, MetricsError> {
    check_dims(a, b)?;
    let n = a.nrows();
    if n < SSIM_WINDOW || a.ncols() < SSIM_WINDOW {
        return Err(MetricsError::TooSmall {
            side: n.min(a.ncols()),
            window: SSIM_WINDOW,
        });
    }

    let window = gaussian_window();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let half = SSIM_WINDOW / 2;
    let rows = a.nrows() - 2 * half;
    let cols = a.ncols() - 2 * half;

    let mut sum = 0.0;
    for wr in 0..rows {
        for wc in 0..cols {
            let mut mu_a = 0.0;
            let mut mu_b = 0.0;
            let mut aa = 0.0;
            let mut bb = 0.0;
            let mut ab = 0.0;
            for dy in 0..SSIM_WINDOW {
                for dx in 0..SSIM_WINDOW {
                    let w = window[dy][dx];
                    let x = a[(wr + dy, wc + dx)];
                    let y = b[(wr + dy, wc + dx)];
                    mu_a += w * x;
                    mu_b += w * y;
                    aa += w * x * x;
                    bb += w * y * y;
                    ab += w * x * y;
                }
            }
            let var_a = aa - mu_a * mu_a;
            let var_b = bb - mu_b * mu_b;
            let cov = ab - mu_a * mu_b;
            let score = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            sum += score;
        }
    }
    Ok(sum / (rows * cols) as f64)
}

fn gaussian_window() -> [[f64; SSIM_WINDOW]; SSIM_WINDOW] {
    let mut w = [[0.0; SSIM_WINDOW]; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    let inv = -0.5 / (SSIM_SIGMA * SSIM_SIGMA);
    let mut sum = 0.0;
    for (r, row) in w.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            let dy = r as f64 - half;
            let dx = c as f64 - half;
            *v = ((dy * dy + dx * dx) * inv).exp();
            sum += *v;
        }
    }
    for row in w.iter_mut() {
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    w
}

fn check_dims(a: &Image, b: &Image) -> Result<(), MetricsError> {
    if a.nrows() != b.nrows() || a.ncols() != b.ncols() {
        return Err(MetricsError::DimensionMismatch {
            a_rows: a.nrows(),
            a_cols: a.ncols(),
            b_rows: b.nrows(),
            b_cols: b.ncols(),
        });
    }
    Ok(())
}
