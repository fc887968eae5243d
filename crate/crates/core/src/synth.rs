//! Deterministic synthetic test images, used by the CLI for generated
//! inputs and by the test suites in place of shipped photographs.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Image;

/// Single bright pixel at the image center on a black field.
pub fn impulse(n: usize) -> Image {
    let mut img = Array2::zeros((n, n));
    img[(n / 2, n / 2)] = 1.0;
    img
}

/// Flat field at `level`.
pub fn constant(n: usize, level: f64) -> Image {
    Array2::from_elem((n, n), level.clamp(0.0, 1.0))
}

/// Diagonal luminance ramp from 0 to 1.
pub fn gradient(n: usize) -> Image {
    let denom = (2 * n - 2).max(1) as f64;
    Array2::from_shape_fn((n, n), |(r, c)| (r + c) as f64 / denom)
}

/// Uniform white noise in [0, 1].
pub fn noise(n: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, n), |_| rng.gen_range(0.0..1.0))
}

/// Natural-image stand-in: octave value noise with a roughly 1/f spectrum
/// plus a few hard-edged shapes for contours, normalized into [0.02, 0.98].
pub fn scene(n: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img: Image = Array2::zeros((n, n));

    // Octave value noise, coarse octaves weighted heaviest.
    let mut cell = n / 4;
    let mut weight = 0.5;
    while cell >= 1 {
        let grid_side = n / cell + 2;
        let mut grid = Array2::zeros((grid_side, grid_side));
        grid.mapv_inplace(|_: f64| rng.gen_range(-1.0..1.0));
        for r in 0..n {
            let gy = r as f64 / cell as f64;
            let y0 = gy.floor() as usize;
            let ty = gy - y0 as f64;
            for c in 0..n {
                let gx = c as f64 / cell as f64;
                let x0 = gx.floor() as usize;
                let tx = gx - x0 as f64;
                let v00 = grid[(y0, x0)];
                let v01 = grid[(y0, x0 + 1)];
                let v10 = grid[(y0 + 1, x0)];
                let v11 = grid[(y0 + 1, x0 + 1)];
                let top = v00 + tx * (v01 - v00);
                let bottom = v10 + tx * (v11 - v10);
                img[(r, c)] += weight * (top + ty * (bottom - top));
            }
        }
        cell /= 2;
        weight *= 0.55;
    }

    // Layout structures: a bright disk, a dark rectangle, a soft ramp.
    let nf = n as f64;
    let (dy, dx, radius) = (0.38 * nf, 0.34 * nf, 0.17 * nf);
    for r in 0..n {
        for c in 0..n {
            let d = ((r as f64 - dy).powi(2) + (c as f64 - dx).powi(2)).sqrt();
            if d < radius {
                img[(r, c)] += 0.9;
            }
            if (0.55 * nf..0.82 * nf).contains(&(r as f64))
                && (0.52 * nf..0.88 * nf).contains(&(c as f64))
            {
                img[(r, c)] -= 0.7;
            }
            img[(r, c)] += 0.4 * (c as f64 / nf);
        }
    }

    // Affine-normalize into [0.02, 0.98].
    let min = img.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = img.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (max - min).max(1e-12);
    img.mapv_inplace(|v| 0.02 + 0.96 * (v - min) / span);
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_deterministic_and_in_range() {
        let a = scene(64, 7);
        let b = scene(64, 7);
        assert_eq!(a, b);
        assert!(a.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(noise(32, 1) != noise(32, 2));
        assert_eq!(impulse(16)[(8, 8)], 1.0);
        assert_eq!(impulse(16).sum(), 1.0);
        let g = gradient(16);
        assert_eq!(g[(0, 0)], 0.0);
        assert_eq!(g[(15, 15)], 1.0);
        assert_eq!(constant(8, 0.5)[(3, 4)], 0.5);
    }

    #[test]
    fn scene_has_contrast_structure() {
        let img = scene(128, 3);
        let mean = img.sum() / (128.0 * 128.0);
        let var = img.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (128.0 * 128.0);
        assert!(var > 0.01, "scene too flat: var {var}");
    }
}
