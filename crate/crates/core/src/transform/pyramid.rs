//! Image analysis on the dyadic coefficient grid and sub-band release
//! delays.
//!
//! All convolutions use mirror (half-sample symmetric) boundary extension,
//! which is periodic with period `2n`. Kernels wider than one period are
//! folded once into a `(2n) x (2n)` circular tap table at bank construction,
//! so coarse-band coefficients cost at most `4n^2` multiplies each.

use ndarray::Array2;
use rayon::prelude::*;

use super::dog::DoGBank;
use super::TransformError;
use crate::Image;

/// Release times of the sub-bands, in seconds. The DC coefficient travels
/// with the coarsest band.
#[derive(Debug, Clone, PartialEq)]
pub struct DelaySchedule {
    pub band_delays: Vec<f64>,
    pub dc_delay: f64,
}

impl DelaySchedule {
    /// Default schedule: band `k` releases at `5 ms + k * 1 ms`.
    pub fn linear(levels: usize) -> Self {
        Self::with_params(levels, 5e-3, 1e-3)
    }

    pub fn with_params(levels: usize, t0_s: f64, step_s: f64) -> Self {
        let band_delays: Vec<f64> = (0..levels).map(|k| t0_s + k as f64 * step_s).collect();
        let dc_delay = band_delays.first().copied().unwrap_or(t0_s);
        DelaySchedule {
            band_delays,
            dc_delay,
        }
    }

    pub fn levels(&self) -> usize {
        self.band_delays.len()
    }

    pub fn is_strictly_increasing(&self) -> bool {
        self.band_delays.windows(2).all(|w| w[1] > w[0])
    }

    pub fn max_delay(&self) -> f64 {
        self.band_delays
            .iter()
            .copied()
            .fold(self.dc_delay, f64::max)
    }
}

/// Analysis coefficients: one `2^k x 2^k` matrix per band plus the scalar
/// low-pass (DC) coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct Pyramid {
    pub bands: Vec<Array2<f64>>,
    pub dc: f64,
    pub delays: DelaySchedule,
}

impl Pyramid {
    pub fn zeros_like(bank: &DoGBank) -> Self {
        Pyramid {
            bands: (0..bank.levels)
                .map(|k| Array2::zeros((bank.band_side(k), bank.band_side(k))))
                .collect(),
            dc: 0.0,
            delays: DelaySchedule::linear(bank.levels),
        }
    }

    pub fn levels(&self) -> usize {
        self.bands.len()
    }
}

/// A pyramid after the release gate at time `t`: bands whose delay has not
/// elapsed are absent, not zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayedPyramid {
    pub bands: Vec<Option<Array2<f64>>>,
    pub dc: Option<f64>,
    pub t: f64,
}

impl DelayedPyramid {
    pub fn released_levels(&self) -> Vec<usize> {
        self.bands
            .iter()
            .enumerate()
            .filter_map(|(k, b)| b.as_ref().map(|_| k))
            .collect()
    }
}

/// Gates the pyramid at observation time `t`: band `k` is present iff
/// `t >= t_k`, the DC iff `t >= dc_delay`. Negative `t` releases nothing.
pub fn apply_delay(pyramid: &Pyramid, t: f64) -> DelayedPyramid {
    let bands = pyramid
        .bands
        .iter()
        .zip(&pyramid.delays.band_delays)
        .map(|(band, &t_k)| (t >= t_k).then(|| band.clone()))
        .collect();
    DelayedPyramid {
        bands,
        dc: (t >= pyramid.delays.dc_delay).then_some(pyramid.dc),
        t,
    }
}

/// Analyzes an `n x n` luminance image into its coefficient pyramid.
pub fn analyze(image: &Image, bank: &DoGBank) -> Result<Pyramid, TransformError> {
    if image.nrows() != bank.n || image.ncols() != bank.n {
        return Err(TransformError::DimensionMismatch {
            got_rows: image.nrows(),
            got_cols: image.ncols(),
            expected: bank.n,
        });
    }
    Ok(analyze_unchecked(image, bank))
}

pub(crate) fn analyze_unchecked(image: &Image, bank: &DoGBank) -> Pyramid {
    let plan = bank_plan(bank);
    let bands: Vec<Array2<f64>> = (0..bank.levels)
        .map(|k| {
            let side = bank.band_side(k);
            let kernel = &plan.bands[k];
            let mut out = Array2::zeros((side, side));
            let rows: Vec<Vec<f64>> = (0..side)
                .into_par_iter()
                .map(|i| {
                    let py = bank.lattice(k, i) as isize;
                    (0..side)
                        .map(|j| {
                            let px = bank.lattice(k, j) as isize;
                            kernel.correlate_at(image, py, px)
                        })
                        .collect()
                })
                .collect();
            for (i, row) in rows.into_iter().enumerate() {
                for (j, v) in row.into_iter().enumerate() {
                    out[(i, j)] = v;
                }
            }
            out
        })
        .collect();

    let center = bank.lattice(0, 0) as isize;
    let dc = plan.lowpass.correlate_at(image, center, center);

    Pyramid {
        bands,
        dc,
        delays: DelaySchedule::linear(bank.levels),
    }
}

/// Transpose of [`analyze`]: accumulates every coefficient times its
/// analysis atom back onto the pixel grid. Exact adjoint of the analysis
/// operator, including the DC atom.
pub(crate) fn adjoint(coeffs: &Pyramid, bank: &DoGBank) -> Image {
    let plan = bank_plan(bank);
    let mut partial: Vec<Image> = (0..bank.levels)
        .into_par_iter()
        .map(|k| {
            let mut out = Array2::zeros((bank.n, bank.n));
            let band = &coeffs.bands[k];
            let kernel = &plan.bands[k];
            let side = bank.band_side(k);
            for i in 0..side {
                let py = bank.lattice(k, i) as isize;
                for j in 0..side {
                    let c = band[(i, j)];
                    if c != 0.0 {
                        let px = bank.lattice(k, j) as isize;
                        kernel.splat_at(&mut out, py, px, c);
                    }
                }
            }
            out
        })
        .collect();

    let mut out = partial.pop().unwrap_or_else(|| Array2::zeros((bank.n, bank.n)));
    for p in partial.into_iter().rev() {
        out += &p;
    }
    if coeffs.dc != 0.0 {
        let center = bank.lattice(0, 0) as isize;
        plan.lowpass.splat_at(&mut out, center, center, coeffs.dc);
    }
    out
}

/// Mirror fold into `[0, n)`, period `2n`.
#[inline]
fn mirror(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Per-band convolution plan: raw taps when the kernel fits inside one
/// mirror period, otherwise taps pre-folded onto the `(2n) x (2n)` torus.
pub(super) enum PlanKernel {
    Direct { taps: Array2<f64>, radius: usize },
    Folded { taps: Array2<f64> },
}

impl PlanKernel {
    fn build(kernel: &Array2<f64>, n: usize) -> Self {
        let side = kernel.nrows();
        let radius = side / 2;
        if side < 2 * n {
            PlanKernel::Direct {
                taps: kernel.clone(),
                radius,
            }
        } else {
            let period = 2 * n;
            let mut taps = Array2::zeros((period, period));
            for r in 0..side {
                let fy = (r as isize - radius as isize).rem_euclid(period as isize) as usize;
                for c in 0..side {
                    let fx = (c as isize - radius as isize).rem_euclid(period as isize) as usize;
                    taps[(fy, fx)] += kernel[(r, c)];
                }
            }
            PlanKernel::Folded { taps }
        }
    }

    /// Correlation of the kernel centered at `(py, px)` with the mirrored
    /// image.
    fn correlate_at(&self, image: &Image, py: isize, px: isize) -> f64 {
        let n = image.nrows();
        let mut acc = 0.0;
        match self {
            PlanKernel::Direct { taps, radius } => {
                let r = *radius as isize;
                for (ty, dy) in (-r..=r).enumerate() {
                    let y = mirror(py + dy, n);
                    let row = taps.row(ty);
                    for (tx, dx) in (-r..=r).enumerate() {
                        acc += row[tx] * image[(y, mirror(px + dx, n))];
                    }
                }
            }
            PlanKernel::Folded { taps } => {
                for vy in 0..taps.nrows() {
                    let y = mirror(py + vy as isize, n);
                    let row = taps.row(vy);
                    for vx in 0..taps.ncols() {
                        acc += row[vx] * image[(y, mirror(px + vx as isize, n))];
                    }
                }
            }
        }
        acc
    }

    /// Transpose of [`Self::correlate_at`]: adds `value` times the atom
    /// centered at `(py, px)` into `out`.
    fn splat_at(&self, out: &mut Image, py: isize, px: isize, value: f64) {
        let n = out.nrows();
        match self {
            PlanKernel::Direct { taps, radius } => {
                let r = *radius as isize;
                for (ty, dy) in (-r..=r).enumerate() {
                    let y = mirror(py + dy, n);
                    let row = taps.row(ty);
                    for (tx, dx) in (-r..=r).enumerate() {
                        out[(y, mirror(px + dx, n))] += value * row[tx];
                    }
                }
            }
            PlanKernel::Folded { taps } => {
                for vy in 0..taps.nrows() {
                    let y = mirror(py + vy as isize, n);
                    let row = taps.row(vy);
                    for vx in 0..taps.ncols() {
                        out[(y, mirror(px + vx as isize, n))] += value * row[vx];
                    }
                }
            }
        }
    }
}

pub(super) struct AnalysisPlan {
    pub bands: Vec<PlanKernel>,
    pub lowpass: PlanKernel,
}

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

type PlanKey = (usize, u64, u64, u64, u64);

// Plans are cached per bank geometry so repeated analyze/adjoint calls (the
// conjugate-gradient hot path) do not re-fold coarse kernels.
static PLAN_CACHE: OnceLock<Mutex<HashMap<PlanKey, Arc<AnalysisPlan>>>> = OnceLock::new();

fn plan_key(bank: &DoGBank) -> PlanKey {
    (
        bank.n,
        bank.params.base_sigma.to_bits(),
        bank.params.weight_center.to_bits(),
        bank.params.weight_surround.to_bits(),
        bank.params.ratio.to_bits(),
    )
}

fn bank_plan(bank: &DoGBank) -> Arc<AnalysisPlan> {
    let cache = PLAN_CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = plan_key(bank);
    if let Some(plan) = cache.lock().unwrap().get(&key) {
        return Arc::clone(plan);
    }
    let plan = Arc::new(AnalysisPlan {
        bands: bank
            .specs
            .iter()
            .map(|spec| PlanKernel::build(&spec.kernel, bank.n))
            .collect(),
        lowpass: PlanKernel::build(&bank.lowpass, bank.n),
    });
    cache
        .lock()
        .unwrap()
        .entry(key)
        .or_insert_with(|| Arc::clone(&plan));
    plan
}
