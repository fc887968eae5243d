//! Leaky integrate-and-fire spike-count quantization.
//!
//! For a constant drive current the interspike interval has a closed form,
//! so spike counts never need numeric integration: currents at or below
//! `threshold * leak` never fire, anything above fires every
//! `T = -(c/g) ln(1 - threshold * g / i)` seconds and the count over a
//! window is `floor(duration / T)`.
//!
//! The quantizer map for one observation window is stored as the exact
//! current at which each count first appears (the reverse table is indexed
//! by count), so encode, decode and re-encode all agree on cell membership.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lut::{LutError, LutKind, LutTable};

/// Counts are carried as 16-bit symbols in the stream; the quantizer is
/// capped there.
pub const MAX_COUNT: u32 = 32_767;

#[derive(Debug, Error)]
pub enum LifError {
    #[error("observation duration must be non-negative and finite, got {0}")]
    BadDuration(f64),
    #[error("current grid must be strictly increasing, non-negative and finite")]
    BadGrid,
    #[error(transparent)]
    Lut(#[from] LutError),
}

/// Leaky integrate-and-fire constants, SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LifParams {
    /// Firing threshold, volts.
    pub threshold: f64,
    /// Leak conductance, siemens.
    pub leak_conductance: f64,
    /// Membrane capacitance, farads.
    pub capacitance: f64,
    /// Potential after a spike, volts.
    pub reset_potential: f64,
}

impl Default for LifParams {
    fn default() -> Self {
        LifParams {
            threshold: 2e-3,
            leak_conductance: 2e-9,
            capacitance: 1e-10,
            reset_potential: 0.0,
        }
    }
}

impl LifParams {
    pub fn validate(&self) -> Result<(), LifError> {
        let ok = self.threshold > 0.0
            && self.leak_conductance > 0.0
            && self.capacitance > 0.0
            && self.reset_potential.is_finite()
            && self.reset_potential < self.threshold
            && self.threshold.is_finite()
            && self.leak_conductance.is_finite()
            && self.capacitance.is_finite();
        if ok {
            Ok(())
        } else {
            Err(LifError::BadGrid)
        }
    }

    /// Smallest current that ever fires: the steady-state potential must
    /// exceed the threshold.
    pub fn firing_limit(&self) -> f64 {
        self.threshold * self.leak_conductance
    }
}

/// One coded symbol: the spike count of the neuron at band `level`,
/// position `(row, col)`, with its ON/OFF pathway sign. `count` is zero
/// whenever the band has not been released yet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpikeCount {
    pub count: u32,
    pub sign: i8,
    pub level: usize,
    pub row: usize,
    pub col: usize,
}

impl SpikeCount {
    pub fn signed(&self) -> i32 {
        self.count as i32 * self.sign as i32
    }
}

/// Time from reset to threshold under constant current, `None` if the
/// current never reaches threshold.
pub fn interspike_interval(i_r: f64, p: &LifParams) -> Option<f64> {
    if i_r <= p.firing_limit() {
        return None;
    }
    let g = p.leak_conductance;
    // Rise from the reset potential toward i/g, crossing the threshold at
    // T = (c/g) ln((i - g v_reset) / (i - g threshold)).
    let t = (p.capacitance / g) * ((i_r - g * p.reset_potential) / (i_r - g * p.threshold)).ln();
    Some(t)
}

/// Number of spikes emitted in `[0, duration]` for a constant current,
/// starting from the reset potential. Closed form, no integration.
pub fn lif_count(i_r: f64, duration_s: f64, p: &LifParams) -> u32 {
    if duration_s <= 0.0 {
        return 0;
    }
    match interspike_interval(i_r, p) {
        None => 0,
        Some(t) => {
            let n = (duration_s / t).floor();
            if n >= MAX_COUNT as f64 {
                MAX_COUNT
            } else {
                n as u32
            }
        }
    }
}

/// Current at which the count first reaches `n` within `duration_s`
/// (inverse of the interspike-interval relation at `T = duration / n`).
fn cell_boundary(n: u32, duration_s: f64, p: &LifParams) -> f64 {
    let g = p.leak_conductance;
    let u = (-g * duration_s / (p.capacitance * n as f64)).exp();
    g * (p.threshold - p.reset_potential * u) / (1.0 - u)
}

/// Tabulates the quantizer for one observation window. `grid` supplies the
/// current range; the table stores the exact cell boundaries: `xs[m]` is
/// the current where the count first reaches `ys[m]`, and the final knot
/// pins the top of the covered range.
pub fn build_lif_lut(
    duration_s: f64,
    grid: &[f64],
    p: &LifParams,
    digest: u64,
) -> Result<LutTable, LifError> {
    if !duration_s.is_finite() || duration_s < 0.0 {
        return Err(LifError::BadDuration(duration_s));
    }
    if grid.is_empty()
        || grid[0] < 0.0
        || grid.iter().any(|v| !v.is_finite())
        || grid.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(LifError::BadGrid);
    }
    let i_max = *grid.last().unwrap();
    let n_max = lif_count(i_max, duration_s, p);

    let mut xs = Vec::with_capacity(n_max as usize + 2);
    let mut ys = Vec::with_capacity(n_max as usize + 2);
    xs.push(0.0);
    ys.push(0.0);
    for n in 1..=n_max {
        xs.push(cell_boundary(n, duration_s, p));
        ys.push(n as f64);
    }
    // Sentinel knot marking the top of the covered range, so the last cell
    // has a finite width.
    if i_max > *xs.last().unwrap() * (1.0 + 1e-15) + f64::MIN_POSITIVE {
        xs.push(i_max);
        ys.push(n_max as f64);
    }
    Ok(LutTable::new(
        duration_s,
        xs,
        ys,
        LutKind::Forward,
        digest,
    )?)
}

/// Step-function evaluation of a quantizer table built by
/// [`build_lif_lut`]: the count recorded at the largest boundary not above
/// `i_r`.
pub fn count_from_lut(lut: &LutTable, i_r: f64) -> u32 {
    if i_r < lut.xs[0] {
        return lut.ys[0] as u32;
    }
    let idx = lut.xs.partition_point(|&x| x <= i_r) - 1;
    lut.ys[idx] as u32
}

/// Reconstruction current for a spike count: the midpoint of the current
/// cell that encodes to `count` (cell centroid under a uniform prior). A
/// zero count decodes to zero current — silence means "not significant
/// yet", not "small current". Counts past the table clamp to the top cell.
pub fn decode_count(count: u32, lut: &LutTable) -> f64 {
    let n_max = *lut.ys.last().unwrap() as u32;
    let n = count.min(n_max);
    if n == 0 {
        return 0.0;
    }
    let idx = lut.ys.partition_point(|&y| (y as u32) < n);
    let lower = lut.xs[idx];
    let upper = if idx + 1 < lut.xs.len() {
        lut.xs[idx + 1]
    } else {
        lut.xs[idx]
    };
    0.5 * (lower + upper)
}
