//! Contrast gain control and rectification: the analog stage between the
//! image transform and the spike quantizer.
//!
//! For a constant drive current the membrane potential obeys
//!
//! ```text
//! c_m dV/dt + g(t) V = I,      g = E_tau * (g0 + lambda V^2)
//! ```
//!
//! where `E_tau` is a causal exponential kernel. The conductance grows with
//! recent activity, so large inputs are compressed (shunting inhibition).
//! The potential then passes through a transient filter `delta_0 - w E_tau`
//! and a static rectifier to become the ganglionic drive current.
//!
//! Exponential-kernel convolutions are realized by their equivalent
//! first-order state equation (`tau u' = q - u`, `u(0) = 0`), which is the
//! same causal convolution evaluated with an O(1)-per-step recursion.
//! Everything is integrated by explicit Euler; the step size is validated
//! against the time constants and accuracy is guarded by step-halving
//! tests.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lut::{LutError, LutKind, LutTable};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("step size {dt_s} exceeds the stability bound {max_s} for this time constant")]
    BadDt { dt_s: f64, max_s: f64 },
    #[error("duration must be positive and finite, got {0}")]
    BadDuration(f64),
    #[error("input magnitude must be non-negative and finite, got {0}")]
    BadInput(f64),
    #[error("simulation state became non-finite at t = {t_s} s")]
    Diverged { t_s: f64 },
    #[error("input grid must be strictly increasing, non-negative and finite")]
    BadGrid,
    #[error(transparent)]
    Lut(#[from] LutError),
}

/// Physiological constants of the inner layers, SI units throughout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InnerParams {
    /// Membrane capacitance of the gain-control stage, farads.
    pub membrane_capacitance: f64,
    /// Resting conductance, siemens.
    pub leak_conductance: f64,
    /// Activity-dependent conductance gain (applied to V^2).
    pub feedback_gain: f64,
    /// Time constant of the conductance kernel, seconds.
    pub conductance_tau: f64,
    /// Weight of the transient (high-pass) filter.
    pub transient_weight: f64,
    /// Time constant of the transient filter, seconds.
    pub transient_tau: f64,
    /// Rectifier output at the knee, amperes.
    pub rectifier_base: f64,
    /// Rectifier knee potential, volts.
    pub rectifier_knee: f64,
    /// Rectifier slope above the knee, siemens.
    pub rectifier_slope: f64,
}

impl Default for InnerParams {
    fn default() -> Self {
        InnerParams {
            membrane_capacitance: 1.5e-10,
            leak_conductance: 8e-10,
            feedback_gain: 9e-7,
            conductance_tau: 12e-3,
            transient_weight: 0.8,
            transient_tau: 16e-3,
            rectifier_base: 15e-12,
            rectifier_knee: 4e-3,
            rectifier_slope: 12e-9,
        }
    }
}

impl InnerParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let all = [
            self.membrane_capacitance,
            self.leak_conductance,
            self.feedback_gain,
            self.conductance_tau,
            self.transient_weight,
            self.transient_tau,
            self.rectifier_base,
            self.rectifier_knee,
            self.rectifier_slope,
        ];
        if all.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(SimError::BadInput(f64::NAN));
        }
        Ok(())
    }
}

/// Uniformly sampled time course; `samples[m]` is the value at
/// `t0 + m * dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt_s: f64,
    pub t0_s: f64,
    pub samples: Vec<f64>,
}

impl Trajectory {
    pub fn last(&self) -> f64 {
        *self.samples.last().expect("trajectory is never empty")
    }
}

/// Integrates the membrane equation for a constant input current applied
/// from `t = 0`, starting at rest. Returns the potential sampled at every
/// step up to `t_end_s`.
pub fn simulate_bipolar(
    i_mag: f64,
    t_end_s: f64,
    dt_s: f64,
    p: &InnerParams,
) -> Result<Trajectory, SimError> {
    if !i_mag.is_finite() || i_mag < 0.0 {
        return Err(SimError::BadInput(i_mag));
    }
    if !t_end_s.is_finite() || t_end_s <= 0.0 {
        return Err(SimError::BadDuration(t_end_s));
    }
    let max_dt = p.conductance_tau / 100.0;
    if !(dt_s > 0.0) || dt_s > max_dt {
        return Err(SimError::BadDt {
            dt_s,
            max_s: max_dt,
        });
    }

    let steps = (t_end_s / dt_s).round().max(1.0) as usize;
    let mut samples = Vec::with_capacity(steps + 1);
    let mut v = 0.0f64;
    let mut g = 0.0f64; // E_tau * Q(V), zero history before onset
    samples.push(v);
    for m in 0..steps {
        let q = p.leak_conductance + p.feedback_gain * v * v;
        let dv = (i_mag - g * v) / p.membrane_capacitance;
        let dg = (q - g) / p.conductance_tau;
        v += dt_s * dv;
        g += dt_s * dg;
        if !v.is_finite() || !g.is_finite() {
            return Err(SimError::Diverged {
                t_s: (m + 1) as f64 * dt_s,
            });
        }
        samples.push(v);
    }
    Ok(Trajectory {
        dt_s,
        t0_s: 0.0,
        samples,
    })
}

/// Static rectifier mapping potential to ganglionic current: linear above
/// the knee, a smooth hyperbolic floor below it. Continuous at the knee,
/// strictly increasing, always positive.
pub fn rectifier(v: f64, p: &InnerParams) -> f64 {
    let dv = v - p.rectifier_knee;
    if dv >= 0.0 {
        p.rectifier_base + p.rectifier_slope * dv
    } else {
        let denominator = p.rectifier_base - p.rectifier_slope * dv;
        debug_assert!(denominator > 0.0);
        p.rectifier_base * p.rectifier_base / denominator
    }
}

/// Applies the transient filter and the rectifier to a membrane potential
/// trajectory, yielding the ganglionic current trajectory.
pub fn simulate_ganglionic(vb: &Trajectory, p: &InnerParams) -> Result<Trajectory, SimError> {
    let max_dt = p.transient_tau / 100.0;
    if vb.dt_s > max_dt {
        return Err(SimError::BadDt {
            dt_s: vb.dt_s,
            max_s: max_dt,
        });
    }
    let mut low = 0.0f64; // E_tau * V
    let mut samples = Vec::with_capacity(vb.samples.len());
    for (m, &v) in vb.samples.iter().enumerate() {
        let filtered = v - p.transient_weight * low;
        let i = rectifier(filtered, p);
        if !i.is_finite() {
            return Err(SimError::Diverged {
                t_s: m as f64 * vb.dt_s,
            });
        }
        samples.push(i);
        low += vb.dt_s * (v - low) / p.transient_tau;
    }
    Ok(Trajectory {
        dt_s: vb.dt_s,
        t0_s: vb.t0_s,
        samples,
    })
}

/// Runs the full inner stage for one input magnitude and returns the
/// ganglionic current at `t_end_s`.
pub fn inner_response(
    i_mag: f64,
    t_end_s: f64,
    dt_s: f64,
    p: &InnerParams,
) -> Result<f64, SimError> {
    let vb = simulate_bipolar(i_mag, t_end_s, dt_s, p)?;
    let ig = simulate_ganglionic(&vb, p)?;
    Ok(ig.last())
}

/// Tabulates the companding map at release time `t_k`: input magnitude on
/// `grid` (amperes) to ganglionic current (amperes). The map must come out
/// non-decreasing or the premise of inversion is broken and an error names
/// the offending interval.
pub fn build_cg_lut(
    t_k_s: f64,
    grid: &[f64],
    p: &InnerParams,
    dt_s: f64,
    digest: u64,
) -> Result<LutTable, SimError> {
    if grid.len() < 2
        || grid[0] < 0.0
        || grid.iter().any(|v| !v.is_finite())
        || grid.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(SimError::BadGrid);
    }
    let ys = grid
        .par_iter()
        .map(|&mag| inner_response(mag, t_k_s, dt_s, p))
        .collect::<Result<Vec<f64>, SimError>>()?;
    for (w, x) in ys.windows(2).zip(grid.windows(2)) {
        if w[1] < w[0] {
            return Err(SimError::Lut(LutError::NonMonotonicY {
                x0: x[0],
                x1: x[1],
                y0: w[0],
                y1: w[1],
            }));
        }
    }
    Ok(LutTable::new(
        t_k_s,
        grid.to_vec(),
        ys,
        LutKind::Forward,
        digest,
    )?)
}

/// Uniform grid of `samples` points on `[0, i_max]`.
pub fn uniform_grid(i_max: f64, samples: usize) -> Vec<f64> {
    let m = samples.max(2);
    (0..m)
        .map(|i| i_max * i as f64 / (m - 1) as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const PA: f64 = 1e-12;

    fn p() -> InnerParams {
        InnerParams::default()
    }

    fn rel_diff(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn zero_input_stays_at_rest() {
        let vb = simulate_bipolar(0.0, 50e-3, 1e-5, &p()).unwrap();
        assert!(vb.samples.iter().all(|&v| v == 0.0));
        let ig = simulate_ganglionic(&vb, &p()).unwrap();
        let n0 = rectifier(0.0, &p());
        assert!(ig.samples.iter().all(|&i| i == n0));
    }

    #[test]
    fn dt_halving_converges() {
        let v1 = simulate_bipolar(100.0 * PA, 50e-3, 1e-5, &p()).unwrap().last();
        let v2 = simulate_bipolar(100.0 * PA, 50e-3, 5e-6, &p()).unwrap().last();
        assert!(rel_diff(v1, v2) <= 1e-4, "rel diff {}", rel_diff(v1, v2));
    }

    #[test]
    fn gain_control_is_compressive() {
        let v1 = simulate_bipolar(50.0 * PA, 30e-3, 1e-5, &p()).unwrap().last();
        let v2 = simulate_bipolar(100.0 * PA, 30e-3, 1e-5, &p()).unwrap().last();
        assert!(v2 < 2.0 * v1, "v(2I)={v2} vs 2 v(I)={}", 2.0 * v1);
    }

    #[test]
    fn compressive_over_a_grid_of_gains_and_magnitudes() {
        for &t in &[10e-3, 30e-3, 50e-3] {
            for &mag in &[20.0 * PA, 50.0 * PA, 100.0 * PA, 200.0 * PA] {
                let base = simulate_bipolar(mag, t, 1e-5, &p()).unwrap().last();
                for &a in &[1.5, 2.0, 4.0] {
                    let scaled = simulate_bipolar(a * mag, t, 1e-5, &p()).unwrap().last();
                    assert!(
                        scaled <= a * base * (1.0 + 1e-12),
                        "t={t} mag={mag} a={a}: {scaled} > {}",
                        a * base
                    );
                }
            }
        }
    }

    #[test]
    fn rectifier_matches_footnote_values() {
        let params = p();
        // Knee value is the base current.
        assert!((rectifier(4e-3, &params) - 15e-12).abs() < 1e-24);
        // One millivolt above the knee adds slope * dv.
        assert!((rectifier(5e-3, &params) - 27e-12).abs() < 1e-24);
        // Far below the knee the output approaches zero from above.
        let far = rectifier(-1e3, &params);
        assert!(far > 0.0 && far < 1e-16);
    }

    #[test]
    fn rectifier_is_continuous_and_monotone() {
        let params = p();
        let eps = 1e-9;
        let gap = (rectifier(4e-3 - eps, &params) - rectifier(4e-3 + eps, &params)).abs();
        assert!(gap <= 1e-15, "gap {gap}");
        let mut prev = f64::NEG_INFINITY;
        for i in -2000..=2000 {
            let v = i as f64 * 1e-5;
            let out = rectifier(v, &params);
            assert!(out > prev, "not increasing at v={v}");
            prev = out;
        }
    }

    #[test]
    fn ganglionic_constant_zero_is_flat() {
        let vb = Trajectory {
            dt_s: 1e-5,
            t0_s: 0.0,
            samples: vec![0.0; 1000],
        };
        let ig = simulate_ganglionic(&vb, &p()).unwrap();
        let n0 = rectifier(0.0, &p());
        assert!(ig.samples.iter().all(|&v| v == n0));
    }

    #[test]
    fn ganglionic_without_transient_is_pointwise_rectification() {
        // transient_weight = 0 turns the filter into the identity.
        let mut params = p();
        params.transient_weight = 0.0;
        let vb = simulate_bipolar(150.0 * PA, 40e-3, 1e-5, &params).unwrap();
        let ig = simulate_ganglionic(&vb, &params).unwrap();
        for (v, i) in vb.samples.iter().zip(&ig.samples) {
            assert_eq!(*i, rectifier(*v, &params));
        }
    }

    #[test]
    fn step_response_overshoots_then_settles() {
        // Closed form for a constant potential step V_s: the filtered value
        // is V_s (1 - w (1 - exp(-t/tau))), decaying from V_s toward
        // (1 - w) V_s.
        let params = p();
        let v_step = 10e-3;
        let dt = 1e-5;
        let steps = 16_000; // 160 ms >> tau_g
        let vb = Trajectory {
            dt_s: dt,
            t0_s: 0.0,
            samples: vec![v_step; steps + 1],
        };
        let ig = simulate_ganglionic(&vb, &params).unwrap();
        assert!((ig.samples[0] - rectifier(v_step, &params)).abs() < 1e-24);
        let expected_late =
            rectifier(v_step * (1.0 - params.transient_weight), &params);
        assert!(rel_diff(ig.last(), expected_late) < 1e-3);
        // Closed-form comparison at a mid-course time.
        let m = 800; // t = 8 ms
        let t = m as f64 * dt;
        let filtered = v_step
            * (1.0
                - params.transient_weight * (1.0 - (-t / params.transient_tau).exp()));
        assert!(rel_diff(ig.samples[m], rectifier(filtered, &params)) < 1e-3);
        // Overshoot: early output exceeds the late plateau.
        assert!(ig.samples[0] > ig.last());
    }

    #[test]
    fn cg_lut_starts_at_rest_output_and_varies_with_time() {
        let params = p();
        let grid = uniform_grid(400.0 * PA, 256);
        let lut5 = build_cg_lut(5e-3, &grid, &params, 1e-5, 0).unwrap();
        assert_eq!(lut5.ys[0], rectifier(0.0, &params));
        let lut6 = build_cg_lut(6e-3, &grid, &params, 1e-5, 0).unwrap();
        let max_gap = lut5
            .ys
            .iter()
            .zip(&lut6.ys)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_gap > 0.0, "maps at distinct release times must differ");
    }

    #[test]
    fn cg_lut_refined_grid_agrees_with_coarse_interpolation() {
        let params = p();
        let coarse = build_cg_lut(8e-3, &uniform_grid(400.0 * PA, 256), &params, 1e-5, 0).unwrap();
        let fine = build_cg_lut(8e-3, &uniform_grid(400.0 * PA, 512), &params, 1e-5, 0).unwrap();
        for (x, y) in fine.xs.iter().zip(&fine.ys) {
            let interp = coarse.eval(*x);
            assert!(
                rel_diff(interp, *y) <= 1e-3,
                "x={x}: fine {y} vs coarse {interp}"
            );
        }
    }

    #[test]
    fn cg_lut_rejects_bad_grids() {
        let params = p();
        assert!(matches!(
            build_cg_lut(5e-3, &[0.0], &params, 1e-5, 0),
            Err(SimError::BadGrid)
        ));
        assert!(matches!(
            build_cg_lut(5e-3, &[0.0, 1.0 * PA, 1.0 * PA], &params, 1e-5, 0),
            Err(SimError::BadGrid)
        ));
        assert!(matches!(
            build_cg_lut(5e-3, &[-1.0 * PA, 1.0 * PA], &params, 1e-5, 0),
            Err(SimError::BadGrid)
        ));
    }

    #[test]
    fn high_magnitudes_are_emphasized() {
        // Secant slope over the top decile of the grid exceeds the secant
        // over the bottom decile: the compander favors strong activations.
        let params = p();
        let i_max = 1.4e-9;
        let grid = uniform_grid(i_max, 512);
        for &t_k in &[5e-3, 9e-3, 13e-3] {
            let lut = build_cg_lut(t_k, &grid, &params, 1e-5, 0).unwrap();
            let m = lut.len();
            let lo = m / 10;
            let bottom = (lut.ys[lo] - lut.ys[0]) / (lut.xs[lo] - lut.xs[0]);
            let top = (lut.ys[m - 1] - lut.ys[m - 1 - lo])
                / (lut.xs[m - 1] - lut.xs[m - 1 - lo]);
            assert!(
                top > bottom,
                "t_k={t_k}: top secant {top} <= bottom secant {bottom}"
            );
        }
    }

    #[test]
    fn lut_roundtrip_within_one_grid_step() {
        let params = p();
        let grid = uniform_grid(400.0 * PA, 512);
        let step = grid[1] - grid[0];
        let lut = build_cg_lut(7e-3, &grid, &params, 1e-5, 0).unwrap();
        for i in 0..1000 {
            let x = 400.0 * PA * (i as f64 / 999.0);
            let back = lut.invert(lut.eval(x));
            assert!((back - x).abs() <= step, "x={x} back={back}");
        }
    }

    #[test]
    fn rejects_invalid_simulation_inputs() {
        let params = p();
        assert!(matches!(
            simulate_bipolar(-1.0, 1e-2, 1e-5, &params),
            Err(SimError::BadInput(_))
        ));
        assert!(matches!(
            simulate_bipolar(0.0, 0.0, 1e-5, &params),
            Err(SimError::BadDuration(_))
        ));
        assert!(matches!(
            simulate_bipolar(0.0, 1e-2, 1e-3, &params),
            Err(SimError::BadDt { .. })
        ));
        let coarse = Trajectory {
            dt_s: 1e-3,
            t0_s: 0.0,
            samples: vec![0.0; 10],
        };
        assert!(matches!(
            simulate_ganglionic(&coarse, &params),
            Err(SimError::BadDt { .. })
        ));
    }
}
