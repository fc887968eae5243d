//! Dual-frame reconstruction.
//!
//! The analysis family (all band atoms plus the low-pass atom) is an
//! overcomplete frame of the image space, not an orthonormal basis, so
//! reconstruction goes through the frame operator `S = A^T A`: the image
//! that reproduces a coefficient vector `c` is `S^-1 A^T c`, and the dual
//! atom of analysis atom `a` is `S^-1 a`.
//!
//! Two backends implement the solve behind one interface:
//!
//! * **Dense** (small images): atoms are materialized, `S` is factorized
//!   once by Cholesky, and every synthesis is a back-substitution. This is
//!   also what validation against the explicit pseudo-inverse runs on.
//! * **Iterative** (large images): matrix-free conjugate gradient on
//!   `f -> A^T A f` with a circulant (FFT-diagonal) preconditioner built
//!   from the band transfer functions. `S` is never formed.

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use super::dog::DoGBank;
use super::pyramid::{adjoint, analyze_unchecked, Pyramid};
use super::TransformError;
use crate::Image;

const SOLVE_TOLERANCE: f64 = 1e-10;
const MAX_CG_ITERATIONS: usize = 20_000;
const CONDITION_LIMIT: f64 = 1e14;

/// Image side at or below which the dense backend is chosen automatically.
const DENSE_SIDE_LIMIT: usize = 32;

#[derive(Debug, Clone, Copy)]
pub enum DualMode {
    /// Pick dense for `n <= 32`, iterative otherwise.
    Auto,
    Dense,
    Iterative,
}

#[derive(Debug, Clone, Copy)]
pub struct DualOptions {
    pub mode: DualMode,
    /// Include the low-pass (DC) atom in the frame. Disabling it with
    /// zero-sum band filters leaves the constant image unrepresentable and
    /// makes the frame operator singular.
    pub include_dc: bool,
}

impl Default for DualOptions {
    fn default() -> Self {
        DualOptions {
            mode: DualMode::Auto,
            include_dc: true,
        }
    }
}

pub struct DualBank {
    backend: Backend,
    n: usize,
    levels: usize,
    include_dc: bool,
}

impl std::fmt::Debug for DualBank {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DualBank")
            .field(
                "backend",
                &match self.backend {
                    Backend::Dense(_) => "dense",
                    Backend::Iterative(_) => "iterative",
                },
            )
            .field("n", &self.n)
            .field("levels", &self.levels)
            .field("include_dc", &self.include_dc)
            .finish()
    }
}

enum Backend {
    Dense(DenseDuals),
    Iterative(CgDuals),
}

/// Solves the frame operator system for the given bank. The returned
/// [`DualBank`] performs exact reconstruction of unquantized coefficients.
pub fn compute_duals(bank: &DoGBank) -> Result<DualBank, TransformError> {
    compute_duals_with_options(bank, DualOptions::default())
}

pub fn compute_duals_with_options(
    bank: &DoGBank,
    options: DualOptions,
) -> Result<DualBank, TransformError> {
    compute_duals_shared(Arc::new(bank.clone()), options)
}

/// Like [`compute_duals_with_options`] but shares an existing bank instead
/// of cloning it (coarse-band kernels are large).
pub(crate) fn compute_duals_shared(
    bank: Arc<DoGBank>,
    options: DualOptions,
) -> Result<DualBank, TransformError> {
    let dense = match options.mode {
        DualMode::Auto => bank.n <= DENSE_SIDE_LIMIT,
        DualMode::Dense => true,
        DualMode::Iterative => false,
    };
    let n = bank.n;
    let levels = bank.levels;
    let backend = if dense {
        Backend::Dense(DenseDuals::build(&bank, options.include_dc)?)
    } else {
        Backend::Iterative(CgDuals::build(bank, options.include_dc))
    };
    Ok(DualBank {
        backend,
        n,
        levels,
        include_dc: options.include_dc,
    })
}

/// Reconstructs an image from (possibly estimated) pyramid coefficients
/// through the dual frame.
pub fn synthesize(coeffs: &Pyramid, duals: &DualBank) -> Result<Image, TransformError> {
    duals.synthesize(coeffs)
}

impl DualBank {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Estimated condition number of the frame operator (dense backend
    /// only; measured by power iteration on the factorization).
    pub fn condition_estimate(&self) -> Option<f64> {
        match &self.backend {
            Backend::Dense(d) => Some(d.condition),
            Backend::Iterative(_) => None,
        }
    }

    pub fn synthesize(&self, coeffs: &Pyramid) -> Result<Image, TransformError> {
        self.check_shape(coeffs)?;
        match &self.backend {
            Backend::Dense(d) => d.synthesize(coeffs, self.include_dc),
            Backend::Iterative(cg) => cg.synthesize(coeffs),
        }
    }

    /// The synthesis atom paired with analysis atom `(k, i, j)`.
    pub fn dual_atom(&self, k: usize, i: usize, j: usize) -> Result<Image, TransformError> {
        if let Backend::Dense(d) = &self.backend {
            let row: usize = (0..k).map(|level| 1usize << (2 * level)).sum::<usize>()
                + i * (1 << k)
                + j;
            let dual = d.dual_row(row);
            return Ok(Array2::from_shape_vec(
                (self.n, self.n),
                dual.as_slice().to_vec(),
            )
            .expect("dual atom has n*n entries"));
        }
        let mut e = self.unit_pyramid();
        e.bands[k][(i, j)] = 1.0;
        self.synthesize(&e)
    }

    /// The synthesis atom paired with the low-pass (DC) analysis atom.
    pub fn dual_dc_atom(&self) -> Result<Image, TransformError> {
        let mut e = self.unit_pyramid();
        e.dc = 1.0;
        self.synthesize(&e)
    }

    fn unit_pyramid(&self) -> Pyramid {
        Pyramid {
            bands: (0..self.levels)
                .map(|k| Array2::zeros((1 << k, 1 << k)))
                .collect(),
            dc: 0.0,
            delays: super::pyramid::DelaySchedule::linear(self.levels),
        }
    }

    fn check_shape(&self, coeffs: &Pyramid) -> Result<(), TransformError> {
        if coeffs.levels() != self.levels {
            return Err(TransformError::ShapeMismatch {
                band: coeffs.levels(),
                got: 0,
                expected: self.levels,
            });
        }
        for (k, band) in coeffs.bands.iter().enumerate() {
            let side = 1 << k;
            if band.nrows() != side || band.ncols() != side {
                return Err(TransformError::ShapeMismatch {
                    band: k,
                    got: band.len(),
                    expected: side * side,
                });
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Dense backend
// ---------------------------------------------------------------------------

struct DenseDuals {
    /// Atoms as rows, pixel-major columns; the DC atom last when present.
    atoms: nalgebra::DMatrix<f64>,
    factor: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    condition: f64,
    n: usize,
}

impl DenseDuals {
    fn build(bank: &DoGBank, include_dc: bool) -> Result<Self, TransformError> {
        let n = bank.n;
        let pixels = n * n;
        let band_atoms: usize = (0..bank.levels).map(|k| 1usize << (2 * k)).sum();
        let rows = band_atoms + usize::from(include_dc);

        let mut atoms = nalgebra::DMatrix::zeros(rows, pixels);
        let mut row = 0;
        let mut unit = Pyramid {
            bands: (0..bank.levels)
                .map(|k| Array2::zeros((bank.band_side(k), bank.band_side(k))))
                .collect(),
            dc: 0.0,
            delays: super::pyramid::DelaySchedule::linear(bank.levels),
        };
        for k in 0..bank.levels {
            for i in 0..bank.band_side(k) {
                for j in 0..bank.band_side(k) {
                    unit.bands[k][(i, j)] = 1.0;
                    let atom = adjoint(&unit, bank);
                    unit.bands[k][(i, j)] = 0.0;
                    for (col, &v) in atom.iter().enumerate() {
                        atoms[(row, col)] = v;
                    }
                    row += 1;
                }
            }
        }
        if include_dc {
            unit.dc = 1.0;
            let atom = adjoint(&unit, bank);
            for (col, &v) in atom.iter().enumerate() {
                atoms[(row, col)] = v;
            }
        }

        Self::from_atoms(atoms, n)
    }

    /// Factorizes the frame operator of an arbitrary atom family (rows of
    /// `atoms`, one pixel per column).
    fn from_atoms(atoms: nalgebra::DMatrix<f64>, n: usize) -> Result<Self, TransformError> {
        let gram = atoms.tr_mul(&atoms);
        let factor = match nalgebra::Cholesky::new(gram.clone()) {
            Some(f) => f,
            None => {
                return Err(TransformError::SingularFrame {
                    condition: eigen_condition(gram),
                })
            }
        };

        let condition = estimate_condition(&gram, &factor);
        if !condition.is_finite() || condition > CONDITION_LIMIT {
            return Err(TransformError::SingularFrame { condition });
        }

        Ok(DenseDuals {
            atoms,
            factor,
            condition,
            n,
        })
    }

    /// Dual of the atom stored in row `row`.
    fn dual_row(&self, row: usize) -> nalgebra::DVector<f64> {
        let a = self.atoms.row(row).transpose();
        self.factor.solve(&a)
    }

    fn synthesize(&self, coeffs: &Pyramid, include_dc: bool) -> Result<Image, TransformError> {
        let mut c = nalgebra::DVector::zeros(self.atoms.nrows());
        let mut row = 0;
        for band in &coeffs.bands {
            for &v in band.iter() {
                c[row] = v;
                row += 1;
            }
        }
        if include_dc {
            c[row] = coeffs.dc;
        }
        let rhs = self.atoms.tr_mul(&c);
        let x = self.factor.solve(&rhs);
        Ok(Array2::from_shape_vec((self.n, self.n), x.as_slice().to_vec())
            .expect("solution has n*n entries"))
    }
}

fn eigen_condition(gram: nalgebra::DMatrix<f64>) -> f64 {
    let eigen = gram.symmetric_eigen();
    let max = eigen.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let min = eigen.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Largest/smallest eigenvalue estimates by (inverse) power iteration.
fn estimate_condition(
    gram: &nalgebra::DMatrix<f64>,
    factor: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
) -> f64 {
    let dim = gram.nrows();
    let seed = nalgebra::DVector::from_fn(dim, |i, _| 1.0 + (i as f64 * 0.7).sin());

    let mut v = seed.clone().normalize();
    let mut lambda_max = 0.0;
    for _ in 0..12 {
        let w = gram * &v;
        lambda_max = w.norm();
        if lambda_max == 0.0 {
            return f64::INFINITY;
        }
        v = w / lambda_max;
    }

    let mut v = seed.normalize();
    let mut growth = 0.0;
    for _ in 0..12 {
        let w = factor.solve(&v);
        growth = w.norm();
        if !growth.is_finite() || growth == 0.0 {
            return f64::INFINITY;
        }
        v = w / growth;
    }
    // growth converges to 1/lambda_min.
    lambda_max * growth
}

// ---------------------------------------------------------------------------
// Iterative backend
// ---------------------------------------------------------------------------

struct CgDuals {
    bank: Arc<DoGBank>,
    preconditioner: CirculantPreconditioner,
    include_dc: bool,
}

impl CgDuals {
    fn build(bank: Arc<DoGBank>, include_dc: bool) -> Self {
        let preconditioner = CirculantPreconditioner::build(&bank, include_dc);
        CgDuals {
            bank,
            preconditioner,
            include_dc,
        }
    }

    fn apply_frame_operator(&self, f: &Image) -> Image {
        let mut coeffs = analyze_unchecked(f, &self.bank);
        if !self.include_dc {
            coeffs.dc = 0.0;
        }
        adjoint(&coeffs, &self.bank)
    }

    fn synthesize(&self, coeffs: &Pyramid) -> Result<Image, TransformError> {
        let mut gated = coeffs.clone();
        if !self.include_dc {
            gated.dc = 0.0;
        }
        let b = adjoint(&gated, &self.bank);
        self.solve(&b)
    }

    /// Preconditioned conjugate gradient on the frame operator. Dot
    /// products are sequential so results are bit-reproducible.
    fn solve(&self, b: &Image) -> Result<Image, TransformError> {
        let n = self.bank.n;
        let b_norm = frob(b);
        if b_norm == 0.0 {
            return Ok(Array2::zeros((n, n)));
        }

        let mut x: Image = Array2::zeros((n, n));
        let mut r = b.clone();
        let mut z = self.preconditioner.apply(&r);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);

        for iteration in 0..MAX_CG_ITERATIONS {
            let q = self.apply_frame_operator(&p);
            let pq = dot(&p, &q);
            if !(pq > 0.0) {
                return Err(TransformError::SingularFrame {
                    condition: f64::INFINITY,
                });
            }
            let alpha = rz / pq;
            x.zip_mut_with(&p, |xv, &pv| *xv += alpha * pv);
            r.zip_mut_with(&q, |rv, &qv| *rv -= alpha * qv);
            let residual = frob(&r) / b_norm;
            if residual <= SOLVE_TOLERANCE {
                return Ok(x);
            }
            if iteration + 1 == MAX_CG_ITERATIONS {
                return Err(TransformError::NoConvergence {
                    iterations: iteration + 1,
                    residual,
                    tolerance: SOLVE_TOLERANCE,
                });
            }
            z = self.preconditioner.apply(&r);
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            p.zip_mut_with(&z, |pv, &zv| *pv = zv + beta * *pv);
        }
        unreachable!("loop always returns");
    }
}

fn dot(a: &Image, b: &Image) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn frob(a: &Image) -> f64 {
    dot(a, a).sqrt()
}

/// Diagonal-in-frequency approximation of the frame operator: each band
/// contributes its power spectrum scaled by its sampling density, so the
/// preconditioned operator is well clustered even though the true operator
/// mixes frequencies through subsampling and the mirror boundary.
struct CirculantPreconditioner {
    inverse_symbol: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    n: usize,
}

impl CirculantPreconditioner {
    fn build(bank: &DoGBank, include_dc: bool) -> Self {
        let n = bank.n;
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let ifft = planner.plan_fft_inverse(n);

        let mut symbol = vec![0.0f64; n * n];
        for (k, spec) in bank.specs.iter().enumerate() {
            let stride = bank.band_stride(k) as f64;
            let spectrum = power_spectrum(&spec.kernel, n, &fft);
            for (s, p) in symbol.iter_mut().zip(spectrum) {
                *s += p / (stride * stride);
            }
        }
        if include_dc {
            let spectrum = power_spectrum(&bank.lowpass, n, &fft);
            let density = 1.0 / (n * n) as f64;
            for (s, p) in symbol.iter_mut().zip(spectrum) {
                *s += p * density;
            }
        }

        let floor = symbol.iter().cloned().fold(0.0, f64::max) * 1e-14 + f64::MIN_POSITIVE;
        let inverse_symbol = symbol.iter().map(|&s| 1.0 / s.max(floor)).collect();

        CirculantPreconditioner {
            inverse_symbol,
            fft,
            ifft,
            n,
        }
    }

    fn apply(&self, r: &Image) -> Image {
        let n = self.n;
        let mut buf: Vec<Complex<f64>> = r.iter().map(|&v| Complex::new(v, 0.0)).collect();
        fft2(&mut buf, n, &self.fft);
        for (v, &inv) in buf.iter_mut().zip(&self.inverse_symbol) {
            *v *= inv;
        }
        fft2(&mut buf, n, &self.ifft);
        let scale = 1.0 / (n * n) as f64;
        Array2::from_shape_vec((n, n), buf.iter().map(|c| c.re * scale).collect())
            .expect("buffer has n*n entries")
    }
}

/// |FFT2|^2 of the kernel folded periodically onto the n x n torus.
fn power_spectrum(kernel: &Array2<f64>, n: usize, fft: &Arc<dyn Fft<f64>>) -> Vec<f64> {
    let radius = (kernel.nrows() / 2) as isize;
    let mut folded = vec![Complex::new(0.0, 0.0); n * n];
    for r in 0..kernel.nrows() {
        let fy = (r as isize - radius).rem_euclid(n as isize) as usize;
        for c in 0..kernel.ncols() {
            let fx = (c as isize - radius).rem_euclid(n as isize) as usize;
            folded[fy * n + fx] += Complex::new(kernel[(r, c)], 0.0);
        }
    }
    fft2(&mut folded, n, fft);
    folded.iter().map(|c| c.norm_sqr()).collect()
}

/// In-place 2-D FFT: transform rows, transpose, transform rows, transpose.
fn fft2(buf: &mut [Complex<f64>], n: usize, fft: &Arc<dyn Fft<f64>>) {
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for row in buf.chunks_exact_mut(n) {
        fft.process_with_scratch(row, &mut scratch);
    }
    transpose(buf, n);
    for row in buf.chunks_exact_mut(n) {
        fft.process_with_scratch(row, &mut scratch);
    }
    transpose(buf, n);
}

fn transpose(buf: &mut [Complex<f64>], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            buf.swap(i * n + j, j * n + i);
        }
    }
}
