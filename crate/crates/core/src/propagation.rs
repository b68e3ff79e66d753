//! Free-space scalar propagation between parallel planes.
//!
//! [`PropagationPlan`] implements the angular spectrum method on a zero-padded
//! grid. [`rs_propagate`] is a direct Rayleigh-Sommerfeld summation used as an
//! independent reference on small grids.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{D2nnError, Result};
use crate::optics::{ComplexField, GridSpec};

pub const DEFAULT_PADDING: usize = 2;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Precomputed transfer function and FFT kernels for one propagation distance.
#[derive(Clone)]
pub struct PropagationPlan {
    grid: GridSpec,
    z: f64,
    padding_factor: usize,
    npx: usize,
    npy: usize,
    /// Transfer function in transposed (kx-major) order: `h[kx * npy + ky]`.
    transfer: Vec<Complex64>,
    fft_x: Arc<dyn Fft<f64>>,
    ifft_x: Arc<dyn Fft<f64>>,
    fft_y: Arc<dyn Fft<f64>>,
    ifft_y: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for PropagationPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PropagationPlan")
            .field("grid", &self.grid)
            .field("z", &self.z)
            .field("padding_factor", &self.padding_factor)
            .finish()
    }
}

#[derive(Default)]
struct Workspace {
    rows: Vec<Complex64>,
    cols: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

thread_local! {
    static WORKSPACE: RefCell<Workspace> = RefCell::new(Workspace::default());
}

/// Spatial frequency of FFT bin `k` on an `n`-point axis with pitch `dx`.
#[inline]
fn frequency(k: usize, n: usize, dx: f64) -> f64 {
    let signed = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    signed / (n as f64 * dx)
}

impl PropagationPlan {
    pub fn new(grid: GridSpec, z: f64, padding_factor: usize) -> Result<Self> {
        grid.validate()?;
        if !(z.is_finite() && z >= 0.0) {
            return Err(D2nnError::InvalidInput(format!(
                "propagation distance must be finite and non-negative, got {z}"
            )));
        }
        if padding_factor < 2 {
            return Err(D2nnError::InvalidInput(format!(
                "padding factor must be at least 2, got {padding_factor}"
            )));
        }
        let npx = grid.nx * padding_factor;
        let npy = grid.ny * padding_factor;

        let mut transfer = vec![ZERO; npx * npy];
        for kx in 0..npx {
            let fx = frequency(kx, npx, grid.dx);
            for ky in 0..npy {
                let fy = frequency(ky, npy, grid.dx);
                let f2 = fx * fx + fy * fy;
                // evanescent components are dropped
                if f2 < 1.0 {
                    transfer[kx * npy + ky] =
                        Complex64::from_polar(1.0, 2.0 * PI * z * (1.0 - f2).sqrt());
                }
            }
        }

        let mut planner = FftPlanner::new();
        Ok(PropagationPlan {
            grid,
            z,
            padding_factor,
            npx,
            npy,
            transfer,
            fft_x: planner.plan_fft_forward(npx),
            ifft_x: planner.plan_fft_inverse(npx),
            fft_y: planner.plan_fft_forward(npy),
            ifft_y: planner.plan_fft_inverse(npy),
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn distance(&self) -> f64 {
        self.z
    }

    pub fn padding_factor(&self) -> usize {
        self.padding_factor
    }

    /// Transfer function value at padded-grid frequency bin `(kx, ky)`.
    pub fn transfer_at(&self, kx: usize, ky: usize) -> Complex64 {
        self.transfer[kx * self.npy + ky]
    }

    pub fn propagate(&self, field: &ComplexField) -> Result<ComplexField> {
        self.checked(field, false)
    }

    /// Applies the adjoint (conjugate transpose) of [`Self::propagate`].
    pub fn propagate_adjoint(&self, field: &ComplexField) -> Result<ComplexField> {
        self.checked(field, true)
    }

    fn checked(&self, field: &ComplexField, adjoint: bool) -> Result<ComplexField> {
        self.grid.ensure_same(field.grid())?;
        if !field.is_finite() {
            return Err(D2nnError::NonFinite("propagation input"));
        }
        let mut out = vec![ZERO; self.grid.len()];
        self.apply(field.values(), adjoint, &mut out);
        Ok(ComplexField::from_parts(self.grid, out))
    }

    /// Unchecked kernel shared by the forward and adjoint operators.
    ///
    /// The input occupies the top-left `nx × ny` block of the padded grid and the
    /// output is cropped from the same block. Row transforms touch only the `ny`
    /// non-zero rows on the way in and the `ny` retained rows on the way out.
    pub(crate) fn apply(&self, input: &[Complex64], adjoint: bool, out: &mut [Complex64]) {
        let (nx, ny, npx, npy) = (self.grid.nx, self.grid.ny, self.npx, self.npy);
        debug_assert_eq!(input.len(), nx * ny);
        debug_assert_eq!(out.len(), nx * ny);

        WORKSPACE.with(|ws| {
            let ws = &mut *ws.borrow_mut();
            ws.rows.clear();
            ws.rows.resize(ny * npx, ZERO);
            ws.cols.resize(npx * npy, ZERO);
            let scratch_len = [&self.fft_x, &self.ifft_x, &self.fft_y, &self.ifft_y]
                .iter()
                .map(|f| f.get_inplace_scratch_len())
                .max()
                .unwrap_or(0);
            if ws.scratch.len() < scratch_len {
                ws.scratch.resize(scratch_len, ZERO);
            }
            let scratch = &mut ws.scratch[..scratch_len];

            for iy in 0..ny {
                ws.rows[iy * npx..iy * npx + nx].copy_from_slice(&input[iy * nx..(iy + 1) * nx]);
            }
            self.fft_x.process_with_scratch(&mut ws.rows, scratch);

            for kx in 0..npx {
                let col = &mut ws.cols[kx * npy..(kx + 1) * npy];
                for iy in 0..ny {
                    col[iy] = ws.rows[iy * npx + kx];
                }
                col[ny..].fill(ZERO);
            }
            self.fft_y.process_with_scratch(&mut ws.cols, scratch);

            if adjoint {
                for (c, h) in ws.cols.iter_mut().zip(&self.transfer) {
                    *c *= h.conj();
                }
            } else {
                for (c, h) in ws.cols.iter_mut().zip(&self.transfer) {
                    *c *= h;
                }
            }

            self.ifft_y.process_with_scratch(&mut ws.cols, scratch);
            for kx in 0..npx {
                let col = &ws.cols[kx * npy..(kx + 1) * npy];
                for iy in 0..ny {
                    ws.rows[iy * npx + kx] = col[iy];
                }
            }
            self.ifft_x.process_with_scratch(&mut ws.rows, scratch);

            let scale = 1.0 / (npx * npy) as f64;
            for iy in 0..ny {
                let src = &ws.rows[iy * npx..iy * npx + nx];
                for (o, s) in out[iy * nx..(iy + 1) * nx].iter_mut().zip(src) {
                    *o = s * scale;
                }
            }
        });
    }
}

/// Angular-spectrum propagation of `field` over distance `z`.
pub fn asm_propagate(field: &ComplexField, z: f64, padding_factor: usize) -> Result<ComplexField> {
    PropagationPlan::new(*field.grid(), z, padding_factor)?.propagate(field)
}

/// Rayleigh-Sommerfeld secondary-source kernel for a lateral offset `(dx, dy)` and axial distance `z`.
#[inline]
pub fn rs_kernel(dx: f64, dy: f64, z: f64) -> Complex64 {
    let r2 = dx * dx + dy * dy + z * z;
    let r = r2.sqrt();
    let obliquity = z / r2;
    // 1/(2πr) + 1/j
    let radial = Complex64::new(1.0 / (2.0 * PI * r), -1.0);
    radial * Complex64::from_polar(obliquity, 2.0 * PI * r)
}

/// Direct O(N²) Rayleigh-Sommerfeld summation onto the same grid at distance `z`.
pub fn rs_propagate(field: &ComplexField, z: f64) -> Result<ComplexField> {
    if !(z.is_finite() && z > 0.0) {
        return Err(D2nnError::InvalidInput(format!(
            "Rayleigh-Sommerfeld distance must be positive, got {z}"
        )));
    }
    if !field.is_finite() {
        return Err(D2nnError::NonFinite("propagation input"));
    }
    let grid = *field.grid();
    let area = grid.cell_area();
    let src = field.values();
    let mut out = vec![ZERO; grid.len()];
    for oy in 0..grid.ny {
        for ox in 0..grid.nx {
            let mut acc = ZERO;
            for sy in 0..grid.ny {
                let dy = (oy as f64 - sy as f64) * grid.dx;
                for sx in 0..grid.nx {
                    let u = src[sy * grid.nx + sx];
                    if u == ZERO {
                        continue;
                    }
                    let dx = (ox as f64 - sx as f64) * grid.dx;
                    acc += u * rs_kernel(dx, dy, z);
                }
            }
            out[oy * grid.nx + ox] = acc * area;
        }
    }
    Ok(ComplexField::from_parts(grid, out))
}

/// Radius, in wavelengths, enclosing a `threshold` fraction of the power radiated
/// onto a plane at distance `z` by a single neuron of pitch `dx`.
///
/// The neuron is treated as a point secondary source; substituting ρ = z·tanθ
/// makes the enclosed-power integral of |w|² closed-form. The result is never
/// smaller than the neuron half-width `dx/2`.
pub fn impulse_half_width(z: f64, threshold: f64, dx: f64) -> Result<f64> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(D2nnError::InvalidInput(format!(
            "threshold must lie in (0, 1), got {threshold}"
        )));
    }
    if !(dx.is_finite() && dx > 0.0) || !(z.is_finite() && z >= 0.0) {
        return Err(D2nnError::InvalidInput(format!(
            "invalid impulse geometry z={z}, dx={dx}"
        )));
    }
    let floor = dx / 2.0;
    if z == 0.0 {
        return Ok(floor);
    }
    // Enclosed fraction F(s) = (2(1-s) + c(1-s²)) / (2 + c), with s = cos²θ and c = 1/(2πz)².
    let c = 1.0 / (4.0 * PI * PI * z * z);
    let k = (1.0 - threshold) * (2.0 + c);
    let s = 2.0 * k / (2.0 + 2.0 * (1.0 + c * k).sqrt());
    let radius = z * ((1.0 - s) / s).sqrt();
    Ok(radius.max(floor))
}

/// Smooth random test field: `waves` plane waves with spatial frequencies below
/// `max_freq` (cycles per wavelength), random amplitudes and phases, under a
/// centered Gaussian envelope of `sigma` samples.
pub fn band_limited_field(grid: GridSpec, max_freq: f64, sigma: f64, waves: usize, seed: u64) -> Result<ComplexField> {
    use rand::{Rng, SeedableRng};
    grid.validate()?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let components: Vec<(f64, f64, Complex64)> = (0..waves)
        .map(|_| {
            let f = max_freq * rng.gen::<f64>().sqrt();
            let theta = rng.gen_range(0.0..2.0 * PI);
            let c = Complex64::from_polar(rng.gen_range(0.2..1.0), rng.gen_range(0.0..2.0 * PI));
            (f * theta.cos(), f * theta.sin(), c)
        })
        .collect();
    let s = sigma * grid.dx;
    ComplexField::from_fn(grid, |ix, iy| {
        let (x, y) = (grid.coord_x(ix), grid.coord_y(iy));
        let envelope = (-(x * x + y * y) / (2.0 * s * s)).exp();
        components
            .iter()
            .map(|(fx, fy, c)| c * Complex64::from_polar(1.0, 2.0 * PI * (fx * x + fy * y)))
            .sum::<Complex64>()
            * envelope
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::optics::relative_l2;

    fn grid(n: usize) -> GridSpec {
        GridSpec::square(n, 0.53).unwrap()
    }

    fn random_field(g: GridSpec, seed: u64) -> ComplexField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ComplexField::from_fn(g, |_, _| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        })
        .unwrap()
    }

    fn gaussian(g: GridSpec, sigma: f64) -> ComplexField {
        let (cx, cy) = ((g.nx as f64 - 1.0) / 2.0, (g.ny as f64 - 1.0) / 2.0);
        ComplexField::from_fn(g, |ix, iy| {
            let r2 = (ix as f64 - cx).powi(2) + (iy as f64 - cy).powi(2);
            Complex64::new((-r2 / (2.0 * sigma * sigma)).exp(), 0.0)
        })
        .unwrap()
    }

    #[test]
    fn zero_distance_is_identity_on_band_limited_input() {
        let g = grid(48);
        let u = gaussian(g, 4.0);
        let out = asm_propagate(&u, 0.0, 2).unwrap();
        assert!(relative_l2(out.values(), u.values()) < 1e-8);
    }

    #[test]
    fn dc_bin_gains_global_phase() {
        let plan = PropagationPlan::new(grid(8), 3.3, 2).unwrap();
        let h = plan.transfer_at(0, 0);
        assert!((h - Complex64::from_polar(1.0, 2.0 * PI * 3.3)).norm() < 1e-12);
    }

    #[test]
    fn plane_wave_keeps_amplitude_away_from_edges() {
        // A wide flat-top beam behaves like a plane wave near its center.
        let g = grid(64);
        let u = ComplexField::plane_wave(g);
        let z = 1.5;
        let out = asm_propagate(&u, z, 4).unwrap();
        let center = out.at(32, 32);
        let expected = Complex64::from_polar(1.0, 2.0 * PI * z);
        assert!((center - expected).norm() < 0.05, "center {center}");
    }

    #[test]
    fn rejects_bad_plans() {
        assert!(PropagationPlan::new(grid(4), -1.0, 2).is_err());
        assert!(PropagationPlan::new(grid(4), 1.0, 1).is_err());
        let plan = PropagationPlan::new(grid(4), 1.0, 2).unwrap();
        assert!(plan.propagate(&ComplexField::zeros(grid(5))).is_err());
    }

    #[test]
    fn linearity() {
        let g = grid(16);
        let plan = PropagationPlan::new(g, 4.0, 2).unwrap();
        let u = random_field(g, 2);
        let v = random_field(g, 3);
        let (a, b) = (Complex64::new(0.3, -1.2), Complex64::new(-0.7, 0.4));
        let mix = ComplexField::new(
            g,
            u.values().iter().zip(v.values()).map(|(x, y)| a * x + b * y).collect(),
        )
        .unwrap();
        let lhs = plan.propagate(&mix).unwrap();
        let pu = plan.propagate(&u).unwrap();
        let pv = plan.propagate(&v).unwrap();
        let rhs: Vec<_> = pu.values().iter().zip(pv.values()).map(|(x, y)| a * x + b * y).collect();
        assert!(relative_l2(lhs.values(), &rhs) < 1e-12);
    }

    #[test]
    fn adjoint_satisfies_inner_product_identity() {
        let g = GridSpec::new(10, 7, 0.53).unwrap();
        let plan = PropagationPlan::new(g, 2.5, 3).unwrap();
        let u = random_field(g, 4);
        let v = random_field(g, 5);
        let pu = plan.propagate(&u).unwrap();
        let pv = plan.propagate_adjoint(&v).unwrap();
        let lhs: Complex64 = pu.values().iter().zip(v.values()).map(|(a, b)| a * b.conj()).sum();
        let rhs: Complex64 = u.values().iter().zip(pv.values()).map(|(a, b)| a * b.conj()).sum();
        assert!((lhs - rhs).norm() < 1e-12 * lhs.norm().max(1.0));
    }

    #[test]
    fn rs_kernel_on_axis() {
        let z = 2.7;
        let w = rs_kernel(0.0, 0.0, z);
        let expected = (Complex64::new(1.0 / (2.0 * PI * z), 0.0) + Complex64::new(0.0, -1.0))
            * Complex64::from_polar(1.0, 2.0 * PI * z)
            / z;
        assert!((w - expected).norm() < 1e-14);
    }

    #[test]
    fn rs_kernel_symmetry() {
        for &(x, y) in &[(0.3, 1.7), (-2.0, 0.5), (4.1, -3.3)] {
            let a = rs_kernel(x, y, 4.0);
            let b = rs_kernel(-x, -y, 4.0);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn rs_rejects_zero_distance() {
        let u = random_field(grid(3), 6);
        assert!(rs_propagate(&u, 0.0).is_err());
    }

    #[test]
    fn impulse_width_limits() {
        let dx = 0.53;
        assert_eq!(impulse_half_width(0.0, 0.9, dx).unwrap(), dx / 2.0);
        assert_eq!(impulse_half_width(1e-9, 0.9, dx).unwrap(), dx / 2.0);
        let near = impulse_half_width(4.0, 0.9, dx).unwrap();
        let far = impulse_half_width(40.0, 0.9, dx).unwrap();
        assert!(far > near);
        assert!(impulse_half_width(4.0, 1.0, dx).is_err());
        assert!(impulse_half_width(4.0, 0.0, dx).is_err());
    }

    /// Midpoint-rule radial integration of |w|² as an independent check of the closed form.
    fn enclosed_fraction_numeric(z: f64, radius: f64) -> f64 {
        let mut inside = 0.0;
        let mut total = 0.0;
        let steps = 400_000;
        let rho_max = 2000.0 * z;
        // ρ = z·sinh(u) concentrates samples near the axis
        let u_max = (rho_max / z).asinh();
        let du = u_max / steps as f64;
        for i in 0..steps {
            let u = (i as f64 + 0.5) * du;
            let rho = z * u.sinh();
            let drho = z * u.cosh() * du;
            let p = rs_kernel(rho, 0.0, z).norm_sqr() * 2.0 * PI * rho * drho;
            total += p;
            if rho <= radius {
                inside += p;
            }
        }
        // tail beyond rho_max: |w|² ≈ z²/ρ⁴, ∫ 2πρ z²/ρ⁴ dρ = π z² / ρ_max²
        total += PI * z * z / (rho_max * rho_max);
        inside / total
    }

    #[test]
    fn impulse_width_matches_numeric_integration() {
        for &z in &[0.5, 4.0, 40.0] {
            for &t in &[0.5, 0.9] {
                let r = impulse_half_width(z, t, 0.01).unwrap();
                let f = enclosed_fraction_numeric(z, r);
                assert!((f - t).abs() < 1e-3, "z={z} t={t} fraction={f}");
            }
        }
    }

    #[test]
    fn connectivity_at_reference_scale() {
        let dx = 0.53;
        let half_aperture = 200.0 * dx / 2.0;
        assert!(impulse_half_width(40.0, 0.9, dx).unwrap() >= half_aperture);
        assert!(impulse_half_width(4.0, 0.9, dx).unwrap() < half_aperture);
    }
}
