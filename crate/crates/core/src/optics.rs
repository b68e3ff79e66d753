//! Sampled scalar fields and input-object encoding.
//!
//! All lengths are in units of the illumination wavelength (λ ≡ 1). Fields are
//! stored row-major: sample `(ix, iy)` lives at `iy * nx + ix`.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{D2nnError, Result};

/// Default sample pitch, in wavelengths.
pub const DEFAULT_PITCH: f64 = 0.53;

/// Uniform sampling grid of an optical plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, dx: f64) -> Result<Self> {
        let grid = GridSpec { nx, ny, dx };
        grid.validate()?;
        Ok(grid)
    }

    pub fn square(n: usize, dx: f64) -> Result<Self> {
        Self::new(n, n, dx)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 {
            return Err(D2nnError::InvalidGrid(format!(
                "sample counts must be positive, got {}x{}",
                self.nx, self.ny
            )));
        }
        if !(self.dx.is_finite() && self.dx > 0.0) {
            return Err(D2nnError::InvalidGrid(format!(
                "pitch must be positive and finite, got {}",
                self.dx
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn side_x(&self) -> f64 {
        self.nx as f64 * self.dx
    }

    pub fn side_y(&self) -> f64 {
        self.ny as f64 * self.dx
    }

    /// Area represented by one sample.
    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.dx * self.dx
    }

    /// Physical x coordinate of sample column `ix`; the grid is centered on the optical axis.
    #[inline]
    pub fn coord_x(&self, ix: usize) -> f64 {
        (ix as f64 - (self.nx as f64 - 1.0) / 2.0) * self.dx
    }

    #[inline]
    pub fn coord_y(&self, iy: usize) -> f64 {
        (iy as f64 - (self.ny as f64 - 1.0) / 2.0) * self.dx
    }

    pub(crate) fn ensure_same(&self, other: &GridSpec) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(D2nnError::GridMismatch {
                expected: self.to_string(),
                found: other.to_string(),
            })
        }
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{} @ {}λ", self.nx, self.ny, self.dx)
    }
}

/// Complex scalar amplitude sampled on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    grid: GridSpec,
    values: Vec<Complex64>,
}

impl ComplexField {
    pub fn new(grid: GridSpec, values: Vec<Complex64>) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.len() {
            return Err(D2nnError::Shape(format!(
                "field has {} samples, grid {} needs {}",
                values.len(),
                grid,
                grid.len()
            )));
        }
        if !values.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
            return Err(D2nnError::NonFinite("field samples"));
        }
        Ok(ComplexField { grid, values })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        ComplexField {
            grid,
            values: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    /// Uniform unit-amplitude plane wave at normal incidence.
    pub fn plane_wave(grid: GridSpec) -> Self {
        ComplexField {
            grid,
            values: vec![Complex64::new(1.0, 0.0); grid.len()],
        }
    }

    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(usize, usize) -> Complex64) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len());
        for iy in 0..grid.ny {
            for ix in 0..grid.nx {
                values.push(f(ix, iy));
            }
        }
        Self::new(grid, values)
    }

    /// Internal constructor for kernels that already guarantee shape and finiteness.
    pub(crate) fn from_parts(grid: GridSpec, values: Vec<Complex64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        ComplexField { grid, values }
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    #[inline]
    pub fn at(&self, ix: usize, iy: usize) -> Complex64 {
        self.values[iy * self.grid.nx + ix]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn intensity(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm_sqr()).collect()
    }

    /// Σ|u|²·dx² over all samples.
    pub fn total_power(&self) -> f64 {
        total_power(self)
    }
}

/// Σ|u|²·dx² over all samples of `field`.
pub fn total_power(field: &ComplexField) -> f64 {
    field.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * field.grid.cell_area()
}

/// Relative L2 distance ‖a − b‖ / ‖b‖.
pub fn relative_l2(a: &[Complex64], b: &[Complex64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

/// Which channel of the input plane carries the object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputEncoding {
    Amplitude,
    Phase,
}

impl fmt::Display for InputEncoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InputEncoding::Amplitude => f.write_str("amplitude"),
            InputEncoding::Phase => f.write_str("phase"),
        }
    }
}

/// Places a small grayscale object in the center of a simulation grid.
///
/// The object is upsampled by integer pixel replication with factor
/// `floor(object_size / max(rows, cols))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputEncoder {
    pub mode: InputEncoding,
    pub grid: GridSpec,
    pub object_size: usize,
}

impl InputEncoder {
    pub fn new(mode: InputEncoding, grid: GridSpec, object_size: usize) -> Result<Self> {
        grid.validate()?;
        if object_size == 0 {
            return Err(D2nnError::InvalidInput("object region must be non-empty".into()));
        }
        if object_size > grid.nx || object_size > grid.ny {
            return Err(D2nnError::InvalidInput(format!(
                "object region of {object_size} samples exceeds grid {grid}"
            )));
        }
        Ok(InputEncoder {
            mode,
            grid,
            object_size,
        })
    }

    /// Replication factor for an object of the given shape.
    pub fn factor(&self, rows: usize, cols: usize) -> Result<usize> {
        let factor = self.object_size / rows.max(cols).max(1);
        if factor == 0 {
            return Err(D2nnError::InvalidInput(format!(
                "object of {rows}x{cols} pixels does not fit an object region of {} samples",
                self.object_size
            )));
        }
        Ok(factor)
    }

    /// Encodes a `rows × cols` image with pixel values in [0, 1].
    pub fn encode(&self, image: &[f64], rows: usize, cols: usize) -> Result<ComplexField> {
        if image.len() != rows * cols {
            return Err(D2nnError::Shape(format!(
                "image has {} pixels, expected {rows}x{cols}",
                image.len()
            )));
        }
        if let Some(bad) = image.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(D2nnError::InvalidInput(format!(
                "pixel value {bad} outside [0, 1]"
            )));
        }
        let factor = self.factor(rows, cols)?;
        let (h, w) = (rows * factor, cols * factor);
        let grid = self.grid;
        let y0 = (grid.ny - h) / 2;
        let x0 = (grid.nx - w) / 2;

        let background = match self.mode {
            InputEncoding::Amplitude => Complex64::new(0.0, 0.0),
            InputEncoding::Phase => Complex64::new(1.0, 0.0),
        };
        let mut values = vec![background; grid.len()];
        for iy in 0..h {
            let src_row = iy / factor;
            let dst = (y0 + iy) * grid.nx + x0;
            for ix in 0..w {
                let p = image[src_row * cols + ix / factor];
                values[dst + ix] = match self.mode {
                    InputEncoding::Amplitude => Complex64::new(p, 0.0),
                    InputEncoding::Phase => Complex64::from_polar(1.0, 2.0 * PI * p),
                };
            }
        }
        Ok(ComplexField::from_parts(grid, values))
    }
}

/// Convenience wrapper around [`InputEncoder::encode`].
pub fn encode_input(
    image: &[f64],
    rows: usize,
    cols: usize,
    mode: InputEncoding,
    grid: GridSpec,
    object_size: usize,
) -> Result<ComplexField> {
    InputEncoder::new(mode, grid, object_size)?.encode(image, rows, cols)
}
