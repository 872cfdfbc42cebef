//! 2D discrete Fourier transform with a DC-centered spectrum.
//!
//! Forward is unnormalized; inverse divides by `H * W`.

pub use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::Grid2D;

/// Complex spectrum, row-major, with DC moved to `(H / 2, W / 2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::shape(format!(
                "{height}x{width} spectrum with {} bins",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Row/column of the DC bin.
    pub fn center(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }

    pub fn bins(&self) -> &[Complex64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.width + col]
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &Spectrum) -> Result<Spectrum> {
        if self.dims() != other.dims() {
            return Err(Error::shape("spectrum dimensions differ"));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Spectrum::new(self.height, self.width, data)
    }
}

pub fn fft2(grid: &Grid2D) -> Result<Spectrum> {
    let values: Vec<f64> = grid.as_slice().iter().map(|&v| v as f64).collect();
    fft2_real(grid.height(), grid.width(), &values)
}

/// Forward transform of a real `height x width` raster.
pub fn fft2_real(height: usize, width: usize, values: &[f64]) -> Result<Spectrum> {
    if height == 0 || width == 0 {
        return Err(Error::invalid("zero dimension"));
    }
    if values.len() != height * width {
        return Err(Error::shape(format!(
            "{height}x{width} raster with {} values",
            values.len()
        )));
    }
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform(height, width, &mut buf, false);
    Spectrum::new(height, width, shift(height, width, &buf, true))
}

/// Inverse transform; returns the full complex raster.
pub fn ifft2_complex(spec: &Spectrum) -> Vec<Complex64> {
    let (h, w) = spec.dims();
    let mut buf = shift(h, w, &spec.data, false);
    transform(h, w, &mut buf, true);
    let norm = 1.0 / (h * w) as f64;
    buf.iter_mut().for_each(|v| *v *= norm);
    buf
}

/// Inverse transform keeping the real part.
pub fn ifft2_real(spec: &Spectrum) -> Vec<f64> {
    ifft2_complex(spec).into_iter().map(|v| v.re).collect()
}

pub fn ifft2(spec: &Spectrum) -> Result<Grid2D> {
    let (h, w) = spec.dims();
    Grid2D::new(
        h,
        w,
        ifft2_real(spec).into_iter().map(|v| v as f32).collect(),
    )
}

/// Ideal low-pass: keeps bins within Euclidean distance `cutoff` of the DC
/// bin, zeroes the rest.
pub fn lowpass(spec: &Spectrum, cutoff: f64) -> Result<Spectrum> {
    if cutoff.is_nan() || cutoff <= 0.0 {
        return Err(Error::invalid(format!("cutoff must be > 0, got {cutoff}")));
    }
    let (cy, cx) = spec.center();
    let limit = cutoff * cutoff;
    let mut data = spec.data.clone();
    for r in 0..spec.height {
        let dy = r as f64 - cy as f64;
        for c in 0..spec.width {
            let dx = c as f64 - cx as f64;
            if dy * dy + dx * dx > limit {
                data[r * spec.width + c] = Complex64::new(0.0, 0.0);
            }
        }
    }
    Spectrum::new(spec.height, spec.width, data)
}

/// Number of bins [`lowpass`] keeps for a given size and cutoff.
pub fn passband_size(height: usize, width: usize, cutoff: f64) -> usize {
    let (cy, cx) = (height / 2, width / 2);
    let limit = cutoff * cutoff;
    (0..height)
        .flat_map(|r| (0..width).map(move |c| (r, c)))
        .filter(|&(r, c)| {
            let dy = r as f64 - cy as f64;
            let dx = c as f64 - cx as f64;
            dy * dy + dx * dx <= limit
        })
        .count()
}

fn transform(height: usize, width: usize, buf: &mut [Complex64], inverse: bool) {
    let mut planner = FftPlanner::new();
    let (row_fft, col_fft): (std::sync::Arc<dyn Fft<f64>>, std::sync::Arc<dyn Fft<f64>>) =
        if inverse {
            (
                planner.plan_fft_inverse(width),
                planner.plan_fft_inverse(height),
            )
        } else {
            (
                planner.plan_fft_forward(width),
                planner.plan_fft_forward(height),
            )
        };
    row_fft.process(buf);

    let mut column = vec![Complex64::new(0.0, 0.0); height];
    for c in 0..width {
        for r in 0..height {
            column[r] = buf[r * width + c];
        }
        col_fft.process(&mut column);
        for r in 0..height {
            buf[r * width + c] = column[r];
        }
    }
}

/// Moves DC to the center (`forward`) or back to the origin.
fn shift(height: usize, width: usize, src: &[Complex64], forward: bool) -> Vec<Complex64> {
    let (sy, sx) = if forward {
        (height / 2, width / 2)
    } else {
        (height - height / 2, width - width / 2)
    };
    let mut out = vec![Complex64::new(0.0, 0.0); src.len()];
    for r in 0..height {
        let rr = (r + sy) % height;
        for c in 0..width {
            out[rr * width + (c + sx) % width] = src[r * width + c];
        }
    }
    out
}
