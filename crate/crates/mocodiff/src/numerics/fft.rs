use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::numerics::ImageTensor;

/// Row-major complex 2D array holding k-space samples.
#[derive(Debug, Clone)]
pub struct ComplexImage {
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

impl ComplexImage {
    pub fn from_vec(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::EmptyImage);
        }
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width} needs {} samples, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![Complex64::new(0.0, 0.0); height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.width + j]
    }

    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [Complex64] {
        &mut self.data[i * self.width..(i + 1) * self.width]
    }

    /// Sum of |z|^2 over all samples.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// Unitary forward 2D DFT (1/sqrt(HW) scaling), mixed-radix sizes included.
pub fn fft2(img: &ImageTensor) -> Result<ComplexImage> {
    let (h, w) = img.hw()?;
    if h == 0 || w == 0 {
        return Err(Error::EmptyImage);
    }
    let data: Vec<Complex64> = img.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut k = ComplexImage { height: h, width: w, data };
    transform_2d(&mut k, Direction::Forward);
    Ok(k)
}

/// Unitary inverse 2D DFT. Returns the real part plus the max |imaginary|
/// residual so callers can assert conjugate symmetry held.
pub fn ifft2(k: &ComplexImage) -> Result<(ImageTensor, f64)> {
    let mut buf = k.clone();
    transform_2d(&mut buf, Direction::Inverse);
    let mut residual = 0.0f64;
    let mut real = Vec::with_capacity(buf.data.len());
    for z in &buf.data {
        residual = residual.max(z.im.abs());
        real.push(z.re);
    }
    let img = ImageTensor::from_vec(vec![buf.height, buf.width], real)?;
    Ok((img, residual))
}

enum Direction {
    Forward,
    Inverse,
}

fn transform_2d(k: &mut ComplexImage, dir: Direction) {
    let (h, w) = (k.height, k.width);
    let mut planner = FftPlanner::<f64>::new();
    let (fft_w, fft_h) = match dir {
        Direction::Forward => (planner.plan_fft_forward(w), planner.plan_fft_forward(h)),
        Direction::Inverse => (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h)),
    };

    // Rows are contiguous; process() handles all H chunks of length W.
    fft_w.process(&mut k.data);

    // Columns via transpose, row FFTs, transpose back.
    let mut t = vec![Complex64::new(0.0, 0.0); h * w];
    for i in 0..h {
        for j in 0..w {
            t[j * h + i] = k.data[i * w + j];
        }
    }
    fft_h.process(&mut t);
    let scale = 1.0 / ((h * w) as f64).sqrt();
    for i in 0..h {
        for j in 0..w {
            k.data[i * w + j] = t[j * h + i] * scale;
        }
    }
}
