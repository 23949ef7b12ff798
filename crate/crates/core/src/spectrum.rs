//! Fourier fingerprints of adversarial perturbations: 2-D DFT, centre shift,
//! `log(1 + |y|)` scaling and min-max normalization.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::adversarial::{fgsm, relabel, Epsilon, FgsmMode};
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::tensor::{ImageTensor, Tensor};

/// Double-precision complex grid in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid {
    pub height: usize,
    pub width: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexGrid {
    pub fn magnitudes(&self) -> Vec<f64> {
        self.re.iter().zip(&self.im).map(|(r, i)| r.hypot(*i)).collect()
    }

    pub fn energy(&self) -> f64 {
        self.re.iter().zip(&self.im).map(|(r, i)| r * r + i * i).sum()
    }
}

/// Normalized log-magnitude spectrum with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumImage {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl SpectrumImage {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape(format!(
                "{height}x{width} spectrum needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::format("spectrum values must lie in [0, 1]"));
        }
        Ok(SpectrumImage { height, width, values })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// `[H, W, 1]` tensor view for the encoder.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.height, self.width, 1], self.values.clone()).expect("sized")
    }
}

/// Exact 2-D DFT, `y[k, l] = sum_{m, n} x[m, n] e^{-2 pi i (k m / H + l n / W)}`,
/// computed as 1-D transforms over rows and then columns.
pub fn dft2(height: usize, width: usize, grid: &[f64]) -> Result<ComplexGrid> {
    if height == 0 || width == 0 || grid.len() != height * width {
        return Err(Error::shape(format!(
            "dft2 needs a non-empty {height}x{width} grid, got {} values",
            grid.len()
        )));
    }
    if grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("dft2 input holds non-finite values".into()));
    }
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex64> = grid.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(width).process(&mut buf);

    let col_fft = planner.plan_fft_forward(height);
    let mut col = vec![Complex64::new(0.0, 0.0); height];
    for x in 0..width {
        for y in 0..height {
            col[y] = buf[y * width + x];
        }
        col_fft.process(&mut col);
        for y in 0..height {
            buf[y * width + x] = col[y];
        }
    }
    Ok(ComplexGrid {
        height,
        width,
        re: buf.iter().map(|c| c.re).collect(),
        im: buf.iter().map(|c| c.im).collect(),
    })
}

/// Quadrant swap moving index `(0, 0)` to `(H / 2, W / 2)`.
pub fn fftshift<T: Copy>(height: usize, width: usize, values: &[T]) -> Vec<T> {
    let mut out = values.to_vec();
    for y in 0..height {
        for x in 0..width {
            out[((y + height / 2) % height) * width + (x + width / 2) % width] = values[y * width + x];
        }
    }
    out
}

/// Inverse of [`fftshift`] (identical to it on even sizes).
pub fn ifftshift<T: Copy>(height: usize, width: usize, values: &[T]) -> Vec<T> {
    let mut out = values.to_vec();
    for y in 0..height {
        for x in 0..width {
            out[y * width + x] = values[((y + height / 2) % height) * width + (x + width / 2) % width];
        }
    }
    out
}

/// Shift, `log(1 + m)` and min-max normalize a magnitude grid. Constant grids map to zeros.
pub fn log_shift_normalize(height: usize, width: usize, magnitudes: &[f64]) -> SpectrumImage {
    let shifted = fftshift(height, width, magnitudes);
    let logged: Vec<f64> = shifted.iter().map(|m| m.ln_1p()).collect();
    let lo = logged.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = logged.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let values = if range > 0.0 && range.is_finite() {
        logged.iter().map(|v| (((v - lo) / range) as f32).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; logged.len()]
    };
    SpectrumImage { height, width, values }
}

pub fn shift_log_normalize(cg: &ComplexGrid) -> SpectrumImage {
    log_shift_normalize(cg.height, cg.width, &cg.magnitudes())
}

/// Channel-averaged DFT magnitudes of an `[H, W, C]` perturbation.
///
/// With a `canvas` larger than the perturbation, the perturbation is zero-padded
/// (centred) to the canvas before the transform.
pub fn perturbation_magnitudes(
    perturbation: &ImageTensor,
    canvas: Option<(usize, usize)>,
) -> Result<(usize, usize, Vec<f64>)> {
    let (h, w, c) = perturbation.hwc()?;
    let (ch, cw) = canvas.unwrap_or((h, w));
    if ch < h || cw < w {
        return Err(Error::shape(format!(
            "canvas {ch}x{cw} is smaller than the {h}x{w} perturbation"
        )));
    }
    let (oy, ox) = ((ch - h) / 2, (cw - w) / 2);
    let data = perturbation.data();
    let mut mean = vec![0.0f64; ch * cw];
    let mut plane = vec![0.0f64; ch * cw];
    for channel in 0..c {
        for y in 0..h {
            for x in 0..w {
                plane[(y + oy) * cw + x + ox] = f64::from(data[(y * w + x) * c + channel]);
            }
        }
        let spec = dft2(ch, cw, &plane)?;
        for (m, v) in mean.iter_mut().zip(spec.magnitudes()) {
            *m += v / c as f64;
        }
    }
    Ok((ch, cw, mean))
}

pub fn perturbation_spectrum(perturbation: &ImageTensor, canvas: Option<(usize, usize)>) -> Result<SpectrumImage> {
    let (h, w, mags) = perturbation_magnitudes(perturbation, canvas)?;
    Ok(log_shift_normalize(h, w, &mags))
}

/// How fingerprints are produced from a model.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SpectrumOptions {
    pub eps: Epsilon,
    #[serde(default)]
    pub mode: FgsmMode,
    #[serde(default)]
    pub canvas: Option<(usize, usize)>,
}

/// Relabel, attack and transform one seed; `None` when the attack does not flip the prediction.
pub fn make_spectrum(model: &Model, seed: &ImageTensor, options: &SpectrumOptions) -> Result<Option<SpectrumImage>> {
    let label = relabel(model, seed)?;
    let adv = fgsm(model, seed, label, options.eps, options.mode)?;
    if !adv.success {
        return Ok(None);
    }
    perturbation_spectrum(&adv.perturbation, options.canvas).map(Some)
}

#[derive(Debug, Clone)]
pub struct SpectrumSet {
    pub spectra: Vec<SpectrumImage>,
    /// Seed index of each spectrum.
    pub kept: Vec<usize>,
    pub attempted: usize,
}

impl SpectrumSet {
    pub fn success_ratio(&self) -> f64 {
        if self.attempted == 0 {
            0.0
        } else {
            self.spectra.len() as f64 / self.attempted as f64
        }
    }
}

/// [`make_spectrum`] over every seed, in seed order. Fails when nothing succeeds.
pub fn generate_spectra(model: &Model, seeds: &[ImageTensor], options: &SpectrumOptions) -> Result<SpectrumSet> {
    let mut set = SpectrumSet {
        spectra: Vec::new(),
        kept: Vec::new(),
        attempted: seeds.len(),
    };
    for (i, seed) in seeds.iter().enumerate() {
        if let Some(s) = make_spectrum(model, seed, options)? {
            set.spectra.push(s);
            set.kept.push(i);
        }
    }
    if set.spectra.is_empty() {
        return Err(Error::EmptyFingerprint {
            attempted: seeds.len(),
        });
    }
    Ok(set)
}
