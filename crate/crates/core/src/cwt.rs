//! Morlet continuous wavelet transform and scaleogram rasterization.
//!
//! Coefficient convention, for scale `s` in samples:
//!
//! ```text
//! psi_s[m] = s^(-1/2) * morlet(m / s, omega0)
//! W[s, tau] = sum_n x[n] * conj(psi_s[n - tau])
//! ```
//!
//! i.e. zero-padded correlation with the L2-normalized, conjugated wavelet
//! centred at sample `tau`. [`CwtPlan`] evaluates it with FFT convolution;
//! the kernel is truncated at `8 * s` samples, where the Gaussian envelope
//! is below `exp(-32)`.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, Array3, ArrayView2};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::signal::{zscore_normalize, Trial};

/// Half-width of the truncated wavelet kernel, in units of scale.
const SUPPORT_SCALES: f64 = 8.0;

/// Analytic Morlet mother wavelet `pi^(-1/4) * exp(i*omega0*t) * exp(-t^2/2)`.
#[inline]
pub fn morlet(t: f64, omega0: f64) -> Complex64 {
    let envelope = PI.powf(-0.25) * (-0.5 * t * t).exp();
    Complex64::from_polar(envelope, omega0 * t)
}

/// Frequencies (descending) and the matching wavelet scales in samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleGrid {
    pub frequencies_hz: Vec<f64>,
    pub scales: Vec<f64>,
    pub omega0: f64,
    pub sample_rate_hz: f64,
}

impl ScaleGrid {
    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }

    /// Centre frequency of the wavelet at `scale` samples.
    pub fn center_frequency(&self, scale: f64) -> f64 {
        self.omega0 * self.sample_rate_hz / (2.0 * PI * scale)
    }

    /// Row whose frequency is nearest `freq_hz` on a log axis.
    pub fn nearest_row(&self, freq_hz: f64) -> usize {
        let target = freq_hz.ln();
        (0..self.len())
            .min_by(|&a, &b| {
                let da = (self.frequencies_hz[a].ln() - target).abs();
                let db = (self.frequencies_hz[b].ln() - target).abs();
                da.total_cmp(&db)
            })
            .unwrap_or(0)
    }
}

/// `n_scales` frequencies log-spaced from `f_max_hz` down to `f_min_hz`.
pub fn scale_grid(
    f_min_hz: f64,
    f_max_hz: f64,
    n_scales: usize,
    fs_hz: f64,
    omega0: f64,
) -> Result<ScaleGrid> {
    let finite = [f_min_hz, f_max_hz, fs_hz, omega0].iter().all(|v| v.is_finite());
    if !finite || !(0.0 < f_min_hz && f_min_hz < f_max_hz && f_max_hz < fs_hz / 2.0) {
        return Err(Error::BadRange(format!(
            "need 0 < f_min < f_max < fs/2, got f_min={f_min_hz}, f_max={f_max_hz}, fs={fs_hz}"
        )));
    }
    if n_scales < 2 {
        return Err(Error::BadRange(format!("need >= 2 scales, got {n_scales}")));
    }
    if omega0 <= 0.0 {
        return Err(Error::BadRange(format!("omega0 must be positive, got {omega0}")));
    }
    let (lo, hi) = (f_min_hz.ln(), f_max_hz.ln());
    let last = (n_scales - 1) as f64;
    let mut frequencies_hz: Vec<f64> = (0..n_scales)
        .map(|i| (hi + (lo - hi) * i as f64 / last).exp())
        .collect();
    frequencies_hz[0] = f_max_hz;
    frequencies_hz[n_scales - 1] = f_min_hz;
    let scales = frequencies_hz
        .iter()
        .map(|f| omega0 * fs_hz / (2.0 * PI * f))
        .collect();
    Ok(ScaleGrid {
        frequencies_hz,
        scales,
        omega0,
        sample_rate_hz: fs_hz,
    })
}

/// Precomputed FFT plans and kernel spectra for one grid and signal length.
pub struct CwtPlan {
    grid: ScaleGrid,
    n_samples: usize,
    fft_len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// One spectrum per scale, each of length `fft_len`.
    kernels: Vec<Vec<Complex64>>,
}

impl std::fmt::Debug for CwtPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CwtPlan")
            .field("n_scales", &self.grid.len())
            .field("n_samples", &self.n_samples)
            .field("fft_len", &self.fft_len)
            .finish()
    }
}

impl CwtPlan {
    pub fn new(grid: &ScaleGrid, n_samples: usize) -> Result<Self> {
        if n_samples < 2 {
            return Err(Error::TooFewItems {
                needed: 2,
                got: n_samples,
            });
        }
        let max_scale = grid.scales.iter().cloned().fold(0.0, f64::max);
        let max_half = half_width(max_scale, n_samples);
        let fft_len = (n_samples + 2 * max_half + 1).next_power_of_two();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(fft_len);
        let inverse = planner.plan_fft_inverse(fft_len);

        let kernels = grid
            .scales
            .iter()
            .map(|&s| {
                // g[m] = conj(psi_s[-m]) so that W = x (*) g; stored circularly.
                let half = half_width(s, n_samples) as isize;
                let norm = s.sqrt().recip();
                let mut buf = vec![Complex64::new(0.0, 0.0); fft_len];
                for m in -half..=half {
                    let psi = morlet(-(m as f64) / s, grid.omega0) * norm;
                    buf[m.rem_euclid(fft_len as isize) as usize] = psi.conj();
                }
                forward.process(&mut buf);
                buf
            })
            .collect();

        Ok(Self {
            grid: grid.clone(),
            n_samples,
            fft_len,
            forward,
            inverse,
            kernels,
        })
    }

    pub fn grid(&self) -> &ScaleGrid {
        &self.grid
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    /// Complex coefficients `[n_scales x n_samples]`. Rows are computed
    /// independently, so `exec` does not affect the result.
    pub fn transform(&self, signal: &[f64], exec: Exec) -> Result<Array2<Complex64>> {
        if signal.len() != self.n_samples {
            return Err(Error::BadShape(format!(
                "plan built for {} samples, got {}",
                self.n_samples,
                signal.len()
            )));
        }
        if signal.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cwt input"));
        }
        let mut spectrum: Vec<Complex64> = signal
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
            .take(self.fft_len)
            .collect();
        self.forward.process(&mut spectrum);

        let scale_n = (self.fft_len as f64).recip();
        let rows = exec.map(self.kernels.len(), |row| {
            let mut buf: Vec<Complex64> = spectrum
                .iter()
                .zip(&self.kernels[row])
                .map(|(a, b)| a * b)
                .collect();
            self.inverse.process(&mut buf);
            buf.truncate(self.n_samples);
            buf.iter_mut().for_each(|c| *c *= scale_n);
            buf
        });

        let mut out = Array2::zeros((self.kernels.len(), self.n_samples));
        for (mut dst, src) in out.rows_mut().into_iter().zip(rows) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d = s);
        }
        Ok(out)
    }
}

fn half_width(scale: f64, n_samples: usize) -> usize {
    ((SUPPORT_SCALES * scale).ceil() as usize).min(n_samples - 1)
}

/// One-shot CWT; builds a fresh [`CwtPlan`].
pub fn cwt_forward(signal: &[f64], grid: &ScaleGrid) -> Result<Array2<Complex64>> {
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("cwt input"));
    }
    CwtPlan::new(grid, signal.len())?.transform(signal, Exec::Sequential)
}

/// Magnitude image of one channel's CWT.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaleogram {
    pub magnitudes: Array2<f64>,
    pub grid: ScaleGrid,
    pub channel_name: String,
}

pub fn scaleogram(coeffs: &Array2<Complex64>, grid: &ScaleGrid, channel_name: &str) -> Scaleogram {
    Scaleogram {
        magnitudes: coeffs.mapv(|c| c.norm()),
        grid: grid.clone(),
        channel_name: channel_name.to_owned(),
    }
}

/// Grayscale image with pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    pub pixels: Array2<f64>,
}

impl RasterImage {
    pub fn height(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn width(&self) -> usize {
        self.pixels.ncols()
    }

    /// Binary PGM (P5, maxval 255), `round(pixel * 255)` per byte.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width(), self.height()).into_bytes();
        out.extend(
            self.pixels
                .iter()
                .map(|p| (p.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(&self.to_pgm())?;
        Ok(())
    }
}

/// Min-max normalizes to `[0, 1]` (constant images become 0.5), then
/// resamples bilinearly to `height x width`.
pub fn rasterize(sg: &Scaleogram, height: usize, width: usize) -> Result<RasterImage> {
    if height < 1 || width < 1 {
        return Err(Error::BadSize { height, width });
    }
    if sg.magnitudes.is_empty() {
        return Err(Error::BadShape("empty scaleogram".into()));
    }
    let normalized = min_max_normalize(sg.magnitudes.view())?;
    Ok(RasterImage {
        pixels: resize_bilinear(normalized.view(), height, width),
    })
}

fn min_max_normalize(values: ArrayView2<f64>) -> Result<Array2<f64>> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        if !v.is_finite() {
            return Err(Error::NonFinite("scaleogram"));
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let range = hi - lo;
    if range <= 0.0 {
        return Ok(Array2::from_elem(values.dim(), 0.5));
    }
    Ok(values.mapv(|v| ((v - lo) / range).clamp(0.0, 1.0)))
}

/// Sample positions and weights along one axis, half-pixel-centre mapping
/// `src = (dst + 0.5) * n_src / n_dst - 0.5`, clamped to the valid range.
fn axis_taps(n_src: usize, n_dst: usize) -> Vec<(usize, usize, f64)> {
    let ratio = n_src as f64 / n_dst as f64;
    let max = (n_src - 1) as f64;
    (0..n_dst)
        .map(|d| {
            let x = ((d as f64 + 0.5) * ratio - 0.5).clamp(0.0, max);
            let x0 = x.floor() as usize;
            let x1 = (x0 + 1).min(n_src - 1);
            (x0, x1, x - x0 as f64)
        })
        .collect()
}

/// Bilinear resampling with the half-pixel-centre convention.
pub fn resize_bilinear(src: ArrayView2<f64>, height: usize, width: usize) -> Array2<f64> {
    let (h, w) = src.dim();
    let rows = axis_taps(h, height);
    let cols = axis_taps(w, width);
    Array2::from_shape_fn((height, width), |(r, c)| {
        let (y0, y1, fy) = rows[r];
        let (x0, x1, fx) = cols[c];
        let top = src[[y0, x0]] * (1.0 - fx) + src[[y0, x1]] * fx;
        let bottom = src[[y1, x0]] * (1.0 - fx) + src[[y1, x1]] * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

/// Scaleogram pipeline settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CwtConfig {
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub n_scales: usize,
    pub omega0: f64,
    pub image_height: usize,
    pub image_width: usize,
}

impl Default for CwtConfig {
    fn default() -> Self {
        Self {
            f_min_hz: 4.0,
            f_max_hz: 45.0,
            n_scales: 224,
            omega0: 6.0,
            image_height: 224,
            image_width: 224,
        }
    }
}

impl CwtConfig {
    pub fn grid(&self, fs_hz: f64) -> Result<ScaleGrid> {
        scale_grid(self.f_min_hz, self.f_max_hz, self.n_scales, fs_hz, self.omega0)
    }
}

/// Normalize → CWT → magnitude → raster for one channel.
pub fn channel_raster(plan: &CwtPlan, signal: &[f64], name: &str, config: &CwtConfig) -> Result<RasterImage> {
    let normalized = zscore_normalize(signal)?;
    let coeffs = plan.transform(&normalized, Exec::Sequential)?;
    let sg = scaleogram(&coeffs, plan.grid(), name);
    rasterize(&sg, config.image_height, config.image_width)
}

/// Rasters for the selected channels of one trial, `[channels x H x W]`.
/// Channels run through `exec`; output is independent of it.
pub fn trial_rasters(
    plan: &CwtPlan,
    trial: &Trial,
    channels: &[usize],
    config: &CwtConfig,
    exec: Exec,
) -> Result<Array3<f32>> {
    let images = exec.try_map(channels.len(), |i| {
        let c = channels[i];
        channel_raster(plan, &trial.channel(c), &trial.channel_names[c], config)
    })?;
    let mut out = Array3::zeros((channels.len(), config.image_height, config.image_width));
    for (mut dst, img) in out.outer_iter_mut().zip(images) {
        dst.zip_mut_with(&img.pixels, |d, &s| *d = s as f32);
    }
    Ok(out)
}
