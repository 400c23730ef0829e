//! FFT-based spectral estimators.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

/// Periodic Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|k| 0.5 - 0.5 * (std::f64::consts::TAU * k as f64 / n as f64).cos()).collect()
}

/// Zero-padded one-sided power spectrum with a reusable FFT plan.
#[derive(Clone)]
pub struct PowerSpectrum {
    nfft: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl PowerSpectrum {
    pub fn new(nfft: usize) -> Self {
        Self { nfft, fft: FftPlanner::new().plan_fft_forward(nfft) }
    }

    pub fn nfft(&self) -> usize {
        self.nfft
    }

    /// `|X_k|^2` for `k = 0..=nfft/2`, with `x` zero-padded to `nfft`.
    pub fn compute(&self, x: &[f64]) -> Vec<f64> {
        assert!(self.nfft >= x.len(), "nfft shorter than the signal");
        let mut buf: Vec<Complex<f64>> = x
            .iter()
            .map(|&v| Complex::new(v, 0.0))
            .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
            .take(self.nfft)
            .collect();
        self.fft.process(&mut buf);
        buf[..=self.nfft / 2].iter().map(|c| c.norm_sqr()).collect()
    }
}

/// One-shot [`PowerSpectrum::compute`].
pub fn power_spectrum(x: &[f64], nfft: usize) -> Vec<f64> {
    PowerSpectrum::new(nfft).compute(x)
}

/// Welch power spectral density with a periodic Hann window.
///
/// Each segment is mean-detrended. The result is density-scaled and
/// one-sided, so integrating it over `[0, fs/2]` recovers the variance.
/// Signals shorter than `nperseg` are analysed as a single segment.
/// Returns `(frequencies, psd)`.
pub fn welch(x: &[f64], fs: f64, nperseg: usize, noverlap: usize) -> (Vec<f64>, Vec<f64>) {
    let nperseg = nperseg.min(x.len());
    let step = (nperseg - noverlap.min(nperseg - 1)).max(1);
    let window = hann(nperseg);
    let wss: f64 = window.iter().map(|w| w * w).sum();
    let n_bins = nperseg / 2 + 1;
    let mut psd = vec![0.0; n_bins];
    let spectrum = PowerSpectrum::new(nperseg);
    let mut count = 0usize;
    let mut start = 0;
    while start + nperseg <= x.len() {
        let seg = &x[start..start + nperseg];
        let mean = seg.iter().sum::<f64>() / nperseg as f64;
        let tapered: Vec<f64> = seg.iter().zip(&window).map(|(v, w)| (v - mean) * w).collect();
        for (acc, p) in psd.iter_mut().zip(spectrum.compute(&tapered)) {
            *acc += p;
        }
        count += 1;
        start += step;
    }
    let scale = 1.0 / (fs * wss * count as f64);
    for (k, p) in psd.iter_mut().enumerate() {
        *p *= scale;
        let nyquist = nperseg.is_multiple_of(2) && k == n_bins - 1;
        if k != 0 && !nyquist {
            *p *= 2.0;
        }
    }
    let freqs = (0..n_bins).map(|k| k as f64 * fs / nperseg as f64).collect();
    (freqs, psd)
}

/// Trapezoid integral of `psd` over the bins with `lo <= f <= hi`.
pub fn band_power(freqs: &[f64], psd: &[f64], lo: f64, hi: f64) -> f64 {
    let pts: Vec<(f64, f64)> =
        freqs.iter().zip(psd).filter(|(f, _)| **f >= lo && **f <= hi).map(|(f, p)| (*f, *p)).collect();
    pts.windows(2).map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0)).sum()
}
