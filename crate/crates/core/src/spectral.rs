//! Whole-signal frequency analysis.
//!
//! One FFT over the entire (zero-padded) clip, a magnitude-peak scan over
//! the positive-frequency half, and the mean / standard deviation of the
//! detected peak frequencies.

use std::f64::consts::PI;

use num_complex::Complex64;
use thiserror::Error;

use crate::audio_io::CanonicalClip;

/// Peaks below this fraction of the largest scanned magnitude are dropped.
pub const PEAK_THRESHOLD_RATIO: f64 = 0.1;
/// Longest prefix of a clip fed to the whole-file FFT.
pub const MAX_FFT_SAMPLES: usize = 1 << 22;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SpectralError {
    #[error("invalid input: {0}")]
    InvalidInput(&'static str),
}

/// In-place iterative radix-2 Cooley-Tukey transform.
///
/// `buf.len()` must be a power of two. Each twiddle is computed directly
/// from its angle rather than by recurrence, which keeps the error at the
/// level of a single `sin`/`cos` call even for long transforms.
pub fn fft_in_place(buf: &mut [Complex64]) {
    FftPlan::new(buf.len()).process(buf);
}

/// Twiddle table for repeated transforms of one length.
#[derive(Debug, Clone)]
pub struct FftPlan {
    n: usize,
    twiddles: Vec<Complex64>,
}

impl FftPlan {
    pub fn new(n: usize) -> Self {
        assert!(n.is_power_of_two(), "FFT length {n} is not a power of two");
        let twiddles = (0..n / 2).map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64)).collect();
        FftPlan { n, twiddles }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn process(&self, buf: &mut [Complex64]) {
        let n = self.n;
        assert_eq!(buf.len(), n, "buffer length does not match the plan");
        if n <= 1 {
            return;
        }

        let bits = n.trailing_zeros();
        for i in 0..n {
            let j = i.reverse_bits() >> (usize::BITS - bits);
            if i < j {
                buf.swap(i, j);
            }
        }

        let mut size = 2;
        while size <= n {
            let half = size / 2;
            let stride = n / size;
            for start in (0..n).step_by(size) {
                for k in 0..half {
                    let w = self.twiddles[k * stride];
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            size *= 2;
        }
    }
}

/// Complex spectrum of a zero-padded real signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    bins: Vec<Complex64>,
    sample_rate: f64,
}

impl Spectrum {
    pub fn bins(&self) -> &[Complex64] {
        &self.bins
    }

    /// Transform length after padding.
    pub fn n(&self) -> usize {
        self.bins.len()
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    /// Sampling interval Δt = 1 / f_s.
    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn magnitude(&self, k: usize) -> f64 {
        let x = self.bins[k];
        (x.re * x.re + x.im * x.im).sqrt()
    }

    pub fn phase(&self, k: usize) -> f64 {
        let x = self.bins[k];
        x.im.atan2(x.re)
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        (0..self.n()).map(|k| self.magnitude(k)).collect()
    }

    pub fn bin_frequency(&self, k: usize) -> f64 {
        bin_frequency(k, self.n(), self.sample_rate)
    }
}

/// Forward DFT of `signal`, zero-padded to the next power of two.
pub fn fft_forward(signal: &[f64], sample_rate: f64) -> Result<Spectrum, SpectralError> {
    if signal.is_empty() {
        return Err(SpectralError::InvalidInput("empty signal"));
    }
    if sample_rate.is_nan() || sample_rate <= 0.0 {
        return Err(SpectralError::InvalidInput("sample rate must be positive"));
    }
    let n = signal.len().next_power_of_two();
    let mut bins = vec![Complex64::new(0.0, 0.0); n];
    for (b, &x) in bins.iter_mut().zip(signal) {
        b.re = x;
    }
    fft_in_place(&mut bins);
    Ok(Spectrum { bins, sample_rate })
}

/// Frequency in Hz of bin `k` for a length-`n` transform: k / (n·Δt).
pub fn bin_frequency(k: usize, n: usize, sample_rate: f64) -> f64 {
    k as f64 * sample_rate / n as f64
}

/// Spectral peaks, sorted by bin.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PeakSet {
    pub bins: Vec<usize>,
    pub freqs: Vec<f64>,
    pub mags: Vec<f64>,
}

impl PeakSet {
    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }
}

/// Scans bins 1..N/2-1 for strict local maxima whose magnitude is at least
/// 10% of the largest magnitude in that range.
pub fn detect_peaks(spectrum: &Spectrum) -> PeakSet {
    let n = spectrum.n();
    let mags: Vec<f64> = (0..=n / 2).map(|k| spectrum.magnitude(k)).collect();
    let peaks = peak_bins(&mags);
    PeakSet {
        freqs: peaks.iter().map(|&k| spectrum.bin_frequency(k)).collect(),
        mags: peaks.iter().map(|&k| mags[k]).collect(),
        bins: peaks,
    }
}

/// Peak rule on a half-spectrum `mags[0..=N/2]`; returns qualifying bins.
pub fn peak_bins(mags: &[f64]) -> Vec<usize> {
    if mags.len() < 3 {
        return Vec::new();
    }
    let hi = mags.len() - 1; // Nyquist index, excluded
    let scanned = &mags[1..hi];
    let max = scanned.iter().copied().fold(0.0_f64, f64::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let floor = PEAK_THRESHOLD_RATIO * max;
    (1..hi).filter(|&k| mags[k] > mags[k - 1] && mags[k] > mags[k + 1] && mags[k] >= floor).collect()
}

/// Population mean and standard deviation of peak frequencies.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FreqStats {
    pub mean: f64,
    pub std: f64,
    pub n_peaks: usize,
}

pub fn freq_stats(freqs: &[f64]) -> FreqStats {
    let n = freqs.len();
    if n == 0 {
        return FreqStats::default();
    }
    let nf = n as f64;
    let mean = freqs.iter().sum::<f64>() / nf;
    let var = freqs.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / nf;
    FreqStats { mean, std: if n == 1 { 0.0 } else { var.sqrt() }, n_peaks: n }
}

/// `[mean_hz, std_hz]` of the detected peaks of a whole clip.
pub fn frequency_features(clip: &CanonicalClip) -> Result<[f64; 2], SpectralError> {
    let samples = clip.samples();
    let take = samples.len().min(MAX_FFT_SAMPLES);
    let spectrum = fft_forward(&samples[..take], f64::from(clip.sample_rate()))?;
    let stats = freq_stats(&detect_peaks(&spectrum).freqs);
    Ok([stats.mean, stats.std])
}
