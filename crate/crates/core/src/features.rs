//! Frame-based music features and the 34-element feature vector.
//!
//! Layout of [`FeatureVector::values`]:
//!
//! | index  | feature                              |
//! |--------|--------------------------------------|
//! | 0      | mean of detected peak frequencies    |
//! | 1      | std of detected peak frequencies     |
//! | 2..15  | MFCC 0..12 (frame mean)              |
//! | 15..27 | chroma C..B (frame mean)             |
//! | 27..34 | spectral contrast, 7 bands           |

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::audio_io::CanonicalClip;
use crate::spectral::{self, FftPlan, SpectralError};

pub const N_MFCC: usize = 13;
pub const N_CHROMA: usize = 12;
pub const N_CONTRAST: usize = 7;
pub const N_FEATURES: usize = 2 + N_MFCC + N_CHROMA + N_CONTRAST;
pub const FEATURE_SCHEMA_VERSION: u32 = 1;

/// Floor applied before every logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

/// Lower band edges for spectral contrast; the top band ends at Nyquist.
const CONTRAST_EDGES: [f64; N_CONTRAST] = [0.0, 200.0, 400.0, 800.0, 1600.0, 3200.0, 6400.0];
const CONTRAST_QUANTILE: f64 = 0.02;
const CHROMA_MIN_HZ: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Power of two.
    pub frame_length: usize,
    pub hop: usize,
    pub n_mels: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig { frame_length: 2048, hop: 512, n_mels: 26 }
    }
}

/// Hann-windowed STFT magnitudes, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct StftFrames {
    pub frames: Vec<Vec<f64>>,
    pub frame_length: usize,
    pub hop: usize,
    pub sample_rate: f64,
}

impl StftFrames {
    pub fn n_bins(&self) -> usize {
        self.frame_length / 2 + 1
    }

    pub fn bin_frequency(&self, k: usize) -> f64 {
        spectral::bin_frequency(k, self.frame_length, self.sample_rate)
    }
}

/// Periodic Hann window.
fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// Frames start at multiples of `hop`; no centering. A clip shorter than
/// one frame yields a single zero-padded frame.
pub fn stft(samples: &[f64], sample_rate: f64, config: &FeatureConfig) -> StftFrames {
    let len = config.frame_length;
    assert!(len.is_power_of_two() && config.hop > 0, "invalid STFT config {config:?}");
    let window = hann(len);
    let plan = FftPlan::new(len);
    let n_frames = if samples.len() <= len { 1 } else { (samples.len() - len) / config.hop + 1 };
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    let frames = (0..n_frames)
        .map(|f| {
            let start = f * config.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                let x = samples.get(start + i).copied().unwrap_or(0.0);
                *b = Complex64::new(x * window[i], 0.0);
            }
            plan.process(&mut buf);
            buf[..=len / 2].iter().map(|c| c.norm()).collect()
        })
        .collect();
    StftFrames { frames, frame_length: len, hop: config.hop, sample_rate }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters with centers equally spaced on the mel scale between
/// 0 Hz and Nyquist, evaluated at each bin's exact frequency. Unit peak
/// height, no area normalization.
pub fn mel_filterbank(n_mels: usize, frame_length: usize, sample_rate: f64) -> Vec<Vec<f64>> {
    let top = hz_to_mel(sample_rate / 2.0);
    let edges: Vec<f64> = (0..n_mels + 2).map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64)).collect();
    let n_bins = frame_length / 2 + 1;
    (0..n_mels)
        .map(|m| {
            let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = spectral::bin_frequency(k, frame_length, sample_rate);
                    let up = (f - lo) / (center - lo);
                    let down = (hi - f) / (hi - center);
                    up.min(down).max(0.0)
                })
                .collect()
        })
        .collect()
}

/// Orthonormal DCT-II.
pub fn dct2_ortho(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let nf = n as f64;
    (0..n)
        .map(|k| {
            let scale = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
            scale
                * x.iter()
                    .enumerate()
                    .map(|(i, &v)| v * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * nf)).cos())
                    .sum::<f64>()
        })
        .collect()
}

fn frame_mean<const D: usize>(per_frame: impl Iterator<Item = [f64; D]>) -> [f64; D] {
    let mut acc = [0.0; D];
    let mut count = 0usize;
    for v in per_frame {
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
        count += 1;
    }
    if count > 0 {
        for a in &mut acc {
            *a /= count as f64;
        }
    }
    acc
}

/// Frame-averaged MFCC 0..12 using `n_mels` filters.
pub fn mfcc(stft: &StftFrames, n_mels: usize) -> [f64; N_MFCC] {
    let bank = mel_filterbank(n_mels, stft.frame_length, stft.sample_rate);
    // Nonzero span of each filter.
    let support: Vec<std::ops::Range<usize>> = bank
        .iter()
        .map(|f| {
            let lo = f.iter().position(|&w| w > 0.0).unwrap_or(0);
            let hi = f.iter().rposition(|&w| w > 0.0).map_or(lo, |i| i + 1);
            lo..hi
        })
        .collect();
    frame_mean(stft.frames.iter().map(|frame| {
        let log_energies: Vec<f64> = bank
            .iter()
            .zip(&support)
            .map(|(filter, span)| {
                let e: f64 = filter[span.clone()].iter().zip(&frame[span.clone()]).map(|(w, m)| w * m * m).sum();
                e.max(LOG_FLOOR).ln()
            })
            .collect();
        let cep = dct2_ortho(&log_energies);
        let mut out = [0.0; N_MFCC];
        for (o, c) in out.iter_mut().zip(&cep) {
            *o = *c;
        }
        out
    }))
}

/// Pitch class (C = 0) of a frequency in Hz, A440 equal temperament.
pub fn pitch_class(freq: f64) -> usize {
    let midi = (12.0 * (freq / 440.0).log2()).round() as i64 + 69;
    midi.rem_euclid(12) as usize
}

/// Frame-averaged chroma; each frame is scaled so its largest class is 1.
pub fn chroma(stft: &StftFrames) -> [f64; N_CHROMA] {
    let classes: Vec<Option<usize>> = (0..stft.n_bins())
        .map(|k| {
            let f = stft.bin_frequency(k);
            (f >= CHROMA_MIN_HZ).then(|| pitch_class(f))
        })
        .collect();
    frame_mean(stft.frames.iter().map(|frame| {
        let mut energy = [0.0; N_CHROMA];
        for (m, pc) in frame.iter().zip(&classes) {
            if let Some(pc) = pc {
                energy[*pc] += m * m;
            }
        }
        let max = energy.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            for e in &mut energy {
                *e /= max;
            }
        }
        energy
    }))
}

/// Bin index ranges for the contrast bands. Band `b` holds bins with
/// frequency in `[edge_b, edge_{b+1})`; the last band includes Nyquist.
fn contrast_bands(stft: &StftFrames) -> [std::ops::Range<usize>; N_CONTRAST] {
    let n_bins = stft.n_bins();
    let first_bin_at = |hz: f64| (0..n_bins).find(|&k| stft.bin_frequency(k) >= hz).unwrap_or(n_bins);
    std::array::from_fn(|b| {
        let lo = first_bin_at(CONTRAST_EDGES[b]);
        let hi = if b + 1 < N_CONTRAST { first_bin_at(CONTRAST_EDGES[b + 1]) } else { n_bins };
        lo..hi.max(lo)
    })
}

/// Frame-averaged log peak/valley ratio over the 7 contrast bands.
pub fn spectral_contrast(stft: &StftFrames) -> [f64; N_CONTRAST] {
    let bands = contrast_bands(stft);
    let mut sorted = Vec::new();
    frame_mean(stft.frames.iter().map(|frame| {
        std::array::from_fn(|b| {
            let band = &frame[bands[b].clone()];
            if band.is_empty() {
                return 0.0;
            }
            sorted.clear();
            sorted.extend_from_slice(band);
            sorted.sort_by(f64::total_cmp);
            let q = ((CONTRAST_QUANTILE * sorted.len() as f64).ceil() as usize).max(1);
            let valley = sorted[..q].iter().sum::<f64>() / q as f64;
            let peak = sorted[sorted.len() - q..].iter().sum::<f64>() / q as f64;
            (peak + LOG_FLOOR).ln() - (valley + LOG_FLOOR).ln()
        })
    }))
}

/// The classifier input: 34 features in the order documented at the top of
/// this module.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: [f64; N_FEATURES],
    pub schema_version: u32,
}

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn column_names() -> Vec<String> {
        (0..N_FEATURES).map(|i| format!("f{i}")).collect()
    }

    /// Human-readable name of feature `i`.
    pub fn describe(i: usize) -> String {
        const PITCH: [&str; 12] = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];
        match i {
            0 => "freq_mean".into(),
            1 => "freq_std".into(),
            2..=14 => format!("mfcc_{}", i - 2),
            15..=26 => format!("chroma_{}", PITCH[i - 15]),
            27..=33 => format!("contrast_{}", i - 27),
            _ => format!("f{i}"),
        }
    }
}

pub fn extract_feature_vector(clip: &CanonicalClip, config: &FeatureConfig) -> Result<FeatureVector, SpectralError> {
    let freq = spectral::frequency_features(clip)?;
    let frames = stft(clip.samples(), f64::from(clip.sample_rate()), config);
    let parts = [&freq[..], &mfcc(&frames, config.n_mels)[..], &chroma(&frames)[..], &spectral_contrast(&frames)[..]];
    let mut values = [0.0; N_FEATURES];
    for (slot, v) in values.iter_mut().zip(parts.into_iter().flatten()) {
        *slot = *v;
    }
    Ok(FeatureVector { values, schema_version: FEATURE_SCHEMA_VERSION })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SR: f64 = 22050.0;

    fn sine(freq: f64, len: usize) -> Vec<f64> {
        (0..len).map(|n| (2.0 * PI * freq * n as f64 / SR).sin()).collect()
    }

    fn frames_of(x: &[f64]) -> StftFrames {
        stft(x, SR, &FeatureConfig::default())
    }

    #[test]
    fn frame_count() {
        let f = frames_of(&vec![0.0; 22050]);
        assert_eq!(f.frames.len(), 40);
        assert_eq!(f.n_bins(), 1025);
        assert!(f.frames.iter().all(|r| r.len() == 1025 && r.iter().all(|&m| m == 0.0)));
        assert_eq!(frames_of(&[0.3; 10]).frames.len(), 1);
    }

    #[test]
    fn sine_argmax_bin() {
        let f = frames_of(&sine(1000.0, 22050));
        for frame in &f.frames {
            let arg = (0..frame.len()).max_by(|&a, &b| frame[a].total_cmp(&frame[b])).unwrap();
            assert_eq!(arg, 93);
        }
    }

    #[test]
    fn stft_matches_direct_dft_per_frame() {
        let x = sine(777.0, 4096);
        let f = frames_of(&x);
        let w = hann(2048);
        let frame = &x[512..512 + 2048];
        for k in [0usize, 50, 72, 73, 300, 1024] {
            let c = frame.iter().enumerate().fold(Complex64::new(0.0, 0.0), |acc, (n, &v)| {
                acc + Complex64::from_polar(v * w[n], -2.0 * PI * ((k * n) % 2048) as f64 / 2048.0)
            });
            assert!((c.norm() - f.frames[1][k]).abs() < 1e-8);
        }
    }

    #[test]
    fn dct_of_constant_is_impulse() {
        let c = dct2_ortho(&[2.0; 26]);
        assert!((c[0] - 2.0 * 26f64.sqrt()).abs() < 1e-12);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn mfcc_of_silence() {
        let m = mfcc(&frames_of(&vec![0.0; 4096]), 26);
        assert!((m[0] - 26f64.sqrt() * LOG_FLOOR.ln()).abs() < 1e-9);
        assert!(m[1..].iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn mel_scale_round_trip() {
        for f in [0.0, 440.0, 1000.0, 11025.0] {
            assert!((mel_to_hz(hz_to_mel(f)) - f).abs() < 1e-9);
        }
    }

    #[test]
    fn pitch_classes() {
        assert_eq!(pitch_class(440.0), 9);
        assert_eq!(pitch_class(261.63), 0);
        assert_eq!(pitch_class(220.0), 9);
        assert_eq!(pitch_class(30.87), 11);
    }

    #[test]
    fn chroma_of_a440_peaks_at_a() {
        let c = chroma(&frames_of(&sine(440.0, 22050)));
        let arg = (0..12).max_by(|&a, &b| c[a].total_cmp(&c[b])).unwrap();
        assert_eq!(arg, 9);
        assert!(c.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(chroma(&frames_of(&vec![0.0; 4096])), [0.0; 12]);
    }

    #[test]
    fn contrast_of_silence_is_zero() {
        assert_eq!(spectral_contrast(&frames_of(&vec![0.0; 4096])), [0.0; 7]);
    }

    #[test]
    fn contrast_bands_partition_bins() {
        let f = frames_of(&[0.0; 8]);
        let bands = contrast_bands(&f);
        assert_eq!(bands[0].start, 0);
        for w in bands.windows(2) {
            assert_eq!(w[0].end, w[1].start);
        }
        assert_eq!(bands[6].end, 1025);
        // 200 Hz falls between bins 18 (193.8 Hz) and 19 (204.6 Hz)
        assert_eq!(bands[1].start, 19);
    }

    #[test]
    fn contrast_empty_band_is_zero() {
        let tiny = stft(&[0.5, -0.2, 0.1, 0.7], SR, &FeatureConfig { frame_length: 4, hop: 1, n_mels: 4 });
        let c = spectral_contrast(&tiny);
        // Bins sit at 0, 5512.5 and 11025 Hz; only bands 0, 5 and 6 are populated.
        for b in [1, 2, 3, 4] {
            assert_eq!(c[b], 0.0);
        }
    }

    #[test]
    fn contrast_of_1khz_sine_is_largest_in_band_3() {
        let f = frames_of(&sine(1000.0, 22050));
        let c = spectral_contrast(&f);
        let arg = (0..7).max_by(|&a, &b| c[a].total_cmp(&c[b])).unwrap();
        assert_eq!(arg, 3, "{c:?}");

        // Independent per-band oracle on the first frame: full sort over
        // explicit frequency membership.
        let frame = &f.frames[0];
        let mut oracle = [0.0; 7];
        for b in 0..7 {
            let hi = if b == 6 { f64::INFINITY } else { CONTRAST_EDGES[b + 1] };
            let mut band: Vec<f64> = (0..frame.len())
                .filter(|&k| {
                    let hz = k as f64 * SR / 2048.0;
                    hz >= CONTRAST_EDGES[b] && hz < hi
                })
                .map(|k| frame[k])
                .collect();
            band.sort_by(f64::total_cmp);
            let q = ((0.02 * band.len() as f64).ceil() as usize).max(1);
            let valley: f64 = band[..q].iter().sum::<f64>() / q as f64;
            let peak: f64 = band[band.len() - q..].iter().sum::<f64>() / q as f64;
            oracle[b] = (peak + 1e-10).ln() - (valley + 1e-10).ln();
        }
        let single = spectral_contrast(&StftFrames { frames: vec![frame.clone()], ..f.clone() });
        for b in 0..7 {
            assert!((single[b] - oracle[b]).abs() < 1e-12);
        }
    }

    #[test]
    fn silence_vector_pattern() {
        let clip = CanonicalClip::from_normalized(vec![0.0; 8192], 22050);
        let v = extract_feature_vector(&clip, &FeatureConfig::default()).unwrap();
        assert_eq!(v.values.len(), 34);
        assert_eq!(&v.values[..2], &[0.0, 0.0]);
        assert!((v.values[2] - 26f64.sqrt() * LOG_FLOOR.ln()).abs() < 1e-9);
        assert!(v.values[3..].iter().all(|x| x.abs() < 1e-9));
    }

    #[test]
    fn describe_names() {
        assert_eq!(FeatureVector::describe(2), "mfcc_0");
        assert_eq!(FeatureVector::describe(24), "chroma_A");
        assert_eq!(FeatureVector::describe(33), "contrast_6");
        assert_eq!(FeatureVector::column_names().len(), N_FEATURES);
    }
}
