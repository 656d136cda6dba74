//! Deterministic test-signal generation.
//!
//! DD-class material is binaural beats (stereo, one carrier per ear) and
//! isochronic tones (a gated carrier). NDD-class material is a seeded
//! chord-progression surrogate and harmonic tones with vibrato.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio_io::{encode_wav_i16, AudioClip, AudioError, DEFAULT_SAMPLE_RATE};
use crate::label::Label;
use crate::seed::derive_seed;

/// Gate edge ramp for isochronic tones, seconds.
pub const GATE_RAMP_S: f64 = 0.005;
/// Duration of every file written by [`render_corpus`].
pub const CORPUS_CLIP_SECONDS: f64 = 5.0;

const VIBRATO_DEPTH: f64 = 0.015;
const TONE_HARMONICS: usize = 4;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    InvalidSpec(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Audio(#[from] AudioError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    Binaural,
    Isochronic,
    /// Harmonic tone; `beat_hz` is the vibrato rate (0 disables vibrato).
    Tone,
    MusicSurrogate,
    Noise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub carrier_hz: f64,
    pub beat_hz: f64,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub amplitude: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(kind: SynthKind, carrier_hz: f64, beat_hz: f64, duration_s: f64) -> Self {
        SynthSpec { kind, carrier_hz, beat_hz, duration_s, sample_rate: DEFAULT_SAMPLE_RATE, amplitude: 1.0, seed: 0 }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::InvalidSpec(msg));
        if !self.duration_s.is_finite() || self.duration_s <= 0.0 {
            return bad(format!("duration must be positive, got {}", self.duration_s));
        }
        if !(self.amplitude > 0.0 && self.amplitude <= 1.0) {
            return bad(format!("amplitude must be in (0, 1], got {}", self.amplitude));
        }
        if self.sample_rate == 0 {
            return bad("sample rate must be positive".into());
        }
        let nyquist = f64::from(self.sample_rate) / 2.0;
        match self.kind {
            SynthKind::Binaural | SynthKind::Isochronic => {
                if !(self.beat_hz > 0.0 && self.beat_hz < self.carrier_hz) {
                    return bad(format!("need 0 < beat ({}) < carrier ({})", self.beat_hz, self.carrier_hz));
                }
                if self.carrier_hz + self.beat_hz >= nyquist {
                    return bad(format!("carrier {} Hz too close to Nyquist", self.carrier_hz));
                }
            }
            SynthKind::Tone => {
                if self.carrier_hz.is_nan()
                    || self.carrier_hz <= 0.0
                    || self.carrier_hz >= nyquist
                    || self.beat_hz < 0.0
                {
                    return bad(format!("bad tone carrier {} / vibrato {}", self.carrier_hz, self.beat_hz));
                }
            }
            SynthKind::MusicSurrogate | SynthKind::Noise => {}
        }
        Ok(())
    }

    fn n_samples(&self) -> usize {
        (self.duration_s * f64::from(self.sample_rate)).round() as usize
    }

    fn expect_kind(&self, kind: SynthKind) -> Result<(), SynthError> {
        if self.kind != kind {
            return Err(SynthError::InvalidSpec(format!("expected {kind:?}, got {:?}", self.kind)));
        }
        self.validate()
    }
}

/// Dispatches on `spec.kind`.
pub fn synthesize(spec: &SynthSpec) -> Result<AudioClip, SynthError> {
    match spec.kind {
        SynthKind::Binaural => synth_binaural(spec),
        SynthKind::Isochronic => synth_isochronic(spec),
        SynthKind::Tone => synth_tone(spec),
        SynthKind::MusicSurrogate => synth_music_surrogate(spec),
        SynthKind::Noise => synth_noise(spec),
    }
}

fn sine(freq: f64, amplitude: f64, n: usize, rate: f64) -> Vec<f64> {
    (0..n).map(|i| amplitude * (2.0 * PI * freq * i as f64 / rate).sin()).collect()
}

/// Left ear at the carrier, right ear at carrier + beat.
pub fn synth_binaural(spec: &SynthSpec) -> Result<AudioClip, SynthError> {
    spec.expect_kind(SynthKind::Binaural)?;
    let n = spec.n_samples();
    let rate = f64::from(spec.sample_rate);
    let left = sine(spec.carrier_hz, spec.amplitude, n, rate);
    let right = sine(spec.carrier_hz + spec.beat_hz, spec.amplitude, n, rate);
    Ok(AudioClip::new(vec![left, right], spec.sample_rate)?)
}

/// 50%-duty on/off envelope at `rate_hz` with raised-cosine edges.
fn gate(t: f64, rate_hz: f64) -> f64 {
    let period = 1.0 / rate_hz;
    let on = period / 2.0;
    let ramp = GATE_RAMP_S.min(on / 2.0);
    let pos = t.rem_euclid(period);
    if pos >= on {
        return 0.0;
    }
    let edge = pos.min(on - pos);
    if edge < ramp {
        0.5 - 0.5 * (PI * edge / ramp).cos()
    } else {
        1.0
    }
}

/// Carrier multiplied by a smoothed square gate at `beat_hz`.
pub fn synth_isochronic(spec: &SynthSpec) -> Result<AudioClip, SynthError> {
    spec.expect_kind(SynthKind::Isochronic)?;
    let rate = f64::from(spec.sample_rate);
    let samples = (0..spec.n_samples())
        .map(|i| {
            let t = i as f64 / rate;
            spec.amplitude * gate(t, spec.beat_hz) * (2.0 * PI * spec.carrier_hz * t).sin()
        })
        .collect();
    Ok(AudioClip::mono(samples, spec.sample_rate)?)
}

/// Harmonic tone (partials 1..4 at 1/h amplitude) with sinusoidal vibrato
/// of ±1.5% at `beat_hz`.
pub fn synth_tone(spec: &SynthSpec) -> Result<AudioClip, SynthError> {
    spec.expect_kind(SynthKind::Tone)?;
    let rate = f64::from(spec.sample_rate);
    let nyquist = rate / 2.0;
    let partials: Vec<(f64, f64)> = (1..=TONE_HARMONICS)
        .map(|h| (h as f64, 1.0 / h as f64))
        .filter(|&(h, _)| h * spec.carrier_hz * (1.0 + VIBRATO_DEPTH) < nyquist)
        .collect();
    let norm: f64 = partials.iter().map(|p| p.1).sum();
    let samples = (0..spec.n_samples())
        .map(|i| {
            let t = i as f64 / rate;
            // Integrated instantaneous phase of f(t) = c (1 + d sin 2πvt).
            let phase = if spec.beat_hz > 0.0 {
                2.0 * PI * spec.carrier_hz * t
                    - spec.carrier_hz * VIBRATO_DEPTH / spec.beat_hz * ((2.0 * PI * spec.beat_hz * t).cos() - 1.0)
            } else {
                2.0 * PI * spec.carrier_hz * t
            };
            let s: f64 = partials.iter().map(|&(h, w)| w * (h * phase).sin()).sum();
            spec.amplitude * s / norm
        })
        .collect();
    Ok(AudioClip::mono(samples, spec.sample_rate)?)
}

/// Pink-ish noise from Paul Kellet's economy filter over uniform white noise.
fn pinkish_noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
    (0..n)
        .map(|_| {
            let white: f64 = rng.random_range(-1.0..1.0);
            b0 = 0.99765 * b0 + white * 0.0990460;
            b1 = 0.96300 * b1 + white * 0.2965164;
            b2 = 0.57000 * b2 + white * 1.0526913;
            b0 + b1 + b2 + white * 0.1848
        })
        .collect()
}

fn scale_to_peak(mut x: Vec<f64>, amplitude: f64) -> Vec<f64> {
    let peak = x.iter().fold(0.0_f64, |m, s| m.max(s.abs()));
    if peak > 0.0 {
        let g = amplitude / peak;
        for s in &mut x {
            *s = (*s * g).clamp(-amplitude, amplitude);
        }
    }
    x
}

fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|s| s * s).sum::<f64>() / x.len() as f64).sqrt()
}

pub fn synth_noise(spec: &SynthSpec) -> Result<AudioClip, SynthError> {
    spec.expect_kind(SynthKind::Noise)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = pinkish_noise(&mut rng, spec.n_samples());
    Ok(AudioClip::mono(scale_to_peak(noise, spec.amplitude), spec.sample_rate)?)
}

fn midi_to_hz(note: u8) -> f64 {
    440.0 * 2f64.powf((f64::from(note) - 69.0) / 12.0)
}

/// Seeded chord progression: 4–8 segments, each 3–5 equal-tempered notes
/// with decaying harmonics and a short attack/release, plus noise 30 dB
/// below the tonal RMS.
pub fn synth_music_surrogate(spec: &SynthSpec) -> Result<AudioClip, SynthError> {
    spec.expect_kind(SynthKind::MusicSurrogate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rate = f64::from(spec.sample_rate);
    let nyquist = rate / 2.0;
    let n = spec.n_samples();
    let n_segments = rng.random_range(4..=8usize);
    let mut out = vec![0.0; n];

    let fade = ((0.01 * rate) as usize).max(1);
    for seg in 0..n_segments {
        let start = seg * n / n_segments;
        let end = (seg + 1) * n / n_segments;
        let len = end - start;
        let n_notes = rng.random_range(3..=5usize);
        let notes: Vec<(f64, f64, f64)> = (0..n_notes)
            .map(|_| {
                let f = midi_to_hz(rng.random_range(45..=81u8));
                let amp = rng.random_range(0.3..1.0);
                let rolloff = rng.random_range(0.4..0.8);
                (f, amp, rolloff)
            })
            .collect();
        for i in 0..len {
            let t = (start + i) as f64 / rate;
            let env = if i < fade {
                i as f64 / fade as f64
            } else if len - i <= fade {
                (len - i) as f64 / fade as f64
            } else {
                1.0
            };
            let mut s = 0.0;
            for &(f, amp, rolloff) in &notes {
                let mut w = amp;
                for h in 1..=6 {
                    let fh = f * h as f64;
                    if fh >= nyquist {
                        break;
                    }
                    s += w * (2.0 * PI * fh * t).sin();
                    w *= rolloff;
                }
            }
            out[start + i] = env * s;
        }
    }

    let noise = pinkish_noise(&mut rng, n);
    let gain = rms(&out) * 10f64.powf(-30.0 / 20.0) / rms(&noise).max(f64::MIN_POSITIVE);
    for (o, e) in out.iter_mut().zip(noise) {
        *o += gain * e;
    }
    Ok(AudioClip::mono(scale_to_peak(out, spec.amplitude), spec.sample_rate)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: Label,
    pub spec: SynthSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
}

/// Parameters of file `index` of `label`, drawn from a stream seeded only by
/// (master seed, label, index).
pub fn corpus_spec(master_seed: u64, label: Label, index: usize) -> SynthSpec {
    let stream = 2 * index as u64 + label.index() as u64;
    let seed = derive_seed(master_seed, stream);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let carrier = rng.random_range(100.0..800.0);
    let amplitude = rng.random_range(0.5..0.9);
    let (kind, beat) = match (label, index % 2) {
        (Label::Dd, 0) => (SynthKind::Binaural, rng.random_range(1.0..30.0)),
        (Label::Dd, _) => (SynthKind::Isochronic, rng.random_range(1.0..30.0)),
        (Label::Ndd, 0) => (SynthKind::MusicSurrogate, 0.0),
        (Label::Ndd, _) => (SynthKind::Tone, rng.random_range(4.0..7.0)),
    };
    SynthSpec {
        kind,
        carrier_hz: carrier,
        beat_hz: beat,
        duration_s: CORPUS_CLIP_SECONDS,
        sample_rate: DEFAULT_SAMPLE_RATE,
        amplitude,
        seed,
    }
}

fn kind_tag(kind: SynthKind) -> &'static str {
    match kind {
        SynthKind::Binaural => "binaural",
        SynthKind::Isochronic => "isochronic",
        SynthKind::Tone => "tone",
        SynthKind::MusicSurrogate => "music",
        SynthKind::Noise => "noise",
    }
}

/// Writes `n_per_class` 16-bit WAV files into each of `out_dir/DD` and
/// `out_dir/NDD`. Output bytes depend only on `(n_per_class, seed)`.
pub fn render_corpus(out_dir: &Path, n_per_class: usize, seed: u64) -> Result<CorpusManifest, SynthError> {
    let jobs: Vec<(Label, usize)> =
        Label::ALL.iter().rev().flat_map(|&label| (0..n_per_class).map(move |i| (label, i))).collect();
    for label in [Label::Dd, Label::Ndd] {
        let dir = out_dir.join(label.as_str());
        fs::create_dir_all(&dir).map_err(|source| SynthError::Io { path: dir.clone(), source })?;
    }
    let entries = jobs
        .par_iter()
        .map(|&(label, i)| {
            let spec = corpus_spec(seed, label, i);
            let name = format!("{}_{:04}_{}.wav", label.as_str().to_lowercase(), i, kind_tag(spec.kind));
            let path = out_dir.join(label.as_str()).join(name);
            let bytes = encode_wav_i16(&synthesize(&spec)?)?;
            fs::write(&path, bytes).map_err(|source| SynthError::Io { path: path.clone(), source })?;
            Ok(ManifestEntry { path, label, spec })
        })
        .collect::<Result<Vec<_>, SynthError>>()?;
    Ok(CorpusManifest { entries })
}
