//! Audio decoding and conditioning.
//!
//! Everything downstream works on a [`CanonicalClip`]: mono, fixed sample
//! rate, peak-normalized. [`load_audio`] performs the whole chain
//! (decode, mixdown, resample, normalize) in that order.

use std::f64::consts::PI;
use std::io::{Cursor, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use thiserror::Error;

/// Default canonical analysis rate in Hz.
pub const DEFAULT_SAMPLE_RATE: u32 = 22_050;
/// Default number of sinc taps used by [`resample`].
pub const DEFAULT_RESAMPLE_TAPS: usize = 64;

/// Container formats accepted on input. Only WAV is decoded in-process.
pub const SUPPORTED_EXTENSIONS: &[&str] = &["wav", "mp3", "mp4", "aiff", "aif", "aac", "ogg", "flac"];

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("malformed audio data: {0}")]
    Decode(String),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("no transcoder configured for .{0} input")]
    TranscoderUnavailable(String),
    #[error("transcoder failed: {0}")]
    TranscodeFailed(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid clip: {0}")]
    InvalidClip(String),
}

/// Decoded PCM audio, one `Vec` per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self, AudioError> {
        if channels.is_empty() {
            return Err(AudioError::InvalidClip("no channels".into()));
        }
        if sample_rate == 0 {
            return Err(AudioError::InvalidClip("sample rate must be positive".into()));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(AudioError::InvalidClip("channels differ in length".into()));
        }
        Ok(AudioClip { channels, sample_rate })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self, AudioError> {
        Self::new(vec![samples], sample_rate)
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn channel(&self, idx: usize) -> &[f64] {
        &self.channels[idx]
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Frames per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }
}

/// Mono, normalized audio at the canonical analysis rate.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl CanonicalClip {
    /// Wraps already-conditioned samples. Callers are trusted to have
    /// normalized them; use [`condition`] otherwise.
    pub fn from_normalized(samples: Vec<f64>, sample_rate: u32) -> Self {
        CanonicalClip { samples, sample_rate }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Decodes a RIFF/WAVE byte buffer.
///
/// Integer PCM is divided by the magnitude of the most negative code
/// (128, 32768, 2^23, 2^31) so full-scale negative maps to exactly -1.0.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip, AudioError> {
    let reader = hound::WavReader::new(Cursor::new(bytes)).map_err(map_hound)?;
    let spec = reader.spec();
    let n_channels = spec.channels as usize;
    if !(1..=2).contains(&n_channels) {
        return Err(AudioError::UnsupportedFormat(format!("{n_channels} channels")));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => {
            reader.into_samples::<f32>().map(|s| s.map(f64::from)).collect::<Result<_, _>>().map_err(map_hound)?
        }
        (hound::SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) / scale))
                .collect::<Result<_, _>>()
                .map_err(map_hound)?
        }
        (fmt, bits) => {
            return Err(AudioError::UnsupportedFormat(format!("{fmt:?} {bits}-bit")));
        }
    };
    if interleaved.iter().any(|s| !s.is_finite()) {
        return Err(AudioError::Decode("non-finite sample".into()));
    }
    let frames = interleaved.len() / n_channels;
    let mut channels = vec![Vec::with_capacity(frames); n_channels];
    for frame in interleaved.chunks_exact(n_channels) {
        for (ch, &s) in channels.iter_mut().zip(frame) {
            ch.push(s);
        }
    }
    AudioClip::new(channels, spec.sample_rate)
}

fn map_hound(err: hound::Error) -> AudioError {
    match err {
        hound::Error::Unsupported => AudioError::UnsupportedFormat("WAV codec tag".into()),
        other => AudioError::Decode(other.to_string()),
    }
}

/// Encodes a clip as 16-bit PCM WAV. Samples are scaled by 32768 and
/// clamped to the i16 range, the exact inverse of [`decode_wav`] on any
/// 16-bit code.
pub fn encode_wav_i16(clip: &AudioClip) -> Result<Vec<u8>, AudioError> {
    let spec = hound::WavSpec {
        channels: clip.channel_count() as u16,
        sample_rate: clip.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut buf = Cursor::new(Vec::new());
    {
        let mut writer = hound::WavWriter::new(&mut buf, spec).map_err(map_hound)?;
        for i in 0..clip.len() {
            for ch in clip.channels() {
                writer.write_sample(to_i16(ch[i])).map_err(map_hound)?;
            }
        }
        writer.finalize().map_err(map_hound)?;
    }
    Ok(buf.into_inner())
}

fn to_i16(s: f64) -> i16 {
    (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Sample-wise mean of all channels.
pub fn mixdown_mono(clip: AudioClip) -> AudioClip {
    if clip.channel_count() == 1 {
        return clip;
    }
    let rate = clip.sample_rate();
    let n = clip.channel_count() as f64;
    let len = clip.len();
    let channels = clip.into_channels();
    let mono = (0..len).map(|i| channels.iter().map(|c| c[i]).sum::<f64>() / n).collect();
    AudioClip { channels: vec![mono], sample_rate: rate }
}

/// Band-limited resampling of a mono clip with a Blackman-windowed sinc
/// kernel of `taps` zero crossings. When downsampling the kernel cutoff
/// drops to the target Nyquist, so the anti-alias filter is built in.
pub fn resample(clip: &AudioClip, target_rate: u32, taps: usize) -> Result<AudioClip, AudioError> {
    if clip.channel_count() != 1 {
        return Err(AudioError::InvalidClip("resample expects a mono clip".into()));
    }
    if target_rate == 0 {
        return Err(AudioError::InvalidClip("target rate must be positive".into()));
    }
    let in_rate = clip.sample_rate();
    if target_rate == in_rate {
        return Ok(clip.clone());
    }
    let input = clip.channel(0);
    let out_len = resampled_len(input.len(), in_rate, target_rate);
    if input.is_empty() {
        return AudioClip::mono(Vec::new(), target_rate);
    }

    let ratio = f64::from(target_rate) / f64::from(in_rate);
    let cutoff = ratio.min(1.0);
    let half_taps = (taps.max(2) / 2) as f64;
    // Kernel half-width in input samples.
    let half_width = half_taps / cutoff;
    let last = input.len() as isize - 1;

    let out = (0..out_len)
        .map(|j| {
            let t = j as f64 / ratio;
            let lo = ((t - half_width).ceil() as isize).max(0);
            let hi = ((t + half_width).floor() as isize).min(last);
            let mut acc = 0.0;
            for i in lo..=hi {
                let d = t - i as f64;
                acc += input[i as usize] * cutoff * sinc(cutoff * d) * blackman(d / half_width);
            }
            acc
        })
        .collect();
    AudioClip::mono(out, target_rate)
}

fn resampled_len(len: usize, in_rate: u32, out_rate: u32) -> usize {
    let num = len as u128 * u128::from(out_rate) * 2 + u128::from(in_rate);
    (num / (2 * u128::from(in_rate))) as usize
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

/// Blackman window over x ∈ [-1, 1], zero outside.
fn blackman(x: f64) -> f64 {
    if x.abs() >= 1.0 {
        return 0.0;
    }
    let p = PI * (x + 1.0);
    0.42 - 0.5 * p.cos() + 0.08 * (2.0 * p).cos()
}

/// Divides every sample by the maximum absolute value. An all-zero clip is
/// returned unchanged.
pub fn peak_normalize(clip: AudioClip) -> AudioClip {
    let peak = clip.channels().iter().flatten().fold(0.0_f64, |m, s| m.max(s.abs()));
    if peak == 0.0 || peak == 1.0 {
        return clip;
    }
    let rate = clip.sample_rate();
    let channels = clip.into_channels().into_iter().map(|c| c.into_iter().map(|s| s / peak).collect()).collect();
    AudioClip { channels, sample_rate: rate }
}

/// External command used for formats that are not decoded in-process.
///
/// The template is split on whitespace; a `{input}` token is replaced by
/// the input path. The command must write a WAV stream to stdout, e.g.
/// `ffmpeg -v error -i {input} -f wav -`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transcoder {
    template: String,
}

impl Transcoder {
    pub fn new(template: impl Into<String>) -> Self {
        Transcoder { template: template.into() }
    }

    /// Reads the template from `DDMD_TRANSCODER`, if set.
    pub fn from_env() -> Option<Self> {
        std::env::var("DDMD_TRANSCODER").ok().filter(|s| !s.trim().is_empty()).map(Transcoder::new)
    }

    pub fn transcode(&self, input: &Path) -> Result<Vec<u8>, AudioError> {
        let mut parts = self.template.split_whitespace().map(|tok| {
            if tok == "{input}" {
                input.as_os_str().to_owned()
            } else {
                tok.replace("{input}", &input.to_string_lossy()).into()
            }
        });
        let program = parts.next().ok_or_else(|| AudioError::TranscodeFailed("empty command template".into()))?;
        let output = Command::new(&program)
            .args(parts)
            .stdin(Stdio::null())
            .output()
            .map_err(|e| AudioError::TranscodeFailed(format!("{}: {e}", program.to_string_lossy())))?;
        if !output.status.success() {
            let stderr = String::from_utf8_lossy(&output.stderr);
            return Err(AudioError::TranscodeFailed(format!(
                "{} exited with {}: {}",
                program.to_string_lossy(),
                output.status,
                stderr.trim()
            )));
        }
        Ok(output.stdout)
    }
}

/// Settings for [`load_audio`].
#[derive(Debug, Clone)]
pub struct LoadConfig {
    pub sample_rate: u32,
    pub resample_taps: usize,
    pub transcoder: Option<Transcoder>,
}

impl Default for LoadConfig {
    fn default() -> Self {
        LoadConfig { sample_rate: DEFAULT_SAMPLE_RATE, resample_taps: DEFAULT_RESAMPLE_TAPS, transcoder: None }
    }
}

/// Where audio comes from. `Bytes` carries the format hint (an extension).
#[derive(Debug, Clone, Copy)]
pub enum AudioSource<'a> {
    Path(&'a Path),
    Bytes { data: &'a [u8], extension: &'a str },
}

/// Lower-cased extension if it is one of [`SUPPORTED_EXTENSIONS`].
pub fn supported_extension(path: &Path) -> Option<String> {
    let ext = path.extension()?.to_str()?.to_ascii_lowercase();
    SUPPORTED_EXTENSIONS.contains(&ext.as_str()).then_some(ext)
}

/// decode → mixdown → resample → peak-normalize.
pub fn load_audio(source: AudioSource<'_>, config: &LoadConfig) -> Result<CanonicalClip, AudioError> {
    let clip = match source {
        AudioSource::Path(path) => {
            let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).unwrap_or_default();
            check_extension(&ext)?;
            if ext == "wav" {
                let bytes =
                    std::fs::read(path).map_err(|source| AudioError::Io { path: path.to_path_buf(), source })?;
                decode_wav(&bytes)?
            } else {
                let transcoder =
                    config.transcoder.as_ref().ok_or_else(|| AudioError::TranscoderUnavailable(ext.clone()))?;
                decode_wav(&transcoder.transcode(path)?)?
            }
        }
        AudioSource::Bytes { data, extension } => {
            let ext = extension.trim_start_matches('.').to_ascii_lowercase();
            check_extension(&ext)?;
            if ext == "wav" {
                decode_wav(data)?
            } else {
                let transcoder =
                    config.transcoder.as_ref().ok_or_else(|| AudioError::TranscoderUnavailable(ext.clone()))?;
                let mut tmp = tempfile::Builder::new()
                    .suffix(&format!(".{ext}"))
                    .tempfile()
                    .map_err(|source| AudioError::Io { path: std::env::temp_dir(), source })?;
                tmp.write_all(data).map_err(|source| AudioError::Io { path: tmp.path().to_path_buf(), source })?;
                decode_wav(&transcoder.transcode(tmp.path())?)?
            }
        }
    };
    condition(clip, config)
}

/// mixdown → resample → peak-normalize on an already-decoded clip.
pub fn condition(clip: AudioClip, config: &LoadConfig) -> Result<CanonicalClip, AudioError> {
    let mono = mixdown_mono(clip);
    let resampled = resample(&mono, config.sample_rate, config.resample_taps)?;
    let normalized = peak_normalize(resampled);
    let rate = normalized.sample_rate();
    let samples = normalized.into_channels().pop().unwrap_or_default();
    Ok(CanonicalClip { samples, sample_rate: rate })
}

fn check_extension(ext: &str) -> Result<(), AudioError> {
    if SUPPORTED_EXTENSIONS.contains(&ext) {
        Ok(())
    } else if ext.is_empty() {
        Err(AudioError::UnsupportedFormat("missing file extension".into()))
    } else {
        Err(AudioError::UnsupportedFormat(format!(".{ext}")))
    }
}
