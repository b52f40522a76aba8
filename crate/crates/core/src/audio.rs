//! Mono PCM ingestion, filterbank features, and per-latent token alignment.

use std::path::Path;

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::model::layers::Linear;
use crate::numerics::{ParamStore, Real, Tape, Tensor, Var};

/// Floor applied before the log so silence maps to a finite value.
pub const LOG_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::contract("sample rate must be positive"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::contract("waveform contains non-finite samples"));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Samples per video frame at `fps`.
    pub fn window(&self, fps: f32) -> usize {
        (self.sample_rate as f64 / fps as f64).round() as usize
    }
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::format("wav", "channel count", format!("{} channels, expected mono", spec.channels)));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::format(
            "wav",
            "format code",
            format!("{:?} {}-bit, expected 16-bit PCM", spec.sample_format, spec.bits_per_sample),
        ));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| wav_error(path, e))?;
    Waveform::new(samples, spec.sample_rate)
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        hound::Error::FormatError(msg) => Error::format("wav", "riff header", msg),
        hound::Error::Unsupported => Error::format("wav", "format code", "unsupported encoding"),
        other => Error::format("wav", "riff header", other.to_string()),
    }
}

/// Writes 16-bit PCM mono, clipping to `[-1, 1)`.
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for &s in &w.samples {
        let q = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q).map_err(|e| wav_error(path, e))?;
    }
    writer.finalize().map_err(|e| wav_error(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureConfig {
    pub fps: f32,
    pub bands: usize,
    pub layers: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            fps: 25.0,
            bands: 16,
            layers: 2,
        }
    }
}

/// `[T_frames, N, B]` log filterbank energies.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    pub data: Tensor,
    /// The waveform ran out before the last frame and was padded with silence.
    pub padded: bool,
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel-spaced filters over bins `0..=n_fft/2`, one row per band.
pub fn filterbank(bands: usize, n_fft: usize, sample_rate: u32) -> Vec<Vec<f64>> {
    let nyquist = sample_rate as f64 / 2.0;
    let bins = n_fft / 2 + 1;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..bands + 2).map(|i| mel_to_hz(top * i as f64 / (bands + 1) as f64)).collect();
    (0..bands)
        .map(|b| {
            let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * sample_rate as f64 / n_fft as f64;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

/// Per video frame, `B` log band energies of the Hann-windowed frame
/// spectrum; layer `n` (0-based) is a causal moving average of width `2n+1`.
///
/// `frames` defaults to as many whole windows as the waveform holds.
pub fn extract_features(w: &Waveform, cfg: &FeatureConfig, frames: Option<usize>) -> Result<Features> {
    if !(cfg.fps > 0.0) || cfg.bands == 0 || cfg.layers == 0 {
        return Err(Error::contract(format!("feature config {cfg:?}")));
    }
    let win = w.window(cfg.fps);
    if win < 2 {
        return Err(Error::contract(format!("window of {win} samples is too short")));
    }
    let t = frames.unwrap_or(w.samples.len() / win);
    let padded = t * win > w.samples.len();
    let fb = filterbank(cfg.bands, win, w.sample_rate);
    let hann: Vec<f64> = (0..win)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / win as f64).cos())
        .collect();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(win);
    let mut buf = vec![Complex::new(0.0, 0.0); win];
    let mut raw = vec![0.0f64; t * cfg.bands];
    for f in 0..t {
        for (i, c) in buf.iter_mut().enumerate() {
            let s = w.samples.get(f * win + i).copied().unwrap_or(0.0) as f64;
            *c = Complex::new(s * hann[i], 0.0);
        }
        fft.process(&mut buf);
        let power: Vec<f64> = buf[..win / 2 + 1].iter().map(|c| c.norm_sqr()).collect();
        for (b, filt) in fb.iter().enumerate() {
            let e: f64 = filt.iter().zip(&power).map(|(a, p)| a * p).sum();
            raw[f * cfg.bands + b] = e.max(LOG_FLOOR).ln();
        }
    }
    let n = cfg.layers;
    let mut out = vec![0.0f32; t * n * cfg.bands];
    for f in 0..t {
        for layer in 0..n {
            let width = 2 * layer + 1;
            let start = (f + 1).saturating_sub(width);
            for b in 0..cfg.bands {
                let s: f64 = (start..=f).map(|g| raw[g * cfg.bands + b]).sum();
                out[(f * n + layer) * cfg.bands + b] = (s / (f + 1 - start) as f64) as f32;
            }
        }
    }
    Ok(Features {
        data: Tensor::from_vec(&[t, n, cfg.bands], out),
        padded,
    })
}

/// `(F * r_f * N) x width` conditioning tokens, partitioned per latent frame.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioTokens {
    pub tokens: Tensor,
    pub frames: usize,
    pub r_f: usize,
    pub layers: usize,
}

impl AudioTokens {
    pub fn per_latent(&self) -> usize {
        self.r_f * self.layers
    }

    /// Token rows for latent frame `j` (0-based).
    pub fn partition(&self, j: usize) -> std::ops::Range<usize> {
        let n = self.per_latent();
        j * n..(j + 1) * n
    }

    pub fn width(&self) -> usize {
        self.tokens.last_dim()
    }
}

/// Video frame indices feeding global latent `g`: latent 0 is the static
/// head and hears the first frame `r_f` times, later latents hear exactly
/// the frames they encode.
pub fn latent_frame_sources(g: usize, r_f: usize) -> Vec<usize> {
    if g == 0 {
        vec![0; r_f]
    } else {
        (1 + (g - 1) * r_f..1 + g * r_f).collect()
    }
}

/// Video frames needed to align `frames` latents starting at global latent `offset`.
pub fn frames_needed(offset: usize, frames: usize, r_f: usize) -> usize {
    let last = offset + frames - 1;
    if last == 0 {
        1
    } else {
        1 + last * r_f
    }
}

/// Gathers `[T, N, B]` features into the token layout of `frames` latents
/// beginning at global latent `offset`.
pub fn align_to_latents(feats: &Tensor, frames: usize, r_f: usize, offset: usize) -> Result<AudioTokens> {
    if feats.rank() != 3 || frames == 0 || r_f == 0 {
        return Err(Error::contract(format!("align_to_latents: features {:?}, F={frames}, r_f={r_f}", feats.shape())));
    }
    let (t, n, b) = (feats.shape()[0], feats.shape()[1], feats.shape()[2]);
    let need = frames_needed(offset, frames, r_f);
    if need > t {
        return Err(Error::contract(format!(
            "align_to_latents: {} tokens need {need} video frames, only {t} available",
            frames * r_f * n
        )));
    }
    let row = n * b;
    let mut out = Vec::with_capacity(frames * r_f * row);
    for j in 0..frames {
        for src in latent_frame_sources(offset + j, r_f) {
            out.extend_from_slice(&feats.data()[src * row..(src + 1) * row]);
        }
    }
    Ok(AudioTokens {
        tokens: Tensor::from_vec(&[frames * r_f * n, b], out),
        frames,
        r_f,
        layers: n,
    })
}

/// Fixed affine taking log energies to roughly `[0, 3]`; silence maps to 0.
pub fn normalize_features(x: &Tensor) -> Tensor {
    x.map(|v| ((v as f64 - LOG_FLOOR.ln()) * 0.1) as f32)
}

/// Two-layer ReLU MLP lifting band features to model width.
#[derive(Clone, Copy, Debug)]
pub struct AudioProjection {
    pub hidden: Linear,
    pub out: Linear,
}

impl AudioProjection {
    pub fn new<R: Rng>(store: &mut ParamStore, bands: usize, dim: usize, rng: &mut R) -> Self {
        Self {
            hidden: Linear::new(store, "audio.hidden", bands, dim, true, rng),
            out: Linear::new(store, "audio.out", dim, dim, true, rng),
        }
    }

    pub fn param_count(&self) -> usize {
        self.hidden.param_count() + self.out.param_count()
    }
}

/// One token per (frame, layer) feature row, in input row order.
pub fn project_tokens<T: Real>(tape: &mut Tape<T>, store: &ParamStore<T>, proj: &AudioProjection, feats: Var) -> Result<Var> {
    let v = tape.value(feats);
    let b = v.last_dim();
    let rows = v.len() / b.max(1);
    let x = tape.reshape(feats, &[rows, b])?;
    let h = proj.hidden.forward(tape, store, x)?;
    let h = tape.relu(h);
    proj.out.forward(tape, store, h)
}
