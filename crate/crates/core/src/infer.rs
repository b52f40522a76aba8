//! Streaming generation: per-clip Euler denoising where the first `n`
//! latents of every clip are overwritten, at every timestep, by the last
//! `n` latents the previous clip held at that same timestep.

use std::path::Path;
use std::time::Instant;

use crate::audio::{align_to_latents, extract_features, frames_needed, AudioTokens, FeatureConfig, Waveform};
use crate::codec::{Codec, LatentClip, VideoClip};
use crate::error::{Error, Result};
use crate::flow::cfg_combine;
use crate::model::Dit;
use crate::numerics::rng::rng_for;
use crate::numerics::{ParamStore, Tensor};

/// Anything that predicts a velocity for noisy latents.
pub trait Velocity {
    fn velocity(&self, x_t: &Tensor, x_ref: &Tensor, t: f64, audio: Option<&AudioTokens>) -> Result<Tensor>;
}

pub struct Denoiser<'a> {
    pub model: &'a Dit,
    pub store: &'a ParamStore,
}

impl Velocity for Denoiser<'_> {
    fn velocity(&self, x_t: &Tensor, x_ref: &Tensor, t: f64, audio: Option<&AudioTokens>) -> Result<Tensor> {
        self.model.predict(self.store, x_t, x_ref, t, audio)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StreamConfig {
    pub clips: usize,
    /// Euler steps `T`.
    pub steps: usize,
    pub cfg_scale: f64,
    /// Latent overlap `n`.
    pub overlap: usize,
    pub seed: u64,
    /// Latent frames per clip `F`.
    pub frames: usize,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            clips: 1,
            steps: 16,
            cfg_scale: 5.0,
            overlap: 3,
            seed: 0,
            frames: 6,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.clips == 0 || self.frames == 0 {
            return Err(Error::contract("clips, steps and frames must be positive"));
        }
        if !(self.cfg_scale >= 0.0) {
            return Err(Error::contract(format!("guidance scale {} must be non-negative", self.cfg_scale)));
        }
        if self.overlap == 0 || self.overlap >= self.frames {
            return Err(Error::contract(format!("overlap {} must lie in 1..{}", self.overlap, self.frames)));
        }
        Ok(())
    }

    /// Latent frames each clip after the first adds.
    pub fn advance(&self) -> usize {
        self.frames - self.overlap
    }

    /// Global latent index where clip `i` (1-based) starts.
    pub fn clip_offset(&self, i: usize) -> usize {
        (i - 1) * self.advance()
    }

    /// Closed-form total of emitted video frames.
    pub fn total_frames(&self, r_f: usize) -> usize {
        let per = 1 + r_f * (self.frames - 1);
        per + (self.clips - 1) * (per - trim_len(r_f, self.overlap))
    }
}

/// Video frames dropped from every clip after the first.
pub fn trim_len(r_f: usize, n: usize) -> usize {
    r_f * (n - 1) + 1
}

/// Overlap bookkeeping carried from one clip to the next.
#[derive(Clone, Debug)]
pub struct DenoiseState {
    /// 1-based index of the next clip.
    pub clip_index: usize,
    pub steps: usize,
    pub overlap: usize,
    /// `cache[k]`: previous clip's last `n` latents when it sat at `t = (T - k) / T`.
    pub cache: Option<Vec<Tensor>>,
}

impl DenoiseState {
    pub fn new(steps: usize, overlap: usize) -> Self {
        Self {
            clip_index: 1,
            steps,
            overlap,
            cache: None,
        }
    }

    /// Timesteps visited, from `1` down to `1/T`.
    pub fn grid(&self) -> Vec<f64> {
        (1..=self.steps).rev().map(|k| k as f64 / self.steps as f64).collect()
    }

    /// Floats held by a full cache.
    pub fn cache_floats(&self) -> usize {
        self.cache.as_ref().map_or(0, |c| c.iter().map(Tensor::len).sum())
    }
}

/// Copies latent frames `[src, src + n)` of `from` over `[dst, dst + n)` of `into`.
fn copy_frames(into: &mut Tensor, dst: usize, from: &Tensor, src: usize, n: usize) {
    let (c, f_into) = (into.shape()[0], into.shape()[1]);
    let f_from = from.shape()[1];
    let cell = into.len() / (c * f_into);
    for ch in 0..c {
        let a = (ch * f_into + dst) * cell;
        let b = (ch * f_from + src) * cell;
        into.data_mut()[a..a + n * cell].copy_from_slice(&from.data()[b..b + n * cell]);
    }
}

pub type Observer<'a> = dyn FnMut(usize, usize, &Tensor) + 'a;

/// Denoises one clip and leaves its overlap slices in `state` for the next.
///
/// `observe(clip, step, x)` sees the latents entering each Euler step,
/// after the overlap overwrite.
pub fn denoise_clip(
    state: &mut DenoiseState,
    model: &dyn Velocity,
    x_ref: &Tensor,
    audio: &AudioTokens,
    cfg: &StreamConfig,
    mut observe: Option<&mut Observer<'_>>,
) -> Result<LatentClip> {
    let (n, steps) = (state.overlap, state.steps);
    let frames = x_ref.shape()[1];
    if n == 0 || n >= frames {
        return Err(Error::contract(format!("overlap {n} must lie in 1..{frames}")));
    }
    let i = state.clip_index;
    if i > 1 {
        let have = state.cache.as_ref().map_or(0, Vec::len);
        if have < steps {
            let t = (steps - have) as f64 / steps as f64;
            return Err(Error::contract(format!("clip {i}: no overlap cache entry for t = {t:.4}")));
        }
    }
    let mut rng = rng_for(cfg.seed, &[i as u64]);
    let mut x = Tensor::randn(x_ref.shape(), 1.0, &mut rng);
    let mut next = Vec::with_capacity(steps);
    let dt = 1.0 / steps as f64;
    for (k, &t) in state.grid().iter().enumerate() {
        if i > 1 {
            let cached = &state.cache.as_ref().expect("checked above")[k];
            copy_frames(&mut x, 0, cached, 0, n);
        }
        if let Some(f) = observe.as_deref_mut() {
            f(i, k, &x);
        }
        next.push(x.narrow(1, frames - n, frames)?);
        let cond = model.velocity(&x, x_ref, t, Some(audio))?;
        let v = if cfg.cfg_scale == 1.0 {
            cond
        } else {
            let uncond = model.velocity(&x, x_ref, t, None)?;
            cfg_combine(&cond, &uncond, cfg.cfg_scale)?
        };
        let step = dt as f32;
        x = x.zip_map(&v, |a, b| a - step * b)?;
    }
    state.cache = Some(next);
    state.clip_index += 1;
    Ok(LatentClip {
        latents: x,
        static_head: i == 1,
    })
}

/// Decodes a clip; clips after the first drop the `r_f (n - 1) + 1` frames
/// their inherited latents already produced.
pub fn trim_and_decode(x0: &LatentClip, i: usize, codec: &Codec, n: usize, fps: f32) -> Result<VideoClip> {
    let v = codec.decode_tensor(&x0.latents, fps)?;
    if i <= 1 {
        return Ok(v);
    }
    let drop = trim_len(codec.temporal, n);
    let total = v.num_frames();
    if drop >= total {
        return Err(Error::contract(format!("trimming {drop} of {total} frames leaves nothing")));
    }
    v.slice(drop, total)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClipTiming {
    pub clip: usize,
    pub ms_denoise: f64,
    pub ms_decode: f64,
    pub frames: usize,
}

impl ClipTiming {
    pub fn fps(&self) -> f64 {
        self.frames as f64 / ((self.ms_denoise + self.ms_decode) / 1000.0).max(1e-9)
    }
}

pub const TIMING_CSV_HEADER: &str = "clip,ms_denoise,ms_decode,fps";

pub fn write_timings(path: &Path, timings: &[ClipTiming]) -> Result<()> {
    let mut s = format!("{TIMING_CSV_HEADER}\n");
    for t in timings {
        s.push_str(&format!("{},{:.3},{:.3},{:.3}\n", t.clip, t.ms_denoise, t.ms_decode, t.fps()));
    }
    crate::codec::write_bytes(path, s.as_bytes())
}

#[derive(Clone, Debug)]
pub struct StreamOutput {
    pub video: VideoClip,
    pub timings: Vec<ClipTiming>,
    /// First frame index of every clip after the first.
    pub boundaries: Vec<usize>,
    /// Frame span `[start, end)` contributed by each clip.
    pub spans: Vec<(usize, usize)>,
}

/// Everything `generate_stream` needs besides the model.
#[derive(Clone, Copy, Debug)]
pub struct Pipeline {
    pub codec: Codec,
    pub features: FeatureConfig,
}

/// Audio frames the stream needs; errors with both durations if the waveform is short.
pub fn check_audio(w: &Waveform, pipe: &Pipeline, cfg: &StreamConfig) -> Result<usize> {
    let frames = frames_needed(cfg.clip_offset(cfg.clips), cfg.frames, pipe.codec.temporal);
    let required = frames * w.window(pipe.features.fps);
    let available = w.samples.len();
    if available < required {
        let sr = w.sample_rate as f64;
        return Err(Error::AudioUnderrun {
            required_samples: required,
            available_samples: available,
            required_s: required as f64 / sr,
            available_s: available as f64 / sr,
        });
    }
    Ok(frames)
}

pub fn generate_stream(
    ref_image: &Tensor,
    w: &Waveform,
    model: &dyn Velocity,
    pipe: &Pipeline,
    cfg: &StreamConfig,
    mut observe: Option<&mut Observer<'_>>,
) -> Result<StreamOutput> {
    cfg.validate()?;
    let frames = check_audio(w, pipe, cfg)?;
    let feats = extract_features(w, &pipe.features, Some(frames))?;
    let x_ref = pipe.codec.encode_reference(ref_image, cfg.frames)?;
    let mut state = DenoiseState::new(cfg.steps, cfg.overlap);
    let mut parts = Vec::with_capacity(cfg.clips);
    let mut timings = Vec::with_capacity(cfg.clips);
    let mut spans = Vec::with_capacity(cfg.clips);
    let mut emitted = 0;
    for i in 1..=cfg.clips {
        let audio = align_to_latents(&feats.data, cfg.frames, pipe.codec.temporal, cfg.clip_offset(i))?;
        let t0 = Instant::now();
        let x0 = denoise_clip(&mut state, model, &x_ref, &audio, cfg, observe.as_deref_mut())?;
        let t1 = Instant::now();
        let clip = trim_and_decode(&x0, i, &pipe.codec, cfg.overlap, pipe.features.fps)?.clamped();
        let t2 = Instant::now();
        timings.push(ClipTiming {
            clip: i,
            ms_denoise: (t1 - t0).as_secs_f64() * 1000.0,
            ms_decode: (t2 - t1).as_secs_f64() * 1000.0,
            frames: clip.num_frames(),
        });
        spans.push((emitted, emitted + clip.num_frames()));
        emitted += clip.num_frames();
        parts.push(clip);
    }
    let refs: Vec<&VideoClip> = parts.iter().collect();
    let video = VideoClip::concat(&refs)?;
    let boundaries = spans.iter().skip(1).map(|s| s.0).collect();
    Ok(StreamOutput {
        video,
        timings,
        boundaries,
        spans,
    })
}
