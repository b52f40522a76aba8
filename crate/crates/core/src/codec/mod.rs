//! Exactly invertible causal video codec.
//!
//! Each latent frame packs one `r_f x p x p` block per color channel through
//! a separable orthonormal Haar transform. The first latent frame carries
//! the first video frame replicated `r_f` times; every later latent frame
//! carries the next `r_f` frames. A clip of `F` latents therefore decodes to
//! `1 + r_f * (F - 1)` frames.

mod container;

pub(crate) use container::{write_file as write_bytes, Reader};
pub use container::{read_mask, read_ppm, read_video, write_mask, write_pgm, write_ppm, write_video, MaskClip};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// `[3, T, H_px, W_px]` frames with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub frames: Tensor,
    pub fps: f32,
}

impl VideoClip {
    pub fn new(frames: Tensor, fps: f32) -> Result<Self> {
        if frames.rank() != 4 || frames.shape()[0] != 3 {
            return Err(Error::shape("video", frames.shape(), &[3, 0, 0, 0]));
        }
        Ok(Self { frames, fps })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[3]
    }

    /// `[3, H, W]` copy of frame `t`.
    pub fn frame(&self, t: usize) -> Tensor {
        let (h, w) = (self.height(), self.width());
        let n = self.num_frames();
        let mut out = Vec::with_capacity(3 * h * w);
        for c in 0..3 {
            let base = (c * n + t) * h * w;
            out.extend_from_slice(&self.frames.data()[base..base + h * w]);
        }
        Tensor::from_vec(&[3, h, w], out)
    }

    /// Frames `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        Ok(Self {
            frames: self.frames.narrow(1, start, end)?,
            fps: self.fps,
        })
    }

    /// Temporal concatenation.
    pub fn concat(parts: &[&VideoClip]) -> Result<Self> {
        let frames: Vec<&Tensor> = parts.iter().map(|p| &p.frames).collect();
        let fps = parts.first().map_or(25.0, |p| p.fps);
        Ok(Self {
            frames: Tensor::concat(&frames, 1)?,
            fps,
        })
    }

    pub fn clamped(mut self) -> Self {
        self.frames.data_mut().iter_mut().for_each(|x| *x = x.clamp(0.0, 1.0));
        self
    }
}

/// `[C, F, H, W]` latents, `C = 3 * p^2 * r_f`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentClip {
    pub latents: Tensor,
    /// The first latent frame encodes a single replicated frame.
    pub static_head: bool,
}

impl LatentClip {
    pub fn channels(&self) -> usize {
        self.latents.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.latents.shape()[1]
    }

    /// Latent frames `[start, end)`; the static flag survives only if frame 0 is kept.
    pub fn window(&self, start: usize, end: usize) -> Result<Self> {
        Ok(Self {
            latents: self.latents.narrow(1, start, end)?,
            static_head: self.static_head && start == 0,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Codec {
    /// Spatial block edge `p`.
    pub patch: usize,
    /// Temporal compression `r_f`.
    pub temporal: usize,
}

impl Default for Codec {
    fn default() -> Self {
        Self { patch: 8, temporal: 4 }
    }
}

impl Codec {
    pub fn new(patch: usize, temporal: usize) -> Result<Self> {
        for (name, v) in [("patch", patch), ("temporal", temporal)] {
            if v == 0 || !v.is_power_of_two() {
                return Err(Error::contract(format!("codec {name} {v} must be a power of two")));
            }
        }
        Ok(Self { patch, temporal })
    }

    pub fn channels(&self) -> usize {
        3 * self.patch * self.patch * self.temporal
    }

    /// Video frames produced by `latent_frames` latents with a static head.
    pub fn decoded_frames(&self, latent_frames: usize) -> usize {
        if latent_frames == 0 {
            0
        } else {
            1 + self.temporal * (latent_frames - 1)
        }
    }

    /// Latent frames needed for `video_frames`, if the count is encodable.
    pub fn latent_frames_for(&self, video_frames: usize) -> Option<usize> {
        (video_frames >= 1 && (video_frames - 1) % self.temporal == 0)
            .then(|| 1 + (video_frames - 1) / self.temporal)
    }

    fn check_spatial(&self, h: usize, w: usize) -> Result<()> {
        if h % self.patch != 0 || w % self.patch != 0 || h == 0 || w == 0 {
            return Err(Error::shape("codec spatial", &[h, w], &[self.patch, self.patch]));
        }
        Ok(())
    }

    /// Source frame indices for latent frame `j`.
    fn source_frames(&self, j: usize) -> Vec<usize> {
        if j == 0 {
            vec![0; self.temporal]
        } else {
            (1 + (j - 1) * self.temporal..1 + j * self.temporal).collect()
        }
    }

    pub fn encode_video(&self, v: &VideoClip) -> Result<LatentClip> {
        let (t, h, w) = (v.num_frames(), v.height(), v.width());
        let f = self
            .latent_frames_for(t)
            .ok_or_else(|| Error::shape("encode_video frames", &[t], &[self.temporal]))?;
        self.check_spatial(h, w)?;
        let latents = self.encode_with(f, h, w, |j| self.source_frames(j), |frame, c, y, x| {
            v.frames.data()[((c * t + frame) * h + y) * w + x]
        });
        Ok(LatentClip {
            latents,
            static_head: true,
        })
    }

    /// Reference image `[3, H, W]` repeated over every temporal slot of `frames` latents.
    pub fn encode_reference(&self, img: &Tensor, frames: usize) -> Result<Tensor> {
        if img.rank() != 3 || img.shape()[0] != 3 {
            return Err(Error::shape("encode_reference", img.shape(), &[3, 0, 0]));
        }
        let (h, w) = (img.shape()[1], img.shape()[2]);
        self.check_spatial(h, w)?;
        Ok(self.encode_with(frames, h, w, |_| vec![0; self.temporal], |_, c, y, x| {
            img.data()[(c * h + y) * w + x]
        }))
    }

    fn encode_with(
        &self,
        f: usize,
        h: usize,
        w: usize,
        frames_of: impl Fn(usize) -> Vec<usize>,
        pixel: impl Fn(usize, usize, usize, usize) -> f32,
    ) -> Tensor {
        let (p, r) = (self.patch, self.temporal);
        let (gh, gw) = (h / p, w / p);
        let per_color = r * p * p;
        let ch = self.channels();
        let mut out = vec![0.0f32; ch * f * gh * gw];
        let mut block = vec![0.0f32; per_color];
        let mut scratch = vec![0.0f32; r.max(p)];
        for j in 0..f {
            let src = frames_of(j);
            for by in 0..gh {
                for bx in 0..gw {
                    for c in 0..3 {
                        for (tt, &frame) in src.iter().enumerate() {
                            for yy in 0..p {
                                for xx in 0..p {
                                    block[(tt * p + yy) * p + xx] = pixel(frame, c, by * p + yy, bx * p + xx);
                                }
                            }
                        }
                        haar3(&mut block, r, p, &mut scratch, false);
                        for (k, &val) in block.iter().enumerate() {
                            let chan = c * per_color + k;
                            out[((chan * f + j) * gh + by) * gw + bx] = val;
                        }
                    }
                }
            }
        }
        Tensor::from_vec(&[ch, f, gh, gw], out)
    }

    pub fn decode_latents(&self, l: &LatentClip) -> Result<VideoClip> {
        self.decode_tensor(&l.latents, 25.0)
    }

    /// Inverse of [`Codec::encode_video`]; the static head contributes its first temporal sample.
    pub fn decode_tensor(&self, latents: &Tensor, fps: f32) -> Result<VideoClip> {
        let s = latents.shape();
        if s.len() != 4 || s[0] != self.channels() {
            return Err(Error::shape("decode_latents channels", s, &[self.channels()]));
        }
        let (f, gh, gw) = (s[1], s[2], s[3]);
        let (p, r) = (self.patch, self.temporal);
        let (h, w) = (gh * p, gw * p);
        let t = self.decoded_frames(f);
        let per_color = r * p * p;
        let mut out = vec![0.0f32; 3 * t * h * w];
        let mut block = vec![0.0f32; per_color];
        let mut scratch = vec![0.0f32; r.max(p)];
        let ld = latents.data();
        for j in 0..f {
            let targets: Vec<Option<usize>> = if j == 0 {
                (0..r).map(|tt| (tt == 0).then_some(0)).collect()
            } else {
                (0..r).map(|tt| Some(1 + (j - 1) * r + tt)).collect()
            };
            for by in 0..gh {
                for bx in 0..gw {
                    for c in 0..3 {
                        for (k, b) in block.iter_mut().enumerate() {
                            let chan = c * per_color + k;
                            *b = ld[((chan * f + j) * gh + by) * gw + bx];
                        }
                        haar3(&mut block, r, p, &mut scratch, true);
                        for (tt, target) in targets.iter().enumerate() {
                            let Some(frame) = target else { continue };
                            for yy in 0..p {
                                for xx in 0..p {
                                    out[((c * t + frame) * h + by * p + yy) * w + bx * p + xx] =
                                        block[(tt * p + yy) * p + xx];
                                }
                            }
                        }
                    }
                }
            }
        }
        VideoClip::new(Tensor::from_vec(&[3, t, h, w], out), fps)
    }
}

/// Orthonormal full-depth Haar transform of a strided power-of-two sequence.
fn haar1(data: &mut [f32], offset: usize, stride: usize, n: usize, scratch: &mut [f32], inverse: bool) {
    const S: f32 = std::f32::consts::FRAC_1_SQRT_2;
    if inverse {
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            for i in 0..half {
                let a = data[offset + i * stride];
                let d = data[offset + (half + i) * stride];
                scratch[2 * i] = (a + d) * S;
                scratch[2 * i + 1] = (a - d) * S;
            }
            for i in 0..len {
                data[offset + i * stride] = scratch[i];
            }
            len *= 2;
        }
    } else {
        let mut len = n;
        while len > 1 {
            let half = len / 2;
            for i in 0..half {
                let x0 = data[offset + 2 * i * stride];
                let x1 = data[offset + (2 * i + 1) * stride];
                scratch[i] = (x0 + x1) * S;
                scratch[half + i] = (x0 - x1) * S;
            }
            for i in 0..len {
                data[offset + i * stride] = scratch[i];
            }
            len = half;
        }
    }
}

/// Separable Haar over a `[r][p][p]` block.
fn haar3(block: &mut [f32], r: usize, p: usize, scratch: &mut [f32], inverse: bool) {
    for yy in 0..p {
        for xx in 0..p {
            haar1(block, yy * p + xx, p * p, r, scratch, inverse);
        }
    }
    for tt in 0..r {
        for yy in 0..p {
            haar1(block, (tt * p + yy) * p, 1, p, scratch, inverse);
        }
        for xx in 0..p {
            haar1(block, tt * p * p + xx, p, p, scratch, inverse);
        }
    }
}
