//! Diffusion-transformer denoiser with hybrid full/window audio cross-attention.
//!
//! Tokens are latent cells in frame-major order. Each block runs
//! timestep-modulated self-attention, then audio cross-attention whose full
//! and windowed branches are blended per layer, then a modulated FFN.
//!
//! The network output is wrapped in a per-channel preconditioning built from
//! data statistics `mu`, `sigma` (non-trainable `stats.*` tensors):
//!
//! ```text
//! a      = x_t - (1 - t) mu
//! D(t)   = t^2 + (1 - t)^2 sigma^2
//! input  = a / sqrt(D)
//! v      = -mu + (t - (1 - t) sigma^2) / D * a + sigma / sqrt(D) * G
//! ```
//!
//! so that a zero network `G` already predicts the best linear velocity.

pub mod layers;

use std::fmt;

use rand::Rng;

use crate::audio::{normalize_features, project_tokens, AudioProjection, AudioTokens};
use crate::error::{Error, Result};
use crate::numerics::rng::rng_for;
use crate::numerics::{AttnGroup, ParamId, ParamStore, Real, Tape, Tensor, Var};
use layers::{Linear, Norm, LN_EPS};

/// Per-layer blend weight `alpha(i) = w * i / L + delta`, clamped to `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HybridSchedule {
    pub w: f64,
    pub delta: f64,
    pub layers: usize,
}

impl HybridSchedule {
    pub fn new(w: f64, delta: f64, layers: usize) -> Self {
        Self { w, delta, layers }
    }

    /// Unclamped value of the schedule at layer `i`.
    pub fn raw(&self, i: usize) -> f64 {
        self.w * i as f64 / self.layers as f64 + self.delta
    }

    pub fn alpha(&self, i: usize) -> f64 {
        self.raw(i).clamp(0.0, 1.0)
    }

    pub fn full_only(layers: usize) -> Self {
        Self::new(0.0, 0.0, layers)
    }

    pub fn window_only(layers: usize) -> Self {
        Self::new(0.0, 1.0, layers)
    }

    pub fn hybrid(layers: usize) -> Self {
        Self::new(1.0, 0.0, layers)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    /// Latent channels `C`; the denoiser reads `2C` (noisy + reference).
    pub channels: usize,
    /// Default clip length in latent frames; `forward` accepts any `F`.
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub audio_layers: usize,
    pub r_f: usize,
    pub schedule: HybridSchedule,
    /// Skip the branch whose blend weight is exactly zero.
    pub skip_degenerate: bool,
    /// Disable self-attention (locality diagnostics only).
    pub self_attention: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            layers: 6,
            heads: 4,
            ffn: 256,
            channels: 768,
            frames: 6,
            height: 4,
            width: 4,
            bands: 16,
            audio_layers: 2,
            r_f: 4,
            schedule: HybridSchedule::hybrid(6),
            skip_degenerate: true,
            self_attention: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.dim % self.heads != 0 || self.dim % 4 != 0 {
            return Err(Error::contract(format!(
                "model dim {} must split into {} heads and be a multiple of 4, with at least one layer",
                self.dim, self.heads
            )));
        }
        if self.schedule.layers != self.layers {
            return Err(Error::contract(format!(
                "schedule spans {} layers, model has {}",
                self.schedule.layers, self.layers
            )));
        }
        if [self.ffn, self.channels, self.frames, self.height, self.width, self.bands, self.audio_layers, self.r_f].contains(&0) {
            return Err(Error::contract("model sizes must be positive"));
        }
        Ok(())
    }

    pub fn tokens(&self, frames: usize) -> usize {
        frames * self.height * self.width
    }

    /// Trainable parameters:
    ///
    /// ```text
    /// patch       2C*D + D
    /// time MLP    2(D*D + D)
    /// audio MLP   B*D + D + D*D + D
    /// null token  D
    /// per block   6D*D + 6D              modulation
    ///             4(D*D + D)             self-attention
    ///             2(2D + 4(D*D + D))     full and window cross-attention
    ///             2*D*ffn + ffn + D      FFN
    /// final       2D*D + 2D + D*C + C
    /// ```
    pub fn param_count(&self) -> usize {
        let (d, c, b, f) = (self.dim, self.channels, self.bands, self.ffn);
        let lin = |i: usize, o: usize| i * o + o;
        let block = lin(d, 6 * d) + 4 * lin(d, d) + 2 * (2 * d + 4 * lin(d, d)) + lin(d, f) + lin(f, d);
        lin(2 * c, d) + 2 * lin(d, d) + lin(b, d) + lin(d, d) + d + self.layers * block + lin(d, 2 * d) + lin(d, c)
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "D={} L={} heads={} ffn={} C={} grid={}x{}x{} w={} delta={}",
            self.dim, self.layers, self.heads, self.ffn, self.channels, self.frames, self.height, self.width,
            self.schedule.w, self.schedule.delta
        )
    }
}

#[derive(Clone, Copy, Debug)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

impl Attention {
    fn new<R: Rng>(store: &mut ParamStore, name: &str, d: usize, rng: &mut R) -> Self {
        Self {
            q: Linear::new(store, &format!("{name}.q"), d, d, true, rng),
            k: Linear::new(store, &format!("{name}.k"), d, d, true, rng),
            v: Linear::new(store, &format!("{name}.v"), d, d, true, rng),
            o: Linear::new(store, &format!("{name}.o"), d, d, true, rng),
        }
    }

    fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        ctx: Var,
        heads: usize,
        groups: &[AttnGroup],
    ) -> Result<Var> {
        let q = self.q.forward(tape, store, x)?;
        let k = self.k.forward(tape, store, ctx)?;
        let v = self.v.forward(tape, store, ctx)?;
        let a = tape.attention(q, k, v, heads, groups)?;
        self.o.forward(tape, store, a)
    }
}

#[derive(Clone, Copy, Debug)]
struct CrossBranch {
    norm: Norm,
    attn: Attention,
}

#[derive(Clone, Debug)]
struct Block {
    modulation: Linear,
    self_attn: Attention,
    full: CrossBranch,
    window: CrossBranch,
    ffn_in: Linear,
    ffn_out: Linear,
}

/// Shift, scale and gate rows for one block's two modulated sublayers,
/// plus the final shift/scale pair.
#[derive(Clone, Debug)]
pub struct TimeModulation {
    pub blocks: Vec<[Var; 6]>,
    pub last: [Var; 2],
}

#[derive(Clone, Debug)]
pub struct Dit {
    pub cfg: ModelConfig,
    patch: Linear,
    time_in: Linear,
    time_out: Linear,
    pub audio: AudioProjection,
    null_token: ParamId,
    blocks: Vec<Block>,
    final_mod: Linear,
    out: Linear,
    pub stats_mean: ParamId,
    pub stats_std: ParamId,
}

/// Lower bound on per-channel data scale used by the preconditioning.
pub const MIN_STD: f32 = 0.05;

pub fn sinusoid(pos: f64, dim: usize, base: f64) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let w = base.powf(-(k as f64) / half as f64);
        out[k] = (pos * w).sin();
        out[half + k] = (pos * w).cos();
    }
    out
}

/// Fixed additive (frame, row, col) encodings, `[F*H*W, D]`.
pub fn position_encoding(frames: usize, h: usize, w: usize, dim: usize) -> Tensor {
    let (df, dr) = (dim / 2, dim / 4);
    let dc = dim - df - dr;
    let mut out = Vec::with_capacity(frames * h * w * dim);
    for f in 0..frames {
        let ef = sinusoid(f as f64, df, 100.0);
        for y in 0..h {
            let er = sinusoid(y as f64, dr, 100.0);
            for x in 0..w {
                let ec = sinusoid(x as f64, dc, 100.0);
                out.extend(ef.iter().chain(&er).chain(&ec).map(|&v| v as f32));
            }
        }
    }
    Tensor::from_vec(&[frames * h * w, dim], out)
}

/// `[C, F, H, W]` to `[F*H*W, C]`.
pub fn to_tokens<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let c = x.shape()[0];
    x.reshape(&[c, x.len() / c])?.transpose2()
}

impl Dit {
    /// Fresh model: random weights, zero modulation and output heads,
    /// unit data statistics.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<(Self, ParamStore)> {
        cfg.validate()?;
        let mut rng = rng_for(seed, &[0x1a17]);
        let mut s = ParamStore::new();
        let (d, c) = (cfg.dim, cfg.channels);
        let patch = Linear::new(&mut s, "patch", 2 * c, d, true, &mut rng);
        let time_in = Linear::new(&mut s, "time.in", d, d, true, &mut rng);
        let time_out = Linear::new(&mut s, "time.out", d, d, true, &mut rng);
        let audio = AudioProjection::new(&mut s, cfg.bands, d, &mut rng);
        let null_token = s.add("audio.null", Tensor::randn(&[d], 0.02, &mut rng));
        let mut blocks = Vec::with_capacity(cfg.layers);
        for i in 0..cfg.layers {
            let p = format!("block{i}");
            let branch = |s: &mut ParamStore, rng: &mut _, name: &str| CrossBranch {
                norm: Norm::new(s, &format!("{p}.{name}.norm"), d),
                attn: Attention::new(s, &format!("{p}.{name}"), d, rng),
            };
            blocks.push(Block {
                modulation: Linear::zeroed(&mut s, &format!("{p}.mod"), d, 6 * d),
                self_attn: Attention::new(&mut s, &format!("{p}.self"), d, &mut rng),
                full: branch(&mut s, &mut rng, "full"),
                window: branch(&mut s, &mut rng, "window"),
                ffn_in: Linear::new(&mut s, &format!("{p}.ffn.in"), d, cfg.ffn, true, &mut rng),
                ffn_out: Linear::new(&mut s, &format!("{p}.ffn.out"), cfg.ffn, d, true, &mut rng),
            });
        }
        let final_mod = Linear::zeroed(&mut s, "final.mod", d, 2 * d);
        let out = Linear::zeroed(&mut s, "final.out", d, c);
        let stats_mean = s.add("stats.mean", Tensor::zeros(&[c]));
        let stats_std = s.add("stats.std", Tensor::full(&[c], 1.0));
        Ok((
            Self {
                cfg,
                patch,
                time_in,
                time_out,
                audio,
                null_token,
                blocks,
                final_mod,
                out,
                stats_mean,
                stats_std,
            },
            s,
        ))
    }

    /// Parameters the optimizer may touch (everything except `stats.*`).
    pub fn trainable(&self, store: &ParamStore) -> Vec<ParamId> {
        store.ids().filter(|&id| id != self.stats_mean && id != self.stats_std).collect()
    }

    /// Sets the preconditioning statistics from per-channel moments of clean latents.
    pub fn set_stats(&self, store: &mut ParamStore, mean: &[f32], std: &[f32]) -> Result<()> {
        let c = self.cfg.channels;
        if mean.len() != c || std.len() != c {
            return Err(Error::shape("set_stats", &[mean.len(), std.len()], &[c, c]));
        }
        *store.get_mut(self.stats_mean) = Tensor::from_vec(&[c], mean.to_vec());
        *store.get_mut(self.stats_std) = Tensor::from_vec(&[c], std.iter().map(|s| s.max(MIN_STD)).collect());
        Ok(())
    }

    pub fn timestep_embed<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, t: f64) -> Result<TimeModulation> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::contract(format!("timestep {t} outside [0, 1]")));
        }
        let d = self.cfg.dim;
        let table: Vec<T> = sinusoid(t * 1000.0, d, 10_000.0).into_iter().map(T::of).collect();
        let x = tape.constant(Tensor::from_vec(&[1, d], table));
        let h = self.time_in.forward(tape, store, x)?;
        let h = tape.silu(h);
        let e = self.time_out.forward(tape, store, h)?;
        let e = tape.silu(e);
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let m = b.modulation.forward(tape, store, e)?;
            let mut six = [m; 6];
            for (k, slot) in six.iter_mut().enumerate() {
                *slot = tape.slice_cols(m, k * d, d)?;
            }
            blocks.push(six);
        }
        let m = self.final_mod.forward(tape, store, e)?;
        let last = [tape.slice_cols(m, 0, d)?, tape.slice_cols(m, d, d)?];
        Ok(TimeModulation { blocks, last })
    }

    /// Audio conditioning tokens `[M, D]`; `None` yields the null token repeated
    /// to the length real audio would have for `frames` latents.
    pub fn audio_context<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        audio: Option<&AudioTokens>,
        frames: usize,
    ) -> Result<Var> {
        let per = self.cfg.r_f * self.cfg.audio_layers;
        match audio {
            Some(a) => {
                if a.frames != frames || a.per_latent() != per || a.width() != self.cfg.bands {
                    return Err(Error::contract(format!(
                        "audio tokens for {} latents x {} rows x {} bands do not fit {frames} latents x {per} x {}",
                        a.frames,
                        a.per_latent(),
                        a.width(),
                        self.cfg.bands
                    )));
                }
                let x = tape.constant(normalize_features(&a.tokens).cast());
                project_tokens(tape, store, &self.audio, x)
            }
            None => {
                let null = tape.param(store, self.null_token);
                Ok(tape.repeat_rows(null, frames * per))
            }
        }
    }

    fn modulate<T: Real>(tape: &mut Tape<T>, x: Var, shift: Var, scale: Var) -> Result<Var> {
        let h = tape.layer_norm(x, None, None, LN_EPS)?;
        let s = tape.shift(scale, 1.0);
        let h = tape.mul_row(h, s)?;
        tape.add_row(h, shift)
    }

    /// Residual cross-attention branch; `groups` selects full or windowed keys.
    fn cross<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        branch: &CrossBranch,
        z: Var,
        ctx: Var,
        groups: &[AttnGroup],
    ) -> Result<Var> {
        let h = branch.norm.forward(tape, store, z)?;
        let a = branch.attn.forward(tape, store, h, ctx, self.cfg.heads, groups)?;
        tape.add(z, a)
    }

    /// Every video token attends to every audio token.
    pub fn full_sequence_fusion<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, layer: usize, z: Var, ctx: Var) -> Result<Var> {
        let (s, m) = (tape.value(z).rows(), tape.value(ctx).rows());
        let groups = [AttnGroup { q: (0, s), k: (0, m) }];
        self.cross(tape, store, &self.blocks[layer].full, z, ctx, &groups)
    }

    /// Tokens of latent frame `j` attend only to audio partition `j`.
    pub fn window_fusion<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        layer: usize,
        z: Var,
        ctx: Var,
        frames: usize,
    ) -> Result<Var> {
        let (s, m) = (tape.value(z).rows(), tape.value(ctx).rows());
        if frames == 0 || s % frames != 0 || m % frames != 0 {
            return Err(Error::contract(format!(
                "window fusion: {s} video tokens and {m} audio tokens do not split into {frames} frames"
            )));
        }
        let (qs, ks) = (s / frames, m / frames);
        let groups: Vec<AttnGroup> = (0..frames)
            .map(|j| AttnGroup {
                q: (j * qs, (j + 1) * qs),
                k: (j * ks, (j + 1) * ks),
            })
            .collect();
        self.cross(tape, store, &self.blocks[layer].window, z, ctx, &groups)
    }

    /// `alpha * z_window + (1 - alpha) * z_full` for layer `layer`.
    pub fn hybrid_fuse<T: Real>(&self, tape: &mut Tape<T>, layer: usize, z_full: Var, z_window: Var) -> Result<Var> {
        let a = self.cfg.schedule.alpha(layer);
        let w = tape.scale(z_window, a);
        let f = tape.scale(z_full, 1.0 - a);
        tape.add(w, f)
    }

    fn fusion<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        layer: usize,
        z: Var,
        ctx: Var,
        frames: usize,
    ) -> Result<Var> {
        let a = self.cfg.schedule.alpha(layer);
        if self.cfg.skip_degenerate && a == 1.0 {
            return self.window_fusion(tape, store, layer, z, ctx, frames);
        }
        if self.cfg.skip_degenerate && a == 0.0 {
            return self.full_sequence_fusion(tape, store, layer, z, ctx);
        }
        let zf = self.full_sequence_fusion(tape, store, layer, z, ctx)?;
        let zw = self.window_fusion(tape, store, layer, z, ctx, frames)?;
        self.hybrid_fuse(tape, layer, zf, zw)
    }

    /// `[2C, F, H, W]` to `[F*H*W, D]` with position encodings added.
    pub fn patchify<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: &Tensor<T>) -> Result<Var> {
        let s = x.shape();
        let (c2, h, w) = (2 * self.cfg.channels, self.cfg.height, self.cfg.width);
        if s.len() != 4 || s[0] != c2 || s[2] != h || s[3] != w {
            return Err(Error::shape("patchify", s, &[c2, 0, h, w]));
        }
        let tokens = tape.constant(to_tokens(x)?);
        let z = self.patch.forward(tape, store, tokens)?;
        let pos = position_encoding(s[1], h, w, self.cfg.dim).cast();
        tape.add_const(z, &pos)
    }

    /// Velocity prediction `[C, F, H, W]` for noisy latents `x_t` at time `t`.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x_t: &Tensor<T>,
        x_ref: &Tensor<T>,
        t: f64,
        audio: Option<&AudioTokens>,
    ) -> Result<Var> {
        let cfg = &self.cfg;
        let (c, h, w) = (cfg.channels, cfg.height, cfg.width);
        let xs = x_t.shape();
        if xs.len() != 4 || xs[0] != c || xs[2] != h || xs[3] != w || xs[1] == 0 {
            return Err(Error::shape("forward input", xs, &[c, cfg.frames, h, w]));
        }
        if x_ref.shape() != xs {
            return Err(Error::shape("forward reference", x_ref.shape(), xs));
        }
        let frames = xs[1];
        let cells = frames * h * w;

        let mean: Vec<f64> = store.get(self.stats_mean).data().iter().map(|v| v.f64()).collect();
        let std: Vec<f64> = store.get(self.stats_std).data().iter().map(|v| v.f64()).collect();
        let tt = t;
        let mut x_in = Vec::with_capacity(2 * c * cells);
        let mut skip = Vec::with_capacity(c * cells);
        let mut c_out = Vec::with_capacity(c * cells);
        for ch in 0..c {
            let (mu, sd) = (mean[ch], std[ch]);
            let dd = tt * tt + (1.0 - tt) * (1.0 - tt) * sd * sd;
            let c_in = 1.0 / dd.sqrt();
            let c_skip = (tt - (1.0 - tt) * sd * sd) / dd;
            let co = sd / dd.sqrt();
            for &v in &x_t.data()[ch * cells..(ch + 1) * cells] {
                let a = v.f64() - (1.0 - tt) * mu;
                x_in.push(T::of(a * c_in));
                skip.push(T::of(-mu + c_skip * a));
                c_out.push(T::of(co));
            }
        }
        for ch in 0..c {
            let (mu, sd) = (mean[ch], std[ch]);
            x_in.extend(x_ref.data()[ch * cells..(ch + 1) * cells].iter().map(|&v| T::of((v.f64() - mu) / sd)));
        }
        let inp = Tensor::from_vec(&[2 * c, frames, h, w], x_in);

        let mut z = self.patchify(tape, store, &inp)?;
        let m = self.timestep_embed(tape, store, t)?;
        let ctx = self.audio_context(tape, store, audio, frames)?;
        for (i, blk) in self.blocks.iter().enumerate() {
            let [sh1, sc1, g1, sh2, sc2, g2] = m.blocks[i];
            let ctx_err = |e: Error| Error::contract(format!("block {i}: {e}"));
            if cfg.self_attention {
                let hh = Self::modulate(tape, z, sh1, sc1).map_err(ctx_err)?;
                let groups = [AttnGroup { q: (0, cells), k: (0, cells) }];
                let a = blk.self_attn.forward(tape, store, hh, hh, cfg.heads, &groups).map_err(ctx_err)?;
                let a = tape.mul_row(a, g1)?;
                z = tape.add(z, a)?;
            }
            z = self.fusion(tape, store, i, z, ctx, frames).map_err(ctx_err)?;
            let hh = Self::modulate(tape, z, sh2, sc2).map_err(ctx_err)?;
            let f = blk.ffn_in.forward(tape, store, hh)?;
            let f = tape.gelu(f);
            let f = blk.ffn_out.forward(tape, store, f)?;
            let f = tape.mul_row(f, g2)?;
            z = tape.add(z, f)?;
        }
        let hh = Self::modulate(tape, z, m.last[0], m.last[1])?;
        let g = self.out.forward(tape, store, hh)?;
        let g = tape.transpose(g)?;
        let g = tape.reshape(g, &[c, frames, h, w])?;
        let g = tape.mul_const(g, Tensor::from_vec(&[c, frames, h, w], c_out))?;
        tape.add_const(g, &Tensor::from_vec(&[c, frames, h, w], skip))
    }

    /// Forward pass without gradient bookkeeping beyond one throwaway tape.
    pub fn predict(&self, store: &ParamStore, x_t: &Tensor, x_ref: &Tensor, t: f64, audio: Option<&AudioTokens>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let v = self.forward(&mut tape, store, x_t, x_ref, t, audio)?;
        Ok(tape.value(v).clone())
    }
}

/// Adds `N(0, std^2)` noise to every parameter (diagnostics: makes zero-initialized heads active).
pub fn jitter<T: Real>(store: &mut ParamStore<T>, std: f64, seed: u64) {
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let mut rng = rng_for(seed, &[id.0 as u64]);
        let p = store.get_mut(id);
        let noise = Tensor::<T>::randn(p.shape(), std, &mut rng);
        for (x, n) in p.data_mut().iter_mut().zip(noise.data()) {
            *x += *n;
        }
    }
}
