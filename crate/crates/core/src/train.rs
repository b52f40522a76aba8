//! Static/dynamic hybrid training with flow matching and Adam.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;

use crate::audio::{align_to_latents, extract_features, AudioTokens, FeatureConfig};
use crate::codec::{Codec, LatentClip};
use crate::error::{Error, Result};
use crate::flow::{composite_loss, interpolate, target_velocity, FaceMask, LossWeights};
use crate::model::{Dit, HybridSchedule, ModelConfig};
use crate::numerics::rng::rng_for;
use crate::numerics::{ParamId, ParamStore, Tape, Tensor};
use crate::persist::{Checkpoint, KvConfig};
use crate::toy::{Corpus, ToySample};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub seed: u64,
    pub batch: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Probability of a static-headed (first `window` latents) sample.
    pub static_prob: f64,
    /// Latent frames per training window.
    pub window: usize,
    pub audio_dropout: f64,
    pub weights: LossWeights,
    /// Save every this many steps (0: only at the end).
    pub checkpoint_every: u64,
    /// Samples used to estimate the per-channel latent statistics.
    pub stats_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            seed: 0,
            batch: 8,
            lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            static_prob: 0.5,
            window: 6,
            audio_dropout: 0.1,
            weights: LossWeights::default(),
            checkpoint_every: 0,
            stats_samples: 64,
        }
    }
}

/// Everything a training run or a checkpoint needs to rebuild its model.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub codec: Codec,
    pub features: FeatureConfig,
    /// Video frames per training sample.
    pub video_frames: usize,
    pub res: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::build(ModelConfig::default(), TrainConfig::default(), Codec::default(), FeatureConfig::default(), 33, 32)
            .expect("default run config is consistent")
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "steps", "seed", "batch", "lr", "adam_beta1", "adam_beta2", "adam_eps", "static_prob", "window",
    "audio_dropout", "lambda", "mu", "checkpoint_every", "stats_samples", "dim", "layers", "heads", "ffn",
    "w", "delta", "bands", "audio_layers", "patch", "temporal", "frames", "res", "fps",
];

impl RunConfig {
    /// Derives the latent geometry of `model` from the codec and data settings.
    pub fn build(
        mut model: ModelConfig,
        train: TrainConfig,
        codec: Codec,
        features: FeatureConfig,
        video_frames: usize,
        res: usize,
    ) -> Result<Self> {
        let full = codec
            .latent_frames_for(video_frames)
            .ok_or_else(|| Error::contract(format!("{video_frames} frames do not fit temporal ratio {}", codec.temporal)))?;
        if res % codec.patch != 0 {
            return Err(Error::contract(format!("resolution {res} is not a multiple of patch {}", codec.patch)));
        }
        if train.window == 0 || train.window > full {
            return Err(Error::contract(format!("window {} must lie in 1..={full}", train.window)));
        }
        for (name, p) in [("static_prob", train.static_prob), ("audio_dropout", train.audio_dropout)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::contract(format!("{name} {p} outside [0, 1]")));
            }
        }
        if train.batch == 0 || train.weights.lambda < 0.0 || train.weights.mu < 0.0 {
            return Err(Error::contract("batch must be positive and loss weights non-negative"));
        }
        model.channels = codec.channels();
        model.height = res / codec.patch;
        model.width = res / codec.patch;
        model.frames = train.window;
        model.r_f = codec.temporal;
        model.bands = features.bands;
        model.audio_layers = features.layers;
        model.schedule.layers = model.layers;
        model.validate()?;
        Ok(Self {
            model,
            train,
            codec,
            features,
            video_frames,
            res,
        })
    }

    /// Latent frames in a full training sample.
    pub fn full_frames(&self) -> usize {
        self.codec.latent_frames_for(self.video_frames).unwrap_or(1)
    }

    /// Reads a config; `steps` and `seed` are required, unknown keys rejected.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        Self::from_kv_allowing(kv, &[])
    }

    fn from_kv_allowing(kv: &KvConfig, extra: &[&str]) -> Result<Self> {
        let known: Vec<&str> = CONFIG_KEYS.iter().chain(extra).copied().collect();
        kv.check_known(&known)?;
        let d = TrainConfig::default();
        let m = ModelConfig::default();
        let train = TrainConfig {
            steps: kv.require("steps")?,
            seed: kv.require("seed")?,
            batch: kv.get_or("batch", d.batch)?,
            lr: kv.get_or("lr", d.lr)?,
            adam_beta1: kv.get_or("adam_beta1", d.adam_beta1)?,
            adam_beta2: kv.get_or("adam_beta2", d.adam_beta2)?,
            adam_eps: kv.get_or("adam_eps", d.adam_eps)?,
            static_prob: kv.get_or("static_prob", d.static_prob)?,
            window: kv.get_or("window", d.window)?,
            audio_dropout: kv.get_or("audio_dropout", d.audio_dropout)?,
            weights: LossWeights {
                lambda: kv.get_or("lambda", d.weights.lambda)?,
                mu: kv.get_or("mu", d.weights.mu)?,
            },
            checkpoint_every: kv.get_or("checkpoint_every", d.checkpoint_every)?,
            stats_samples: kv.get_or("stats_samples", d.stats_samples)?,
        };
        let layers = kv.get_or("layers", m.layers)?;
        let model = ModelConfig {
            dim: kv.get_or("dim", m.dim)?,
            layers,
            heads: kv.get_or("heads", m.heads)?,
            ffn: kv.get_or("ffn", m.ffn)?,
            schedule: HybridSchedule::new(kv.get_or("w", m.schedule.w)?, kv.get_or("delta", m.schedule.delta)?, layers),
            ..m
        };
        let codec = Codec::new(kv.get_or("patch", 8)?, kv.get_or("temporal", 4)?)?;
        let fd = FeatureConfig::default();
        let features = FeatureConfig {
            fps: kv.get_or("fps", fd.fps)?,
            bands: kv.get_or("bands", fd.bands)?,
            layers: kv.get_or("audio_layers", fd.layers)?,
        };
        Self::build(model, train, codec, features, kv.get_or("frames", 33)?, kv.get_or("res", 32)?)
    }

    pub fn to_kv(&self) -> KvConfig {
        let (t, m) = (&self.train, &self.model);
        let mut kv = KvConfig::default();
        kv.set("steps", t.steps);
        kv.set("seed", t.seed);
        kv.set("batch", t.batch);
        kv.set("lr", t.lr);
        kv.set("adam_beta1", t.adam_beta1);
        kv.set("adam_beta2", t.adam_beta2);
        kv.set("adam_eps", t.adam_eps);
        kv.set("static_prob", t.static_prob);
        kv.set("window", t.window);
        kv.set("audio_dropout", t.audio_dropout);
        kv.set("lambda", t.weights.lambda);
        kv.set("mu", t.weights.mu);
        kv.set("checkpoint_every", t.checkpoint_every);
        kv.set("stats_samples", t.stats_samples);
        kv.set("dim", m.dim);
        kv.set("layers", m.layers);
        kv.set("heads", m.heads);
        kv.set("ffn", m.ffn);
        kv.set("w", m.schedule.w);
        kv.set("delta", m.schedule.delta);
        kv.set("bands", self.features.bands);
        kv.set("audio_layers", self.features.layers);
        kv.set("patch", self.codec.patch);
        kv.set("temporal", self.codec.temporal);
        kv.set("frames", self.video_frames);
        kv.set("res", self.res);
        kv.set("fps", self.features.fps);
        kv
    }
}

/// `y = true` keeps the first `k` latents (static head included), `false` the last `k`.
pub fn sample_window(x: &LatentClip, y: bool, k: usize) -> Result<LatentClip> {
    let f = x.frames();
    if k == 0 || k > f {
        return Err(Error::contract(format!("window {k} outside 1..={f}")));
    }
    if y {
        x.window(0, k)
    } else {
        x.window(f - k, f)
    }
}

/// With probability `p` the whole conditioning is dropped (`None` selects the null token).
pub fn apply_audio_dropout<R: Rng>(a: AudioTokens, p: f64, rng: &mut R) -> Option<AudioTokens> {
    if rng.random_bool(p.clamp(0.0, 1.0)) {
        None
    } else {
        Some(a)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(shapes: &[&[usize]], lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    pub fn for_params(store: &ParamStore, ids: &[ParamId], cfg: &TrainConfig) -> Self {
        let shapes: Vec<&[usize]> = ids.iter().map(|&id| store.get(id).shape()).collect();
        Self::new(&shapes, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    }

    /// One bias-corrected step over `params[i] -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) {
        self.t += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = (1.0 - self.beta1.powi(self.t as i32)) as f32;
        let c2 = (1.0 - self.beta2.powi(self.t as i32)) as f32;
        let (lr, eps) = (self.lr as f32, self.eps as f32);
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v, g) = (self.m[i].data_mut(), self.v[i].data_mut(), grads[i].data());
            for (j, x) in p.data_mut().iter_mut().enumerate() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                *x -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// Per-step loss record, batch-averaged.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub loss: f64,
    pub diffusion: f64,
    pub face: f64,
    pub temporal: f64,
}

pub const LOSS_CSV_HEADER: &str = "step,loss,diffusion,face,temporal";

/// Model, optimizer and progress; everything a checkpoint restores.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub cfg: RunConfig,
    pub model: Dit,
    pub store: ParamStore,
    pub trainable: Vec<ParamId>,
    pub adam: Adam,
    pub step: u64,
}

/// Clean latents and conditioning for one training draw.
pub struct Example {
    pub x0: Tensor,
    pub x_ref: Tensor,
    pub audio: AudioTokens,
    pub mask: FaceMask,
    pub static_head: bool,
}

/// Encodes `sample`, cuts the window selected by `y`, and aligns audio and mask to it.
pub fn prepare_example(cfg: &RunConfig, sample: &ToySample, y: bool) -> Result<Example> {
    let lat = cfg.codec.encode_video(&sample.video)?;
    let k = cfg.train.window;
    let win = sample_window(&lat, y, k)?;
    let offset = if y { 0 } else { lat.frames() - k };
    let feats = extract_features(&sample.waveform, &cfg.features, Some(sample.video.num_frames()))?;
    Ok(Example {
        audio: align_to_latents(&feats.data, k, cfg.codec.temporal, offset)?,
        mask: FaceMask::from_pixels(&sample.mouth_mask, &cfg.codec, k, offset)?,
        x_ref: cfg.codec.encode_reference(&sample.video.frame(0), k)?,
        static_head: win.static_head,
        x0: win.latents,
    })
}

/// Per-channel mean and std of clean latents over the first `n` samples.
pub fn latent_stats(cfg: &RunConfig, corpus: &dyn Corpus, n: usize) -> Result<(Vec<f32>, Vec<f32>)> {
    let c = cfg.codec.channels();
    let mut sum = vec![0.0f64; c];
    let mut sq = vec![0.0f64; c];
    let mut count = 0usize;
    for i in 0..n.min(corpus.len()) {
        let lat = cfg.codec.encode_video(&corpus.sample(i)?.video)?.latents;
        let cells = lat.len() / c;
        for ch in 0..c {
            for &x in &lat.data()[ch * cells..(ch + 1) * cells] {
                sum[ch] += x as f64;
                sq[ch] += x as f64 * x as f64;
            }
        }
        count += cells;
    }
    if count == 0 {
        return Ok((vec![0.0; c], vec![1.0; c]));
    }
    let mean: Vec<f32> = sum.iter().map(|s| (s / count as f64) as f32).collect();
    let std = sum
        .iter()
        .zip(&sq)
        .map(|(s, q)| {
            let m = s / count as f64;
            ((q / count as f64 - m * m).max(0.0).sqrt()) as f32
        })
        .collect();
    Ok((mean, std))
}

impl TrainState {
    /// Fresh model seeded from the config, statistics taken from `corpus`.
    pub fn init(cfg: RunConfig, corpus: &dyn Corpus) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::contract("training corpus is empty"));
        }
        let (model, mut store) = Dit::new(cfg.model.clone(), cfg.train.seed)?;
        let (mean, std) = latent_stats(&cfg, corpus, cfg.train.stats_samples)?;
        model.set_stats(&mut store, &mean, &std)?;
        Ok(Self::assemble(cfg, model, store))
    }

    fn assemble(cfg: RunConfig, model: Dit, store: ParamStore) -> Self {
        let trainable = model.trainable(&store);
        let adam = Adam::for_params(&store, &trainable, &cfg.train);
        Self {
            cfg,
            model,
            store,
            trainable,
            adam,
            step: 0,
        }
    }

    /// Loss and trainable-parameter gradients of one batch element.
    fn element(&self, corpus: &dyn Corpus, step: u64, b: usize) -> Result<(StepLog, Vec<Tensor>, f64, bool)> {
        let tc = &self.cfg.train;
        let mut rng = rng_for(tc.seed, &[step, b as u64]);
        let index = rng.random_range(0..corpus.len());
        let y = rng.random_bool(tc.static_prob);
        let t: f64 = rng.random();
        let ex = prepare_example(&self.cfg, &corpus.sample(index)?, y)?;
        let audio = apply_audio_dropout(ex.audio, tc.audio_dropout, &mut rng);
        let x1 = Tensor::randn(ex.x0.shape(), 1.0, &mut rng);
        let x_t = interpolate(&ex.x0, &x1, t)?;
        let u = target_velocity(&ex.x0, &x1)?;
        let mut tape = Tape::new();
        let v = self.model.forward(&mut tape, &self.store, &x_t, &ex.x_ref, t, audio.as_ref())?;
        let terms = composite_loss(&mut tape, v, &u, &ex.mask, &tc.weights)?;
        let log = StepLog {
            step,
            loss: tape.value(terms.total).item() as f64,
            diffusion: tape.value(terms.diffusion).item() as f64,
            face: tape.value(terms.face).item() as f64,
            temporal: terms.temporal.map_or(0.0, |v| tape.value(v).item() as f64),
        };
        let grads = tape.backward(terms.total)?.params(&self.store);
        let grads = self.trainable.iter().map(|id| grads[id.0].clone()).collect();
        Ok((log, grads, t, ex.static_head))
    }

    /// One optimizer step on a batch drawn from `corpus` with the current step's seed.
    pub fn train_step(&mut self, corpus: &dyn Corpus) -> Result<StepLog> {
        let step = self.step;
        let results: Vec<Result<_>> = (0..self.cfg.train.batch)
            .into_par_iter()
            .map(|b| self.element(corpus, step, b))
            .collect();
        let n = results.len() as f64;
        let mut log = StepLog {
            step,
            loss: 0.0,
            diffusion: 0.0,
            face: 0.0,
            temporal: 0.0,
        };
        let mut sum: Option<Vec<Tensor>> = None;
        for r in results {
            let (l, g, t, static_window) = r?;
            if !l.loss.is_finite() {
                return Err(Error::NonFiniteLoss { step, t, static_window });
            }
            log.loss += l.loss / n;
            log.diffusion += l.diffusion / n;
            log.face += l.face / n;
            log.temporal += l.temporal / n;
            match &mut sum {
                None => sum = Some(g),
                Some(acc) => {
                    for (a, x) in acc.iter_mut().zip(&g) {
                        a.data_mut().iter_mut().zip(x.data()).for_each(|(p, q)| *p += q);
                    }
                }
            }
        }
        let inv = (1.0 / n) as f32;
        let mut grads = sum.unwrap_or_default();
        for g in &mut grads {
            g.data_mut().iter_mut().for_each(|x| *x *= inv);
        }
        let mut params: Vec<&mut Tensor> = Vec::with_capacity(self.trainable.len());
        // Disjoint borrows of the trainable tensors, in `trainable` order.
        let mut slots: Vec<Option<&mut Tensor>> = self.store.tensors_mut().map(Some).collect();
        for id in &self.trainable {
            params.push(slots[id.0].take().expect("trainable ids are unique"));
        }
        self.adam.step(&mut params, &grads);
        self.step += 1;
        Ok(log)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut config = self.cfg.to_kv();
        config.set("step", self.step);
        config.set("adam_t", self.adam.t);
        let mut tensors: Vec<(String, Tensor)> = self.store.iter().map(|(_, n, t)| (n.to_string(), t.clone())).collect();
        for (i, id) in self.trainable.iter().enumerate() {
            let name = self.store.name(*id);
            tensors.push((format!("adam.m.{name}"), self.adam.m[i].clone()));
            tensors.push((format!("adam.v.{name}"), self.adam.v[i].clone()));
        }
        Checkpoint { config, tensors }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let cfg = RunConfig::from_kv_allowing(&ckpt.config, &["step", "adam_t"])?;
        let (model, mut store) = Dit::new(cfg.model.clone(), cfg.train.seed)?;
        load_params(ckpt, &mut store)?;
        let mut state = Self::assemble(cfg, model, store);
        state.step = ckpt.config.require("step")?;
        state.adam.t = ckpt.config.require("adam_t")?;
        for (i, id) in state.trainable.iter().enumerate() {
            let name = state.store.name(*id).to_string();
            for (prefix, slot) in [("adam.m.", &mut state.adam.m[i]), ("adam.v.", &mut state.adam.v[i])] {
                let key = format!("{prefix}{name}");
                let t = ckpt.get(&key).ok_or_else(|| Error::TensorMismatch(format!("missing optimizer tensor {key}")))?;
                if t.shape() != slot.shape() {
                    return Err(Error::TensorMismatch(format!("{key}: stored {:?}, expected {:?}", t.shape(), slot.shape())));
                }
                *slot = t.clone();
            }
        }
        Ok(state)
    }
}

/// Copies every model tensor of `ckpt` into `store`; names and shapes must match exactly.
pub fn load_params(ckpt: &Checkpoint, store: &mut ParamStore) -> Result<()> {
    let expected: Vec<String> = store.iter().map(|(_, n, _)| n.to_string()).collect();
    let found: Vec<&str> = ckpt.tensors.iter().map(|(n, _)| n.as_str()).filter(|n| !n.starts_with("adam.")).collect();
    let unknown: Vec<&str> = found.iter().copied().filter(|n| !expected.iter().any(|e| e == n)).collect();
    let missing: Vec<&str> = expected.iter().map(String::as_str).filter(|e| !found.contains(e)).collect();
    if !unknown.is_empty() || !missing.is_empty() {
        return Err(Error::TensorMismatch(format!(
            "unknown tensors {unknown:?}, missing tensors {missing:?} (expected {} model tensors, found {})",
            expected.len(),
            found.len()
        )));
    }
    for name in &expected {
        let id = store.find(name).expect("name came from the store");
        let t = ckpt.get(name).expect("checked above");
        if t.shape() != store.get(id).shape() {
            return Err(Error::TensorMismatch(format!(
                "{name}: stored shape {:?}, model expects {:?}",
                t.shape(),
                store.get(id).shape()
            )));
        }
        *store.get_mut(id) = t.clone();
    }
    Ok(())
}

/// Rebuilds a model for inference from a checkpoint.
pub fn load_model(ckpt: &Checkpoint) -> Result<(RunConfig, Dit, ParamStore)> {
    let s = TrainState::from_checkpoint(ckpt)?;
    Ok((s.cfg, s.model, s.store))
}

#[derive(Clone, Debug, Default)]
pub struct LoopOutputs {
    pub checkpoint: Option<PathBuf>,
    pub loss_csv: Option<PathBuf>,
}

fn append_rows(path: &Path, rows: &[StepLog], fresh: bool) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh)
        .truncate(fresh)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    if fresh {
        text.push_str(LOSS_CSV_HEADER);
        text.push('\n');
    }
    for r in rows {
        text.push_str(&format!("{},{},{},{},{}\n", r.step, r.loss, r.diffusion, r.face, r.temporal));
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Worker count from `RAP_THREADS`, else the hardware parallelism.
pub fn thread_count() -> usize {
    std::env::var("RAP_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs from `state.step` up to `cfg.train.steps`, logging every step and
/// checkpointing periodically and at the end.
pub fn train_loop(state: &mut TrainState, corpus: &dyn Corpus, out: &LoopOutputs) -> Result<Vec<StepLog>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| Error::contract(format!("thread pool: {e}")))?;
    let fresh = state.step == 0;
    if let Some(p) = &out.loss_csv {
        if fresh {
            append_rows(p, &[], true)?;
        }
    }
    let mut logs = Vec::new();
    let every = state.cfg.train.checkpoint_every;
    while state.step < state.cfg.train.steps {
        let log = pool.install(|| state.train_step(corpus))?;
        if let Some(p) = &out.loss_csv {
            append_rows(p, &[log], false)?;
        }
        logs.push(log);
        if every > 0 && state.step % every == 0 && state.step < state.cfg.train.steps {
            if let Some(p) = &out.checkpoint {
                crate::persist::save(p, &state.to_checkpoint())?;
            }
        }
    }
    if let Some(p) = &out.checkpoint {
        crate::persist::save(p, &state.to_checkpoint())?;
    }
    Ok(logs)
}
