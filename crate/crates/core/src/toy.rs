//! Procedural talking-sprite corpus with sync known by construction.
//!
//! Each sample is a solid-color head on a plain background whose mouth
//! opens to `round(h_max * envelope(f))` rows in frame `f`. The audio is
//! two amplitude-modulated carriers after one frame of silence, so the
//! first frame always shows a closed mouth.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::audio::{read_wav, write_wav, Waveform};
use crate::codec::{read_mask, read_video, write_mask, write_video, MaskClip, VideoClip};
use crate::error::{Error, Result};
use crate::numerics::rng::{derive_seed, rng_for};
use crate::numerics::Tensor;

/// RMS that maps to a fully open mouth until something louder is heard.
pub const ENVELOPE_FLOOR: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToyConfig {
    pub frames: usize,
    pub fps: f32,
    pub res: usize,
    pub sample_rate: u32,
    pub h_max: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            frames: 33,
            fps: 25.0,
            res: 32,
            sample_rate: 16_000,
            h_max: 10,
        }
    }
}

impl ToyConfig {
    pub fn window(&self) -> usize {
        (self.sample_rate as f64 / self.fps as f64).round() as usize
    }
}

/// Seeded appearance and motion parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Identity {
    pub background: [f32; 3],
    pub face: [f32; 3],
    pub mouth: [f32; 3],
    pub drift_hz: f64,
    pub drift_phase: [f64; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToySample {
    pub seed: u64,
    pub waveform: Waveform,
    pub video: VideoClip,
    /// Per frame, the mouth slot: the `8 x h_max` rectangle the aperture opens into.
    pub mouth_mask: MaskClip,
    pub envelope: Vec<f32>,
    pub mouth_heights: Vec<usize>,
    pub identity: Identity,
}

/// Per-frame RMS over the frame's samples, divided by the running maximum
/// (floored at [`ENVELOPE_FLOOR`]), then a width-3 causal mean.
pub fn envelope(w: &Waveform, fps: f32, frames: Option<usize>) -> Vec<f32> {
    let win = w.window(fps).max(1);
    let n = frames.unwrap_or(w.samples.len() / win);
    let mut running = ENVELOPE_FLOOR;
    let raw: Vec<f64> = (0..n)
        .map(|f| {
            let ss: f64 = (0..win)
                .map(|i| w.samples.get(f * win + i).map_or(0.0, |&s| s as f64 * s as f64))
                .sum();
            let rms = (ss / win as f64).sqrt();
            running = running.max(rms);
            (rms / running).min(1.0)
        })
        .collect();
    (0..n)
        .map(|f| {
            let lo = f.saturating_sub(2);
            (raw[lo..=f].iter().sum::<f64>() / (f + 1 - lo) as f64) as f32
        })
        .collect()
}

fn draw_identity<R: Rng>(rng: &mut R) -> Identity {
    let bg = rng.random_range(0.05..0.3);
    let tint: f32 = rng.random_range(-0.05..0.05);
    let face = [
        rng.random_range(0.6..0.9),
        rng.random_range(0.45..0.7),
        rng.random_range(0.3..0.55),
    ];
    Identity {
        background: [bg + tint, bg, bg - tint],
        face,
        mouth: [rng.random_range(0.05..0.2), 0.02, 0.05],
        drift_hz: rng.random_range(0.3..0.6),
        drift_phase: [rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI)],
    }
}

/// Seeded two-carrier speech stand-in: carriers in 200..2500 Hz under a
/// raised-cosine syllable modulator and a slower loudness swell, after
/// `lead_in` samples of silence.
pub fn synth_audio<R: Rng>(rng: &mut R, samples: usize, sample_rate: u32, lead_in: usize) -> Waveform {
    let c = [rng.random_range(200.0..2500.0), rng.random_range(200.0..2500.0)];
    let f_m: f64 = rng.random_range(1.5..4.0);
    let f_s: f64 = rng.random_range(0.2..0.6);
    let ph: f64 = rng.random_range(0.0..2.0 * PI);
    let depth: f64 = rng.random_range(0.0..0.5);
    let sr = sample_rate as f64;
    let s = (0..samples)
        .map(|i| {
            if i < lead_in {
                return 0.0;
            }
            let t = (i - lead_in) as f64 / sr;
            let m = 0.5 * (1.0 - (2.0 * PI * f_m * t).cos());
            let slow = 1.0 - depth * 0.5 * (1.0 + (2.0 * PI * f_s * t + ph).sin());
            let carrier = (2.0 * PI * c[0] * t).sin() + (2.0 * PI * c[1] * t).sin();
            (0.4 * m * slow * carrier) as f32
        })
        .collect();
    Waveform { samples: s, sample_rate }
}

/// Draws the sprite for `audio`; the waveform may be any length (silence pads).
pub fn render_sample(seed: u64, cfg: &ToyConfig, audio: Waveform) -> Result<ToySample> {
    if cfg.res < 24 || cfg.frames == 0 {
        return Err(Error::contract(format!("toy config {cfg:?} too small")));
    }
    let mut rng = rng_for(seed, &[1]);
    let id = draw_identity(&mut rng);
    let env = envelope(&audio, cfg.fps, Some(cfg.frames));
    let (t_n, r) = (cfg.frames, cfg.res);
    let mut px = vec![0.0f32; 3 * t_n * r * r];
    let mut mask = vec![0u8; t_n * r * r];
    let mut heights = Vec::with_capacity(t_n);
    let center = r as f64 / 2.0;
    let radius = r as f64 * 0.375;
    for f in 0..t_n {
        let time = f as f64 / cfg.fps as f64;
        let dx = (2.0 * (2.0 * PI * id.drift_hz * time + id.drift_phase[0]).sin()).round();
        let dy = (2.0 * (2.0 * PI * id.drift_hz * 0.7 * time + id.drift_phase[1]).sin()).round();
        let (cx, cy) = (center + dx, center - 1.0 + dy);
        let h = (cfg.h_max as f64 * env[f] as f64).round() as usize;
        heights.push(h);
        let mx = cx as isize - 4;
        let my = cy as isize + 1;
        for y in 0..r {
            for x in 0..r {
                let (xf, yf) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let in_slot = (x as isize) >= mx && (x as isize) < mx + 8 && (y as isize) >= my && (y as isize) < my + cfg.h_max as isize;
                let open = in_slot && (y as isize) < my + h as isize;
                let color = if open {
                    id.mouth
                } else if xf * xf + yf * yf <= radius * radius {
                    id.face
                } else {
                    id.background
                };
                for c in 0..3 {
                    px[((c * t_n + f) * r + y) * r + x] = color[c];
                }
                if in_slot {
                    mask[(f * r + y) * r + x] = 1;
                }
            }
        }
    }
    Ok(ToySample {
        seed,
        waveform: audio,
        video: VideoClip::new(Tensor::from_vec(&[3, t_n, r, r], px), cfg.fps)?,
        mouth_mask: MaskClip {
            frames: t_n,
            height: r,
            width: r,
            data: mask,
        },
        envelope: env,
        mouth_heights: heights,
        identity: id,
    })
}

pub fn synth_sample(seed: u64, cfg: &ToyConfig) -> Result<ToySample> {
    let mut rng = rng_for(seed, &[0]);
    let audio = synth_audio(&mut rng, cfg.frames * cfg.window(), cfg.sample_rate, cfg.window());
    render_sample(seed, cfg, audio)
}

/// Indexed sample source for training and evaluation.
pub trait Corpus: Sync {
    fn len(&self) -> usize;

    fn sample(&self, index: usize) -> Result<ToySample>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Samples generated on demand; sample `i` uses seed `derive_seed(seed, [offset + i])`.
#[derive(Clone, Copy, Debug)]
pub struct ToyCorpus {
    pub seed: u64,
    pub count: usize,
    pub offset: u64,
    pub cfg: ToyConfig,
}

/// First index of the held-out split.
pub const HELD_OUT_OFFSET: u64 = 1_000_000;

impl ToyCorpus {
    pub fn train(seed: u64, count: usize) -> Self {
        Self {
            seed,
            count,
            offset: 0,
            cfg: ToyConfig::default(),
        }
    }

    pub fn held_out(seed: u64, count: usize) -> Self {
        Self {
            offset: HELD_OUT_OFFSET,
            ..Self::train(seed, count)
        }
    }

    pub fn sample_seed(&self, index: usize) -> u64 {
        derive_seed(self.seed, &[self.offset + index as u64])
    }
}

impl Corpus for ToyCorpus {
    fn len(&self) -> usize {
        self.count
    }

    fn sample(&self, index: usize) -> Result<ToySample> {
        synth_sample(self.sample_seed(index), &self.cfg)
    }
}

/// Corpus written by [`write_corpus`]; samples are re-read from disk.
#[derive(Clone, Debug)]
pub struct DirCorpus {
    pub dir: PathBuf,
    pub rows: Vec<ManifestRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub id: usize,
    pub seed: u64,
    pub video: String,
    pub audio: String,
    pub mask: String,
}

pub const MANIFEST: &str = "manifest.csv";
const MANIFEST_HEADER: &str = "id,seed,video,audio,mask";

impl DirCorpus {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut lines = text.lines();
        if lines.next() != Some(MANIFEST_HEADER) {
            return Err(Error::format("manifest", "header", format!("expected `{MANIFEST_HEADER}`")));
        }
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            let bad = |what: &str| Error::format("manifest", "row", format!("line {}: {what}", n + 2));
            if f.len() != 5 {
                return Err(bad("expected 5 fields"));
            }
            rows.push(ManifestRow {
                id: f[0].parse().map_err(|_| bad("id"))?,
                seed: f[1].parse().map_err(|_| bad("seed"))?,
                video: f[2].to_string(),
                audio: f[3].to_string(),
                mask: f[4].to_string(),
            });
        }
        if rows.is_empty() {
            return Err(Error::format("manifest", "row", "no samples listed"));
        }
        Ok(Self { dir: dir.to_path_buf(), rows })
    }
}

impl Corpus for DirCorpus {
    fn len(&self) -> usize {
        self.rows.len()
    }

    fn sample(&self, index: usize) -> Result<ToySample> {
        let row = &self.rows[index];
        let video = read_video(&self.dir.join(&row.video))?;
        let waveform = read_wav(&self.dir.join(&row.audio))?;
        let mouth_mask = read_mask(&self.dir.join(&row.mask))?;
        let envelope = envelope(&waveform, video.fps, Some(video.num_frames()));
        Ok(ToySample {
            seed: row.seed,
            waveform,
            video,
            mouth_mask,
            envelope,
            mouth_heights: Vec::new(),
            identity: draw_identity(&mut rng_for(row.seed, &[1])),
        })
    }
}

/// Writes `count` samples plus `manifest.csv` into `dir`.
pub fn write_corpus(dir: &Path, corpus: &ToyCorpus) -> Result<Vec<ManifestRow>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::from(MANIFEST_HEADER);
    manifest.push('\n');
    let mut rows = Vec::with_capacity(corpus.count);
    for i in 0..corpus.count {
        let s = corpus.sample(i)?;
        let row = ManifestRow {
            id: i,
            seed: s.seed,
            video: format!("sample_{i:05}.rapv"),
            audio: format!("sample_{i:05}.wav"),
            mask: format!("sample_{i:05}.rapm"),
        };
        write_video(&dir.join(&row.video), &s.video)?;
        write_wav(&dir.join(&row.audio), &s.waveform)?;
        write_mask(&dir.join(&row.mask), &s.mouth_mask)?;
        let _ = writeln!(manifest, "{},{},{},{},{}", row.id, row.seed, row.video, row.audio, row.mask);
        rows.push(row);
    }
    let path = dir.join(MANIFEST);
    crate::codec::write_bytes(&path, manifest.as_bytes())?;
    Ok(rows)
}
