use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rap::ablate::held_out_sync;
use rap::audio::read_wav;
use rap::codec::{read_mask, read_ppm, read_video, write_pgm, write_video};
use rap::infer::{generate_stream, write_timings, Denoiser, Pipeline, StreamConfig};
use rap::metrics::{boundary_discontinuity, drift_curve, drift_segments, motion_heatmap, sync_correlation, throughput_bench};
use rap::model::HybridSchedule;
use rap::numerics::rng::derive_seed;
use rap::numerics::Tensor;
use rap::persist::{self, KvConfig};
use rap::toy::{synth_sample, write_corpus, Corpus, DirCorpus, ToyConfig, ToyCorpus, HELD_OUT_OFFSET};
use rap::train::{load_model, train_loop, LoopOutputs, RunConfig, TrainState};
use rap::{Error, Result};

#[derive(Parser)]
#[command(name = "rap", version, about = "Desk-scale audio-driven portrait animation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a procedural talking-head corpus with a manifest.
    SynthData(SynthArgs),
    /// Train a model from a config file.
    Train(TrainArgs),
    /// Stream a video from a reference image and a waveform.
    Generate(GenerateArgs),
    /// Train or evaluate variants and report one CSV row per setting.
    Ablate(AblateArgs),
    /// Score a video.
    Metrics(MetricsArgs),
    /// Time repeated streams of a checkpoint.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 33)]
    frames: usize,
    #[arg(long, default_value_t = 25.0)]
    fps: f32,
    #[arg(long, default_value_t = 32)]
    res: usize,
    /// Draw from the held-out split instead of the training split.
    #[arg(long)]
    held_out: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Corpus directory, or `toy:COUNT` for samples generated on the fly.
    #[arg(long)]
    data: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Extra `key=value` overrides; flags win over the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Loss log (default: CKPT with extension `loss.csv`).
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    /// Continue from CKPT if it exists.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct StreamArgs {
    #[arg(long, default_value_t = 1)]
    clips: usize,
    #[arg(long, default_value_t = 3)]
    overlap: usize,
    #[arg(long, default_value_t = 5.0)]
    cfg_scale: f64,
    #[arg(long, default_value_t = 16)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Latent frames per clip (default: the training window).
    #[arg(long)]
    frames: Option<usize>,
}

impl StreamArgs {
    fn config(&self, cfg: &RunConfig) -> StreamConfig {
        StreamConfig {
            clips: self.clips,
            steps: self.steps,
            cfg_scale: self.cfg_scale,
            overlap: self.overlap,
            seed: self.seed,
            frames: self.frames.unwrap_or(cfg.train.window),
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Reference image: binary PPM or a video container (first frame is used).
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    audio: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Per-clip timing CSV (default: OUT with extension `timing.csv`).
    #[arg(long)]
    timing: Option<PathBuf>,
    #[command(flatten)]
    stream: StreamArgs,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    ckpt_dir: PathBuf,
    /// Attention variants `w,delta;w,delta;...`; each is trained unless its checkpoint exists.
    #[arg(long, allow_hyphen_values = true, group = "sweep")]
    grid: Option<String>,
    /// Overlap values `1,2,3,4` evaluated on `--ckpt`.
    #[arg(long, group = "sweep")]
    overlap: Option<String>,
    /// Guidance scales `2,5,8` evaluated on `--ckpt`.
    #[arg(long, group = "sweep")]
    cfg: Option<String>,
    #[arg(long)]
    report: PathBuf,
    /// Training config for grid variants.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training data for grid variants (directory or `toy:COUNT`).
    #[arg(long, default_value = "toy:2000")]
    data: String,
    /// Model evaluated by overlap and guidance sweeps.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long, default_value_t = 12)]
    eval_count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Clips in the drift stream.
    #[arg(long, default_value_t = 6)]
    drift_clips: usize,
    #[arg(long, default_value_t = 16)]
    steps: usize,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    video: PathBuf,
    #[arg(long)]
    audio: Option<PathBuf>,
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also export the motion heatmap as PGM.
    #[arg(long)]
    heatmap: Option<PathBuf>,
    /// Clip boundary frame indices `a,b,...`.
    #[arg(long)]
    boundaries: Option<String>,
    /// Frames per clip for the drift curve.
    #[arg(long)]
    clip_len: Option<usize>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 3)]
    runs: usize,
    /// Write the report here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    stream: StreamArgs,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Contract(_) | Error::ConfigParse { .. } | Error::MissingKey(_) => 2,
        Error::NonFiniteLoss { .. } => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::SynthData(a) => synth_data(a),
        Cmd::Train(a) => train(a),
        Cmd::Generate(a) => generate(a),
        Cmd::Ablate(a) => ablate(a),
        Cmd::Metrics(a) => metrics(a),
        Cmd::Bench(a) => bench(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    let v: Vec<T> = s
        .split([',', ';'])
        .filter(|x| !x.trim().is_empty())
        .map(|x| x.trim().parse().map_err(|_| Error::contract(format!("{what}: cannot parse `{x}`"))))
        .collect::<Result<_>>()?;
    if v.is_empty() {
        return Err(Error::contract(format!("{what}: empty list")));
    }
    Ok(v)
}

fn open_corpus(data: &str, seed: u64, cfg: &RunConfig) -> Result<Box<dyn Corpus>> {
    if let Some(n) = data.strip_prefix("toy:") {
        let count = n.parse().map_err(|_| Error::contract(format!("bad toy corpus size `{n}`")))?;
        let mut c = ToyCorpus::train(seed, count);
        c.cfg.frames = cfg.video_frames;
        c.cfg.res = cfg.res;
        c.cfg.fps = cfg.features.fps;
        Ok(Box::new(c))
    } else {
        Ok(Box::new(DirCorpus::open(Path::new(data))?))
    }
}

fn synth_data(a: SynthArgs) -> Result<()> {
    let mut c = if a.held_out {
        ToyCorpus::held_out(a.seed, a.count)
    } else {
        ToyCorpus::train(a.seed, a.count)
    };
    c.cfg = ToyConfig {
        frames: a.frames,
        fps: a.fps,
        res: a.res,
        ..ToyConfig::default()
    };
    let rows = write_corpus(&a.out, &c)?;
    println!("wrote {} samples to {}", rows.len(), a.out.display());
    Ok(())
}

fn apply_overrides(kv: &mut KvConfig, sets: &[String], steps: Option<u64>, seed: Option<u64>) -> Result<()> {
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::contract(format!("--set expects KEY=VALUE, got `{s}`")))?;
        kv.set(k.trim(), v.trim());
    }
    if let Some(s) = steps {
        kv.set("steps", s);
    }
    if let Some(s) = seed {
        kv.set("seed", s);
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut kv = KvConfig::from_file(&a.config)?;
    apply_overrides(&mut kv, &a.sets, a.steps, a.seed)?;
    let cfg = RunConfig::from_kv(&kv)?;
    let corpus = open_corpus(&a.data, cfg.train.seed, &cfg)?;
    let mut state = if a.resume && a.out.exists() {
        let mut s = TrainState::from_checkpoint(&persist::load(&a.out)?)?;
        if s.cfg.model != cfg.model || s.cfg.codec != cfg.codec || s.cfg.train.seed != cfg.train.seed {
            return Err(Error::contract("checkpoint was trained with a different model, codec or seed"));
        }
        s.cfg.train.steps = cfg.train.steps;
        s
    } else {
        TrainState::init(cfg, corpus.as_ref())?
    };
    let out = LoopOutputs {
        checkpoint: Some(a.out.clone()),
        loss_csv: Some(a.loss_csv.unwrap_or_else(|| a.out.with_extension("loss.csv"))),
    };
    let start = state.step;
    let t0 = std::time::Instant::now();
    let logs = train_loop(&mut state, corpus.as_ref(), &out)?;
    if let Some(last) = logs.last() {
        println!(
            "steps {start}..{} loss {:.4} ({:.1}s)",
            state.step,
            last.loss,
            t0.elapsed().as_secs_f64()
        );
    }
    println!("checkpoint {}", a.out.display());
    Ok(())
}

fn load_reference(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"P6") {
        read_ppm(path)
    } else {
        Ok(read_video(path)?.frame(0))
    }
}

fn generate(a: GenerateArgs) -> Result<()> {
    let (cfg, model, store) = load_model(&persist::load(&a.ckpt)?)?;
    let pipe = Pipeline {
        codec: cfg.codec,
        features: cfg.features,
    };
    let stream = a.stream.config(&cfg);
    let img = load_reference(&a.reference)?;
    let w = read_wav(&a.audio)?;
    let out = generate_stream(&img, &w, &Denoiser { model: &model, store: &store }, &pipe, &stream, None)?;
    write_video(&a.out, &out.video)?;
    write_timings(&a.timing.unwrap_or_else(|| a.out.with_extension("timing.csv")), &out.timings)?;
    println!("{} frames from {} clips -> {}", out.video.num_frames(), stream.clips, a.out.display());
    Ok(())
}

struct Row {
    setting: String,
    w: f64,
    delta: f64,
    overlap: usize,
    cfg_scale: f64,
    sync: f64,
    boundary: f64,
    drift: f64,
    fps: f64,
}

const ABLATE_HEADER: &str = "setting,w,delta,overlap,cfg_scale,sync,boundary_ratio,drift_max,fps";

fn evaluate(cfg: &RunConfig, model: &Denoiser<'_>, stream: &StreamConfig, a: &AblateArgs) -> Result<(f64, f64, f64, f64)> {
    let pipe = Pipeline {
        codec: cfg.codec,
        features: cfg.features,
    };
    let mut held = ToyCorpus::held_out(a.seed, a.eval_count);
    held.cfg.frames = stream.total_frames(cfg.codec.temporal).max(cfg.video_frames);
    held.cfg.res = cfg.res;
    let s = held_out_sync(model, &pipe, &held, a.eval_count, stream)?;

    let long = StreamConfig {
        clips: a.drift_clips.max(2),
        ..*stream
    };
    let tc = ToyConfig {
        frames: long.total_frames(cfg.codec.temporal),
        res: cfg.res,
        ..ToyConfig::default()
    };
    let sample = synth_sample(derive_seed(a.seed, &[HELD_OUT_OFFSET - 1]), &tc)?;
    let t0 = std::time::Instant::now();
    let out = generate_stream(&sample.video.frame(0), &sample.waveform, model, &pipe, &long, None)?;
    let fps = out.video.num_frames() as f64 / t0.elapsed().as_secs_f64();
    let drift = drift_segments(&out.video, &out.spans)?.into_iter().fold(0.0, f64::max);
    Ok((s.mean, s.boundary_ratio.unwrap_or(f64::NAN), drift, fps))
}

fn ablate(a: AblateArgs) -> Result<()> {
    std::fs::create_dir_all(&a.ckpt_dir).map_err(|e| Error::io(&a.ckpt_dir, e))?;
    let mut rows = Vec::new();
    if let Some(grid) = &a.grid {
        let vals: Vec<f64> = parse_list(grid, "--grid")?;
        if vals.len() % 2 != 0 {
            return Err(Error::contract("--grid needs (w, delta) pairs"));
        }
        let mut kv = match &a.config {
            Some(p) => KvConfig::from_file(p)?,
            None => RunConfig::default().to_kv(),
        };
        kv.set("seed", kv.raw("seed").unwrap_or("0").to_string());
        for pair in vals.chunks(2) {
            let (w, delta) = (pair[0], pair[1]);
            kv.set("w", w);
            kv.set("delta", delta);
            let cfg = RunConfig::from_kv(&kv)?;
            let path = a.ckpt_dir.join(format!("model_w{w}_d{delta}.rapc"));
            let state = match persist::load(&path).and_then(|c| TrainState::from_checkpoint(&c)) {
                Ok(s) if s.cfg == cfg && s.step == cfg.train.steps => s,
                _ => {
                    let corpus = open_corpus(&a.data, cfg.train.seed, &cfg)?;
                    let mut s = TrainState::init(cfg.clone(), corpus.as_ref())?;
                    eprintln!("training w={w} delta={delta} for {} steps", cfg.train.steps);
                    train_loop(&mut s, corpus.as_ref(), &LoopOutputs {
                        checkpoint: Some(path.clone()),
                        loss_csv: Some(path.with_extension("loss.csv")),
                    })?;
                    s
                }
            };
            let model = Denoiser {
                model: &state.model,
                store: &state.store,
            };
            let stream = StreamConfig {
                clips: 2,
                steps: a.steps,
                seed: a.seed,
                frames: cfg.train.window,
                ..StreamConfig::default()
            };
            let (sync, boundary, drift, fps) = evaluate(&cfg, &model, &stream, &a)?;
            rows.push(Row {
                setting: format!("grid w={w} delta={delta}"),
                w,
                delta,
                overlap: stream.overlap,
                cfg_scale: stream.cfg_scale,
                sync,
                boundary,
                drift,
                fps,
            });
        }
    } else {
        let (overlaps, scales): (Vec<usize>, Vec<f64>) = match (&a.overlap, &a.cfg) {
            (Some(o), _) => (parse_list(o, "--overlap")?, vec![5.0]),
            (_, Some(c)) => (vec![3], parse_list(c, "--cfg")?),
            _ => return Err(Error::contract("one of --grid, --overlap or --cfg is required")),
        };
        let ckpt = a
            .ckpt
            .clone()
            .ok_or_else(|| Error::contract("--overlap and --cfg sweeps evaluate --ckpt"))?;
        let (cfg, model, store) = load_model(&persist::load(&ckpt)?)?;
        let den = Denoiser { model: &model, store: &store };
        let sched: HybridSchedule = cfg.model.schedule;
        for &n in &overlaps {
            for &s in &scales {
                let stream = StreamConfig {
                    clips: 2,
                    steps: a.steps,
                    cfg_scale: s,
                    overlap: n,
                    seed: a.seed,
                    frames: cfg.train.window,
                };
                let (sync, boundary, drift, fps) = evaluate(&cfg, &den, &stream, &a)?;
                rows.push(Row {
                    setting: if a.overlap.is_some() { format!("overlap n={n}") } else { format!("cfg s={s}") },
                    w: sched.w,
                    delta: sched.delta,
                    overlap: n,
                    cfg_scale: s,
                    sync,
                    boundary,
                    drift,
                    fps,
                });
            }
        }
    }
    let mut csv = format!("{ABLATE_HEADER}\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{:.6},{:.6},{:.6},{:.3}\n",
            r.setting, r.w, r.delta, r.overlap, r.cfg_scale, r.sync, r.boundary, r.drift, r.fps
        ));
    }
    print!("{csv}");
    write_text(&a.report, &csv)
}

fn metrics(a: MetricsArgs) -> Result<()> {
    let v = read_video(&a.video)?;
    let heat = motion_heatmap(&v)?;
    let sum: f64 = heat.data().iter().map(|&x| x as f64).sum();
    let max = heat.data().iter().fold(0.0f32, |m, &x| m.max(x));
    let mut csv = String::from("metric,value\n");
    csv.push_str(&format!("frames,{}\nheatmap_sum,{sum:.6}\nheatmap_max,{max:.6}\n", v.num_frames()));
    match (&a.audio, &a.mask) {
        (Some(w), Some(m)) => {
            let c = sync_correlation(&v, &read_wav(w)?, &read_mask(m)?)?;
            csv.push_str(&format!("sync,{:.6}\nsync_degenerate,{}\n", c.r, c.degenerate as u8));
        }
        (Some(_), None) => return Err(Error::contract("sync needs --mask alongside --audio")),
        (None, Some(_)) => return Err(Error::contract("sync needs --audio alongside --mask")),
        (None, None) => {}
    }
    if let Some(b) = &a.boundaries {
        let b: Vec<usize> = parse_list(b, "--boundaries")?;
        csv.push_str(&format!("boundary_ratio,{:.6}\n", boundary_discontinuity(&v, &b)?));
    }
    if let Some(len) = a.clip_len {
        for (i, d) in drift_curve(&v, len)?.iter().enumerate() {
            csv.push_str(&format!("drift_clip{},{d:.6}\n", i + 1));
        }
    }
    if let Some(p) = &a.heatmap {
        write_pgm(p, &heat)?;
    }
    print!("{csv}");
    write_text(&a.out, &csv)
}

fn bench(a: BenchArgs) -> Result<()> {
    let (cfg, model, store) = load_model(&persist::load(&a.ckpt)?)?;
    let pipe = Pipeline {
        codec: cfg.codec,
        features: cfg.features,
    };
    let stream = a.stream.config(&cfg);
    let report = throughput_bench(&Denoiser { model: &model, store: &store }, &pipe, &stream, a.runs)?;
    let csv = report.to_csv();
    print!("{csv}");
    eprintln!("run spread {:.1}% of median", report.spread() * 100.0);
    if let Some(p) = &a.out {
        write_text(p, &csv)?;
    }
    Ok(())
}
