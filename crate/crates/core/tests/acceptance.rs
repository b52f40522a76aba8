//! Acceptance suite. Runs every criterion in order and prints one line each.
//!
//! `cargo test --release --test acceptance -- 3 6` runs a subset.

mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rap::ablate::held_out_sync;
use rap::audio::write_wav;
use rap::codec::{read_video, write_ppm, Codec, LatentClip, VideoClip};
use rap::flow::{cfg_combine, composite_loss, interpolate, target_velocity, FaceMask, LossWeights};
use rap::infer::{generate_stream, trim_len, Denoiser, Pipeline, StreamConfig};
use rap::metrics::{boundary_discontinuity, drift_segments, sync_correlation, throughput_bench};
use rap::model::layers::Linear;
use rap::model::{jitter, Dit, HybridSchedule};
use rap::numerics::rng::rng_for;
use rap::numerics::{ParamStore, Tape, Tensor};
use rap::persist::{self, KvConfig};
use rap::toy::{synth_sample, Corpus, ToyConfig, ToyCorpus};
use rap::train::{train_loop, Adam, LoopOutputs, RunConfig, TrainState};

const TRAIN_STEPS: u64 = 400;
const CORPUS_SEED: u64 = 7;
const EVAL_SAMPLES: usize = 24;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

#[derive(Default)]
struct Shared {
    hybrid: Option<TrainState>,
}

impl Shared {
    fn hybrid(&mut self) -> &TrainState {
        if self.hybrid.is_none() {
            self.hybrid = Some(train_variant(HybridSchedule::hybrid(6)).0);
        }
        self.hybrid.as_ref().unwrap()
    }
}

fn pipeline(cfg: &RunConfig) -> Pipeline {
    Pipeline {
        codec: cfg.codec,
        features: cfg.features,
    }
}

fn eval_stream() -> StreamConfig {
    StreamConfig {
        clips: 2,
        frames: 6,
        overlap: 3,
        ..StreamConfig::default()
    }
}

fn train_variant(schedule: HybridSchedule) -> (TrainState, f64) {
    let mut cfg = RunConfig::default();
    cfg.train.steps = TRAIN_STEPS;
    cfg.model.schedule = schedule;
    let corpus = ToyCorpus::train(CORPUS_SEED, 2000);
    let t0 = Instant::now();
    let mut state = TrainState::init(cfg, &corpus).unwrap();
    train_loop(&mut state, &corpus, &LoopOutputs::default()).unwrap();
    (state, t0.elapsed().as_secs_f64())
}

fn artifacts() -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn rap_cli(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_rap")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "rap {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn c1_gradients(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    let mut failed = Vec::new();
    let mut record = |name: String, r: rap::numerics::GradCheckReport| {
        worst = worst.max(r.max_rel_err);
        cases += 1;
        if !r.passed {
            failed.push(format!("{name} ({:.2e})", r.max_rel_err));
        }
    };
    for case in 0..60 {
        record(format!("op case {case}"), common::op_case(case, &mut rng));
    }
    for seed in 0..10 {
        record(format!("loss seed {seed}"), common::loss_case(seed));
    }
    let mut blend = common::desk(HybridSchedule::hybrid(6), 2);
    blend.skip_degenerate = false;
    let hybrid = common::desk(HybridSchedule::hybrid(6), 2);
    record("desk DiT hybrid".into(), common::dit_case(hybrid.clone(), 11, 8, true, 1e-3));
    record("desk DiT both branches".into(), common::dit_case(blend, 12, 8, true, 1e-3));
    record("desk DiT null audio".into(), common::dit_case(hybrid, 13, 8, false, 1e-3));
    outcome(
        failed.is_empty() && cases >= 50,
        format!("{cases} cases, max rel err {worst:.2e}, failures {failed:?}"),
    )
}

fn c2_codec(_: &mut Shared) -> Outcome {
    let mut rng = rng_for(2, &[]);
    let codecs = [Codec::new(8, 4).unwrap(), Codec::new(4, 2).unwrap(), Codec::new(2, 8).unwrap()];
    let mut worst: f64 = 0.0;
    let mut causal = true;
    for i in 0..100 {
        let codec = codecs[i % 3];
        let latents = rng.random_range(1..5);
        let frames = 1 + codec.temporal * (latents - 1);
        let side = codec.patch * rng.random_range(1..4);
        let v = VideoClip::new(Tensor::rand_uniform(&[3, frames, side, side], 0.0, 1.0, &mut rng), 25.0).unwrap();
        let lat = codec.encode_video(&v).unwrap();
        let back = codec.decode_latents(&lat).unwrap();
        worst = worst.max(back.frames.max_abs_diff(&v.frames));

        // Changing one frame touches only its own latent and later ones.
        let f = rng.random_range(0..frames);
        let g = if f == 0 { 0 } else { 1 + (f - 1) / codec.temporal };
        let mut w = v.clone();
        let hw = side * side;
        for ch in 0..3 {
            let start = (ch * frames + f) * hw;
            for x in &mut w.frames.data_mut()[start..start + hw] {
                *x = 1.0 - *x;
            }
        }
        let lat2 = codec.encode_video(&w).unwrap();
        for j in 0..latents {
            let same = lat.latents.narrow(1, j, j + 1).unwrap().bit_eq(&lat2.latents.narrow(1, j, j + 1).unwrap());
            causal &= same == (j != g);
        }
        // Changing one latent touches only the frames it decodes to.
        let mut l3 = LatentClip { ..lat.clone() };
        let cells = l3.latents.len() / (l3.channels() * latents);
        for ch in 0..l3.channels() {
            l3.latents.data_mut()[(ch * latents + g) * cells] += 1.0;
        }
        let dec3 = codec.decode_latents(&l3).unwrap();
        let first = if g == 0 { 0 } else { 1 + (g - 1) * codec.temporal };
        causal &= dec3.frames.narrow(1, 0, first).map_or(first == 0, |a| a.bit_eq(&back.frames.narrow(1, 0, first).unwrap()));
    }
    outcome(
        worst <= 1e-6 && causal,
        format!("100 clips, max round-trip error {worst:.2e}, causality bit-exact {causal}"),
    )
}

fn c3_reduction(_: &mut Shared) -> Outcome {
    let mut alpha_ok = true;
    for layers in [6, 30] {
        for w in [-1.0, -0.5, 0.5, 1.0] {
            let delta = 0.5 - w / 2.0;
            let s = HybridSchedule::new(w, delta, layers);
            for i in 0..layers {
                alpha_ok &= s.alpha(i) == (w * i as f64 / layers as f64 + delta).clamp(0.0, 1.0);
            }
        }
    }
    alpha_ok &= HybridSchedule::hybrid(30).alpha(15) == 0.5 && HybridSchedule::new(-1.0, 1.0, 6).alpha(0) == 1.0;

    let mut rng = rng_for(3, &[]);
    let mut equal = Vec::new();
    for schedule in [HybridSchedule::window_only(6), HybridSchedule::full_only(6)] {
        let pure = common::desk(schedule, 4);
        let blended = rap::model::ModelConfig {
            skip_degenerate: false,
            ..pure.clone()
        };
        let (m1, mut s1) = Dit::new(pure.clone(), 5).unwrap();
        jitter(&mut s1, 0.05, 6);
        let (m2, _) = Dit::new(blended, 5).unwrap();
        let shape = [pure.channels, 4, pure.height, pure.width];
        let x = Tensor::randn(&shape, 1.0, &mut rng);
        let r = Tensor::randn(&shape, 1.0, &mut rng);
        let rows = 4 * pure.r_f * pure.audio_layers;
        let a = rap::audio::AudioTokens {
            tokens: Tensor::rand_uniform(&[rows, pure.bands], -18.0, 0.0, &mut rng),
            frames: 4,
            r_f: pure.r_f,
            layers: pure.audio_layers,
        };
        let v1 = m1.predict(&s1, &x, &r, 0.4, Some(&a)).unwrap();
        let v2 = m2.predict(&s1, &x, &r, 0.4, Some(&a)).unwrap();
        equal.push(v1.bit_eq(&v2));
    }
    outcome(
        alpha_ok && equal.iter().all(|&e| e),
        format!(
            "alpha grid exact {alpha_ok}, (0,1) == pure window {}, (0,0) == pure full {}",
            equal[0], equal[1]
        ),
    )
}

fn c4_flow(_: &mut Shared) -> Outcome {
    let mut rng = rng_for(4, &[]);
    let mut store = ParamStore::new();
    let l1 = Linear::new(&mut store, "l1", 3, 64, true, &mut rng);
    let l2 = Linear::new(&mut store, "l2", 64, 64, true, &mut rng);
    let l3 = Linear::new(&mut store, "l3", 64, 2, true, &mut rng);
    let shapes: Vec<Vec<usize>> = store.iter().map(|(_, _, t)| t.shape().to_vec()).collect();
    let shape_refs: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
    let mut adam = Adam::new(&shape_refs, 3e-3, 0.9, 0.999, 1e-8);
    let net = |tape: &mut Tape, s: &ParamStore, x: &Tensor, t: &[f32]| {
        let b = t.len();
        let mut inp = Vec::with_capacity(3 * b);
        for i in 0..b {
            inp.extend_from_slice(&[x.data()[2 * i], x.data()[2 * i + 1], t[i]]);
        }
        let h = tape.constant(Tensor::from_vec(&[b, 3], inp));
        let h = l1.forward(tape, s, h).unwrap();
        let h = tape.silu(h);
        let h = l2.forward(tape, s, h).unwrap();
        let h = tape.silu(h);
        l3.forward(tape, s, h).unwrap()
    };
    let weights = LossWeights { lambda: 0.0, mu: 0.0 };
    let batch = 256;
    for step in 0..2000u64 {
        let mut r = rng_for(4, &[1, step]);
        let x0 = Tensor::randn(&[batch, 2], 0.5, &mut r).map(|v| v + 1.0);
        let x1 = Tensor::randn(&[batch, 2], 1.0, &mut r);
        let ts: Vec<f32> = (0..batch).map(|_| r.random::<f32>()).collect();
        let mut xt = Tensor::zeros(&[batch, 2]);
        for i in 0..batch {
            let row = |m: &Tensor| m.narrow(0, i, i + 1).unwrap();
            let xi = interpolate(&row(&x0), &row(&x1), ts[i] as f64).unwrap();
            xt.data_mut()[2 * i..2 * i + 2].copy_from_slice(xi.data());
        }
        let u = target_velocity(&x0, &x1).unwrap();
        let mut tape = Tape::new();
        let v = net(&mut tape, &store, &xt, &ts);
        let loss = composite_loss(&mut tape, v, &u, &FaceMask::ones(&[batch, 2]), &weights).unwrap().total;
        let grads = tape.backward(loss).unwrap().params(&store);
        let mut params: Vec<&mut Tensor> = store.tensors_mut().collect();
        adam.step(&mut params, &grads);
    }
    // Euler from noise (t = 1) to data (t = 0).
    let n = 1000;
    let mut x = Tensor::randn(&[n, 2], 1.0, &mut rng_for(4, &[2]));
    let steps = 100;
    for k in (1..=steps).rev() {
        let t = vec![k as f32 / steps as f32; n];
        let mut tape = Tape::new();
        let v = net(&mut tape, &store, &x, &t);
        let dt = 1.0 / steps as f32;
        x = x.zip_map(tape.value(v), |a, b| a - dt * b).unwrap();
    }
    let mean = |c: usize| (0..n).map(|i| x.data()[2 * i + c] as f64).sum::<f64>() / n as f64;
    let (mx, my) = (mean(0), mean(1));
    outcome(
        (mx - 1.0).abs() <= 0.1 && (my - 1.0).abs() <= 0.1,
        format!("sample mean ({mx:.3}, {my:.3}) vs target (1, 1), tolerance 0.1"),
    )
}

fn c5_sync(shared: &mut Shared) -> Outcome {
    let held = ToyCorpus::held_out(CORPUS_SEED, EVAL_SAMPLES);
    let mut scores = Vec::new();
    let mut times = Vec::new();
    for schedule in [HybridSchedule::full_only(6), HybridSchedule::window_only(6), HybridSchedule::hybrid(6)] {
        let (state, secs) = train_variant(schedule);
        let model = Denoiser {
            model: &state.model,
            store: &state.store,
        };
        let s = held_out_sync(&model, &pipeline(&state.cfg), &held, EVAL_SAMPLES, &eval_stream()).unwrap();
        scores.push(s.mean);
        times.push(secs);
        if schedule == HybridSchedule::hybrid(6) {
            shared.hybrid = Some(state);
        }
    }
    let (full, window, hybrid) = (scores[0], scores[1], scores[2]);
    let pass = window - full >= 0.05 && hybrid - full >= 0.05 && hybrid >= 0.6 && times.iter().all(|&t| t <= 3600.0);
    outcome(
        pass,
        format!(
            "held-out sync full {full:.3} window {window:.3} hybrid {hybrid:.3} ({EVAL_SAMPLES} samples, {TRAIN_STEPS} steps, train s {:.0}/{:.0}/{:.0})",
            times[0], times[1], times[2]
        ),
    )
}

fn c6_overlap(_: &mut Shared) -> Outcome {
    let mut cfg = common::desk(HybridSchedule::hybrid(6), 9);
    cfg.frames = 9;
    let (model, mut store) = Dit::new(cfg, 8).unwrap();
    jitter(&mut store, 0.05, 9);
    let codec = Codec::default();
    let stream = StreamConfig {
        clips: 3,
        frames: 9,
        overlap: 2,
        steps: 8,
        seed: 6,
        cfg_scale: 5.0,
    };
    let sample = synth_sample(6, &ToyConfig {
        frames: stream.total_frames(codec.temporal),
        ..ToyConfig::default()
    })
    .unwrap();
    let mut seen: Vec<Vec<Tensor>> = vec![Vec::new(); 4];
    let mut observe = |clip: usize, _step: usize, x: &Tensor| seen[clip].push(x.clone());
    let out = generate_stream(
        &sample.video.frame(0),
        &sample.waveform,
        &Denoiser { model: &model, store: &store },
        &Pipeline {
            codec,
            features: Default::default(),
        },
        &stream,
        Some(&mut observe),
    )
    .unwrap();
    let (f, n) = (stream.frames, stream.overlap);
    let mut inherited = true;
    for i in 2..=3 {
        inherited &= seen[i].len() == stream.steps;
        for k in 0..stream.steps {
            let head = seen[i][k].narrow(1, 0, n).unwrap();
            let tail = seen[i - 1][k].narrow(1, f - n, f).unwrap();
            inherited &= head.bit_eq(&tail);
        }
    }
    let total = out.video.num_frames();
    let closed = 1 + codec.temporal * (f - 1) + (stream.clips - 1) * codec.temporal * (f - n);
    let trim = trim_len(codec.temporal, n);
    let spans_ok = out.spans.iter().skip(1).all(|(a, b)| b - a == codec.decoded_frames(f) - trim);
    outcome(
        inherited && total == 89 && closed == 89 && trim == 5 && spans_ok,
        format!("overlap slices bit-equal at every step {inherited}, frames {total} (closed form {closed}), trim {trim}"),
    )
}

fn c7_drift(shared: &mut Shared) -> Outcome {
    let state = shared.hybrid();
    let model = Denoiser {
        model: &state.model,
        store: &state.store,
    };
    let pipe = pipeline(&state.cfg);
    let t0 = Instant::now();
    let long = StreamConfig {
        clips: 20,
        ..eval_stream()
    };
    let sample = synth_sample(
        rap::numerics::rng::derive_seed(CORPUS_SEED, &[2_000_000]),
        &ToyConfig {
            frames: long.total_frames(4),
            ..ToyConfig::default()
        },
    )
    .unwrap();
    let out = generate_stream(&sample.video.frame(0), &sample.waveform, &model, &pipe, &long, None).unwrap();
    let drift = drift_segments(&out.video, &out.spans).unwrap();
    let max = drift.iter().cloned().fold(0.0, f64::max);

    let mut seams = Vec::new();
    for n in [3, 1] {
        let cfg = StreamConfig {
            clips: 3,
            overlap: n,
            ..eval_stream()
        };
        let mut held = ToyCorpus::held_out(CORPUS_SEED, 8);
        held.cfg.frames = cfg.total_frames(4);
        let mut total = 0.0;
        for i in 0..held.len() {
            let s = held.sample(i).unwrap();
            let o = generate_stream(&s.video.frame(0), &s.waveform, &model, &pipe, &cfg, None).unwrap();
            total += boundary_discontinuity(&o.video, &o.boundaries).unwrap();
        }
        seams.push(total / held.len() as f64);
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        max <= 2.0 * drift[1] && seams[0] <= seams[1] && secs <= 600.0,
        format!(
            "20-clip drift max {max:.4} vs 2 x clip-2 {:.4}; seam ratio n=3 {:.3} vs n=1 {:.3}",
            2.0 * drift[1],
            seams[0],
            seams[1]
        ),
    )
}

fn c8_cfg(shared: &mut Shared) -> Outcome {
    let mut rng = rng_for(8, &[]);
    let cond = Tensor::rand_uniform(&[64], -8.0, 8.0, &mut rng).map(|x: f32| x.round() + 0.0);
    let uncond = Tensor::rand_uniform(&[64], -8.0, 8.0, &mut rng).map(|x: f32| x.round() + 0.0);
    let c = |s| cfg_combine(&cond, &uncond, s).unwrap();
    let affine = c(3.0).bit_eq(&c(2.0).zip_map(&c(4.0), |a, b| 0.5 * a + 0.5 * b).unwrap());
    let identities = c(0.0).bit_eq(&uncond) && c(1.0).bit_eq(&cond) && affine;

    let state = shared.hybrid();
    let dir = artifacts().join("cfg");
    std::fs::create_dir_all(&dir).unwrap();
    let ckpt = dir.join("hybrid.rapc");
    persist::save(&ckpt, &state.to_checkpoint()).unwrap();
    let held = ToyCorpus::held_out(CORPUS_SEED, 4);
    let mut csv = String::from("cfg_scale,sync_mean,per_sample\n");
    let mut done = 0;
    for s in [2.0, 5.0, 8.0] {
        let mut per = Vec::new();
        for i in 0..held.len() {
            let smp = held.sample(i).unwrap();
            let (img, wav, vid) = (dir.join(format!("ref{i}.ppm")), dir.join(format!("a{i}.wav")), dir.join(format!("s{s}_{i}.rapv")));
            write_ppm(&img, &smp.video.frame(0)).unwrap();
            write_wav(&wav, &smp.waveform).unwrap();
            rap_cli(&[
                "generate", "--ckpt", ckpt.to_str().unwrap(), "--ref", img.to_str().unwrap(), "--audio",
                wav.to_str().unwrap(), "--clips", "2", "--cfg-scale", &s.to_string(), "--out", vid.to_str().unwrap(),
            ]);
            let v = read_video(&vid).unwrap();
            per.push(sync_correlation(&v, &smp.waveform, &smp.mouth_mask).unwrap().r);
        }
        done += 1;
        let mean = per.iter().sum::<f64>() / per.len() as f64;
        let list: Vec<String> = per.iter().map(|r| format!("{r:.4}")).collect();
        csv.push_str(&format!("{s},{mean:.4},{}\n", list.join(" ")));
    }
    let path = artifacts().join("cfg_sync.csv");
    std::fs::write(&path, &csv).unwrap();
    outcome(
        identities && done == 3,
        format!("identities exact {identities}; per-scale sync in {}: {}", path.display(), csv.lines().skip(1).collect::<Vec<_>>().join(" | ")),
    )
}

fn c9_determinism(_: &mut Shared) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n).to_str().unwrap().to_string();
    let mut kv: KvConfig = RunConfig::default().to_kv();
    kv.set("steps", 100);
    kv.set("seed", 9);
    let config = p("run.cfg");
    std::fs::write(&config, kv.to_text()).unwrap();
    let train = |out: &str, extra: &[&str]| {
        let mut args = vec!["train", "--config", &config, "--data", "toy:2000", "--out", out];
        args.extend_from_slice(extra);
        rap_cli(&args);
    };
    train(&p("a.rapc"), &[]);
    train(&p("b.rapc"), &[]);
    train(&p("c.rapc"), &["--steps", "50"]);
    train(&p("c.rapc"), &["--resume"]);
    let bytes = |n: &str| std::fs::read(p(n)).unwrap();
    let rerun = bytes("a.rapc") == bytes("b.rapc") && bytes("a.loss.csv") == bytes("b.loss.csv");
    let resume = bytes("a.rapc") == bytes("c.rapc") && bytes("a.loss.csv") == bytes("c.loss.csv");

    let s = synth_sample(9, &ToyConfig::default()).unwrap();
    write_ppm(Path::new(&p("ref.ppm")), &s.video.frame(0)).unwrap();
    write_wav(Path::new(&p("a.wav")), &s.waveform).unwrap();
    for out in ["g1.rapv", "g2.rapv"] {
        rap_cli(&[
            "generate", "--ckpt", &p("a.rapc"), "--ref", &p("ref.ppm"), "--audio", &p("a.wav"), "--clips", "2",
            "--seed", "4", "--out", &p(out),
        ]);
    }
    let generate = bytes("g1.rapv") == bytes("g2.rapv");
    outcome(
        rerun && resume && generate,
        format!("train rerun identical {rerun}, 50+50 resume identical to 100 {resume}, generate rerun identical {generate}"),
    )
}

fn c10_bench(shared: &mut Shared) -> Outcome {
    let state = shared.hybrid();
    let model = Denoiser {
        model: &state.model,
        store: &state.store,
    };
    let report = throughput_bench(&model, &pipeline(&state.cfg), &eval_stream(), 3).unwrap();
    let spread = report.spread();
    let fields = report.to_csv().starts_with("latents_per_s,frames_per_s,ms_per_step");
    outcome(
        spread < 0.2 && fields && report.runs_ms.len() >= 3,
        format!(
            "{:.1} latents/s, {:.1} frames/s, {:.2} ms/step, run spread {:.1}% ({})",
            report.latents_per_s,
            report.frames_per_s,
            report.ms_per_step,
            spread * 100.0,
            report.machine
        ),
    )
}

type Criterion = (usize, &'static str, fn(&mut Shared) -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "gradient correctness", c1_gradients),
        (2, "codec exactness", c2_codec),
        (3, "reduction equivalence", c3_reduction),
        (4, "flow-matching sanity", c4_flow),
        (5, "toy sync ablation", c5_sync),
        (6, "overlap inheritance", c6_overlap),
        (7, "long-horizon drift", c7_drift),
        (8, "guidance behaviour", c8_cfg),
        (9, "determinism and persistence", c9_determinism),
        (10, "throughput harness", c10_bench),
    ];
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut shared = Shared::default();
    let mut failures = 0;
    for (n, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let t0 = Instant::now();
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run(&mut shared)));
        let secs = t0.elapsed().as_secs_f64();
        let o = result.unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        failures += !o.pass as usize;
        println!(
            "criterion {n:>2} {name:<28} {} ({secs:.1}s): {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
