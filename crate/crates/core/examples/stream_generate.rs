//! Streams several overlapping clips from a checkpoint (or a fresh model) and
//! reports seams, drift and timing.
//!
//! `cargo run --release --example stream_generate -- [ckpt] [clips] [overlap]`

use rap::infer::{generate_stream, Denoiser, Pipeline, StreamConfig};
use rap::metrics::{boundary_discontinuity, drift_segments};
use rap::model::Dit;
use rap::persist;
use rap::toy::{synth_sample, ToyConfig};
use rap::train::{load_model, RunConfig};

fn main() -> rap::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (cfg, model, store) = match args.first().filter(|a| !a.is_empty() && *a != "-") {
        Some(path) => load_model(&persist::load(path.as_ref())?)?,
        None => {
            let cfg = RunConfig::default();
            let (m, s) = Dit::new(cfg.model.clone(), 0)?;
            (cfg, m, s)
        }
    };
    let stream = StreamConfig {
        clips: args.get(1).map_or(4, |s| s.parse().expect("clips")),
        overlap: args.get(2).map_or(3, |s| s.parse().expect("overlap")),
        frames: cfg.train.window,
        ..StreamConfig::default()
    };
    let pipe = Pipeline {
        codec: cfg.codec,
        features: cfg.features,
    };
    let sample = synth_sample(42, &ToyConfig {
        frames: stream.total_frames(cfg.codec.temporal),
        ..ToyConfig::default()
    })?;
    let mut steps = 0;
    let mut count = |_: usize, _: usize, _: &rap::numerics::Tensor| steps += 1;
    let out = generate_stream(
        &sample.video.frame(0),
        &sample.waveform,
        &Denoiser { model: &model, store: &store },
        &pipe,
        &stream,
        Some(&mut count),
    )?;
    println!("{} frames, {steps} denoising steps, spans {:?}", out.video.num_frames(), out.spans);
    for t in &out.timings {
        println!("clip {}: {:.1} ms denoise, {:.1} ms decode, {:.1} fps", t.clip, t.ms_denoise, t.ms_decode, t.fps());
    }
    if !out.boundaries.is_empty() {
        println!("seam ratio {:.3}", boundary_discontinuity(&out.video, &out.boundaries)?);
        println!("drift {:?}", drift_segments(&out.video, &out.spans)?);
    }
    Ok(())
}
