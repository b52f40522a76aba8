//! Throughput of a fresh desk model at two step counts.
//!
//! `cargo run --release --example bench`

use rap::infer::{Denoiser, Pipeline, StreamConfig};
use rap::metrics::throughput_bench;
use rap::model::Dit;
use rap::train::RunConfig;

fn main() -> rap::Result<()> {
    let cfg = RunConfig::default();
    let (model, store) = Dit::new(cfg.model.clone(), 0)?;
    let pipe = Pipeline {
        codec: cfg.codec,
        features: cfg.features,
    };
    let den = Denoiser { model: &model, store: &store };
    for steps in [16, 8] {
        let stream = StreamConfig {
            clips: 2,
            steps,
            frames: cfg.train.window,
            ..StreamConfig::default()
        };
        let r = throughput_bench(&den, &pipe, &stream, 3)?;
        println!(
            "T={steps:>2}: {:.1} latents/s, {:.1} frames/s, {:.2} ms/step, {:.0} ms/run, spread {:.1}%",
            r.latents_per_s,
            r.frames_per_s,
            r.ms_per_step,
            rap::metrics::median(&r.runs_ms),
            100.0 * r.spread()
        );
    }
    println!("{}", rap::metrics::machine_info());
    Ok(())
}
