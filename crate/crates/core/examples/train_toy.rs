//! Trains a desk model on the procedural corpus and scores held-out sync.
//!
//! `cargo run --release --example train_toy -- [steps] [w] [delta]`

use rap::ablate::held_out_sync;
use rap::infer::{Denoiser, Pipeline, StreamConfig};
use rap::model::HybridSchedule;
use rap::toy::ToyCorpus;
use rap::train::{train_loop, LoopOutputs, RunConfig, TrainState};

fn main() -> rap::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let steps: u64 = args.first().map_or(300, |s| s.parse().expect("steps"));
    let w: f64 = args.get(1).map_or(1.0, |s| s.parse().expect("w"));
    let delta: f64 = args.get(2).map_or(0.0, |s| s.parse().expect("delta"));

    let mut cfg = RunConfig::default();
    cfg.train.steps = steps;
    cfg.model.schedule = HybridSchedule::new(w, delta, cfg.model.layers);
    let corpus = ToyCorpus::train(7, 2000);
    let mut state = TrainState::init(cfg.clone(), &corpus)?;
    let t0 = std::time::Instant::now();
    let logs = train_loop(&mut state, &corpus, &LoopOutputs::default())?;
    for chunk in logs.chunks(50) {
        let mean = chunk.iter().map(|l| l.loss).sum::<f64>() / chunk.len() as f64;
        let face = chunk.iter().map(|l| l.face).sum::<f64>() / chunk.len() as f64;
        println!("steps {:>5}..{:<5} loss {mean:.4} face {face:.4}", chunk[0].step, chunk[chunk.len() - 1].step);
    }
    println!("trained {steps} steps in {:.1}s", t0.elapsed().as_secs_f64());

    let pipe = Pipeline {
        codec: cfg.codec,
        features: cfg.features,
    };
    let stream = StreamConfig {
        clips: 2,
        frames: cfg.train.window,
        overlap: 3,
        ..Default::default()
    };
    let model = Denoiser {
        model: &state.model,
        store: &state.store,
    };
    let held = ToyCorpus::held_out(7, 200);
    let t1 = std::time::Instant::now();
    let s = held_out_sync(&model, &pipe, &held, 12, &stream)?;
    println!(
        "held-out sync {:.3} (degenerate {}, seam ratio {:?}) in {:.1}s",
        s.mean,
        s.degenerate,
        s.boundary_ratio,
        t1.elapsed().as_secs_f64()
    );
    println!("per sample {:?}", s.per_sample.iter().map(|x| (x * 100.0).round() / 100.0).collect::<Vec<_>>());
    Ok(())
}
