//! Saves a training state midway, resumes it and compares against an unbroken run.
//!
//! `cargo run --release --example checkpoint_resume`

use rap::persist;
use rap::toy::ToyCorpus;
use rap::train::{train_loop, LoopOutputs, RunConfig, TrainState};

fn main() -> rap::Result<()> {
    let dir = std::env::temp_dir().join("rap_resume_example");
    std::fs::create_dir_all(&dir).map_err(|e| rap::Error::io(&dir, e))?;
    let mut cfg = RunConfig::default();
    cfg.train.steps = 6;
    cfg.train.batch = 2;
    cfg.train.stats_samples = 8;
    let corpus = ToyCorpus::train(1, 64);

    let mut unbroken = TrainState::init(cfg.clone(), &corpus)?;
    train_loop(&mut unbroken, &corpus, &LoopOutputs::default())?;

    let half = dir.join("half.rapc");
    let mut first = TrainState::init(RunConfig { train: rap::train::TrainConfig { steps: 3, ..cfg.train.clone() }, ..cfg.clone() }, &corpus)?;
    train_loop(&mut first, &corpus, &LoopOutputs { checkpoint: Some(half.clone()), loss_csv: None })?;
    let mut resumed = TrainState::from_checkpoint(&persist::load(&half)?)?;
    resumed.cfg.train.steps = 6;
    train_loop(&mut resumed, &corpus, &LoopOutputs::default())?;

    let same = unbroken.to_checkpoint().to_bytes() == resumed.to_checkpoint().to_bytes();
    println!("checkpoint {} bytes, resumed run identical to unbroken run: {same}", unbroken.to_checkpoint().to_bytes().len());
    Ok(())
}
