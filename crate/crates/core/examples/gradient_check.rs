//! Finite-difference check of a small DiT trained through the composite loss.
//!
//! `cargo run --release --example gradient_check`

use rap::flow::{composite_loss, FaceMask, LossWeights};
use rap::model::{jitter, Dit, HybridSchedule, ModelConfig};
use rap::numerics::rng::rng_for;
use rap::numerics::{check_gradients_where, Coverage, ParamStore, Tensor};

fn main() -> rap::Result<()> {
    let cfg = ModelConfig {
        dim: 16,
        layers: 2,
        heads: 2,
        ffn: 32,
        channels: 12,
        frames: 2,
        height: 2,
        width: 2,
        bands: 4,
        schedule: HybridSchedule::new(0.5, 0.25, 2),
        ..ModelConfig::default()
    };
    let (model, mut store) = Dit::new(cfg.clone(), 0)?;
    jitter(&mut store, 0.1, 1);
    let store: ParamStore<f64> = store.cast();
    let mut rng = rng_for(2, &[]);
    let shape = [cfg.channels, cfg.frames, cfg.height, cfg.width];
    let (x, r, u) = (
        Tensor::<f64>::randn(&shape, 1.0, &mut rng),
        Tensor::<f64>::randn(&shape, 1.0, &mut rng),
        Tensor::<f64>::randn(&shape, 1.0, &mut rng),
    );
    let report = check_gradients_where(
        &store,
        |tape, s| {
            let v = model.forward(tape, s, &x, &r, 0.3, None)?;
            Ok(composite_loss(tape, v, &u, &FaceMask::ones(&shape), &LossWeights::default())?.total)
        },
        1e-3,
        1e-4,
        Coverage::All,
        |name| !name.starts_with("stats."),
    )?;
    let mut worst: Vec<_> = report.params.iter().collect();
    worst.sort_by(|a, b| b.rel_err.total_cmp(&a.rel_err));
    for p in worst.iter().take(5) {
        println!("{:<24} {:>5} entries  rel err {:.2e}", p.name, p.checked, p.rel_err);
    }
    println!("{} tensors, max rel err {:.2e}, passed {}", report.params.len(), report.max_rel_err, report.passed);
    Ok(())
}
