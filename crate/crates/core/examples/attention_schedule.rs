//! Per-layer blend weights of the hybrid attention schedule for several (w, delta).
//!
//! `cargo run --release --example attention_schedule -- [layers]`

use rap::model::HybridSchedule;

fn main() {
    let layers: usize = std::env::args().nth(1).map_or(6, |s| s.parse().expect("layers"));
    let mut grid = vec![(0.0, 0.0, "full only"), (0.0, 1.0, "window only"), (1.0, 0.0, "hybrid")];
    for w in [-1.0, -0.5, 0.5] {
        grid.push((w, 0.5 - w / 2.0, ""));
    }
    for (w, delta, label) in grid {
        let s = HybridSchedule::new(w, delta, layers);
        let alphas: Vec<String> = (0..layers).map(|i| format!("{:.3}", s.alpha(i))).collect();
        println!("w={w:>5} delta={delta:>5} {label:<12} {}", alphas.join(" "));
    }
}
