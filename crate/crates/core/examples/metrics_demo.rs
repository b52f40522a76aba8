//! Evaluation metrics on constructed videos: motion heatmap, seams and drift.
//!
//! `cargo run --release --example metrics_demo -- [heatmap.pgm]`

use rap::codec::{write_pgm, VideoClip};
use rap::metrics::{boundary_discontinuity, drift_curve, motion_heatmap};
use rap::numerics::Tensor;
use rap::toy::{synth_sample, ToyConfig};

fn main() -> rap::Result<()> {
    let sample = synth_sample(5, &ToyConfig::default())?;
    let heat = motion_heatmap(&sample.video)?;
    let path = std::env::args().nth(1).unwrap_or_else(|| "heatmap.pgm".into());
    write_pgm(path.as_ref(), &heat)?;
    println!("motion heatmap written to {path}");

    // A brightening ramp with a hard cut at frame 10.
    let (t, hw) = (20, 8 * 8);
    let mut data = vec![0.0f32; 3 * t * hw];
    for c in 0..3 {
        for f in 0..t {
            let v = 0.02 * f as f32 + if f >= 10 { 0.3 } else { 0.0 };
            data[(c * t + f) * hw..(c * t + f + 1) * hw].fill(v);
        }
    }
    let v = VideoClip::new(Tensor::from_vec(&[3, t, 8, 8], data), 25.0)?;
    println!("seam ratio at the cut {:.2}", boundary_discontinuity(&v, &[10])?);
    println!("seam ratio inside the ramp {:.2}", boundary_discontinuity(&v, &[5])?);
    println!("drift per 5-frame clip {:?}", drift_curve(&v, 5)?);
    Ok(())
}
