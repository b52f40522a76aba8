//! Log filterbank features of a two-tone waveform and their latent-aligned tokens.
//!
//! `cargo run --release --example audio_features`

use rap::audio::{align_to_latents, extract_features, FeatureConfig, Waveform};

fn main() -> rap::Result<()> {
    let sr = 16_000;
    let samples: Vec<f32> = (0..sr)
        .map(|i| {
            let t = i as f32 / sr as f32;
            let tone = if t < 0.5 { 300.0 } else { 3000.0 };
            0.5 * (2.0 * std::f32::consts::PI * tone * t).sin()
        })
        .collect();
    let w = Waveform::new(samples, sr)?;
    let cfg = FeatureConfig::default();
    let f = extract_features(&w, &cfg, None)?;
    let [frames, layers, bands] = [f.data.shape()[0], f.data.shape()[1], f.data.shape()[2]];
    println!("{frames} frames x {layers} layers x {bands} bands, padded {}", f.padded);
    for t in [2, 20] {
        let row = &f.data.data()[t * layers * bands..t * layers * bands + bands];
        let peak = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap();
        println!("frame {t}: loudest band {peak}");
    }
    let tokens = align_to_latents(&f.data, 6, 4, 0)?;
    println!(
        "6 latents -> {} tokens ({} per latent), partition 1 = rows {:?}",
        tokens.tokens.shape()[0],
        tokens.per_latent(),
        tokens.partition(1)
    );
    Ok(())
}
