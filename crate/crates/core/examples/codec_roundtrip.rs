//! Encodes a toy clip, decodes it back and writes a few frames as PPM.
//!
//! `cargo run --release --example codec_roundtrip -- [out_dir]`

use std::path::PathBuf;

use rap::codec::{write_ppm, Codec};
use rap::toy::{synth_sample, ToyConfig};

fn main() -> rap::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "codec_out".into()));
    std::fs::create_dir_all(&out).map_err(|e| rap::Error::io(&out, e))?;
    let sample = synth_sample(3, &ToyConfig::default())?;
    let codec = Codec::default();
    let lat = codec.encode_video(&sample.video)?;
    println!(
        "video {:?} -> latents {:?} ({} channels, static head {})",
        sample.video.frames.shape(),
        lat.latents.shape(),
        codec.channels(),
        lat.static_head
    );
    let back = codec.decode_latents(&lat)?;
    println!("max round-trip error {:.2e}", back.frames.max_abs_diff(&sample.video.frames));
    let energy: f64 = lat.latents.sum_sq();
    println!("energy video {:.4} latents {:.4}", sample.video.frames.sum_sq(), energy);
    for t in [0, 8, 16, 32] {
        write_ppm(&out.join(format!("frame_{t:02}.ppm")), &back.frame(t))?;
    }
    println!("frames written to {}", out.display());
    Ok(())
}
