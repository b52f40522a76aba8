//! Writes a small procedural corpus and checks that mouth motion follows the audio.
//!
//! `cargo run --release --example toy_corpus -- [out_dir] [count]`

use std::path::PathBuf;

use rap::metrics::sync_correlation;
use rap::toy::{write_corpus, Corpus, DirCorpus, ToyCorpus};

fn main() -> rap::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "toy_corpus".into()));
    let count: usize = args.next().map_or(8, |s| s.parse().expect("count"));
    let rows = write_corpus(&out, &ToyCorpus::train(0, count))?;
    println!("{} samples in {}", rows.len(), out.display());
    let corpus = DirCorpus::open(&out)?;
    for i in 0..corpus.len() {
        let s = corpus.sample(i)?;
        let c = sync_correlation(&s.video, &s.waveform, &s.mouth_mask)?;
        println!("sample {i}: seed {:>20} ground-truth sync {:.3}", s.seed, c.r);
    }
    Ok(())
}
