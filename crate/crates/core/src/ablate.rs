//! Shared evaluation used by the ablation driver: held-out sync, seams and drift.

use crate::error::Result;
use crate::infer::{generate_stream, Pipeline, StreamConfig, Velocity};
use crate::metrics::{boundary_discontinuity, sync_correlation};
use crate::toy::Corpus;

#[derive(Clone, Debug, PartialEq)]
pub struct SyncSummary {
    pub mean: f64,
    pub per_sample: Vec<f64>,
    /// Samples whose activity or envelope had no variance (scored 0).
    pub degenerate: usize,
    /// Mean seam ratio over samples that have a clip boundary.
    pub boundary_ratio: Option<f64>,
}

/// Streams every held-out sample from its first frame and audio, then
/// scores mouth-region activity against the sample's own envelope.
pub fn held_out_sync(model: &dyn Velocity, pipe: &Pipeline, corpus: &dyn Corpus, count: usize, stream: &StreamConfig) -> Result<SyncSummary> {
    let mut per_sample = Vec::with_capacity(count);
    let mut degenerate = 0;
    let mut ratios = Vec::new();
    for i in 0..count.min(corpus.len()) {
        let s = corpus.sample(i)?;
        let out = generate_stream(&s.video.frame(0), &s.waveform, model, pipe, stream, None)?;
        let n = out.video.num_frames();
        let mut region = s.mouth_mask.clone();
        region.frames = region.frames.min(n);
        let c = sync_correlation(&out.video, &s.waveform, &region)?;
        degenerate += c.degenerate as usize;
        per_sample.push(c.r);
        if !out.boundaries.is_empty() {
            ratios.push(boundary_discontinuity(&out.video, &out.boundaries)?);
        }
    }
    let mean = per_sample.iter().sum::<f64>() / per_sample.len().max(1) as f64;
    let boundary_ratio = (!ratios.is_empty()).then(|| ratios.iter().sum::<f64>() / ratios.len() as f64);
    Ok(SyncSummary {
        mean,
        per_sample,
        degenerate,
        boundary_ratio,
    })
}
