//! Desk-scale evaluation: motion heatmaps, boundary seams, audio-visual
//! sync, long-horizon drift and throughput.

use crate::audio::Waveform;
use crate::codec::{MaskClip, VideoClip};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::toy::envelope;

/// Per-pixel sum over time of `|frame_{t+1} - frame_t|`, averaged over channels.
///
/// Stands in for accumulated inter-frame difference maps.
pub fn motion_heatmap(v: &VideoClip) -> Result<Tensor> {
    let (t, h, w) = (v.num_frames(), v.height(), v.width());
    if t < 2 {
        return Err(Error::contract(format!("motion heatmap needs at least 2 frames, got {t}")));
    }
    let d = v.frames.data();
    let mut out = vec![0.0f64; h * w];
    for c in 0..3 {
        for f in 1..t {
            let a = (c * t + f - 1) * h * w;
            let b = (c * t + f) * h * w;
            for (i, o) in out.iter_mut().enumerate() {
                *o += (d[b + i] - d[a + i]).abs() as f64 / 3.0;
            }
        }
    }
    Ok(Tensor::from_vec(&[h, w], out.into_iter().map(|x| x as f32).collect()))
}

fn frame_l1(v: &VideoClip, f: usize) -> f64 {
    let (t, hw) = (v.num_frames(), v.height() * v.width());
    let d = v.frames.data();
    (0..3)
        .map(|c| {
            let a = (c * t + f - 1) * hw;
            let b = (c * t + f) * hw;
            (0..hw).map(|i| (d[b + i] - d[a + i]).abs() as f64).sum::<f64>()
        })
        .sum()
}

/// Mean L1 jump across `boundaries` over the mean L1 step between all
/// other consecutive frames; 1.0 means the seams look like ordinary motion.
///
/// A boundary `b` is the first frame of a new clip.
pub fn boundary_discontinuity(v: &VideoClip, boundaries: &[usize]) -> Result<f64> {
    let t = v.num_frames();
    if boundaries.is_empty() {
        return Err(Error::contract("boundary set is empty"));
    }
    if let Some(b) = boundaries.iter().find(|&&b| b == 0 || b >= t) {
        return Err(Error::contract(format!("boundary {b} is not an interior frame of {t}")));
    }
    let seam: f64 = boundaries.iter().map(|&b| frame_l1(v, b)).sum::<f64>() / boundaries.len() as f64;
    let interior: Vec<f64> = (1..t).filter(|f| !boundaries.contains(f)).map(|f| frame_l1(v, f)).collect();
    if interior.is_empty() {
        return Err(Error::contract("no interior frame pairs to compare against"));
    }
    let base = interior.iter().sum::<f64>() / interior.len() as f64;
    Ok(if base == 0.0 {
        if seam == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        seam / base
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correlation {
    pub r: f64,
    /// One of the series had zero variance; `r` is reported as 0.
    pub degenerate: bool,
}

pub fn pearson(a: &[f64], b: &[f64]) -> Correlation {
    let n = a.len().min(b.len());
    if n == 0 {
        return Correlation { r: 0.0, degenerate: true };
    }
    let (a, b) = (&a[..n], &b[..n]);
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va < 1e-18 || vb < 1e-18 {
        return Correlation { r: 0.0, degenerate: true };
    }
    Correlation {
        r: (cov / (va * vb).sqrt()).clamp(-1.0, 1.0),
        degenerate: false,
    }
}

/// Per frame, mean `|frame_f - frame_0|` inside that frame's region
/// (channel-averaged). Frame 0 is the closed-mouth baseline.
pub fn region_activity(v: &VideoClip, region: &MaskClip) -> Result<Vec<f64>> {
    let (t, h, w) = (v.num_frames(), v.height(), v.width());
    if region.height != h || region.width != w || region.frames < t {
        return Err(Error::shape(
            "sync region",
            &[region.frames, region.height, region.width],
            &[t, h, w],
        ));
    }
    let d = v.frames.data();
    Ok((0..t)
        .map(|f| {
            let (mut s, mut n) = (0.0, 0usize);
            for y in 0..h {
                for x in 0..w {
                    if region.get(f, y, x) {
                        n += 1;
                        for c in 0..3 {
                            let i = (c * t) * h * w + y * w + x;
                            s += (d[i + f * h * w] - d[i]).abs() as f64 / 3.0;
                        }
                    }
                }
            }
            if n == 0 {
                0.0
            } else {
                s / n as f64
            }
        })
        .collect())
}

/// Pearson correlation between mouth-region activity and the audio
/// envelope. Stands in for lip-sync confidence.
pub fn sync_correlation(v: &VideoClip, w: &Waveform, region: &MaskClip) -> Result<Correlation> {
    let activity = region_activity(v, region)?;
    let env: Vec<f64> = envelope(w, v.fps, Some(v.num_frames())).into_iter().map(f64::from).collect();
    Ok(pearson(&activity, &env))
}

fn segment_stats(v: &VideoClip, start: usize, end: usize) -> [f64; 6] {
    let (t, hw) = (v.num_frames(), v.height() * v.width());
    let d = v.frames.data();
    let mut out = [0.0; 6];
    for c in 0..3 {
        let vals = || (start..end).flat_map(move |f| d[(c * t + f) * hw..(c * t + f + 1) * hw].iter().map(|&x| x as f64));
        let n = ((end - start) * hw) as f64;
        let mean = vals().sum::<f64>() / n;
        let var = vals().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        out[c] = mean;
        out[3 + c] = var.sqrt();
    }
    out
}

/// Per segment, mean absolute difference of its (mean, std) per channel
/// from the first segment's. Stands in for quality drift over long streams.
pub fn drift_segments(v: &VideoClip, segments: &[(usize, usize)]) -> Result<Vec<f64>> {
    if segments.len() < 2 {
        return Err(Error::contract("drift needs at least two clips"));
    }
    if let Some(s) = segments.iter().find(|s| s.0 >= s.1 || s.1 > v.num_frames()) {
        return Err(Error::contract(format!("segment {s:?} outside {} frames", v.num_frames())));
    }
    let base = segment_stats(v, segments[0].0, segments[0].1);
    Ok(segments
        .iter()
        .map(|&(a, b)| {
            let s = segment_stats(v, a, b);
            s.iter().zip(&base).map(|(x, y)| (x - y).abs()).sum::<f64>() / 6.0
        })
        .collect())
}

/// [`drift_segments`] over consecutive clips of `clip_len` frames (a short tail is dropped).
pub fn drift_curve(stream: &VideoClip, clip_len: usize) -> Result<Vec<f64>> {
    if clip_len == 0 {
        return Err(Error::contract("clip length must be positive"));
    }
    let n = stream.num_frames() / clip_len;
    let segs: Vec<(usize, usize)> = (0..n).map(|k| (k * clip_len, (k + 1) * clip_len)).collect();
    drift_segments(stream, &segs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip_from(f: impl Fn(usize, usize, usize, usize) -> f32, t: usize, h: usize, w: usize) -> VideoClip {
        let mut d = Vec::with_capacity(3 * t * h * w);
        for c in 0..3 {
            for tt in 0..t {
                for y in 0..h {
                    for x in 0..w {
                        d.push(f(c, tt, y, x));
                    }
                }
            }
        }
        VideoClip::new(Tensor::from_vec(&[3, t, h, w], d), 25.0).unwrap()
    }

    #[test]
    fn heatmap_cases() {
        let still = clip_from(|_, _, y, x| (y * 4 + x) as f32 / 16.0, 5, 4, 4);
        assert!(motion_heatmap(&still).unwrap().data().iter().all(|&x| x == 0.0));
        let blink = clip_from(|_, t, y, x| if (y, x) == (1, 2) && t % 2 == 1 { 0.5 } else { 0.0 }, 7, 4, 4);
        let m = motion_heatmap(&blink).unwrap();
        assert!((m.data()[6] - 6.0 * 0.5).abs() < 1e-6);
        assert_eq!(m.data().iter().filter(|&&x| x != 0.0).count(), 1);
        assert!(motion_heatmap(&still.slice(0, 1).unwrap()).is_err());
    }

    #[test]
    fn boundary_cases() {
        let ramp = clip_from(|_, t, _, _| t as f32 * 0.01, 10, 2, 2);
        assert!((boundary_discontinuity(&ramp, &[5]).unwrap() - 1.0).abs() < 1e-6);
        let cut = clip_from(|_, t, _, _| t as f32 * 0.01 + if t >= 5 { 0.5 } else { 0.0 }, 10, 2, 2);
        assert!(boundary_discontinuity(&cut, &[5]).unwrap() > 10.0);
        assert!(boundary_discontinuity(&cut, &[]).is_err());
        assert!(boundary_discontinuity(&cut, &[0]).is_err());
    }

    #[test]
    fn correlation_cases() {
        let e: Vec<f64> = (0..20).map(|i| (i as f64 * 0.4).sin()).collect();
        assert!((pearson(&e, &e).r - 1.0).abs() < 1e-12);
        let affine: Vec<f64> = e.iter().map(|x| 3.0 * x - 7.0).collect();
        assert!((pearson(&affine, &e).r - 1.0).abs() < 1e-12);
        assert!(pearson(&vec![0.0; 20], &e).degenerate);

        let still = clip_from(|_, _, _, _| 0.3, 10, 4, 4);
        let region = MaskClip {
            frames: 10,
            height: 4,
            width: 4,
            data: vec![1; 160],
        };
        let silent = Waveform::new(vec![0.0; 6400], 16_000).unwrap();
        assert!(sync_correlation(&still, &silent, &region).unwrap().degenerate);
    }

    #[test]
    fn drift_cases() {
        let one = clip_from(|c, t, y, x| ((c + t % 4 + y * x) % 5) as f32 / 5.0, 16, 3, 3);
        assert!(drift_curve(&one, 4).unwrap().iter().all(|&d| d == 0.0));
        let bright = clip_from(|_, t, y, _| 0.1 + 0.02 * t as f32 + 0.01 * y as f32, 16, 3, 3);
        let d = drift_curve(&bright, 4).unwrap();
        assert_eq!(d[0], 0.0);
        assert!(d.windows(2).all(|w| w[1] > w[0]));
        assert!(drift_curve(&bright, 10).is_err());
    }
}

/// Median timings of repeated identical streams. Stands in for reported FPS.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub latents_per_s: f64,
    pub frames_per_s: f64,
    pub ms_per_step: f64,
    /// Wall-clock milliseconds of each run.
    pub runs_ms: Vec<f64>,
    pub machine: String,
}

impl BenchReport {
    /// Largest relative deviation of a run from the median run.
    pub fn spread(&self) -> f64 {
        let m = median(&self.runs_ms);
        self.runs_ms.iter().map(|r| (r - m).abs() / m).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        format!(
            "latents_per_s,frames_per_s,ms_per_step,runs,machine\n{:.3},{:.3},{:.3},{},{}\n",
            self.latents_per_s,
            self.frames_per_s,
            self.ms_per_step,
            self.runs_ms.len(),
            self.machine
        )
    }
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn machine_info() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| s.lines().find(|l| l.starts_with("model name")).and_then(|l| l.split(':').nth(1)).map(|m| m.trim().to_string()))
        .unwrap_or_else(|| "unknown cpu".into());
    format!(
        "{} {} {} threads={}",
        std::env::consts::OS,
        std::env::consts::ARCH,
        cpu.replace(',', " "),
        crate::train::thread_count()
    )
}

/// Runs one warm-up stream, then `runs` (at least 3) timed streams; reports medians.
pub fn throughput_bench(
    model: &dyn crate::infer::Velocity,
    pipe: &crate::infer::Pipeline,
    stream: &crate::infer::StreamConfig,
    runs: usize,
) -> Result<BenchReport> {
    use crate::infer::generate_stream;
    use crate::toy::{synth_sample, ToyConfig};

    let cfg = ToyConfig {
        frames: stream.total_frames(pipe.codec.temporal),
        ..ToyConfig::default()
    };
    let sample = synth_sample(stream.seed, &cfg)?;
    let ref_image = sample.video.frame(0);
    generate_stream(&ref_image, &sample.waveform, model, pipe, stream, None)?;
    let mut totals = Vec::new();
    let (mut lat, mut fr, mut step) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..runs.max(3) {
        let t0 = std::time::Instant::now();
        let out = generate_stream(&ref_image, &sample.waveform, model, pipe, stream, None)?;
        let secs = t0.elapsed().as_secs_f64();
        let denoise_ms: f64 = out.timings.iter().map(|t| t.ms_denoise).sum();
        totals.push(secs * 1000.0);
        lat.push((stream.clips * stream.frames) as f64 / secs);
        fr.push(out.video.num_frames() as f64 / secs);
        step.push(denoise_ms / (stream.clips * stream.steps) as f64);
    }
    Ok(BenchReport {
        latents_per_s: median(&lat),
        frames_per_s: median(&fr),
        ms_per_step: median(&step),
        runs_ms: totals,
        machine: machine_info(),
    })
}
