//! Property tests for invariants that span modules.

use proptest::prelude::*;

use rap::audio::{align_to_latents, extract_features, frames_needed, FeatureConfig, Waveform};
use rap::codec::{Codec, VideoClip};
use rap::flow::{composite_loss, interpolate, FaceMask, LossWeights};
use rap::infer::{trim_len, StreamConfig};
use rap::metrics::pearson;
use rap::numerics::rng::rng_for;
use rap::numerics::{Tape, Tensor};
use rap::persist::{Checkpoint, KvConfig};

fn clip(codec: Codec, latents: usize, side: usize, seed: u64) -> VideoClip {
    let frames = codec.decoded_frames(latents);
    let mut rng = rng_for(seed, &[]);
    VideoClip::new(Tensor::rand_uniform(&[3, frames, side, side], 0.0, 1.0, &mut rng), 25.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn codec_is_orthonormal(p in 0u32..3, r in 0u32..4, latents in 1usize..4, k in 1usize..3, seed in any::<u64>()) {
        let codec = Codec::new(1 << p, 1 << r).unwrap();
        let v = clip(codec, latents, codec.patch * k, seed);
        let lat = codec.encode_video(&v).unwrap();
        prop_assert_eq!(lat.channels(), 3 * codec.patch * codec.patch * codec.temporal);
        prop_assert!(codec.decode_latents(&lat).unwrap().frames.max_abs_diff(&v.frames) <= 1e-6);
        // The static head is replicated r_f times, so it carries r_f times its energy.
        let head = v.frames.narrow(1, 0, 1).unwrap().sum_sq();
        let expect = v.frames.sum_sq() + (codec.temporal as f64 - 1.0) * head;
        prop_assert!((lat.latents.sum_sq() - expect).abs() <= 1e-3 * expect.max(1.0));
    }

    #[test]
    fn audio_partitions_tile_the_sequence(frames in 1usize..6, r_f in 1usize..5, layers in 1usize..3, offset in 0usize..4) {
        let cfg = FeatureConfig { layers, ..FeatureConfig::default() };
        let video = frames_needed(offset, frames, r_f);
        let mut rng = rng_for(offset as u64, &[frames as u64]);
        let w = Waveform::new(Tensor::<f32>::randn(&[video * 640], 0.3, &mut rng).into_data(), 16_000).unwrap();
        let f = extract_features(&w, &cfg, Some(video)).unwrap();
        prop_assert!(f.data.bit_eq(&extract_features(&w, &cfg, Some(video)).unwrap().data));
        let a = align_to_latents(&f.data, frames, r_f, offset).unwrap();
        prop_assert_eq!(a.tokens.shape()[0], frames * r_f * layers);
        let mut next = 0;
        for j in 0..frames {
            let p = a.partition(j);
            prop_assert_eq!(p.start, next);
            next = p.end;
        }
        prop_assert_eq!(next, a.tokens.shape()[0]);
    }

    #[test]
    fn audio_shift_moves_partitions(frames in 2usize..5, seed in any::<u64>()) {
        // Latents g >= 1 of a stream starting at offset 1 equal latents g + 1 at offset 0.
        let (r_f, cfg) = (4, FeatureConfig::default());
        let video = frames_needed(1, frames, r_f);
        let mut rng = rng_for(seed, &[]);
        let w = Waveform::new(Tensor::<f32>::randn(&[video * 640], 0.3, &mut rng).into_data(), 16_000).unwrap();
        let f = extract_features(&w, &cfg, Some(video)).unwrap();
        let a0 = align_to_latents(&f.data, frames, r_f, 0).unwrap();
        let a1 = align_to_latents(&f.data, frames, r_f, 1).unwrap();
        let per = a0.per_latent() * a0.width();
        for g in 1..frames - 1 {
            prop_assert_eq!(&a1.tokens.data()[g * per..(g + 1) * per], &a0.tokens.data()[(g + 1) * per..(g + 2) * per]);
        }
    }

    #[test]
    fn interpolation_stays_on_the_segment(t in 0.0f64..=1.0, seed in any::<u64>()) {
        let mut rng = rng_for(seed, &[]);
        let a = Tensor::<f32>::randn(&[2, 3, 2, 2], 1.0, &mut rng);
        let b = Tensor::randn(&[2, 3, 2, 2], 1.0, &mut rng);
        let x = interpolate(&a, &b, t).unwrap();
        for ((xi, ai), bi) in x.data().iter().zip(a.data()).zip(b.data()) {
            prop_assert!(*xi >= ai.min(*bi) - 1e-6 && *xi <= ai.max(*bi) + 1e-6);
        }
    }

    #[test]
    fn loss_is_nonnegative_and_zero_at_target(lambda in 0.0f64..3.0, mu in 0.0f64..3.0, seed in any::<u64>()) {
        let mut rng = rng_for(seed, &[]);
        let u = Tensor::<f32>::randn(&[3, 4, 2, 2], 1.0, &mut rng);
        let v = Tensor::randn(&[3, 4, 2, 2], 1.0, &mut rng);
        let w = LossWeights { lambda, mu };
        let m = FaceMask::ones(u.shape());
        let mut tape = Tape::<f32>::new();
        let vv = tape.constant(v.clone());
        let l = composite_loss(&mut tape, vv, &u, &m, &w).unwrap().total;
        prop_assert!(tape.value(l).item() >= 0.0);
        let uu = tape.constant(u.clone());
        let l = composite_loss(&mut tape, uu, &u, &m, &w).unwrap().total;
        prop_assert_eq!(tape.value(l).item(), 0.0);
    }

    #[test]
    fn correlation_is_affine_invariant(xs in proptest::collection::vec(-5.0f64..5.0, 3..40), a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| x * x + i as f64).collect();
        let c1 = pearson(&xs, &ys);
        let c2 = pearson(&xs.iter().map(|x| a * x + b).collect::<Vec<_>>(), &ys);
        prop_assert!(c1.r.abs() <= 1.0 + 1e-12);
        prop_assert_eq!(c1.degenerate, c2.degenerate);
        prop_assert!((c1.r - c2.r).abs() <= 1e-9);
    }

    #[test]
    fn stream_frame_count_closed_form(clips in 1usize..6, frames in 2usize..10, n_raw in 1usize..9, r in 0u32..4) {
        let n = 1 + n_raw % (frames - 1);
        let r_f = 1 << r;
        let cfg = StreamConfig { clips, frames, overlap: n, ..StreamConfig::default() };
        let clip = 1 + r_f * (frames - 1);
        let emitted = clip + (clips - 1) * (clip - trim_len(r_f, n));
        prop_assert_eq!(cfg.total_frames(r_f), emitted);
        prop_assert_eq!(trim_len(r_f, n), r_f * (n - 1) + 1);
    }

    #[test]
    fn checkpoint_round_trip(shapes in proptest::collection::vec(proptest::collection::vec(1usize..5, 0..4), 1..6), seed in any::<u64>()) {
        let mut rng = rng_for(seed, &[]);
        let mut config = KvConfig::default();
        config.set("seed", seed);
        let tensors: Vec<(String, Tensor)> = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| (format!("t{i}"), Tensor::randn(s, 1.0, &mut rng)))
            .collect();
        let c = Checkpoint { config, tensors };
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back.config, &c.config);
        for ((n1, t1), (n2, t2)) in back.tensors.iter().zip(&c.tensors) {
            prop_assert_eq!(n1, n2);
            prop_assert!(t1.bit_eq(t2));
        }
        let cut = (seed as usize) % bytes.len();
        prop_assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err());
    }
}
