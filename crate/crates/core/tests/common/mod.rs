//! Gradient-check cases shared by the numerics tests and the acceptance suite.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use rap::flow::{composite_loss, FaceMask, LossWeights};
use rap::model::{jitter, Dit, HybridSchedule, ModelConfig};
use rap::numerics::rng::rng_for;
use rap::numerics::{check_gradients, check_gradients_where, AttnGroup, Coverage, GradCheckReport, ParamStore, Tensor};
use rap::audio::AudioTokens;

/// Op `case % 12` on shapes drawn from `rng`.
pub fn op_case(case: u64, rng: &mut ChaCha8Rng) -> GradCheckReport {
    let rows = rng.random_range(1..5);
    let cols = rng.random_range(2..6);
    let heads = if cols % 2 == 0 { 2 } else { 1 };
    let mut s = ParamStore::<f64>::new();
    let a = s.add("a", Tensor::randn(&[rows, cols], 1.0, rng));
    let b = s.add("b", Tensor::randn(&[rows, cols], 1.0, rng));
    let w = s.add("w", Tensor::randn(&[cols, 3], 1.0, rng));
    let r = s.add("r", Tensor::randn(&[cols], 1.0, rng));
    let k = s.add("k", Tensor::randn(&[rows + 1, cols], 1.0, rng));
    let cst = Tensor::<f64>::randn(&[rows, cols], 1.0, rng);
    let op = case % 12;
    let report = check_gradients(
        &s,
        |tape, s| {
            let (va, vb) = (tape.param(s, a), tape.param(s, b));
            let y = match op {
                0 => {
                    let vw = tape.param(s, w);
                    tape.matmul(va, vw)?
                }
                1 => {
                    let t = tape.transpose(va)?;
                    let m = tape.mul(va, vb)?;
                    let mt = tape.transpose(m)?;
                    tape.add(t, mt)?
                }
                2 => {
                    let d = tape.sub(va, vb)?;
                    tape.mul_const(d, cst.clone())?
                }
                3 => {
                    let vr = tape.param(s, r);
                    let x = tape.mul_row(va, vr)?;
                    tape.add_row(x, vr)?
                }
                4 => tape.gelu(va),
                5 => tape.silu(va),
                6 => tape.softmax_lastdim(va)?,
                7 => {
                    let vr = tape.param(s, r);
                    tape.layer_norm(va, Some(vr), Some(vr), 1e-5)?
                }
                8 => {
                    let vk = tape.param(s, k);
                    let groups = [AttnGroup { q: (0, rows), k: (0, rows + 1) }];
                    tape.attention(va, vk, vk, heads, &groups)?
                }
                9 => {
                    let vk = tape.param(s, k);
                    let mut groups = vec![AttnGroup { q: (0, 1), k: (0, 2) }];
                    if rows > 1 {
                        groups.push(AttnGroup { q: (1, rows), k: (1, rows + 1) });
                    }
                    tape.attention(va, vk, vk, heads, &groups)?
                }
                10 => {
                    let t = tape.transpose(va)?;
                    let d = tape.frame_diff(t, 0)?;
                    let sc = tape.scale(d, 0.7);
                    tape.shift(sc, 0.3)
                }
                _ => {
                    let vr = tape.param(s, r);
                    let rep = tape.repeat_rows(vr, 3);
                    let sl = tape.slice_cols(rep, 1, cols - 1)?;
                    tape.reshape(sl, &[3 * (cols - 1)])?
                }
            };
            // A fixed random projection makes every output element matter.
            let n = tape.value(y).len();
            let proj: Vec<f64> = (0..n).map(|i| ((i * 7 + 3) % 11) as f64 / 11.0 - 0.4).collect();
            let shape = tape.value(y).shape().to_vec();
            let p = tape.mul_const(y, Tensor::from_vec(&shape, proj))?;
            let sq = tape.mean_square(p)?;
            let lin = tape.sum(p);
            tape.add(sq, lin)
        },
        1e-3,
        1e-4,
        Coverage::All,
    )
    .unwrap();
    report
}

/// Composite loss with random weights, mask and target; `v` is the parameter.
pub fn loss_case(seed: u64) -> GradCheckReport {
    let mut rng = rng_for(seed, &[]);
    let shape = [rng.random_range(1..4), rng.random_range(1..4), 2, rng.random_range(1..3)];
    let mut s = ParamStore::<f64>::new();
    let v = s.add("v", Tensor::randn(&shape, 1.0, &mut rng));
    let u = Tensor::<f64>::randn(&shape, 1.0, &mut rng);
    let m = FaceMask {
        m: Tensor::rand_uniform(&shape, 0.0, 1.0, &mut rng).map(|x| if x > 0.5 { 1.0 } else { 0.0 }),
    };
    let w = LossWeights {
        lambda: rng.random_range(0.0..2.0),
        mu: rng.random_range(0.0..2.0),
    };
    check_gradients(
        &s,
        |tape, s| {
            let vv = tape.param(s, v);
            Ok(composite_loss(tape, vv, &u.cast(), &m, &w)?.total)
        },
        1e-3,
        1e-4,
        Coverage::All,
    )
    .unwrap()
}

/// Desk geometry with `frames` latents and a given attention schedule.
pub fn desk(schedule: HybridSchedule, frames: usize) -> ModelConfig {
    let mut cfg = ModelConfig::default();
    cfg.schedule = schedule;
    cfg.frames = frames;
    cfg
}

/// Composite loss through a full DiT forward in f64, with every
/// zero-initialised head perturbed so all parameters carry gradient.
pub fn dit_case(cfg: ModelConfig, seed: u64, per_param: usize, with_audio: bool, h: f64) -> GradCheckReport {
    let (model, store) = Dit::new(cfg.clone(), seed).unwrap();
    let mut store = store;
    jitter(&mut store, 0.05, seed + 1);
    // Open the zero-initialised gates fully so block internals reach the loss.
    let heads: Vec<_> = store.iter().filter(|(_, n, _)| n.contains(".mod.") || n.starts_with("final.")).map(|(id, _, _)| id).collect();
    for id in heads {
        let noise = Tensor::<f32>::randn(store.get(id).shape(), 0.3, &mut rng_for(seed, &[3, id.0 as u64]));
        *store.get_mut(id) = store.get(id).zip_map(&noise, |a, b| a + b).unwrap();
    }
    let c = cfg.channels;
    let mut rng = rng_for(seed, &[2]);
    let mean: Vec<f32> = (0..c).map(|_| rng.random_range(-0.2..0.2)).collect();
    let std: Vec<f32> = (0..c).map(|_| rng.random_range(0.3..1.0)).collect();
    model.set_stats(&mut store, &mean, &std).unwrap();
    let store64: ParamStore<f64> = store.cast();
    let shape = [c, cfg.frames, cfg.height, cfg.width];
    let x_t = Tensor::<f64>::randn(&shape, 1.0, &mut rng);
    let x_ref = Tensor::<f64>::randn(&shape, 1.0, &mut rng);
    let u = Tensor::<f64>::randn(&shape, 1.0, &mut rng);
    let rows = cfg.frames * cfg.r_f * cfg.audio_layers;
    let audio = AudioTokens {
        tokens: Tensor::rand_uniform(&[rows, cfg.bands], -18.0, 0.0, &mut rng),
        frames: cfg.frames,
        r_f: cfg.r_f,
        layers: cfg.audio_layers,
    };
    let mut mask = Tensor::zeros(&shape);
    for (i, m) in mask.data_mut().iter_mut().enumerate() {
        *m = ((i / 3) % 2) as f32;
    }
    let m = FaceMask { m: mask };
    let t = rng.random_range(0.05..0.95);
    check_gradients_where(
        &store64,
        |tape, s| {
            let v = model.forward(tape, s, &x_t, &x_ref, t, with_audio.then_some(&audio))?;
            Ok(composite_loss(tape, v, &u, &m, &LossWeights::default())?.total)
        },
        h,
        1e-4,
        Coverage::Sample { per_param, seed },
        |name| !name.starts_with("stats."),
    )
    .unwrap()
}
