//! Linear-path flow matching: interpolation, velocity targets, the composite
//! loss and guidance.

use crate::codec::{Codec, MaskClip};
use crate::error::{Error, Result};
use crate::numerics::{Real, Tape, Tensor, Var};

/// `x_t = t x1 + (1 - t) x0`.
pub fn interpolate<T: Real>(x0: &Tensor<T>, x1: &Tensor<T>, t: f64) -> Result<Tensor<T>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::contract(format!("interpolation time {t} outside [0, 1]")));
    }
    let (a, b) = (T::of(t), T::of(1.0 - t));
    x1.zip_map(x0, |p, q| a * p + b * q)
}

/// `u = x1 - x0`.
pub fn target_velocity<T: Real>(x0: &Tensor<T>, x1: &Tensor<T>) -> Result<Tensor<T>> {
    x1.zip_map(x0, |p, q| p - q)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// Face-region weight.
    pub lambda: f64,
    /// Temporal-difference weight.
    pub mu: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda: 1.0, mu: 1.0 }
    }
}

/// Binary `[C, F, H, W]` mask on the latent grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceMask {
    pub m: Tensor,
}

impl FaceMask {
    pub fn ones(shape: &[usize]) -> Self {
        Self { m: Tensor::full(shape, 1.0) }
    }

    /// Max-pools the pixel mask over each `p x p` patch and over the video
    /// frames feeding each latent, then broadcasts over channels.
    ///
    /// Covers `frames` latents starting at global latent `offset`.
    pub fn from_pixels(mask: &MaskClip, codec: &Codec, frames: usize, offset: usize) -> Result<Self> {
        let p = codec.patch;
        if mask.height % p != 0 || mask.width % p != 0 {
            return Err(Error::shape("face mask", &[mask.height, mask.width], &[p, p]));
        }
        let (gh, gw) = (mask.height / p, mask.width / p);
        let mut grid = vec![0.0f32; frames * gh * gw];
        for j in 0..frames {
            for src in crate::audio::latent_frame_sources(offset + j, codec.temporal) {
                if src >= mask.frames {
                    return Err(Error::contract(format!("face mask needs frame {src}, has {}", mask.frames)));
                }
                for y in 0..mask.height {
                    for x in 0..mask.width {
                        if mask.get(src, y, x) {
                            grid[(j * gh + y / p) * gw + x / p] = 1.0;
                        }
                    }
                }
            }
        }
        let c = codec.channels();
        let mut m = Vec::with_capacity(c * grid.len());
        for _ in 0..c {
            m.extend_from_slice(&grid);
        }
        Ok(Self {
            m: Tensor::from_vec(&[c, frames, gh, gw], m),
        })
    }
}

/// Loss nodes; `temporal` is absent for single-frame clips.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub diffusion: Var,
    pub face: Var,
    pub temporal: Option<Var>,
}

/// `mean (v-u)^2 + lambda mean (m (v-u))^2 + mu mean (dv - du)^2` over
/// `[C, F, ...]` latents, frame axis 1. Each term is averaged over its own
/// element count.
pub fn composite_loss<T: Real>(tape: &mut Tape<T>, v: Var, u: &Tensor<T>, m: &FaceMask, w: &LossWeights) -> Result<LossTerms> {
    let shape = tape.value(v).shape().to_vec();
    if shape != u.shape() {
        return Err(Error::shape("composite_loss target", &shape, u.shape()));
    }
    if m.m.shape() != shape.as_slice() {
        return Err(Error::shape("composite_loss mask", m.m.shape(), &shape));
    }
    if shape.len() < 2 || shape[1] == 0 {
        return Err(Error::contract(format!("composite_loss needs [C, F, ...], got {shape:?}")));
    }
    let neg_u = u.map(|x| -x);
    let d = tape.add_const(v, &neg_u)?;
    let diffusion = tape.mean_square(d)?;
    let md = tape.mul_const(d, m.m.cast())?;
    let face = tape.mean_square(md)?;
    let fl = tape.scale(face, w.lambda);
    let mut total = tape.add(diffusion, fl)?;
    let temporal = if shape[1] > 1 {
        let dd = tape.frame_diff(d, 1)?;
        let tm = tape.mean_square(dd)?;
        let tl = tape.scale(tm, w.mu);
        total = tape.add(total, tl)?;
        Some(tm)
    } else {
        None
    };
    Ok(LossTerms {
        total,
        diffusion,
        face,
        temporal,
    })
}

/// `v_uncond + s (v_cond - v_uncond)`.
pub fn cfg_combine(v_cond: &Tensor, v_uncond: &Tensor, s: f64) -> Result<Tensor> {
    let s = s as f32;
    v_cond.zip_map(v_uncond, |c, u| u + s * (c - u))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_endpoints_and_midpoints() {
        let x0 = Tensor::from_vec(&[2], vec![0.0, 0.0]);
        let x1 = Tensor::from_vec(&[2], vec![2.0, 4.0]);
        assert_eq!(interpolate(&x0, &x1, 0.0).unwrap(), x0);
        assert_eq!(interpolate(&x0, &x1, 1.0).unwrap(), x1);
        assert_eq!(interpolate(&x0, &x1, 0.25).unwrap().data(), &[0.5, 1.0]);
        assert!(interpolate(&x0, &x1, 1.5).is_err());
        assert!(interpolate(&x0, &Tensor::zeros(&[3]), 0.5).is_err());
        assert_eq!(target_velocity(&Tensor::from_vec(&[1], vec![1.0]), &Tensor::from_vec(&[1], vec![3.0])).unwrap().data(), &[2.0]);
    }

    #[test]
    fn loss_identities() {
        let mut tape = Tape::<f64>::new();
        let vals: Vec<f64> = (0..24).map(|i| (i as f64 * 0.37).sin()).collect();
        let u = Tensor::from_vec(&[2, 3, 2, 2], vals.clone());
        let v = tape.leaf(u.clone());
        let ones = FaceMask::ones(&[2, 3, 2, 2]);
        let l = composite_loss(&mut tape, v, &u, &ones, &LossWeights::default()).unwrap();
        assert_eq!(tape.value(l.total).item(), 0.0);

        // Constant offset across frames: temporal term vanishes, face term equals diffusion.
        let shifted = Tensor::from_vec(&[2, 3, 2, 2], vals.iter().map(|x| x + 0.5).collect());
        let v = tape.leaf(shifted);
        let w = LossWeights { lambda: 2.0, mu: 0.0 };
        let l = composite_loss(&mut tape, v, &u, &ones, &w).unwrap();
        let diff = tape.value(l.diffusion).item();
        assert!((tape.value(l.total).item() - 3.0 * diff).abs() < 1e-12);
        assert!(tape.value(l.temporal.unwrap()).item().abs() < 1e-20);

        let single = Tensor::<f64>::zeros(&[1, 1, 2]);
        let v = tape.leaf(Tensor::full(&[1, 1, 2], 1.0));
        let l = composite_loss(&mut tape, v, &single, &FaceMask::ones(&[1, 1, 2]), &LossWeights::default()).unwrap();
        assert!(l.temporal.is_none());
        let bad = FaceMask::ones(&[1, 2, 2]);
        assert!(composite_loss(&mut tape, v, &single, &bad, &LossWeights::default()).is_err());
    }

    #[test]
    fn guidance_identities() {
        let c = Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]);
        let u = Tensor::from_vec(&[3], vec![0.25, 4.0, -1.0]);
        assert_eq!(cfg_combine(&c, &u, 1.0).unwrap(), c);
        assert_eq!(cfg_combine(&c, &u, 0.0).unwrap(), u);
    }

    #[test]
    fn mask_pools_patches_and_slots() {
        let codec = Codec::new(2, 2).unwrap();
        // 5 frames of 4x4; pixel (1, 3) lit in frame 2 only.
        let mut data = vec![0u8; 5 * 16];
        data[2 * 16 + 4 + 3] = 1;
        let mask = MaskClip {
            frames: 5,
            height: 4,
            width: 4,
            data,
        };
        let m = FaceMask::from_pixels(&mask, &codec, 3, 0).unwrap();
        assert_eq!(m.m.shape(), &[24, 3, 2, 2]);
        // Latent 1 covers frames 1..=2, so only its top-right cell lights up.
        let ch0 = &m.m.data()[..12];
        assert_eq!(ch0, &[0., 0., 0., 0., 0., 1., 0., 0., 0., 0., 0., 0.]);
    }
}
