//! Flow matching in two dimensions: a small MLP learns to carry N(0, I) onto
//! N((1, 1), 0.25 I), then Euler integration reports the sample moments.
//!
//! `cargo run --release --example flow_2d -- [steps]`

use rand::Rng;

use rap::flow::{composite_loss, target_velocity, FaceMask, LossWeights};
use rap::model::layers::Linear;
use rap::numerics::rng::rng_for;
use rap::numerics::{ParamStore, Tape, Tensor, Var};
use rap::train::Adam;

fn main() -> rap::Result<()> {
    let steps: u64 = std::env::args().nth(1).map_or(2000, |s| s.parse().expect("steps"));
    let mut rng = rng_for(1, &[]);
    let mut store = ParamStore::new();
    let layers = [
        Linear::new(&mut store, "l1", 3, 64, true, &mut rng),
        Linear::new(&mut store, "l2", 64, 64, true, &mut rng),
        Linear::new(&mut store, "l3", 64, 2, true, &mut rng),
    ];
    let net = |tape: &mut Tape, s: &ParamStore, x: &Tensor, t: &[f32]| -> rap::Result<Var> {
        let rows: Vec<f32> = (0..t.len()).flat_map(|i| [x.data()[2 * i], x.data()[2 * i + 1], t[i]]).collect();
        let mut h = tape.constant(Tensor::from_vec(&[t.len(), 3], rows));
        for (k, l) in layers.iter().enumerate() {
            h = l.forward(tape, s, h)?;
            if k < 2 {
                h = tape.silu(h);
            }
        }
        Ok(h)
    };
    let shapes: Vec<Vec<usize>> = store.iter().map(|(_, _, t)| t.shape().to_vec()).collect();
    let refs: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
    let mut adam = Adam::new(&refs, 3e-3, 0.9, 0.999, 1e-8);
    let b = 256;
    for step in 0..steps {
        let x0 = Tensor::randn(&[b, 2], 0.5, &mut rng).map(|v| v + 1.0);
        let x1 = Tensor::randn(&[b, 2], 1.0, &mut rng);
        let t: Vec<f32> = (0..b).map(|_| rng.random()).collect();
        let xt = Tensor::from_vec(
            &[b, 2],
            (0..2 * b).map(|i| t[i / 2] * x1.data()[i] + (1.0 - t[i / 2]) * x0.data()[i]).collect(),
        );
        let mut tape = Tape::new();
        let v = net(&mut tape, &store, &xt, &t)?;
        let w = LossWeights { lambda: 0.0, mu: 0.0 };
        let loss = composite_loss(&mut tape, v, &target_velocity(&x0, &x1)?, &FaceMask::ones(&[b, 2]), &w)?.total;
        if step % 500 == 0 {
            println!("step {step:>5} loss {:.4}", tape.value(loss).item());
        }
        let g = tape.backward(loss)?.params(&store);
        adam.step(&mut store.tensors_mut().collect::<Vec<_>>(), &g);
    }
    let n = 1000;
    let mut x = Tensor::randn(&[n, 2], 1.0, &mut rng);
    for k in (1..=100).rev() {
        let mut tape = Tape::new();
        let v = net(&mut tape, &store, &x, &vec![k as f32 / 100.0; n])?;
        x = x.zip_map(tape.value(v), |a, b| a - 0.01 * b)?;
    }
    let mean = |c: usize| (0..n).map(|i| x.data()[2 * i + c] as f64).sum::<f64>() / n as f64;
    let var = |c: usize, m: f64| (0..n).map(|i| (x.data()[2 * i + c] as f64 - m).powi(2)).sum::<f64>() / n as f64;
    let (mx, my) = (mean(0), mean(1));
    println!("mean ({mx:.3}, {my:.3}), variance ({:.3}, {:.3}); target (1, 1), 0.25", var(0, mx), var(1, my));
    Ok(())
}
