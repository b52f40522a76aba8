//! Central-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    /// `max |tape - fd| / max(|tape|, |fd|)` over the checked entries, where
    /// the denominator is the largest magnitude seen in either gradient. When
    /// both gradients sit below the rounding floor of the difference quotient
    /// (`64 eps |loss| / h`, at least 1e-12) the absolute difference is
    /// reported instead.
    pub rel_err: f64,
    pub max_abs_diff: f64,
    /// Largest gradient magnitude seen in either method.
    pub scale: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_err: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Which parameter entries to perturb.
#[derive(Clone, Copy, Debug)]
pub enum Coverage {
    All,
    /// At most this many entries per tensor, chosen by a seeded draw.
    Sample { per_param: usize, seed: u64 },
}

/// Compares `backward` against central differences `(f(p+h) - f(p-h)) / 2h`.
///
/// `f` must build a scalar loss on the supplied tape from the supplied store.
/// It is evaluated twice at the unperturbed point first; any mismatch means
/// `f` is not deterministic and the check refuses to run.
pub fn check_gradients<F>(store: &ParamStore<f64>, f: F, h: f64, tol: f64, coverage: Coverage) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    check_gradients_where(store, f, h, tol, coverage, |_| true)
}

/// [`check_gradients`] restricted to parameters whose name passes `include`
/// (for tensors read outside the tape, such as fixed statistics).
pub fn check_gradients_where<F, P>(
    store: &ParamStore<f64>,
    f: F,
    h: f64,
    tol: f64,
    coverage: Coverage,
    include: P,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
    P: Fn(&str) -> bool,
{
    if !(h > 0.0 && h < 0.1) {
        return Err(Error::contract(format!("finite-difference step {h} outside (0, 0.1)")));
    }
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = f(&mut tape, s)?;
        Ok(tape.value(loss).item())
    };

    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let analytic = tape.backward(loss)?.params(store);
    let (a, b) = (eval(store)?, eval(store)?);
    if a.to_bits() != b.to_bits() {
        return Err(Error::contract(format!("loss is not deterministic: {a} vs {b}")));
    }

    let floor = (64.0 * f64::EPSILON * a.abs() / h).max(1e-12);
    let mut work = store.clone();
    let mut rng = match coverage {
        Coverage::Sample { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Coverage::All => None,
    };
    let mut params = Vec::new();
    for (id, name, value) in store.iter().filter(|(_, n, _)| include(n)) {
        let n = value.len();
        let idx: Vec<usize> = match (&coverage, rng.as_mut()) {
            (Coverage::Sample { per_param, .. }, Some(r)) if *per_param < n => {
                let mut v = sample(r, n, *per_param).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        let mut max_diff = 0.0f64;
        let mut scale = 0.0f64;
        for &i in &idx {
            let orig = value.data()[i];
            work.get_mut(id).data_mut()[i] = orig + h;
            let up = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig - h;
            let down = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = analytic[id.0].data()[i];
            max_diff = max_diff.max((fd - an).abs());
            scale = scale.max(fd.abs()).max(an.abs());
        }
        let rel_err = if scale > floor { max_diff / scale } else { max_diff };
        params.push(ParamCheck {
            name: name.to_string(),
            checked: idx.len(),
            rel_err,
            max_abs_diff: max_diff,
            scale,
        });
    }
    let max_rel_err = params.iter().map(|p| p.rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        passed: max_rel_err <= tol,
        params,
        max_rel_err,
        tol,
    })
}
