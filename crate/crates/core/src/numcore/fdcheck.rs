//! Central-difference gradient verification (the numerical oracle).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Compares reverse-mode gradients against central differences on a random
/// subsample of at most `max_coords` coordinates and returns the maximum
/// relative error |a-n| / max(1e-8, |a|+|n|).
///
/// `build` mounts the given parameter tensors on a fresh tape and returns the
/// scalar loss var; it must be deterministic (no dropout).
pub fn finite_diff_check<B>(
    build: B,
    params: &[Tensor<f64>],
    h: f64,
    max_coords: usize,
    seed: u64,
) -> Result<f64>
where
    B: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    // Analytic gradients in one reverse pass.
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let mut grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.take_or_zeros(v, p.shape()))
        .collect();

    // Enumerate every (param, coordinate) pair, then subsample.
    let mut coords: Vec<(usize, usize)> = Vec::new();
    for (pi, p) in params.iter().enumerate() {
        for ci in 0..p.len() {
            coords.push((pi, ci));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    coords.shuffle(&mut rng);
    coords.truncate(max_coords);

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|p| tape.param(p.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        Ok(tape.value(loss).item()?)
    };

    let mut max_rel = 0.0f64;
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    for (pi, ci) in coords {
        let orig = work[pi].data()[ci];
        work[pi].data_mut()[ci] = orig + h;
        let plus = eval(&work)?;
        work[pi].data_mut()[ci] = orig - h;
        let minus = eval(&work)?;
        work[pi].data_mut()[ci] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[pi].data()[ci];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_is_exact() {
        let params = vec![Tensor::<f64>::scalar(3.0)];
        let err = finite_diff_check(
            |tape, vars| {
                let w = tape.reshape(vars[0], vec![1, 1])?;
                let w2 = tape.matmul(w, w)?;
                Ok(tape.sum_all(w2))
            },
            &params,
            1e-5,
            16,
            7,
        )
        .unwrap();
        assert!(err < 1e-9, "relative error {err}");
    }

    #[test]
    fn zero_function_has_zero_gradient_everywhere() {
        let params = vec![Tensor::<f64>::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()];
        let err = finite_diff_check(
            |tape, vars| {
                let s = tape.sum_all(vars[0]);
                Ok(tape.scale(s, 0.0))
            },
            &params,
            1e-5,
            16,
            7,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }
}
