//! Minimal dense-array numerical core: tensors, reverse-mode autodiff,
//! the Adam optimizer, and a finite-difference gradient oracle.

mod fdcheck;
mod optim;
mod tape;
mod tensor;

pub use fdcheck::finite_diff_check;
pub use optim::{adam_step, OptimizerState};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Scalar, Tensor};

#[cfg(test)]
mod grad_tests {
    //! Per-primitive gradient checks against central differences (f64).

    use super::*;
    use crate::error::Result;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randn(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n)
            .map(|_| {
                // Box-Muller from two uniforms keeps this dependency-free.
                let u1: f64 = rng.random::<f64>().max(1e-12);
                let u2: f64 = rng.random::<f64>();
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect();
        Tensor::new(shape, data).unwrap()
    }

    fn check<B>(build: B, params: &[Tensor<f64>])
    where
        B: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    {
        let err = finite_diff_check(build, params, 1e-5, 64, 99).unwrap();
        assert!(err < 1e-6, "max relative error {err}");
    }

    #[test]
    fn matmul_grad() {
        check(
            |t, v| {
                let c = t.matmul(v[0], v[1])?;
                Ok(t.sum_all(c))
            },
            &[randn(vec![3, 4], 1), randn(vec![4, 5], 2)],
        );
    }

    #[test]
    fn matmul_bt_grad() {
        check(
            |t, v| {
                let c = t.matmul_bt(v[0], v[1])?;
                Ok(t.sum_all(c))
            },
            &[randn(vec![3, 4], 21), randn(vec![5, 4], 22)],
        );
    }

    #[test]
    fn bmm_grad() {
        check(
            |t, v| {
                let c = t.bmm(v[0], v[1])?;
                Ok(t.sum_all(c))
            },
            &[randn(vec![2, 3, 4], 3), randn(vec![2, 4, 2], 4)],
        );
    }

    #[test]
    fn add_and_scale_grad() {
        check(
            |t, v| {
                let s = t.add(v[0], v[1])?;
                let s = t.scale(s, 1.7);
                Ok(t.sum_all(s))
            },
            &[randn(vec![2, 3], 5), randn(vec![2, 3], 6)],
        );
    }

    #[test]
    fn add_bias_grad() {
        check(
            |t, v| {
                let s = t.add_bias(v[0], v[1])?;
                let sq = t.tanh(s);
                Ok(t.sum_all(sq))
            },
            &[randn(vec![3, 4], 7), randn(vec![4], 8)],
        );
    }

    #[test]
    fn transpose_reshape_slice_concat_grad() {
        check(
            |t, v| {
                let tr = t.transpose(v[0], 0, 1)?;
                let r = t.reshape(tr, vec![2, 6])?;
                let s = t.slice(r, 1, 1, 4)?;
                let cat = t.concat(&[s, s], 0)?;
                let g = t.gelu(cat);
                Ok(t.sum_all(g))
            },
            &[randn(vec![4, 3], 9)],
        );
    }

    #[test]
    fn gather_rows_grad() {
        check(
            |t, v| {
                let g = t.gather_rows(v[0], vec![2, 0, 2, 1])?;
                let a = t.tanh(g);
                Ok(t.sum_all(a))
            },
            &[randn(vec![3, 4], 10)],
        );
    }

    #[test]
    fn softmax_grad() {
        check(
            |t, v| {
                let s = t.softmax(v[0], 1)?;
                let w = t.gelu(s);
                Ok(t.sum_all(w))
            },
            &[randn(vec![3, 5], 11)],
        );
    }

    #[test]
    fn softmax_axis0_grad() {
        check(
            |t, v| {
                let s = t.softmax(v[0], 0)?;
                let w = t.tanh(s);
                Ok(t.sum_all(w))
            },
            &[randn(vec![4, 3], 12)],
        );
    }

    #[test]
    fn layer_norm_grad() {
        check(
            |t, v| {
                let y = t.layer_norm(v[0], v[1], v[2], 1e-12)?;
                let w = t.tanh(y);
                Ok(t.sum_all(w))
            },
            &[randn(vec![3, 6], 13), randn(vec![6], 14), randn(vec![6], 15)],
        );
    }

    #[test]
    fn gelu_tanh_grad() {
        check(
            |t, v| {
                let g = t.gelu(v[0]);
                let h = t.tanh(g);
                Ok(t.sum_all(h))
            },
            &[randn(vec![2, 7], 16)],
        );
    }

    #[test]
    fn cross_entropy_grad() {
        check(
            |t, v| {
                let ce = t.cross_entropy(v[0], &[2, 0, 4])?;
                Ok(t.mean_all(ce))
            },
            &[randn(vec![3, 5], 17)],
        );
    }

    #[test]
    fn dropout_grad_with_fixed_seed() {
        // Dropout is deterministic for a fixed seed, so central differences
        // see the same mask and the check is exact.
        check(
            |t, v| {
                let d = t.dropout(v[0], 0.4, 1234);
                let g = t.tanh(d);
                Ok(t.sum_all(g))
            },
            &[randn(vec![4, 5], 18)],
        );
    }
}
