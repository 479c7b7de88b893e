//! Dense-tensor arithmetic with reverse-mode gradient accumulation —
//! just enough for a tiny transformer and the relevance parameters.

pub mod gradcheck;
pub mod mask;
pub mod ops;
pub mod params;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, grad_check_ids, loss_fn, FD_STEP};
pub use mask::Mask;
pub use ops::{gaussian_smooth_1d, smoothing_matrix, softmax_row};
pub use params::{ParamId, ParamSet, Parameter};
pub use tape::{Tape, Val};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use approx::assert_abs_diff_eq;

    #[test]
    fn backward_linear_grad_is_input() {
        // loss = sum(w . x) with x fixed => grad(w) = x
        let mut params = ParamSet::new();
        let w = params.register("w", Tensor::row(vec![0.3, -0.2, 0.9]));
        let x = Tensor::row(vec![1.0, 2.0, 3.0]);

        let tape = Tape::new();
        let wv = tape.param(&params, w);
        let xv = tape.leaf(x.clone());
        let loss = wv.mul_row(xv).sum_all();
        tape.backward(loss, &mut params).unwrap();
        assert_eq!(params.grad(w).data(), x.data());
    }

    #[test]
    fn backward_accumulates_until_zeroed() {
        let mut params = ParamSet::new();
        let w = params.register("w", Tensor::scalar(2.0));
        for pass in 1..=3 {
            let tape = Tape::new();
            let loss = tape.param(&params, w).scale(5.0).sum_all();
            tape.backward(loss, &mut params).unwrap();
            assert_abs_diff_eq!(params.grad(w).item(), 5.0 * pass as f64);
        }
        params.zero_grads();
        assert_eq!(params.grad(w).item(), 0.0);
    }

    #[test]
    fn backward_softmax_cross_entropy_analytic() {
        // logits [0,0] vs class 0: grad = softmax - onehot = [-0.5, 0.5]
        let mut params = ParamSet::new();
        let w = params.register("logits", Tensor::row(vec![0.0, 0.0]));
        let tape = Tape::new();
        let logits = tape.param(&params, w);
        let loss = logits.cross_entropy_mean(&[Some(0)]).unwrap();
        assert_abs_diff_eq!(loss.value().item(), 2.0f64.ln(), epsilon = 1e-12);
        tape.backward(loss, &mut params).unwrap();
        assert_abs_diff_eq!(params.grad(w).data()[0], -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(params.grad(w).data()[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn backward_rejects_foreign_tape() {
        let mut params = ParamSet::new();
        let w = params.register("w", Tensor::scalar(1.0));
        let tape_a = Tape::new();
        let tape_b = Tape::new();
        let loss = tape_b.param(&params, w).sum_all();
        let err = tape_a.backward(loss, &mut params).unwrap_err();
        assert!(matches!(err, Error::DisconnectedGraph));
    }

    #[test]
    fn backward_rejects_nonscalar_loss() {
        let mut params = ParamSet::new();
        let w = params.register("w", Tensor::row(vec![1.0, 2.0]));
        let tape = Tape::new();
        let loss = tape.param(&params, w);
        assert!(tape.backward(loss, &mut params).is_err());
    }

    #[test]
    fn grad_check_quadratic() {
        let mut params = ParamSet::new();
        params.register("w", Tensor::row(vec![0.5, -1.5, 2.0]));
        let f = loss_fn(|tape, ps| {
            let w = tape.param(ps, ps.id("w").unwrap());
            Ok(w.mul_row(w).sum_all())
        });
        let err = grad_check(f, &mut params).unwrap();
        assert!(err < 1e-6, "quadratic grad-check error {err}");
    }

    #[test]
    fn grad_check_constant_function() {
        let mut params = ParamSet::new();
        params.register("w", Tensor::row(vec![1.0, 2.0]));
        let f = loss_fn(|tape, _| Ok(tape.leaf(Tensor::scalar(3.0)).sum_all()));
        let err = grad_check(f, &mut params).unwrap();
        assert_eq!(err, 0.0);
    }

    /// Composite path exercising most primitives at once; the check runs
    /// against central finite differences.
    #[test]
    fn grad_check_composite_path() {
        let mut params = ParamSet::new();
        params.register(
            "a",
            Tensor::new(2, 3, vec![0.1, -0.4, 0.7, 0.2, 0.5, -0.3]),
        );
        params.register("b", Tensor::new(3, 2, vec![0.6, -0.1, 0.3, 0.8, -0.5, 0.2]));
        params.register("bias", Tensor::row(vec![0.05, -0.02]));
        params.register("gain", Tensor::row(vec![1.1, 0.9]));
        params.register("s", Tensor::scalar(0.35));

        let f = loss_fn(|tape, ps| {
            let a = tape.param(ps, ps.id("a").unwrap());
            let b = tape.param(ps, ps.id("b").unwrap());
            let bias = tape.param(ps, ps.id("bias").unwrap());
            let gain = tape.param(ps, ps.id("gain").unwrap());
            let s = tape.param(ps, ps.id("s").unwrap());
            let mask = Mask::all(2, 2);
            let h = a
                .matmul(b)
                .add_row(bias)
                .layer_norm_rows(1e-5)
                .mul_row(gain)
                .gelu()
                .softmax_rows(&mask)?
                .mul_scalar(s.sigmoid());
            Ok(h.sum_all())
        });
        let err = grad_check(f, &mut params).unwrap();
        assert!(err < 1e-3, "composite grad-check error {err}");
    }

    #[test]
    fn matmul_associativity() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let m = rng.gen_range(1..=5);
            let k = rng.gen_range(1..=5);
            let n = rng.gen_range(1..=5);
            let p = rng.gen_range(1..=5);
            let rand_t = |rng: &mut rand_chacha::ChaCha8Rng, r: usize, c: usize| {
                Tensor::new(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect())
            };
            let a = rand_t(&mut rng, m, k);
            let b = rand_t(&mut rng, k, n);
            let c = rand_t(&mut rng, n, p);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            for (x, y) in left.data().iter().zip(right.data()) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-9);
            }
        }
    }
}
