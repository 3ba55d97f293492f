//! A small tape-based reverse-mode differentiation engine with exactly the
//! operations the ranking models need.
//!
//! Values are recorded on a [`Tape`] during the forward pass; a single call to
//! [`Tape::backward`] walks the tape in reverse and accumulates gradients.
//! Reductions accumulate in `f64` whatever the element type.

mod check;
pub mod checkpoint;
mod params;
mod tape;
mod tensor;

use thiserror::Error;

pub use check::{gradient_check, gradient_check_params};
pub use checkpoint::CheckpointMeta;
pub use params::{glorot_uniform, ParamSet};
pub use tape::{softmax, Mode, Tape, Var};
pub use tensor::{Real, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: sequence length {len} shorter than window {window}")]
    SequenceTooShort {
        op: &'static str,
        len: usize,
        window: usize,
    },
    #[error("shape {shape:?} does not hold {len} elements")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("expected a scalar, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("dropout rate {0} outside [0, 1)")]
    InvalidRate(f64),
    #[error("backward already ran on this tape; reset it first")]
    AlreadyBackward,
    #[error("backward needs exclusive access to the parameter set")]
    ReadOnlyParams,
    #[error("unknown parameter {0}")]
    UnknownParameter(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape.to_vec(), data.to_vec()).unwrap()
    }

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        t(
            shape,
            &(0..n)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect::<Vec<_>>(),
        )
    }

    fn weights(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Naive matmul oracle for `x (1 x in) * W (in x out) + b`.
    fn affine_oracle(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
        let out = b.len();
        (0..out)
            .map(|o| b[o] + (0..x.len()).map(|i| x[i] * w[i * out + o]).sum::<f64>())
            .collect()
    }

    #[test]
    fn affine_examples() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 0.0]));
        let w = tape.leaf(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = tape.leaf(t(&[2], &[0.0, 0.0]));
        let y = tape.affine(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 0.0]);

        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        let w = tape.leaf(t(&[2, 1], &[1.0, 1.0]));
        let b = tape.leaf(t(&[1], &[0.5]));
        let y = tape.affine(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[3.5]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (x, w, b) = (
            random(&[3], &mut rng),
            random(&[3, 4], &mut rng),
            random(&[4], &mut rng),
        );
        let expected = affine_oracle(x.data(), w.data(), b.data());
        let (x, w, b) = (tape.leaf(x), tape.leaf(w), tape.leaf(b));
        let y = tape.affine(x, w, b).unwrap();
        for (a, e) in tape.value(y).data().iter().zip(&expected) {
            assert!((a - e).abs() < 1e-6);
        }
    }

    #[test]
    fn affine_shape_error_names_both_shapes() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::zeros(&[3]));
        let w = tape.leaf(Tensor::zeros(&[2, 2]));
        let b = tape.leaf(Tensor::zeros(&[2]));
        let err = tape.affine(x, w, b).unwrap_err().to_string();
        assert!(err.contains("[3]") && err.contains("[2, 2]"), "{err}");
    }

    #[test]
    fn conv_moving_sum() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 4], &[1.0; 4]));
        let k = tape.leaf(t(&[1, 2, 1], &[1.0, 1.0]));
        let b = tape.leaf(t(&[1], &[0.0]));
        let y = tape.conv_seq(x, k, b).unwrap();
        assert_eq!(tape.shape(y), &[1, 3]);
        assert_eq!(tape.value(y).data(), &[2.0, 2.0, 2.0]);

        let k3 = tape.leaf(t(&[1, 5, 1], &[1.0; 5]));
        assert!(matches!(
            tape.conv_seq(x, k3, b),
            Err(AutodiffError::SequenceTooShort { .. })
        ));
    }

    /// Direct definition: out[f][t] = b[f] + sum_{c,j} x[c][t+j] k[c][j][f].
    fn conv_oracle(x: &Tensor<f64>, k: &Tensor<f64>, b: &[f64]) -> Vec<f64> {
        let (c, l) = (x.shape()[0], x.shape()[1]);
        let (w, f) = (k.shape()[1], k.shape()[2]);
        let out_len = l - w + 1;
        let mut out = vec![0.0; f * out_len];
        for fi in 0..f {
            for ti in 0..out_len {
                let mut s = b[fi];
                for ci in 0..c {
                    for j in 0..w {
                        s += x.data()[ci * l + ti + j] * k.data()[(ci * w + j) * f + fi];
                    }
                }
                out[fi * out_len + ti] = s;
            }
        }
        out
    }

    #[test]
    fn conv_matches_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(&[4, 9], &mut rng);
        let k = random(&[4, 3, 5], &mut rng);
        let b = random(&[5], &mut rng);
        let expected = conv_oracle(&x, &k, b.data());
        let mut tape = Tape::new();
        let (xv, kv, bv) = (tape.leaf(x), tape.leaf(k), tape.leaf(b));
        let y = tape.conv_seq(xv, kv, bv).unwrap();
        assert_eq!(tape.shape(y), &[5, 7]);
        for (a, e) in tape.value(y).data().iter().zip(&expected) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn maxpool_examples() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 3], &[3.0, 1.0, 2.0]));
        let y = tape.maxpool_seq(x, 2).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 2.0]);
        assert!(tape.maxpool_seq(x, 4).is_err());
    }

    #[test]
    fn maxpool_ties_route_to_first() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 3], &[2.0, 2.0, 2.0]).with_requires_grad(true));
        let y = tape.maxpool_seq(x, 3).unwrap();
        let s = tape.dot(y, &[1.0]).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn tanh_examples() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[0.0, 20.0]));
        let y = tape.tanh(x);
        assert_eq!(tape.value(y).data()[0], 0.0);
        assert!((tape.value(y).data()[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::vector(vec![1.0; 100_000]));
        assert_eq!(tape.dropout(x, 0.0, Mode::Train, &mut rng).unwrap(), x);
        assert_eq!(tape.dropout(x, 0.2, Mode::Eval, &mut rng).unwrap(), x);
        let y = tape.dropout(x, 0.2, Mode::Train, &mut rng).unwrap();
        let d = tape.value(y).data();
        let mean = d.iter().map(|&v| v as f64).sum::<f64>() / d.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
        let zeros = d.iter().filter(|&&v| v == 0.0).count() as f64 / d.len() as f64;
        assert!((zeros - 0.2).abs() < 0.01);
        assert!(tape.dropout(x, 1.0, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn hadamard_examples() {
        let mut tape = Tape::new();
        let d = tape.leaf(t(&[2, 2], &[1.0, 0.0, 1.0, 1.0]));
        let q = tape.leaf(t(&[2, 1], &[2.0, 3.0]));
        let y = tape.hadamard_broadcast(q, d).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0, 0.0, 3.0, 3.0]);
        let ones = tape.leaf(t(&[2, 1], &[1.0, 1.0]));
        let y = tape.hadamard_broadcast(ones, d).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(d).data());
        let zero = tape.leaf(t(&[2, 1], &[0.0, 0.0]));
        let y = tape.hadamard_broadcast(zero, d).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
        let three = tape.leaf(t(&[3, 1], &[1.0; 3]));
        assert!(tape.hadamard_broadcast(three, d).is_err());
    }

    #[test]
    fn softmax_nll_examples() {
        let mut tape = Tape::new();
        let s = tape.leaf(t(&[5], &[0.3; 5]));
        let l = tape.softmax_nll(s).unwrap();
        assert!((tape.scalar(l).unwrap() - 5f64.ln()).abs() < 1e-12);

        let s = tape.leaf(t(&[5], &[1.0, 0.0, 0.0, 0.0, 0.0]));
        let l = tape.softmax_nll(s).unwrap();
        let e = std::f64::consts::E;
        let oracle = -(e / (e + 4.0)).ln();
        assert!((tape.scalar(l).unwrap() - oracle).abs() < 1e-12);

        let s = tape.leaf(t(&[5], &[800.0, 0.0, 0.0, 0.0, 0.0]));
        let l = tape.softmax_nll(s).unwrap();
        assert!(tape.scalar(l).unwrap().abs() < 1e-12);
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let n = rng.random_range(1..12);
            let s: Vec<f64> = (0..n).map(|_| rng.random_range(-500.0..500.0)).collect();
            let p = softmax(&s);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn backward_twice_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1], &[1.0]).with_requires_grad(true));
        let y = tape.tanh(x);
        tape.backward(y).unwrap();
        assert_eq!(tape.backward(y), Err(AutodiffError::AlreadyBackward));
        tape.reset();
        assert!(tape.is_empty());
    }

    #[test]
    fn reuse_accumulates_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[0.1, 0.2, 0.3]).with_requires_grad(true));
        let y = tape.add(x, x).unwrap();
        let s = tape.dot(y, &[1.0, 1.0, 1.0]).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn parameter_gradients_accumulate_across_tapes() {
        let mut params = ParamSet::<f64>::new();
        params.insert("w", t(&[2], &[1.0, 2.0]));
        for _ in 0..2 {
            let mut tape = Tape::with_params(&mut params);
            let w = tape.param("w").unwrap();
            let s = tape.dot(w, &[3.0, 4.0]).unwrap();
            tape.backward(s).unwrap();
        }
        assert_eq!(params.get("w").unwrap().grad().unwrap(), &[6.0, 8.0]);
    }

    const TOL: f64 = 1e-3;

    #[test]
    fn gradcheck_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = ParamSet::new();
        params.insert("x", random(&[6], &mut rng));
        params.insert("w", random(&[6, 4], &mut rng));
        params.insert("b", random(&[4], &mut rng));
        let err = gradient_check_params(&mut params, 1e-3, |tape| {
            let (x, w, b) = (tape.param("x")?, tape.param("w")?, tape.param("b")?);
            let y = tape.affine(x, w, b)?;
            tape.dot(y, &weights(4, 2))
        })
        .unwrap();
        assert!(err < TOL, "{err}");
    }

    #[test]
    fn gradcheck_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = ParamSet::new();
        params.insert("x", random(&[5, 10], &mut rng));
        params.insert("k", random(&[5, 3, 4], &mut rng));
        params.insert("b", random(&[4], &mut rng));
        let err = gradient_check_params(&mut params, 1e-3, |tape| {
            let (x, k, b) = (tape.param("x")?, tape.param("k")?, tape.param("b")?);
            let y = tape.conv_seq(x, k, b)?;
            tape.dot(y, &weights(4 * 8, 3))
        })
        .unwrap();
        assert!(err < TOL, "{err}");
    }

    #[test]
    fn gradcheck_maxpool() {
        // A shuffled grid with spacing 0.02 so no perturbation of size eps
        // changes a window's argmax.
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut vals: Vec<f64> = (0..48).map(|i| -0.5 + 0.02 * i as f64).collect();
        vals.shuffle(&mut rng);
        let x = t(&[4, 12], &vals);
        let err = gradient_check(&x, 1e-3, |tape, x| {
            let y = tape.maxpool_seq(x, 5)?;
            tape.dot(y, &weights(4 * 8, 5))
        })
        .unwrap();
        assert!(err < TOL, "{err}");
    }

    #[test]
    fn gradcheck_tanh() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random(&[3, 7], &mut rng);
        let err = gradient_check(&x, 1e-3, |tape, x| {
            let y = tape.tanh(x);
            tape.dot(y, &weights(21, 7))
        })
        .unwrap();
        assert!(err < TOL, "{err}");
    }

    #[test]
    fn gradcheck_dropout() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random(&[20], &mut rng);
        let err = gradient_check(&x, 1e-3, |tape, x| {
            let mut mask_rng = ChaCha8Rng::seed_from_u64(99);
            let y = tape.dropout(x, 0.2, Mode::Train, &mut mask_rng)?;
            tape.dot(y, &weights(20, 9))
        })
        .unwrap();
        assert!(err < TOL, "{err}");
    }

    #[test]
    fn gradcheck_hadamard() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut params = ParamSet::new();
        params.insert("q", random(&[4, 1], &mut rng));
        params.insert("d", random(&[4, 6], &mut rng));
        let err = gradient_check_params(&mut params, 1e-3, |tape| {
            let (q, d) = (tape.param("q")?, tape.param("d")?);
            let y = tape.hadamard_broadcast(q, d)?;
            tape.dot(y, &weights(24, 11))
        })
        .unwrap();
        assert!(err < TOL, "{err}");
    }

    #[test]
    fn gradcheck_softmax_nll_and_stack() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = random(&[5], &mut rng);
        let err = gradient_check(&x, 1e-3, |tape, x| {
            let parts: Vec<Var> = (0..5)
                .map(|i| {
                    let mut w = vec![0.0; 5];
                    w[i] = 1.0 + i as f64;
                    tape.dot(x, &w)
                })
                .collect::<Result<_, _>>()?;
            let s = tape.stack(&parts)?;
            tape.softmax_nll(s)
        })
        .unwrap();
        assert!(err < TOL, "{err}");
    }

    #[test]
    fn gradcheck_reshape_add_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = random(&[2, 3], &mut rng);
        let err = gradient_check(&x, 1e-3, |tape, x| {
            let f = tape.flatten(x)?;
            let y = tape.tanh(f);
            let z = tape.add(f, y)?;
            let z = tape.scale(z, 0.7);
            tape.dot(z, &weights(6, 13))
        })
        .unwrap();
        assert!(err < TOL, "{err}");
    }
}
