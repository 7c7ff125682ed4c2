//! Reverse-mode differentiation over small dense tensors.
//!
//! Complex quantities are stored as interleaved `(re, im)` columns and every
//! gradient is real. Second-order products are finite differences of
//! first-order gradients (see [`second_order`]).

mod params;
pub mod second_order;
mod tape;
mod tensor;

pub use params::{gradient, Gradient, ParamLayout, ParamVector};
pub use second_order::{default_step, hvp, mixed_vjp};
pub use tape::{sigmoid, Grads, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use proptest::prelude::*;
    use std::sync::Arc;

    /// Central-difference check of `d loss / d input` for a loss built by `f`.
    fn fd_check(input: &Tensor, f: &dyn Fn(&mut Tape, Var) -> Var, tol: f64) {
        let mut tape = Tape::new();
        let x = tape.param(input.clone());
        let loss = f(&mut tape, x);
        let grads = tape.backward(loss).unwrap();
        let analytic = grads
            .get(x)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(input.rows(), input.cols()));
        let eval = |t: &Tensor| {
            let mut tape = Tape::new();
            let x = tape.param(t.clone());
            let l = f(&mut tape, x);
            tape.value(l).item()
        };
        for j in 0..input.len() {
            let h = 1e-6 * (1.0 + input.data()[j].abs());
            let mut p = input.clone();
            p.data_mut()[j] += h;
            let mut m = input.clone();
            m.data_mut()[j] -= h;
            let fd = (eval(&p) - eval(&m)) / (2.0 * h);
            let a = analytic.data()[j];
            let err = (a - fd).abs() / (1.0 + a.abs().max(fd.abs()));
            assert!(err <= tol, "entry {j}: analytic {a}, fd {fd}");
        }
    }

    /// Scalar loss `Σ c ⊙ y` with fixed pseudo-random weights, so every
    /// output entry gets a distinct adjoint.
    fn weighted_sum(tape: &mut Tape, y: Var) -> Var {
        let (r, c) = tape.shape(y);
        let w = Tensor::new(
            r,
            c,
            (0..r * c)
                .map(|j| 0.3 + 0.7 * ((j * 7 % 5) as f64))
                .collect(),
        );
        let w = tape.constant(w);
        let p = tape.mul(y, w);
        tape.sum(p)
    }

    fn tensor_strategy(
        rows: usize,
        cols: usize,
        lo: f64,
        hi: f64,
    ) -> impl Strategy<Value = Tensor> {
        prop::collection::vec(lo..hi, rows * cols).prop_map(move |d| Tensor::new(rows, cols, d))
    }

    #[test]
    fn sigmoid_slope_at_zero() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(0.0));
        let y = tape.sigmoid(x);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 0.25);
    }

    #[test]
    fn complex_abs2_gradient_matches_closed_form() {
        // h = [1+2j, -0.5+0.3j], w = [0.7-1j, 2+0.1j]
        let h = Tensor::row_vector(vec![1.0, 2.0, -0.5, 0.3]);
        let w = Tensor::row_vector(vec![0.7, -1.0, 2.0, 0.1]);
        let mut tape = Tape::new();
        let hv = tape.constant(h.clone());
        let wv = tape.param(w.clone());
        let y = tape.complex_abs2(hv, wv);
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        let hc: Vec<num_complex::Complex64> = h
            .data()
            .chunks(2)
            .map(|c| num_complex::Complex64::new(c[0], c[1]))
            .collect();
        let wc: Vec<num_complex::Complex64> = w
            .data()
            .chunks(2)
            .map(|c| num_complex::Complex64::new(c[0], c[1]))
            .collect();
        let z: num_complex::Complex64 = hc.iter().zip(&wc).map(|(a, b)| a * b).sum();
        // gradient wrt (Re w, Im w) is 2·(Re, Im) of conj(h)·z
        for t in 0..2 {
            let e = hc[t].conj() * z * 2.0;
            assert!((g.get(wv).unwrap().data()[2 * t] - e.re).abs() < 1e-12);
            assert!((g.get(wv).unwrap().data()[2 * t + 1] - e.im).abs() < 1e-12);
        }
        fd_check(
            &w,
            &|t, x| {
                let hv = t.constant(h.clone());
                let y = t.complex_abs2(hv, x);
                t.sum(y)
            },
            1e-6,
        );
    }

    #[test]
    fn softmax_gradient_rows_sum_to_zero() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::new(2, 3, vec![0.1, -0.4, 2.0, 1.0, 1.0, -3.0]));
        let s = tape.softmax_rows(x);
        let l = weighted_sum(&mut tape, s);
        let g = tape.backward(l).unwrap();
        let gx = g.get(x).unwrap();
        for r in 0..2 {
            assert!(gx.row(r).iter().sum::<f64>().abs() < 1e-14);
        }
    }

    #[test]
    fn half_squared_norm_gradient_is_identity() {
        let mut layout = ParamLayout::new();
        layout.push("a", 2, 2);
        layout.push("b", 1, 3);
        let layout = Arc::new(layout);
        let theta =
            ParamVector::from_flat(layout.clone(), (0..7).map(|j| j as f64 - 3.0).collect())
                .unwrap();
        let mut tape = Tape::new();
        let leaves = theta.attach(&mut tape);
        let mut total = tape.scalar(0.0);
        for &l in &leaves {
            let sq = tape.square(l);
            let s = tape.sum(sq);
            total = tape.add(total, s);
        }
        let loss = tape.scale(total, 0.5);
        let g = gradient(&tape.backward(loss).unwrap(), &leaves, &layout);
        assert_eq!(g.flat, theta.flat());
        assert!(g.disconnected.is_empty());
    }

    #[test]
    fn constant_loss_reports_disconnected_params() {
        let mut layout = ParamLayout::new();
        layout.push("w", 2, 1);
        let layout = Arc::new(layout);
        let theta = ParamVector::zeros(layout.clone());
        let mut tape = Tape::new();
        let leaves = theta.attach(&mut tape);
        let c = tape.scalar(3.0);
        let g = gradient(&tape.backward(c).unwrap(), &leaves, &layout);
        assert_eq!(g.flat, vec![0.0, 0.0]);
        assert_eq!(g.disconnected, vec!["w".to_string()]);
    }

    #[test]
    fn flatten_unflatten_round_trip() {
        let mut layout = ParamLayout::new();
        layout.push("x", 3, 2);
        layout.push("y", 1, 1);
        let layout = Arc::new(layout);
        let p = ParamVector::from_flat(layout.clone(), (0..7).map(f64::from).collect()).unwrap();
        let back = ParamVector::flatten(layout, &p.unflatten()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let x = Tensor::new(
            4,
            3,
            (0..12)
                .map(|j| ((j * 37 % 11) as f64 - 5.0) / 4.0)
                .collect(),
        );
        let w1 = Tensor::new(
            3,
            5,
            (0..15).map(|j| ((j * 13 % 7) as f64 - 3.0) / 5.0).collect(),
        );
        let w2 = Tensor::new(
            5,
            2,
            (0..10).map(|j| ((j * 5 % 9) as f64 - 4.0) / 6.0).collect(),
        );
        let b1 = Tensor::row_vector(vec![0.1, -0.2, 0.0, 0.3, 0.05]);
        let net = |t: &mut Tape, w: Var, w2v: Tensor| {
            let xv = t.constant(x.clone());
            let bv = t.constant(b1.clone());
            let h = t.matmul(xv, w);
            let h = t.add(h, bv);
            let h = t.tanh(h);
            let w2 = t.constant(w2v);
            let y = t.matmul(h, w2);
            let sq = t.square(y);
            t.mean(sq)
        };
        fd_check(&w1, &|t, w| net(t, w, w2.clone()), 1e-5);
    }

    #[test]
    fn non_finite_values_name_the_op() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(-1.0));
        let y = tape.ln(x);
        let err = tape.backward(y).err().unwrap();
        assert!(matches!(err, Error::NonFinite { op: "ln", .. }));
    }

    #[test]
    fn identical_tapes_give_identical_gradients() {
        let run = || {
            let mut tape = Tape::new();
            let x = tape.param(Tensor::new(2, 2, vec![0.3, -1.2, 0.7, 2.2]));
            let s = tape.softmax_rows(x);
            let e = tape.exp(s);
            let l = tape.sum(e);
            tape.backward(l).unwrap().get(x).unwrap().clone()
        };
        assert_eq!(run().data(), run().data());
    }

    #[test]
    fn row_min_ties_go_to_lowest_index() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::new(1, 3, vec![2.0, 1.0, 1.0]));
        let m = tape.row_min(x);
        let l = tape.sum(m);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn project_rows_caps_norm() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::new(2, 2, vec![3.0, 4.0, 0.1, 0.1]));
        let y = tape.project_rows(x, 1.0);
        let v = tape.value(y);
        assert!((v.row(0)[0] - 0.6).abs() < 1e-15 && (v.row(0)[1] - 0.8).abs() < 1e-15);
        assert_eq!(v.row(1), &[0.1, 0.1]);
    }

    fn quadratic_grad(a: &[Vec<f64>]) -> impl Fn(&[f64]) -> crate::Result<Vec<f64>> + Sync + '_ {
        move |th: &[f64]| {
            Ok(a.iter()
                .map(|row| row.iter().zip(th).map(|(x, y)| x * y).sum())
                .collect())
        }
    }

    #[test]
    fn hvp_of_quadratic_is_matrix_product() {
        let a = vec![
            vec![2.0, 0.5, 0.1],
            vec![0.5, 1.0, -0.3],
            vec![0.1, -0.3, 3.0],
        ];
        let theta = [0.4, -1.0, 2.0];
        let v = [1.0, 2.0, -0.5];
        let got = hvp(quadratic_grad(&a), &theta, &v, None).unwrap();
        for (i, row) in a.iter().enumerate() {
            let e: f64 = row.iter().zip(&v).map(|(x, y)| x * y).sum();
            assert!((got[i] - e).abs() <= 1e-8);
        }
        assert_eq!(
            hvp(quadratic_grad(&a), &theta, &[0.0; 3], None).unwrap(),
            vec![0.0; 3]
        );
        let linear = |_: &[f64]| Ok(vec![1.0, -2.0, 0.5]);
        assert_eq!(hvp(linear, &theta, &v, None).unwrap(), vec![0.0; 3]);
        assert!(matches!(
            hvp(quadratic_grad(&a), &theta, &v, Some(1e-300)),
            Err(Error::StepUnderflow(_))
        ));
    }

    #[test]
    fn mixed_vjp_of_bilinear_form() {
        // L = θᵀ M α, so ∇_α L = Mᵀ θ and the mixed product is Mᵀ v.
        let m = [[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]];
        let grad_alpha = |th: &[f64]| {
            Ok((0..2)
                .map(|j| (0..3).map(|i| m[i][j] * th[i]).sum())
                .collect())
        };
        let v = [0.2, -0.7, 1.1];
        let got = mixed_vjp(grad_alpha, &[1.0, 1.0, 1.0], &v, None).unwrap();
        for j in 0..2 {
            let e: f64 = (0..3).map(|i| m[i][j] * v[i]).sum();
            assert!((got[j] - e).abs() < 1e-8);
        }
        let constant = |_: &[f64]| Ok(vec![4.0, 4.0]);
        assert_eq!(
            mixed_vjp(constant, &[1.0, 1.0, 1.0], &v, None).unwrap(),
            vec![0.0, 0.0]
        );
        assert_eq!(
            mixed_vjp(grad_alpha, &[1.0; 3], &[0.0; 3], None).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn hvp_is_symmetric_on_smooth_loss() {
        // L = Σ log(1 + exp(θ_i θ_{i+1}))
        let grad = |th: &[f64]| {
            let n = th.len();
            let mut g = vec![0.0; n];
            for i in 0..n - 1 {
                let s = sigmoid(th[i] * th[i + 1]);
                g[i] += s * th[i + 1];
                g[i + 1] += s * th[i];
            }
            Ok(g)
        };
        let theta = [0.3, -0.8, 1.2, 0.5];
        let u = [1.0, 0.0, -1.0, 0.5];
        let v = [0.2, 0.9, 0.4, -0.3];
        let hu = hvp(grad, &theta, &u, None).unwrap();
        let hv = hvp(grad, &theta, &v, None).unwrap();
        let a: f64 = v.iter().zip(&hu).map(|(x, y)| x * y).sum();
        let b: f64 = u.iter().zip(&hv).map(|(x, y)| x * y).sum();
        assert!((a - b).abs() < 1e-6);
    }

    type OpFn = fn(&mut Tape, Var) -> Var;

    fn unary_ops() -> Vec<(&'static str, OpFn)> {
        vec![
            ("neg", |t, x| t.neg(x)),
            ("scale", |t, x| t.scale(x, -1.7)),
            ("offset", |t, x| t.offset(x, 0.3)),
            ("exp", |t, x| t.exp(x)),
            ("ln", |t, x| {
                let s = t.square(x);
                let s = t.offset(s, 0.5);
                t.ln(s)
            }),
            ("tanh", |t, x| t.tanh(x)),
            ("sigmoid", |t, x| t.sigmoid(x)),
            ("square", |t, x| t.square(x)),
            ("sqrt", |t, x| {
                let s = t.square(x);
                let s = t.offset(s, 0.2);
                t.sqrt(s)
            }),
            ("sum_rows", |t, x| t.sum_rows(x)),
            ("sum_cols", |t, x| t.sum_cols(x)),
            ("mean", |t, x| t.mean(x)),
            ("cols", |t, x| t.cols(x, 1, 2)),
            ("gather_rows", |t, x| t.gather_rows(x, vec![2, 0, 0, 1])),
            ("segment_mean", |t, x| {
                t.segment_mean(x, vec![vec![0, 2], vec![1], vec![]])
            }),
            ("concat_cols", |t, x| {
                let a = t.cols(x, 0, 1);
                t.concat_cols(&[x, a])
            }),
            ("reshape", |t, x| t.reshape(x, 4, 3)),
            ("softmax_rows", |t, x| t.softmax_rows(x)),
            ("project_rows", |t, x| t.project_rows(x, 1.0)),
            ("matmul", |t, x| {
                let b = t.constant(Tensor::new(
                    4,
                    2,
                    vec![0.3, -1.0, 0.5, 0.2, 1.5, 0.7, -0.4, 0.1],
                ));
                let y = t.matmul(x, b);
                let c = y_t_helper(t);
                let z = t.matmul(y, c);
                t.tanh(z)
            }),
            ("complex_abs2", |t, x| {
                let h = t.constant(Tensor::row_vector(vec![0.4, -1.1, 0.9, 0.3]));
                t.complex_abs2(x, h)
            }),
            ("mul_broadcast", |t, x| {
                let s = t.sum_rows(x);
                t.mul(x, s)
            }),
            ("div_broadcast", |t, x| {
                let s = t.square(x);
                let s = t.sum_cols(s);
                let s = t.offset(s, 1.0);
                t.div(x, s)
            }),
            ("sub_broadcast", |t, x| {
                let s = t.cols(x, 0, 1);
                t.sub(x, s)
            }),
            ("add_self", |t, x| {
                let s = t.exp(x);
                t.add(x, s)
            }),
        ]
    }

    fn y_t_helper(t: &mut Tape) -> Var {
        t.constant(Tensor::new(2, 3, vec![1.0, 0.5, -0.2, 0.3, 0.8, 1.1]))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn every_op_matches_finite_differences(x in tensor_strategy(3, 4, -1.5, 1.5)) {
            for (name, op) in unary_ops() {
                let input = if name == "relu" { x.map(|v| if v.abs() < 1e-3 { 0.5 } else { v }) } else { x.clone() };
                let f = move |t: &mut Tape, v: Var| {
                    let y = op(t, v);
                    weighted_sum(t, y)
                };
                fd_check(&input, &f, 1e-5);
            }
        }

        #[test]
        fn min_max_and_relu_match_finite_differences(
            a in tensor_strategy(2, 4, -1.0, 1.0),
            b in tensor_strategy(2, 4, -1.0, 1.0),
        ) {
            // Keep away from kinks so central differences are valid.
            prop_assume!(a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() > 1e-3));
            prop_assume!(a.data().iter().all(|x| x.abs() > 1e-3));
            let bc = b.clone();
            fd_check(&a, &move |t, x| { let y = t.constant(bc.clone()); let m = t.min(x, y); weighted_sum(t, m) }, 1e-5);
            let bc = b.clone();
            fd_check(&a, &move |t, x| { let y = t.constant(bc.clone()); let m = t.max(x, y); weighted_sum(t, m) }, 1e-5);
            fd_check(&a, &|t, x| { let m = t.relu(x); weighted_sum(t, m) }, 1e-5);
            fd_check(&a, &|t, x| { let m = t.row_min(x); weighted_sum(t, m) }, 1e-5);
            fd_check(&a, &|t, x| { let m = t.row_max(x); weighted_sum(t, m) }, 1e-5);
        }
    }
}
