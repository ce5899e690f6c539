use iwgan::autodiff::{apply_primitive, gradient, Primitive, Tensor, LEAKY_SLOPE};
use iwgan::gradcheck::{central_difference, relative_error, run_gradcheck, Case, FD_STEP};
use iwgan::losses::FDivergence;
use iwgan::rng::{Purpose, Stream};
use iwgan::Matrix;
use proptest::prelude::*;

/// Input domain for a primitive's arguments.
#[derive(Clone, Copy)]
enum Domain {
    Any,
    Positive,
    AwayFromZero,
}

fn draw(rng: &mut Stream, shape: (usize, usize), domain: Domain) -> Matrix {
    rng.normal_matrix(shape.0, shape.1).map(|v| match domain {
        Domain::Any => v,
        Domain::Positive => 0.5 + v.abs(),
        Domain::AwayFromZero => v.signum() * (0.2 + v.abs()),
    })
}

fn cases() -> Vec<(Primitive, Vec<(usize, usize)>, Domain)> {
    use Primitive::*;
    vec![
        (MatMul { trans_a: false, trans_b: false }, vec![(3, 4), (4, 2)], Domain::Any),
        (MatMul { trans_a: true, trans_b: false }, vec![(4, 3), (4, 2)], Domain::Any),
        (MatMul { trans_a: false, trans_b: true }, vec![(3, 4), (2, 4)], Domain::Any),
        (MatMul { trans_a: true, trans_b: true }, vec![(4, 3), (2, 4)], Domain::Any),
        (Transpose, vec![(3, 2)], Domain::Any),
        (Add, vec![(3, 2), (3, 2)], Domain::Any),
        (Sub, vec![(3, 2), (3, 2)], Domain::Any),
        (Mul, vec![(3, 2), (3, 2)], Domain::Any),
        (AddRow, vec![(3, 2), (1, 2)], Domain::Any),
        (MulCol, vec![(3, 2), (3, 1)], Domain::Any),
        (Scale(-1.7), vec![(3, 2)], Domain::Any),
        (AddScalar(0.3), vec![(3, 2)], Domain::Any),
        (Neg, vec![(3, 2)], Domain::Any),
        (Relu, vec![(3, 3)], Domain::AwayFromZero),
        (LeakyRelu(LEAKY_SLOPE), vec![(3, 3)], Domain::AwayFromZero),
        (Exp, vec![(3, 2)], Domain::Any),
        (Log, vec![(3, 2)], Domain::Positive),
        (Sqrt, vec![(3, 2)], Domain::Positive),
        (Square, vec![(3, 2)], Domain::Any),
        (Recip, vec![(3, 2)], Domain::AwayFromZero),
        (Softplus, vec![(3, 2)], Domain::Any),
        (Sum, vec![(3, 2)], Domain::Any),
        (Mean, vec![(3, 2)], Domain::Any),
        (SumRows, vec![(3, 2)], Domain::Any),
        (SumCols, vec![(3, 2)], Domain::Any),
        (L2NormRows, vec![(4, 3)], Domain::AwayFromZero),
        (SqDist, vec![(3, 2), (4, 2)], Domain::Any),
        (Broadcast { rows: 2, cols: 3 }, vec![(1, 1)], Domain::Any),
        (ExpandCols(3), vec![(4, 1)], Domain::Any),
        (ExpandRows(3), vec![(1, 4)], Domain::Any),
    ]
}

/// `Σ c ⊙ op(inputs)` on plain values.
fn weighted_output(op: Primitive, inputs: &[Matrix], c: &Matrix) -> f64 {
    let ts: Vec<Tensor> = inputs.iter().cloned().map(Tensor::constant).collect();
    let refs: Vec<&Tensor> = ts.iter().collect();
    let out = apply_primitive(op, &refs).unwrap();
    out.value().as_slice().iter().zip(c.as_slice()).map(|(a, b)| a * b).sum()
}

fn output_shape(op: Primitive, inputs: &[Matrix]) -> (usize, usize) {
    let ts: Vec<Tensor> = inputs.iter().cloned().map(Tensor::constant).collect();
    let refs: Vec<&Tensor> = ts.iter().collect();
    apply_primitive(op, &refs).unwrap().shape()
}

/// FD gradient of `f` with respect to input `k`, others held fixed.
fn fd_wrt(inputs: &[Matrix], k: usize, f: impl Fn(&[Matrix]) -> f64) -> Vec<f64> {
    let shape = inputs[k].shape();
    central_difference(
        |t| {
            let mut probe = inputs.to_vec();
            probe[k] = Matrix::new(shape.0, shape.1, t.to_vec()).unwrap();
            f(&probe)
        },
        inputs[k].as_slice(),
        FD_STEP,
    )
}

#[test]
fn every_primitive_matches_finite_differences() {
    let mut rng = Stream::new(100, Purpose::Misc);
    for (op, shapes, domain) in cases() {
        let inputs: Vec<Matrix> = shapes.iter().map(|&s| draw(&mut rng, s, domain)).collect();
        let out_shape = output_shape(op, &inputs);
        let c = rng.normal_matrix(out_shape.0, out_shape.1);

        let vars: Vec<Tensor> = inputs.iter().cloned().map(Tensor::variable).collect();
        let refs: Vec<&Tensor> = vars.iter().collect();
        let scalar = apply_primitive(op, &refs)
            .unwrap()
            .mul(&Tensor::constant(c.clone()))
            .unwrap()
            .sum();
        let grads = gradient(&scalar, &refs, false).unwrap();
        for k in 0..inputs.len() {
            let fd = fd_wrt(&inputs, k, |x| weighted_output(op, x, &c));
            let err = relative_error(grads[k].value().as_slice(), &fd);
            assert!(err <= 1e-6, "{} input {k}: relative error {err:e}", op.name());
        }
    }
}

#[test]
fn every_primitive_has_consistent_second_derivatives() {
    let mut rng = Stream::new(101, Purpose::Misc);
    for (op, shapes, domain) in cases() {
        let inputs: Vec<Matrix> = shapes.iter().map(|&s| draw(&mut rng, s, domain)).collect();
        let out_shape = output_shape(op, &inputs);
        let c = rng.normal_matrix(out_shape.0, out_shape.1);
        let d: Vec<Matrix> = inputs.iter().map(|m| rng.normal_matrix(m.rows(), m.cols())).collect();

        // s(x) = Σ_k d_k ⊙ ∂/∂x_k Σ c ⊙ op(x).
        let directional = |x: &[Matrix], record: bool| -> (f64, Vec<Tensor>, Vec<Tensor>) {
            let vars: Vec<Tensor> = x.iter().cloned().map(Tensor::variable).collect();
            let refs: Vec<&Tensor> = vars.iter().collect();
            let scalar = apply_primitive(op, &refs)
                .unwrap()
                .mul(&Tensor::constant(c.clone()))
                .unwrap()
                .sum();
            let g = gradient(&scalar, &refs, record).unwrap();
            let mut s = Tensor::scalar(0.0);
            for (gk, dk) in g.iter().zip(&d) {
                s = s.add(&gk.mul(&Tensor::constant(dk.clone())).unwrap().sum()).unwrap();
            }
            (s.item(), vars, vec![s])
        };
        let (_, vars, s) = directional(&inputs, true);
        let refs: Vec<&Tensor> = vars.iter().collect();
        let second = gradient(&s[0], &refs, false).unwrap();
        for k in 0..inputs.len() {
            let fd = fd_wrt(&inputs, k, |x| directional(x, false).0);
            let err = relative_error(second[k].value().as_slice(), &fd);
            assert!(err <= 1e-6, "{} input {k}: second-order error {err:e}", op.name());
        }
    }
}

#[test]
fn random_networks_pass_gradcheck() {
    let report = run_gradcheck(20, 7).unwrap();
    assert!(report.max_first_order <= 1e-5, "{report:?}");
    assert!(report.max_input_gradient <= 1e-5, "{report:?}");
    assert!(report.max_second_order <= 1e-4, "{report:?}");
}

#[test]
fn vanilla_gan_penalty_second_order() {
    let mut rng = Stream::new(102, Purpose::Misc);
    for _ in 0..10 {
        let case = Case::random(&mut rng, 8, 3, true);
        let err = iwgan::gradcheck::second_order_error(&case, FDivergence::VanillaGan).unwrap();
        assert!(err <= 1e-4, "{err:e}");
    }
}

#[test]
fn gradients_are_bitwise_deterministic() {
    let mut rng = Stream::new(103, Purpose::Misc);
    let case = Case::random(&mut rng, 8, 3, true);
    let run = || {
        let bound = case.net.bind();
        let j1 = iwgan::losses::gradient_penalty(&bound, FDivergence::Wasserstein, &case.x).unwrap();
        gradient(&j1, &bound.params(), false)
            .unwrap()
            .into_iter()
            .map(|g| g.into_value())
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

fn two_outputs(x: &Tensor, w: &Tensor) -> (Tensor, Tensor) {
    let h = x.matmul(w).unwrap();
    let u = h.relu().sum();
    let v = h.exp().mul(&h).unwrap().mean();
    (u, v)
}

proptest! {
    #[test]
    fn gradient_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
        let mut rng = Stream::new(seed, Purpose::Misc);
        let x = Tensor::variable(rng.normal_matrix(4, 3));
        let w = Tensor::variable(rng.normal_matrix(3, 2).map(|v| 0.5 * v));
        let (u, v) = two_outputs(&x, &w);
        let combo = u.scale(a).add(&v.scale(b)).unwrap();
        let gc = gradient(&combo, &[&x, &w], false).unwrap();
        let gu = gradient(&u, &[&x, &w], false).unwrap();
        let gv = gradient(&v, &[&x, &w], false).unwrap();
        for k in 0..2 {
            let lhs = gc[k].value().as_slice();
            let rhs: Vec<f64> = gu[k].value().as_slice().iter()
                .zip(gv[k].value().as_slice())
                .map(|(p, q)| a * p + b * q)
                .collect();
            prop_assert!(relative_error(lhs, &rhs) < 1e-12);
        }
    }

    #[test]
    fn detached_inputs_get_zero_gradient(seed in 0u64..1000) {
        let mut rng = Stream::new(seed, Purpose::Misc);
        let x = Tensor::variable(rng.normal_matrix(3, 3));
        let y = x.detach().square().sum().add(&x.sum()).unwrap();
        let g = gradient(&y, &[&x], false).unwrap();
        prop_assert!(g[0].value().as_slice().iter().all(|&v| v == 1.0));
    }
}
