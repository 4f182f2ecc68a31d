use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ndgan_core::nn::{AdamConfig, AdamState};
use ndgan_core::tensor::{forward_op, Op, Tape, Tensor};

fn matrix(max: usize) -> impl Strategy<Value = Tensor> {
    (1..=max, 1..=max).prop_flat_map(|(r, c)| {
        prop::collection::vec(-2.0f64..2.0, r * c)
            .prop_map(move |d| Tensor::new([r, c], d).unwrap())
    })
}

fn unary_ops() -> impl Strategy<Value = Op> {
    prop_oneof![
        Just(Op::Relu),
        (0.01f64..0.5).prop_map(|slope| Op::LeakyRelu { slope }),
        Just(Op::Tanh),
        Just(Op::Sigmoid),
        Just(Op::Exp),
        Just(Op::Softmax),
        Just(Op::LogSoftmax),
        Just(Op::Mean),
        Just(Op::Sum),
        Just(Op::MeanRows),
        Just(Op::SumCols),
        Just(Op::L2NormSq),
        Just(Op::Transpose),
        (-3.0f64..3.0, -3.0f64..3.0).prop_map(|(scale, shift)| Op::Affine { scale, shift }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn taped_unary_forward_is_bit_identical(x in matrix(8), op in unary_ops()) {
        let plain = forward_op(&op, &[&x], None).unwrap();
        let mut tape = Tape::new();
        let v = tape.param(x.clone());
        let out = tape.apply(op, &[v]).unwrap();
        prop_assert_eq!(tape.value(out).unwrap(), &plain);
    }

    #[test]
    fn taped_binary_forward_is_bit_identical(
        (a, b) in (1usize..=8, 1usize..=8).prop_flat_map(|(r, c)| (
            prop::collection::vec(-2.0f64..2.0, r * c).prop_map(move |d| Tensor::new([r, c], d).unwrap()),
            prop::collection::vec(-2.0f64..2.0, c).prop_map(move |d| Tensor::new([1, c], d).unwrap()),
        )),
        which in 0usize..3,
    ) {
        let op = [Op::Add, Op::Sub, Op::Mul][which].clone();
        let plain = forward_op(&op, &[&a, &b], None).unwrap();
        let mut tape = Tape::new();
        let (va, vb) = (tape.param(a.clone()), tape.constant(b.clone()));
        let out = tape.apply(op, &[va, vb]).unwrap();
        prop_assert_eq!(tape.value(out).unwrap(), &plain);
    }

    #[test]
    fn noise_draws_repeat_for_a_seed(x in matrix(8), seed in any::<u64>(), std in 0.01f64..2.0) {
        let draw = || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            forward_op(&Op::GaussianNoise { std }, &[&x], Some(&mut rng)).unwrap()
        };
        prop_assert_eq!(draw(), draw());
    }

    #[test]
    fn adam_with_zero_gradients_keeps_parameters(x in matrix(6), steps in 1usize..20) {
        let mut params = vec![x.clone()];
        let mut adam = AdamState::new(AdamConfig::default());
        for _ in 0..steps {
            adam.step(&mut params, &[Tensor::zeros(x.shape().to_vec())]).unwrap();
        }
        prop_assert_eq!(&params[0], &x);
    }
}
