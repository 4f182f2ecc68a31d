//! Acceptance checks. Prints one PASS / FAIL / SKIP line per criterion and
//! exits non-zero when any criterion fails.
//!
//! Run a subset with `cargo test --test acceptance -- c5 c6`. The MNIST
//! criterion runs only when `NDGAN_MNIST_DIR` names a directory holding
//! `train-images-idx3-ubyte`, `train-labels-idx1-ubyte`,
//! `t10k-images-idx3-ubyte` and `t10k-labels-idx1-ubyte`.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ndgan_cli::commands::eval::{REFERENCE_MEANS, REFERENCE_ND_GAN_HOLDOUT};
use ndgan_cli::commands::train::MODEL_FILE;
use ndgan_cli::commands::Invocation;
use ndgan_core::data::{gen_ring_mixture, ring_density, Dataset, SplitTag};
use ndgan_core::density::{
    closed_form_lr_auroc, likelihood_ratio_score, verify_mixture_identity, Density,
    GaussianMixtureDensity, GridDensity, MixtureSpec,
};
use ndgan_core::gan::loss::{d_loss_on_tape, fm_on_tape, forward_logits, g_standard_on_tape};
use ndgan_core::gan::{train_discriminator, train_gan, GanArchitecture, GanModel, TrainConfig};
use ndgan_core::metrics::{auroc, roc_auroc};
use ndgan_core::nn::{Activation, AttachedMlp, Mlp, Mode, ParamSet};
use ndgan_core::scores::{
    check_mixture_generator, score_entropy, score_knn, score_max_prob, score_nd_gan,
};
use ndgan_core::tensor::{forward_op, Op, Tape, Tensor, Var};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

enum Status {
    Done(Outcome),
    Skipped(String),
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

// ---------------------------------------------------------------------------
// 1. gradients

const GRAD_TOL: f64 = 1e-4;
const GRAD_FLOOR: f64 = 1e-7;
const FD_STEP: f64 = 1e-4;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(GRAD_FLOOR)
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Moves entries off the kinks of piecewise-linear activations.
fn off_kink(t: Tensor) -> Tensor {
    t.map(|v| if v.abs() < 1e-2 { 0.05 } else { v })
}

/// Builds a scalar loss node from param nodes holding the inputs.
type Builder<'a> = dyn Fn(&mut Tape, &[Var]) -> Var + 'a;

/// Max relative error between reverse-mode and central-difference gradients
/// of `build` with respect to every entry of `inputs`.
fn check_fn(inputs: &[Tensor], build: &Builder<'_>) -> f64 {
    let eval = |xs: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone())).collect();
        let out = build(&mut tape, &vars);
        tape.value(out).unwrap().item()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let out = build(&mut tape, &vars);
    let grads = tape.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    for (i, x) in inputs.iter().enumerate() {
        let g = grads.get_or_zeros(&tape, vars[i]).unwrap();
        for j in 0..x.len() {
            let mut xs = inputs.to_vec();
            xs[i].data_mut()[j] = x.data()[j] + FD_STEP;
            let up = eval(&xs);
            xs[i].data_mut()[j] = x.data()[j] - FD_STEP;
            let down = eval(&xs);
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(g.data()[j], numeric));
        }
    }
    worst
}

/// Contracts `y` with a fixed random tensor so every output entry matters.
fn contract(tape: &mut Tape, y: Var, weights: &Tensor) -> Var {
    let w = tape.constant(weights.clone());
    let p = tape.mul(y, w).unwrap();
    tape.sum(p).unwrap()
}

fn op_cases(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.random_range(1..=6);
    let k = rng.random_range(1..=6);
    let n = rng.random_range(2..=6);
    let a = uniform(&mut rng, &[m, n], -2.0, 2.0);
    let b = uniform(&mut rng, &[m, n], -2.0, 2.0);
    let row = uniform(&mut rng, &[1, n], -2.0, 2.0);
    let w_mn = uniform(&mut rng, &[m, n], -1.0, 1.0);
    let mut out = Vec::new();
    let mut case = |name: &'static str, inputs: &[Tensor], build: &Builder<'_>| {
        out.push((name, check_fn(inputs, build)))
    };

    let lhs = uniform(&mut rng, &[m, k], -2.0, 2.0);
    let rhs = uniform(&mut rng, &[k, n], -2.0, 2.0);
    case("matmul", &[lhs, rhs], &|t, v| {
        let y = t.matmul(v[0], v[1]).unwrap();
        contract(t, y, &w_mn)
    });
    let w_nm = uniform(&mut rng, &[n, m], -1.0, 1.0);
    case("transpose", std::slice::from_ref(&a), &|t, v| {
        let y = t.transpose(v[0]).unwrap();
        contract(t, y, &w_nm)
    });
    case("add", &[a.clone(), b.clone()], &|t, v| {
        let y = t.add(v[0], v[1]).unwrap();
        contract(t, y, &w_mn)
    });
    case("add-broadcast", &[a.clone(), row.clone()], &|t, v| {
        let y = t.add(v[0], v[1]).unwrap();
        contract(t, y, &w_mn)
    });
    case("sub", &[a.clone(), b.clone()], &|t, v| {
        let y = t.sub(v[0], v[1]).unwrap();
        contract(t, y, &w_mn)
    });
    case("sub-broadcast", &[a.clone(), row.clone()], &|t, v| {
        let y = t.sub(v[0], v[1]).unwrap();
        contract(t, y, &w_mn)
    });
    case("mul", &[a.clone(), b.clone()], &|t, v| {
        let y = t.mul(v[0], v[1]).unwrap();
        contract(t, y, &w_mn)
    });
    case("mul-broadcast", &[a.clone(), row.clone()], &|t, v| {
        let y = t.mul(v[0], v[1]).unwrap();
        contract(t, y, &w_mn)
    });
    case("affine", std::slice::from_ref(&a), &|t, v| {
        let y = t.affine(v[0], -1.7, 0.3).unwrap();
        contract(t, y, &w_mn)
    });
    let kinked = off_kink(a.clone());
    case("relu", std::slice::from_ref(&kinked), &|t, v| {
        let y = t.relu(v[0]).unwrap();
        contract(t, y, &w_mn)
    });
    case("leaky-relu", &[kinked], &|t, v| {
        let y = t.leaky_relu(v[0], 0.2).unwrap();
        contract(t, y, &w_mn)
    });
    case("tanh", std::slice::from_ref(&a), &|t, v| {
        let y = t.tanh(v[0]).unwrap();
        contract(t, y, &w_mn)
    });
    case("sigmoid", std::slice::from_ref(&a), &|t, v| {
        let y = t.sigmoid(v[0]).unwrap();
        contract(t, y, &w_mn)
    });
    case("exp", std::slice::from_ref(&a), &|t, v| {
        let y = t.exp(v[0]).unwrap();
        contract(t, y, &w_mn)
    });
    case("log", &[a.map(|x| x.abs() + 0.1)], &|t, v| {
        let y = t.log(v[0]).unwrap();
        contract(t, y, &w_mn)
    });
    case("softmax", std::slice::from_ref(&a), &|t, v| {
        let y = t.softmax(v[0]).unwrap();
        contract(t, y, &w_mn)
    });
    case("log-softmax", std::slice::from_ref(&a), &|t, v| {
        let y = t.log_softmax(v[0]).unwrap();
        contract(t, y, &w_mn)
    });
    case("mean", std::slice::from_ref(&a), &|t, v| {
        let y = t.mean(v[0]).unwrap();
        t.affine(y, 1.3, 0.0).unwrap()
    });
    case("sum", std::slice::from_ref(&a), &|t, v| {
        let y = t.sum(v[0]).unwrap();
        t.affine(y, 0.7, 0.0).unwrap()
    });
    let w_row = uniform(&mut rng, &[1, n], -1.0, 1.0);
    case("mean-rows", std::slice::from_ref(&a), &|t, v| {
        let y = t.mean_rows(v[0]).unwrap();
        contract(t, y, &w_row)
    });
    let w_col = uniform(&mut rng, &[m, 1], -1.0, 1.0);
    case("sum-cols", std::slice::from_ref(&a), &|t, v| {
        let y = t.sum_cols(v[0]).unwrap();
        contract(t, y, &w_col)
    });
    case("l2-norm-sq", std::slice::from_ref(&a), &|t, v| {
        t.l2_norm_sq(v[0]).unwrap()
    });
    let w_cat = uniform(&mut rng, &[m, 2 * n + 1], -1.0, 1.0);
    let c = uniform(&mut rng, &[m, 1], -2.0, 2.0);
    case("concat", &[a.clone(), b.clone(), c], &|t, v| {
        let y = t.concat(&[v[0], v[1], v[2]]).unwrap();
        contract(t, y, &w_cat)
    });
    let start = rng.random_range(0..n - 1);
    let end = rng.random_range(start + 1..=n);
    let w_slice = uniform(&mut rng, &[m, end - start], -1.0, 1.0);
    case("slice-cols", std::slice::from_ref(&a), &|t, v| {
        let y = t.slice_cols(v[0], start, end).unwrap();
        contract(t, y, &w_slice)
    });
    let idx: Vec<usize> = (0..m).map(|_| rng.random_range(0..n)).collect();
    case("gather", std::slice::from_ref(&a), &|t, v| {
        let y = t.gather(v[0], idx.clone()).unwrap();
        contract(t, y, &w_col)
    });
    let noise_seed = rng.next_u64();
    case("gaussian-noise", std::slice::from_ref(&a), &|t, v| {
        let mut r = ChaCha8Rng::seed_from_u64(noise_seed);
        let y = t.gaussian_noise(v[0], 0.3, &mut r).unwrap();
        contract(t, y, &w_mn)
    });
    let dir = uniform(&mut rng, &[m, n], -2.0, 2.0).map(|x| if x.abs() < 0.1 { 0.5 } else { x });
    let gain = uniform(&mut rng, &[m], 0.5, 2.0);
    case("weight-norm", &[dir, gain], &|t, v| {
        let y = t.weight_norm(v[0], v[1]).unwrap();
        contract(t, y, &w_mn)
    });
    out
}

fn small_arch(rng: &mut ChaCha8Rng, k: usize) -> GanArchitecture {
    let width = |rng: &mut ChaCha8Rng| rng.random_range(2..=16);
    GanArchitecture {
        data_dim: rng.random_range(1..=4),
        num_classes: k,
        z_dim: rng.random_range(1..=4),
        generator_hidden: (0..rng.random_range(1..=2)).map(|_| width(rng)).collect(),
        discriminator_hidden: (0..rng.random_range(1..=3)).map(|_| width(rng)).collect(),
        generator_output: Activation::Tanh,
        discriminator_noise: 0.1,
        weight_norm: rng.random_bool(0.5),
        z_prior: Default::default(),
    }
}

/// Gradient check of a network loss over every parameter of the network
/// returned by `loss`; the loss is rebuilt with identical noise on every
/// evaluation.
fn check_net(net: &Mlp, loss: &dyn Fn(&mut Tape, &Mlp) -> (Var, AttachedMlp)) -> f64 {
    let eval = |m: &Mlp| -> f64 {
        let mut tape = Tape::new();
        let out = loss(&mut tape, m).0;
        tape.value(out).unwrap().item()
    };
    let mut tape = Tape::new();
    let (out, attached) = loss(&mut tape, net);
    let grads = tape.backward(out).unwrap();
    let analytic = attached.gradients(&tape, &grads).unwrap();
    let mut worst: f64 = 0.0;
    let mut m = net.clone();
    for (i, g) in analytic.iter().enumerate() {
        for j in 0..g.len() {
            let x0 = m.params_mut().tensors_mut()[i].data()[j];
            m.params_mut().tensors_mut()[i].data_mut()[j] = x0 + FD_STEP;
            let up = eval(&m);
            m.params_mut().tensors_mut()[i].data_mut()[j] = x0 - FD_STEP;
            let down = eval(&m);
            m.params_mut().tensors_mut()[i].data_mut()[j] = x0;
            let e = rel_err(g.data()[j], (up - down) / (2.0 * FD_STEP));
            worst = worst.max(e);
        }
    }
    worst
}

const KINK_MARGIN: f64 = 1e-3;

/// Smallest distance of a relu or leaky-relu pre-activation from zero over
/// a forward pass, replaying train-mode noise when `noise` is given; also
/// returns the output.
fn kink_margin(net: &Mlp, x: &Tensor, mut noise: Option<&mut ChaCha8Rng>) -> (f64, Tensor) {
    let mut margin = f64::INFINITY;
    let mut h = x.clone();
    for (spec, p) in net.specs().iter().zip(&net.params().layers) {
        let w = p.weight().unwrap();
        let wt = forward_op(&Op::Transpose, &[&w], None).unwrap();
        let pre = forward_op(&Op::Matmul, &[&h, &wt], None).unwrap();
        let pre = forward_op(&Op::Add, &[&pre, &p.bias], None).unwrap();
        let act = match spec.activation {
            Activation::Relu => Some(Op::Relu),
            Activation::LeakyRelu { slope } => Some(Op::LeakyRelu { slope }),
            Activation::Tanh => Some(Op::Tanh),
            Activation::Sigmoid => Some(Op::Sigmoid),
            Activation::Linear => None,
            Activation::Softmax => Some(Op::Softmax),
        };
        if matches!(
            spec.activation,
            Activation::Relu | Activation::LeakyRelu { .. }
        ) {
            margin = pre.data().iter().fold(margin, |m, v| m.min(v.abs()));
        }
        h = match act {
            Some(op) => forward_op(&op, &[&pre], None).unwrap(),
            None => pre,
        };
        if let Some(r) = noise.as_deref_mut().filter(|_| spec.noise_std > 0.0) {
            h = forward_op(
                &Op::GaussianNoise {
                    std: spec.noise_std,
                },
                &[&h],
                Some(r),
            )
            .unwrap();
        }
    }
    (margin, h)
}

fn network_cases(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let k = rng.random_range(1..=3);
    let arch = small_arch(&mut rng, k);
    let base = GanModel::new(&arch, seed).unwrap();
    let jitter = |net: &Mlp, rng: &mut ChaCha8Rng| {
        let mut net = net.clone();
        for layer in &mut net.params_mut().layers {
            for b in layer.bias.data_mut() {
                *b = rng.random_range(-0.5..0.5);
            }
        }
        net
    };
    let batch = rng.random_range(2..=6);
    // Redraw biases and inputs until every kinked unit sits clear of its
    // kink, so the finite differences never straddle one.
    let (model, real, lab, z, noise_seed) = loop {
        let g = jitter(base.generator(), &mut rng);
        let d = jitter(base.discriminator(), &mut rng);
        let model = GanModel::from_parts(g, d, k, arch.z_prior).unwrap();
        let real = uniform(&mut rng, &[batch, arch.data_dim], -2.0, 2.0);
        let lab = uniform(&mut rng, &[batch, arch.data_dim], -2.0, 2.0);
        let z = uniform(&mut rng, &[batch, arch.z_dim], -2.0, 2.0);
        let noise_seed = rng.next_u64();
        let (gm, fake) = kink_margin(model.generator(), &z, None);
        let mut margin = gm;
        for order in [&[&lab, &real, &fake][..], &[&real, &fake], &[&fake]] {
            let mut noise = ChaCha8Rng::seed_from_u64(noise_seed);
            for x in order {
                margin = margin.min(kink_margin(model.discriminator(), x, Some(&mut noise)).0);
            }
        }
        if margin > KINK_MARGIN {
            break (model, real, lab, z, noise_seed);
        }
    };
    let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..k)).collect();
    let feature = model.feature_layer();

    let d_loss = |tape: &mut Tape, d: &Mlp| {
        let mut noise = ChaCha8Rng::seed_from_u64(noise_seed);
        let g = model.generator().attach(tape, false).unwrap();
        let zv = tape.constant(z.clone());
        let fake = g.forward(tape, zv, Mode::Eval, None).unwrap().output;
        let dn = d.attach(tape, true).unwrap();
        let lv = forward_logits(tape, &dn, &lab, Mode::Train, Some(&mut noise))
            .unwrap()
            .0;
        let rv = forward_logits(tape, &dn, &real, Mode::Train, Some(&mut noise))
            .unwrap()
            .0;
        let fv = dn
            .forward(tape, fake, Mode::Train, Some(&mut noise))
            .unwrap()
            .output;
        let loss = d_loss_on_tape(tape, k, Some((lv, &labels)), Some(rv), Some(fv)).unwrap();
        (loss, dn)
    };
    let g_fm = |tape: &mut Tape, g: &Mlp| {
        let mut noise = ChaCha8Rng::seed_from_u64(noise_seed);
        let dn = model.discriminator().attach(tape, false).unwrap();
        let gn = g.attach(tape, true).unwrap();
        let zv = tape.constant(z.clone());
        let fake = gn.forward(tape, zv, Mode::Eval, None).unwrap().output;
        let rh = forward_logits(tape, &dn, &real, Mode::Train, Some(&mut noise))
            .unwrap()
            .1;
        let fh = dn
            .forward(tape, fake, Mode::Train, Some(&mut noise))
            .unwrap()
            .hidden;
        (fm_on_tape(tape, rh[feature], fh[feature]).unwrap(), gn)
    };
    let g_standard = |tape: &mut Tape, g: &Mlp| {
        let mut noise = ChaCha8Rng::seed_from_u64(noise_seed);
        let dn = model.discriminator().attach(tape, false).unwrap();
        let gn = g.attach(tape, true).unwrap();
        let zv = tape.constant(z.clone());
        let fake = gn.forward(tape, zv, Mode::Eval, None).unwrap().output;
        let fv = dn
            .forward(tape, fake, Mode::Train, Some(&mut noise))
            .unwrap()
            .output;
        (g_standard_on_tape(tape, k, fv).unwrap(), gn)
    };
    vec![
        (
            "discriminator loss",
            check_net(model.discriminator(), &d_loss),
        ),
        ("feature matching", check_net(model.generator(), &g_fm)),
        (
            "generator standard",
            check_net(model.generator(), &g_standard),
        ),
    ]
}

fn criterion_gradients() -> Outcome {
    let seeds = 50;
    let mut worst_op: (&str, f64) = ("", 0.0);
    for seed in 0..seeds {
        for (name, e) in op_cases(seed) {
            if e > worst_op.1 || !e.is_finite() {
                worst_op = (name, e);
            }
        }
    }
    let mut worst_net: (&str, f64) = ("", 0.0);
    for seed in 0..seeds {
        for (name, e) in network_cases(seed) {
            if e > worst_net.1 || !e.is_finite() {
                worst_net = (name, e);
            }
        }
    }
    let pass = worst_op.1 < GRAD_TOL && worst_net.1 < GRAD_TOL;
    Outcome::new(
        pass,
        format!(
            "{seeds} seeds; worst op rel err {:.2e} ({}), worst network rel err {:.2e} ({})",
            worst_op.1, worst_op.0, worst_net.1, worst_net.0
        ),
    )
}

// ---------------------------------------------------------------------------
// 2. AUROC

/// Probability that a novel score beats a nominal one, ties counting half.
fn pairwise_auroc(scores: &[f64], is_novel: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &a) in scores.iter().enumerate() {
        for (j, &b) in scores.iter().enumerate() {
            if is_novel[i] && !is_novel[j] {
                pairs += 1.0;
                wins += if a > b {
                    1.0
                } else if a == b {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

fn criterion_auroc() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut tied_sets = 0;
    for set in 0..200 {
        let n = rng.random_range(2..=100);
        let mut is_novel: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        is_novel[0] = true;
        is_novel[1] = false;
        // Every other set draws from a handful of levels, forcing ties.
        let levels = rng.random_range(1..=5);
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if set % 2 == 0 {
                    rng.random_range(0..levels) as f64 * 0.25
                } else {
                    rng.random_range(-3.0..3.0)
                }
            })
            .collect();
        if set % 2 == 0 {
            tied_sets += 1;
        }
        let got = roc_auroc(&scores, &is_novel).unwrap().auroc;
        worst = worst.max((got - pairwise_auroc(&scores, &is_novel)).abs());
    }
    Outcome::new(
        worst < 1e-12,
        format!("200 sets ({tied_sets} with forced ties); max |auroc - pairwise| = {worst:.2e}"),
    )
}

// ---------------------------------------------------------------------------
// 3. mixture identity

fn random_gmm(rng: &mut ChaCha8Rng, dim: usize) -> GaussianMixtureDensity {
    let c = rng.random_range(1..=4);
    let raw: Vec<f64> = (0..c).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let weights = raw.iter().map(|w| w / total).collect();
    let means = (0..c)
        .map(|_| (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect();
    let vars = (0..c)
        .map(|_| (0..dim).map(|_| rng.random_range(0.05..2.0)).collect())
        .collect();
    GaussianMixtureDensity::new(weights, means, vars).unwrap()
}

/// 10^4 points on a regular grid over `[-6, 6]^dim`.
fn identity_grid(dim: usize) -> Tensor {
    let (side, total) = if dim == 1 {
        (10_000, 10_000)
    } else {
        (100, 10_000)
    };
    let at = |i: usize| -6.0 + 12.0 * (i as f64 + 0.5) / side as f64;
    let mut data = Vec::with_capacity(total * dim);
    for p in 0..total {
        if dim == 1 {
            data.push(at(p));
        } else {
            data.push(at(p / side));
            data.push(at(p % side));
        }
    }
    Tensor::new([total, dim], data).unwrap()
}

fn criterion_mixture_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let grids = [identity_grid(1), identity_grid(2)];
    let (mut worst, mut excluded, mut evaluated) = (0.0f64, 0, 0);
    for _ in 0..100 {
        let dim = rng.random_range(1..=2);
        let pi = if rng.random_bool(0.1) {
            0.0
        } else {
            rng.random_range(0.0..1.0)
        };
        let spec =
            MixtureSpec::new(pi, random_gmm(&mut rng, dim), random_gmm(&mut rng, dim)).unwrap();
        let r = verify_mixture_identity(&spec, &grids[dim - 1]).unwrap();
        worst = worst
            .max(r.max_scaled_residual)
            .max(r.max_scaled_residual_ssnd);
        excluded += r.excluded.len();
        evaluated += r.evaluated;
    }
    Outcome::new(
        worst < 1e-12,
        format!("100 specs x 1e4 points; max residual {worst:.2e} ({evaluated} evaluated, {excluded} outside support)"),
    )
}

// ---------------------------------------------------------------------------
// 4. 1D likelihood ratio

/// Phi(sqrt 2), from an independent high-precision evaluation.
const PHI_SQRT2: f64 = 0.921_350_396_474_857_5;

fn criterion_lr_1d() -> Outcome {
    let t0 = Instant::now();
    let nominal = GaussianMixtureDensity::gaussian(vec![0.0], vec![1.0]).unwrap();
    let novel = GaussianMixtureDensity::gaussian(vec![2.0], vec![1.0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let xn = nominal.sample(20_000, &mut rng);
    let xa = novel.sample(20_000, &mut rng);
    let sn = likelihood_ratio_score(&nominal, &novel, &xn).unwrap();
    let sa = likelihood_ratio_score(&nominal, &novel, &xa).unwrap();
    let a = auroc(&sn, &sa).unwrap();
    let closed = closed_form_lr_auroc(&nominal, &novel).unwrap();
    let elapsed = t0.elapsed();
    let pass = (a - PHI_SQRT2).abs() <= 0.01
        && (closed - PHI_SQRT2).abs() < 1e-10
        && elapsed < Duration::from_secs(5);
    Outcome::new(
        pass,
        format!(
            "Monte Carlo AUROC {a:.4} vs Phi(sqrt 2) = {PHI_SQRT2:.4} (closed form {closed:.6}, off by {:.1e}); {:.2}s",
            (closed - PHI_SQRT2).abs(),
            secs(elapsed)
        ),
    )
}

// ---------------------------------------------------------------------------
// 5. discriminator-only training against a fixed mixture generator

/// Spearman correlation with midranks for ties.
fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for &k in &idx[i..=j] {
                r[k] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn square_grid(lo: f64, hi: f64, side: usize) -> Tensor {
    let at = |i: usize| lo + (hi - lo) * (i as f64 + 0.5) / side as f64;
    let data = (0..side * side)
        .flat_map(|p| [at(p / side), at(p % side)])
        .collect();
    Tensor::new([side * side, 2], data).unwrap()
}

fn criterion_discriminator_only() -> Outcome {
    let t0 = Instant::now();
    let ring = ring_density(8, 2.0, 0.2).unwrap();
    let novel = GaussianMixtureDensity::gaussian(vec![0.0, 0.0], vec![0.25, 0.25]).unwrap();
    let fakes = MixtureSpec::new(0.5, novel.clone(), ring.clone()).unwrap();
    let (data, _) = gen_ring_mixture(20_000, 8, 2.0, 0.2, 51).unwrap();
    let config = TrainConfig {
        total_steps: 5000,
        seed: 52,
        ..TrainConfig::default()
    };
    let model = GanModel::new(&GanArchitecture::toy_2d(1), 53).unwrap();
    let (model, _) = train_discriminator(model, &data.without_labels(), &config, &fakes).unwrap();

    // Grid cells where the generator density is at least 1% of its peak.
    let grid = square_grid(-3.0, 3.0, 60);
    let pg = fakes.eval_batch(&grid).unwrap();
    let cutoff = 1e-2 * pg.iter().copied().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..grid.rows()).filter(|&i| pg[i] >= cutoff).collect();
    let grid = grid.select_rows(&keep);
    let learned = model.fake_prob(&grid).unwrap();
    let analytic = likelihood_ratio_score(&ring, &novel, &grid).unwrap();
    let rho = spearman(&learned, &analytic);

    let mut rng = ChaCha8Rng::seed_from_u64(54);
    let xn = ring.sample(5000, &mut rng);
    let xa = novel.sample(5000, &mut rng);
    let learned_auc = auroc(
        &model.fake_prob(&xn).unwrap(),
        &model.fake_prob(&xa).unwrap(),
    )
    .unwrap();
    let analytic_auc = auroc(
        &likelihood_ratio_score(&ring, &novel, &xn).unwrap(),
        &likelihood_ratio_score(&ring, &novel, &xa).unwrap(),
    )
    .unwrap();
    let elapsed = t0.elapsed();
    let pass = rho >= 0.95
        && (learned_auc - analytic_auc).abs() <= 0.03
        && elapsed <= Duration::from_secs(120);
    Outcome::new(
        pass,
        format!(
            "Spearman {rho:.4} over {} grid cells; AUROC {learned_auc:.4} vs analytic {analytic_auc:.4}; {:.1}s",
            grid.rows(),
            secs(elapsed)
        ),
    )
}

// ---------------------------------------------------------------------------
// 6. end-to-end 2D

fn criterion_end_to_end_2d() -> Outcome {
    let t0 = Instant::now();
    let (train, ring) = gen_ring_mixture(10_000, 8, 2.0, 0.2, 61).unwrap();
    let config = TrainConfig {
        total_steps: 8000,
        labeled_per_class: Some(100),
        seed: 62,
        ..TrainConfig::default()
    };
    let model = GanModel::new(&GanArchitecture::toy_2d(8), 63).unwrap();
    let (model, _) = train_gan(model, &train, &config).unwrap();

    let novel = GaussianMixtureDensity::gaussian(vec![0.0, 0.0], vec![0.04, 0.04]).unwrap();
    let (test, _) = gen_ring_mixture(5000, 8, 2.0, 0.2, 64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(65);
    let xa = novel.sample(5000, &mut rng);
    let sn = score_nd_gan(&model.fake_prob(test.features()).unwrap());
    let sa = score_nd_gan(&model.fake_prob(&xa).unwrap());
    let a = auroc(&sn, &sa).unwrap();

    let samples = model.sample_generator(10_000, &mut rng).unwrap();
    let grid =
        GridDensity::from_density(&ring, vec![(-3.0, 3.0); 2], vec![MIXTURE_GRID; 2]).unwrap();
    let eps = 0.01 * grid.max_value();
    let report = check_mixture_generator(&samples, &grid, eps).unwrap();
    let elapsed = t0.elapsed();
    let pass = a >= 0.90 && report.is_mixture && elapsed <= Duration::from_secs(300);
    Outcome::new(
        pass,
        format!(
            "nd-gan AUROC {a:.4}; mixture check {} ({} flagged cells, {} samples off grid); {:.1}s",
            report.is_mixture,
            report.flagged.len(),
            report.outside_grid,
            secs(elapsed)
        ),
    )
}

/// Cells per axis of the histogram behind the mixture check.
const MIXTURE_GRID: usize = 20;

// ---------------------------------------------------------------------------
// 8. baseline scorers

fn criterion_baselines() -> Outcome {
    let mut failures = Vec::new();
    for k in 2..=20usize {
        let mut one_hot = vec![0.0; k];
        one_hot[k / 2] = 1.0;
        let uniform_row = vec![1.0 / k as f64; k];
        let probs = Tensor::from_rows(&[one_hot, uniform_row]);
        let h = score_entropy(&probs).unwrap();
        let m = score_max_prob(&probs).unwrap();
        if h[0] != 0.0 || m[0] != 0.0 {
            failures.push(format!("one-hot K={k}: entropy {} max-prob {}", h[0], m[0]));
        }
        if h[1] != (k as f64).ln() {
            failures.push(format!(
                "uniform K={k}: entropy {:e} vs ln K {:e}",
                h[1],
                (k as f64).ln()
            ));
        }
        if m[1] != 1.0 - 1.0 / k as f64 {
            failures.push(format!("uniform K={k}: max-prob {}", m[1]));
        }
    }
    let col = |xs: &[f64]| Tensor::new([xs.len(), 1], xs.to_vec()).unwrap();
    let reference = col(&[0.0, 1.0, 10.0]);
    let traces = [(2.0, 1.0), (1.0, 0.0), (20.0, 10.0 / 9.0)];
    for (q, want) in traces {
        let got = score_knn(&col(&[q]), &reference, 1).unwrap()[0];
        if got != want {
            failures.push(format!("knn query {q}: {got} vs {want}"));
        }
    }
    let pass = failures.is_empty();
    Outcome::new(
        pass,
        if pass {
            "one-hot and uniform extremes for K = 2..20, three kNN traces".to_string()
        } else {
            failures.join("; ")
        },
    )
}

// ---------------------------------------------------------------------------
// 7. MNIST holdout (opt-in)

const MNIST_HOLDOUTS: [usize; 3] = [0, 5, 9];
const MNIST_STEPS: usize = 3000;

fn criterion_mnist() -> Status {
    let Some(dir) = std::env::var_os("NDGAN_MNIST_DIR").map(PathBuf::from) else {
        return Status::Skipped("set NDGAN_MNIST_DIR to run".into());
    };
    let t0 = Instant::now();
    let row: Vec<String> = REFERENCE_ND_GAN_HOLDOUT
        .iter()
        .enumerate()
        .map(|(h, a)| format!("{h}:{a}"))
        .collect();
    let means: Vec<String> = REFERENCE_MEANS
        .iter()
        .map(|(k, v)| format!("{k} {v}"))
        .collect();
    println!(
        "    reference full-scale nd-gan AUROC by holdout: {}",
        row.join(" ")
    );
    println!("    reference full-scale means: {}", means.join(", "));
    let load = |images: &str, labels: &str, split| -> Dataset {
        let full =
            ndgan_core::data::read_idx_pair(dir.join(images), dir.join(labels), split).unwrap();
        ndgan_core::data::downscale_images(&full, 28, 14).unwrap()
    };
    let train = load(
        "train-images-idx3-ubyte",
        "train-labels-idx1-ubyte",
        SplitTag::Train,
    );
    let test = load(
        "t10k-images-idx3-ubyte",
        "t10k-labels-idx1-ubyte",
        SplitTag::Test,
    );
    let mut per_split = Vec::new();
    for &h in &MNIST_HOLDOUTS {
        let split = ndgan_core::metrics::make_holdout_split(&train, &test, h, 70).unwrap();
        let arch = GanArchitecture::mnist(196, 9);
        let config = TrainConfig {
            total_steps: MNIST_STEPS,
            labeled_per_class: Some(100),
            seed: 71 + h as u64,
            log_every: 500,
            ..TrainConfig::default()
        };
        let model = GanModel::new(&arch, 72 + h as u64).unwrap();
        let (model, _) = train_gan(model, &split.train, &config).unwrap();
        let sn = score_nd_gan(&model.fake_prob(split.eval_nominal.features()).unwrap());
        let sa = score_nd_gan(&model.fake_prob(split.eval_novel.features()).unwrap());
        let a = auroc(&sn, &sa).unwrap();
        println!(
            "    holdout-{h}: nd-gan AUROC {a:.4} (reference {}; {:.0}s elapsed)",
            REFERENCE_ND_GAN_HOLDOUT[h],
            secs(t0.elapsed())
        );
        per_split.push(a);
    }
    let mean = per_split.iter().sum::<f64>() / per_split.len() as f64;
    let elapsed = t0.elapsed();
    Status::Done(Outcome::new(
        mean >= 0.85 && elapsed <= Duration::from_secs(30 * 60),
        format!(
            "mean nd-gan AUROC {mean:.4} over holdouts {MNIST_HOLDOUTS:?} (reference full-scale mean {}); {:.0}s",
            REFERENCE_MEANS[0].1,
            secs(elapsed)
        ),
    ))
}

// ---------------------------------------------------------------------------

type Criterion = fn() -> Status;

fn done(f: fn() -> Outcome) -> Status {
    Status::Done(f())
}

fn main() -> ExitCode {
    let criteria: [(&str, &str, Criterion); 9] = [
        ("c1", "gradients", || done(criterion_gradients)),
        ("c2", "auroc oracle", || done(criterion_auroc)),
        ("c3", "mixture identity", || {
            done(criterion_mixture_identity)
        }),
        ("c4", "1D likelihood ratio", || done(criterion_lr_1d)),
        ("c5", "discriminator-only training", || {
            done(criterion_discriminator_only)
        }),
        ("c6", "end-to-end 2D", || done(criterion_end_to_end_2d)),
        ("c7", "MNIST holdout", criterion_mnist),
        ("c8", "baseline scorers", || done(criterion_baselines)),
        ("c9", "determinism", || done(criterion_determinism)),
    ];
    let wanted: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !wanted.is_empty() && !wanted.iter().any(|w| w == id) {
            continue;
        }
        match run() {
            Status::Done(o) => {
                println!(
                    "{} {id} {name}: {}",
                    if o.pass { "PASS" } else { "FAIL" },
                    o.detail
                );
                if !o.pass {
                    failed += 1;
                }
            }
            Status::Skipped(why) => println!("SKIP {id} {name}: {why}"),
        }
    }
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

const DETERMINISM_STEPS: usize = 300;

fn train_config_json(out: &std::path::Path) -> String {
    serde_json::json!({
        "seed": 90,
        "output_dir": out,
        "dataset": { "kind": "ring", "n": 2000, "components": 8, "radius": 2.0, "sigma": 0.2 },
        "train": { "total_steps": DETERMINISM_STEPS, "labeled_per_class": 20, "log_every": 50 }
    })
    .to_string()
}

fn criterion_determinism() -> Outcome {
    let run = || -> Result<(Vec<String>, Vec<bool>), ndgan_cli::error::CliError> {
        let tmp = tempfile::tempdir().expect("tempdir");
        let first = tmp.path().join("first");
        let config = tmp.path().join("train.json");
        std::fs::write(&config, train_config_json(&first)).expect("write config");
        let m0 = ndgan_cli::commands::train::run(&Invocation::config(&config))?;
        let manifest = first.join(ndgan_cli::manifest::MANIFEST_FILE);
        let mut hashes = vec![ndgan_cli::io::sha256_file(&first.join(MODEL_FILE))?];
        let mut recorded = vec![m0.outputs.get(MODEL_FILE) == Some(&hashes[0])];
        for name in ["rerun-a", "rerun-b"] {
            let dir = tmp.path().join(name);
            let inv = Invocation::manifest(&manifest)
                .with_override(format!("output_dir={}", serde_json::json!(dir)));
            let m = ndgan_cli::commands::train::run(&inv)?;
            let h = ndgan_cli::io::sha256_file(&dir.join(MODEL_FILE))?;
            recorded.push(m.outputs == m0.outputs && m.config["train"] == m0.config["train"]);
            hashes.push(h);
        }
        Ok((hashes, recorded))
    };
    match run() {
        Ok((hashes, recorded)) => {
            let same = hashes.iter().all(|h| *h == hashes[0]);
            let pass = same && recorded.iter().all(|&r| r);
            Outcome::new(
                pass,
                format!(
                    "model sha256 {} on the original run and two manifest reruns: {}; manifests agree: {}",
                    &hashes[0][..16],
                    if same { "identical" } else { "differ" },
                    recorded.iter().all(|&r| r)
                ),
            )
        }
        Err(e) => Outcome::new(false, format!("run failed: {e}")),
    }
}
