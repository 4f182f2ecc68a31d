use rand::RngCore;

use super::{floor_probs_on_tape, GanModel};
use crate::nn::{AttachedMlp, Mode};
use crate::tensor::{Tape, Tensor, Var};
use crate::{Error, Result};

fn check_labels(labels: &[usize], k: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= k) {
        Some(&label) => Err(Error::LabelOutOfRange {
            label,
            num_classes: k,
        }),
        None => Ok(()),
    }
}

fn neg_mean(tape: &mut Tape, x: Var) -> Result<Var> {
    let m = tape.mean(x)?;
    Ok(tape.affine(m, -1.0, 0.0)?)
}

/// `log D` per row from floored probabilities.
fn log_d(tape: &mut Tape, p: Var, k: usize) -> Result<Var> {
    let real = tape.slice_cols(p, 0, k)?;
    let d = tape.sum_cols(real)?;
    Ok(tape.log(d)?)
}

/// `log(1 - D)` per row, i.e. the log of the fake-class probability.
fn log_one_minus_d(tape: &mut Tape, p: Var, k: usize) -> Result<Var> {
    let fake = tape.slice_cols(p, k, k + 1)?;
    Ok(tape.log(fake)?)
}

/// Discriminator objective in minimized form, from logit nodes:
/// labeled cross-entropy, minus mean `log D` over unlabeled reals, minus
/// mean `log(1 - D)` over fakes. An empty batch contributes nothing.
pub fn d_loss_on_tape(
    tape: &mut Tape,
    k: usize,
    labeled: Option<(Var, &[usize])>,
    unlabeled: Option<Var>,
    fake: Option<Var>,
) -> Result<Var> {
    let mut terms = Vec::new();
    if let Some((logits, labels)) = labeled {
        check_labels(labels, k)?;
        if !labels.is_empty() {
            let p = floor_probs_on_tape(tape, logits)?;
            let picked = tape.gather(p, labels.to_vec())?;
            let lp = tape.log(picked)?;
            terms.push(neg_mean(tape, lp)?);
        }
    }
    if let Some(u) = unlabeled.filter(|&u| tape.value(u).is_ok_and(|t| t.rows() > 0)) {
        let p = floor_probs_on_tape(tape, u)?;
        let l = log_d(tape, p, k)?;
        terms.push(neg_mean(tape, l)?);
    }
    if let Some(f) = fake.filter(|&f| tape.value(f).is_ok_and(|t| t.rows() > 0)) {
        let p = floor_probs_on_tape(tape, f)?;
        let l = log_one_minus_d(tape, p, k)?;
        terms.push(neg_mean(tape, l)?);
    }
    let Some(mut acc) = terms.first().copied() else {
        return Err(Error::invalid(
            "discriminator loss needs at least one non-empty batch",
        ));
    };
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}

/// Mean `log(1 - D(G(z)))` from the logits of generated samples.
pub fn g_standard_on_tape(tape: &mut Tape, k: usize, fake_logits: Var) -> Result<Var> {
    let p = floor_probs_on_tape(tape, fake_logits)?;
    let l = log_one_minus_d(tape, p, k)?;
    Ok(tape.mean(l)?)
}

/// `|| mean f(real) - mean f(fake) ||^2`.
pub fn fm_on_tape(tape: &mut Tape, real_features: Var, fake_features: Var) -> Result<Var> {
    let a = tape.mean_rows(real_features)?;
    let b = tape.mean_rows(fake_features)?;
    let diff = tape.sub(a, b)?;
    Ok(tape.l2_norm_sq(diff)?)
}

pub fn forward_logits(
    tape: &mut Tape,
    net: &AttachedMlp,
    x: &Tensor,
    mode: Mode,
    rng: Option<&mut dyn RngCore>,
) -> Result<(Var, Vec<Var>)> {
    let xv = tape.constant(x.clone());
    let out = net.forward(tape, xv, mode, rng)?;
    Ok((out.output, out.hidden))
}

/// Discriminator loss evaluated directly on logits.
pub fn discriminator_loss_from_logits(
    labeled: Option<(&Tensor, &[usize])>,
    unlabeled: &Tensor,
    fake: &Tensor,
    num_classes: usize,
) -> Result<f64> {
    let mut tape = Tape::new();
    let l = labeled.map(|(t, y)| (tape.constant(t.clone()), y));
    let u = tape.constant(unlabeled.clone());
    let f = tape.constant(fake.clone());
    let loss = d_loss_on_tape(&mut tape, num_classes, l, Some(u), Some(f))?;
    Ok(tape.value(loss)?.item())
}

pub fn generator_loss_standard_from_logits(fake: &Tensor, num_classes: usize) -> Result<f64> {
    let mut tape = Tape::new();
    let f = tape.constant(fake.clone());
    let loss = g_standard_on_tape(&mut tape, num_classes, f)?;
    Ok(tape.value(loss)?.item())
}

/// Discriminator loss of `model` in eval mode.
pub fn discriminator_loss(
    model: &GanModel,
    labeled: Option<(&Tensor, &[usize])>,
    unlabeled: &Tensor,
    fake: &Tensor,
) -> Result<f64> {
    let logits = |x: &Tensor| model.discriminator_logits(x);
    let l = match labeled {
        Some((x, y)) => Some((logits(x)?, y)),
        None => None,
    };
    discriminator_loss_from_logits(
        l.as_ref().map(|(t, y)| (t, *y)),
        &logits(unlabeled)?,
        &logits(fake)?,
        model.num_classes(),
    )
}

/// Mean `log(1 - D(G(z)))` for latent batch `z`.
pub fn generator_loss_standard(model: &GanModel, z: &Tensor) -> Result<f64> {
    let fake = model.generate(z)?;
    generator_loss_standard_from_logits(&model.discriminator_logits(&fake)?, model.num_classes())
}

/// Feature-matching loss between a real batch and `G(z)`, in eval mode.
pub fn generator_loss_feature_matching(model: &GanModel, real: &Tensor, z: &Tensor) -> Result<f64> {
    let fake = model.generate(z)?;
    feature_matching_distance(model, real, &fake)
}

/// `|| mean f(real) - mean f(fake) ||^2` on the feature layer, in eval mode.
pub fn feature_matching_distance(model: &GanModel, real: &Tensor, fake: &Tensor) -> Result<f64> {
    let fr = model.discriminator_features(real)?;
    let ff = model.discriminator_features(fake)?;
    let mut tape = Tape::new();
    let a = tape.constant(fr);
    let b = tape.constant(ff);
    let loss = fm_on_tape(&mut tape, a, b)?;
    Ok(tape.value(loss)?.item())
}
