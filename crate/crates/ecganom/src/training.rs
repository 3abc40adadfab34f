//! Losses and the alternating adversarial training loop.
//!
//! Per batch: sample a fresh mask per image (dynamic masking), step the
//! discriminator on real visible patches vs detached reconstructed patches,
//! then step the generator on the weighted sum of reconstruction,
//! adversarial, and contextual losses.

use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::beats::{AamiClass, BeatImage};
use crate::error::{Error, Result};
use crate::model::{
    patchify, sample_wave_mask, Discriminator, Generator, MaskSet, ModelConfig, PatchSeq,
};
use crate::numerics::{AdamWConfig, AdamWState, Gradients, LrSchedule, ParamVars, Tape, Tensor, Var};

/// Probability clamp for the log losses.
pub const PROB_CLAMP: f64 = 1e-7;

/// The loss terms for one generator objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBundle {
    pub l_mae: f64,
    /// Non-saturating generator-side adversarial term, -mean log D(fake).
    pub l_adv_generator: f64,
    pub l_con: f64,
    pub l_total: f64,
    pub gamma_adv: f64,
    pub gamma_con: f64,
}

/// Mean squared error over the masked pixels only.
pub fn loss_mae(original: &PatchSeq, predicted_masked: &Tensor, mask: &MaskSet) -> Result<f64> {
    if mask.masked.is_empty() {
        return Err(Error::Contract("loss_mae needs a non-empty mask".into()));
    }
    let p2 = mask.grid.patch_size * mask.grid.patch_size;
    if predicted_masked.shape() != [mask.masked.len(), p2] {
        return Err(Error::Shape(format!(
            "predicted masked patches have shape {:?}, expected [{}, {}]",
            predicted_masked.shape(),
            mask.masked.len(),
            p2
        )));
    }
    let mut sum = 0.0;
    for (row, &k) in mask.masked.iter().enumerate() {
        for (p, o) in predicted_masked.row(row).iter().zip(original.data.row(k)) {
            let d = p - o;
            sum += d * d;
        }
    }
    Ok(sum / (mask.masked.len() * p2) as f64)
}

/// Discriminator objective: -mean log D(real) - mean log(1 - D(fake)), with
/// probabilities clamped away from 0 and 1.
pub fn loss_adv_discriminator(d_real: &[f64], d_fake: &[f64]) -> f64 {
    let clamp = |p: f64| p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let real: f64 = d_real.iter().map(|&p| clamp(p).ln()).sum::<f64>() / d_real.len() as f64;
    let fake: f64 = d_fake
        .iter()
        .map(|&p| (1.0 - clamp(p)).ln())
        .sum::<f64>()
        / d_fake.len() as f64;
    -(real + fake)
}

/// Non-saturating generator-side adversarial loss: -mean log D(fake).
pub fn loss_adv_generator(d_fake: &[f64]) -> f64 {
    -d_fake
        .iter()
        .map(|&p| p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln())
        .sum::<f64>()
        / d_fake.len() as f64
}

/// Mean absolute pixel difference between the input and its reconstruction.
pub fn loss_con(original: &[f64], reconstructed: &[f64]) -> Result<f64> {
    if original.len() != reconstructed.len() {
        return Err(Error::Shape(format!(
            "loss_con length mismatch: {} vs {}",
            original.len(),
            reconstructed.len()
        )));
    }
    Ok(original
        .iter()
        .zip(reconstructed)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / original.len() as f64)
}

/// Weighted total: l_mae + gamma_adv * l_adv_generator + gamma_con * l_con.
pub fn loss_total(
    l_mae: f64,
    l_adv_generator: f64,
    l_con: f64,
    gamma_adv: f64,
    gamma_con: f64,
) -> LossBundle {
    LossBundle {
        l_mae,
        l_adv_generator,
        l_con,
        l_total: l_mae + gamma_adv * l_adv_generator + gamma_con * l_con,
        gamma_adv,
        gamma_con,
    }
}

fn mean_square_var(diff: &Var) -> Var {
    diff.mul(diff).expect("same shape").mean_all()
}

fn neg_mean_log_var(probs: &Var) -> Var {
    probs
        .clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
        .ln()
        .mean_all()
        .scale(-1.0)
}

/// Build the generator objective on `tape` for one image/mask pair and
/// return the scalar loss node plus the realized loss values.
fn generator_objective(
    tape: &Tape,
    gen: &Generator,
    gen_vars: &ParamVars,
    disc: &Discriminator,
    disc_vars: &ParamVars,
    seq: &PatchSeq,
    mask: &MaskSet,
    gamma_adv: f64,
    gamma_con: f64,
) -> Result<(Var, LossBundle)> {
    if mask.masked.is_empty() {
        return Err(Error::Contract("training mask must be non-empty".into()));
    }
    let out = gen.forward(tape, gen_vars, seq, mask)?;

    let p2 = mask.grid.patch_size * mask.grid.patch_size;
    let mut target = Vec::with_capacity(mask.masked.len() * p2);
    for &k in &mask.masked {
        target.extend_from_slice(seq.data.row(k));
    }
    let target = tape.constant(Tensor::new(vec![mask.masked.len(), p2], target)?);
    let mae = mean_square_var(&out.x_hat_m.sub(&target)?);

    let d_fake = disc.discriminate(tape, disc_vars, &out.x_hat_m, &mask.masked)?;
    let adv = neg_mean_log_var(&d_fake);

    let original = tape.constant(seq.data.clone());
    let con = out.x_tilde.sub(&original)?.abs().mean_all();

    let total = mae
        .add(&adv.scale(gamma_adv))?
        .add(&con.scale(gamma_con))?;
    let bundle = loss_total(
        mae.value().scalar_value()?,
        adv.value().scalar_value()?,
        con.value().scalar_value()?,
        gamma_adv,
        gamma_con,
    );
    Ok((total, bundle))
}

fn collect_grads(grads: &Gradients, vars: &ParamVars) -> IndexMap<String, Tensor> {
    let mut out = IndexMap::new();
    for (name, var) in vars.iter() {
        if let Some(g) = grads.wrt(var) {
            out.insert(name.to_string(), g.clone());
        }
    }
    out
}

/// Full generator objective (reconstruction + adversarial + contextual) for
/// one image, returning the loss values and gradients w.r.t. every
/// generator parameter. Discriminator parameters receive no update here.
pub fn generator_loss_and_grads(
    gen: &Generator,
    disc: &Discriminator,
    seq: &PatchSeq,
    mask: &MaskSet,
    gamma_adv: f64,
    gamma_con: f64,
) -> Result<(LossBundle, IndexMap<String, Tensor>)> {
    let tape = Tape::new();
    let gen_vars = gen.params.leaves(&tape);
    let disc_vars = disc.params.leaves(&tape);
    let (total, bundle) = generator_objective(
        &tape, gen, &gen_vars, disc, &disc_vars, seq, mask, gamma_adv, gamma_con,
    )?;
    let grads = tape.backward(&total)?;
    Ok((bundle, collect_grads(&grads, &gen_vars)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub weight_decay: f64,
    pub mask_ratio: f64,
    pub gamma_adv: f64,
    pub gamma_con: f64,
    pub disc_lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            batch_size: 16,
            base_lr: 2e-3,
            warmup_steps: 20,
            weight_decay: 0.01,
            mask_ratio: 0.3,
            gamma_adv: 0.1,
            gamma_con: 1.0,
            disc_lr: 2e-3,
            seed: 0,
        }
    }
}

/// Per-epoch mean losses and the last generator learning rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub l_mae: f64,
    pub l_adv_discriminator: f64,
    pub l_adv_generator: f64,
    pub l_con: f64,
    pub l_total: f64,
    pub lr: f64,
}

#[derive(Debug)]
pub struct TrainOutput {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub history: Vec<EpochStats>,
}

/// Train generator and discriminator on N-class beat images.
pub fn train(
    train_images: &[BeatImage],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    if train_images.is_empty() {
        return Err(Error::Contract("training set is empty".into()));
    }
    if let Some(bad) = train_images.iter().find(|i| i.aami_class != AamiClass::N) {
        return Err(Error::Contract(format!(
            "training set must be all class N, found {} from record {}",
            bad.aami_class.as_char(),
            bad.record_id
        )));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    if !(0.0 < cfg.mask_ratio && cfg.mask_ratio < 1.0) {
        return Err(Error::Config(format!(
            "training mask_ratio must be in (0,1), got {}",
            cfg.mask_ratio
        )));
    }

    let grid = model_cfg.grid()?;
    let mut gen = Generator::init(model_cfg, cfg.seed)?;
    let mut disc = Discriminator::init(model_cfg, cfg.seed.wrapping_add(1))?;
    let mut gen_opt = AdamWState::new(
        &gen.params,
        AdamWConfig {
            weight_decay: cfg.weight_decay,
            ..Default::default()
        },
    );
    let mut disc_opt = AdamWState::new(
        &disc.params,
        AdamWConfig {
            weight_decay: cfg.weight_decay,
            ..Default::default()
        },
    );

    let seqs: Vec<PatchSeq> = train_images
        .iter()
        .map(|img| patchify(img.pixels(), grid))
        .collect::<Result<_>>()?;

    let steps_per_epoch = seqs.len().div_ceil(cfg.batch_size) as u64;
    let total_steps = (cfg.epochs as u64 * steps_per_epoch).max(cfg.warmup_steps + 1);
    let sched = LrSchedule::new(cfg.base_lr, cfg.warmup_steps, total_steps)?;
    let disc_lr_scale = cfg.disc_lr / cfg.base_lr;

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5u64));
    let mut mask_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x6d61736bu64));

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step: u64 = 0;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..seqs.len()).collect();
        order.shuffle(&mut shuffle_rng);

        let mut sums = [0.0f64; 5];
        let mut n_batches = 0usize;
        let mut last_lr = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            // dynamic masking: a fresh mask per image per epoch
            let masks: Vec<MaskSet> = batch
                .iter()
                .map(|_| sample_wave_mask(grid, cfg.mask_ratio, &mut mask_rng))
                .collect::<Result<_>>()?;

            let lr = sched.lr_at(step.min(total_steps))?;
            last_lr = lr;

            // discriminator step: real visible patches vs detached fakes
            let l_adv_d;
            {
                let tape = Tape::new();
                let disc_vars = disc.params.leaves(&tape);
                let mut per_image = Vec::with_capacity(batch.len());
                for (&idx, mask) in batch.iter().zip(&masks) {
                    let seq = &seqs[idx];
                    let fake_pixels = {
                        // detached forward pass of the current generator
                        let eval_tape = Tape::new();
                        let gen_vars = gen.params.leaves(&eval_tape);
                        gen.forward(&eval_tape, &gen_vars, seq, mask)?.x_hat_m.value()
                    };
                    let visible = mask.visible();
                    let mut real = Vec::with_capacity(visible.len() * fake_pixels.ncols());
                    for &k in &visible {
                        real.extend_from_slice(seq.data.row(k));
                    }
                    let real = tape.constant(Tensor::new(
                        vec![visible.len(), fake_pixels.ncols()],
                        real,
                    )?);
                    let fake = tape.constant(fake_pixels);
                    let d_real = disc.discriminate(&tape, &disc_vars, &real, &visible)?;
                    let d_fake = disc.discriminate(&tape, &disc_vars, &fake, &mask.masked)?;
                    let loss = neg_mean_log_var(&d_real).add(
                        &d_fake
                            .scale(-1.0)
                            .add_const(1.0)
                            .clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
                            .ln()
                            .mean_all()
                            .scale(-1.0),
                    )?;
                    per_image.push(loss);
                }
                let mut batch_loss = per_image[0].clone();
                for l in &per_image[1..] {
                    batch_loss = batch_loss.add(l)?;
                }
                let batch_loss = batch_loss.scale(1.0 / per_image.len() as f64);
                l_adv_d = batch_loss.value().scalar_value()?;
                if !l_adv_d.is_finite() {
                    return Err(Error::Contract("non-finite discriminator loss".into()));
                }
                let grads = tape.backward(&batch_loss)?;
                let dgrads = collect_grads(&grads, &disc_vars);
                disc_opt.step(&mut disc.params, &dgrads, lr * disc_lr_scale)?;
            }

            // generator step against the updated discriminator
            {
                let tape = Tape::new();
                let gen_vars = gen.params.leaves(&tape);
                let disc_vars = disc.params.leaves(&tape);
                let mut totals = Vec::with_capacity(batch.len());
                let mut bundle_sum = [0.0f64; 4];
                for (&idx, mask) in batch.iter().zip(&masks) {
                    let (total, bundle) = generator_objective(
                        &tape,
                        &gen,
                        &gen_vars,
                        &disc,
                        &disc_vars,
                        &seqs[idx],
                        mask,
                        cfg.gamma_adv,
                        cfg.gamma_con,
                    )?;
                    bundle_sum[0] += bundle.l_mae;
                    bundle_sum[1] += bundle.l_adv_generator;
                    bundle_sum[2] += bundle.l_con;
                    bundle_sum[3] += bundle.l_total;
                    totals.push(total);
                }
                let mut batch_loss = totals[0].clone();
                for l in &totals[1..] {
                    batch_loss = batch_loss.add(l)?;
                }
                let batch_loss = batch_loss.scale(1.0 / totals.len() as f64);
                if !batch_loss.value().scalar_value()?.is_finite() {
                    return Err(Error::Contract("non-finite generator loss".into()));
                }
                let grads = tape.backward(&batch_loss)?;
                let ggrads = collect_grads(&grads, &gen_vars);
                gen_opt.step(&mut gen.params, &ggrads, lr)?;

                let n = totals.len() as f64;
                sums[0] += bundle_sum[0] / n;
                sums[1] += l_adv_d;
                sums[2] += bundle_sum[1] / n;
                sums[3] += bundle_sum[2] / n;
                sums[4] += bundle_sum[3] / n;
            }

            n_batches += 1;
            step += 1;
        }

        if !gen.params.all_finite() || !disc.params.all_finite() {
            return Err(Error::Contract(format!(
                "non-finite parameters after epoch {epoch}"
            )));
        }
        let nb = n_batches as f64;
        history.push(EpochStats {
            epoch,
            l_mae: sums[0] / nb,
            l_adv_discriminator: sums[1] / nb,
            l_adv_generator: sums[2] / nb,
            l_con: sums[3] / nb,
            l_total: sums[4] / nb,
            lr: last_lr,
        });
    }

    Ok(TrainOutput {
        generator: gen,
        discriminator: disc,
        history,
    })
}

/// Loss history CSV: epoch, l_mae, l_adv_d, l_adv_g, l_con, l_total, lr.
pub fn write_loss_history(path: &Path, history: &[EpochStats]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "epoch,l_mae,l_adv_d,l_adv_g,l_con,l_total,lr")?;
    for s in history {
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            s.epoch, s.l_mae, s.l_adv_discriminator, s.l_adv_generator, s.l_con, s.l_total, s.lr
        )?;
    }
    Ok(())
}
