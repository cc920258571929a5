//! The training loop.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{derive_seed, Checkpoint, FoldRole, HarnessError, TrainConfig};
use crate::arch::{build, ForwardMode, Network};
use crate::data::{load_manifest, AugmentedSet};
use crate::diffcore::{AdamState, Array, Tape};

pub struct TrainOutcome {
    pub loss_log: PathBuf,
    pub checkpoint: PathBuf,
    pub iterations: u64,
    pub final_loss: f64,
}

/// Train per the config, writing `loss_log.csv`, periodic checkpoints and
/// the final `checkpoint.ckpt` into `out_dir`. Fully determined by
/// (seed, config, data): the loss log, checkpoint bytes and any
/// descriptors extracted later are bit-reproducible.
pub fn train(config: &TrainConfig, out_dir: impl AsRef<Path>) -> Result<TrainOutcome, HarnessError> {
    config.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let phoc = config.phoc_config()?;

    let mut samples = load_manifest(&config.data.train_manifest)?;
    if let Some(fold) = config.data.gw_fold {
        samples = super::select_fold(samples, fold, FoldRole::Train)?;
    }
    if samples.is_empty() {
        return Err(HarnessError::DataUnavailable(format!(
            "no training samples in {}",
            config.data.train_manifest.display()
        )));
    }
    let sources: Vec<(String, crate::data::GrayImage)> = samples
        .iter()
        .map(|s| (phoc.normalize(&s.transcription), s.image.clone()))
        .collect();
    let augmented = AugmentedSet::new(sources, config.augmentation_plan())?;

    // one PHOC target per class
    let targets: HashMap<String, Vec<f64>> = augmented
        .labels()
        .map(|label| Ok((label.to_string(), phoc.encode(label)?.to_f64())))
        .collect::<Result<_, HarnessError>>()?;

    let graph = build(config.arch_kind()?, phoc.dim());
    let mut network = Network::init(&graph, config.seed)?;
    let shapes: Vec<&[usize]> = network.params().iter().map(|p| p.value.shape()).collect();
    let mut adam = AdamState::new(config.learning_rate, &shapes);

    let log_path = out_dir.join("loss_log.csv");
    let mut log = std::io::BufWriter::new(std::fs::File::create(&log_path)?);
    writeln!(log, "iteration,learning_rate,loss")?;

    let checkpoint_path = out_dir.join("checkpoint.ckpt");
    let mut sampler = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 1, 0, 0));
    let batch = config.batch_size;
    let mut final_loss = f64::NAN;

    for iteration in 0..config.total_iterations {
        let lr = if iteration >= config.lr_step {
            config.learning_rate / 10.0
        } else {
            config.learning_rate
        };
        adam.learning_rate = lr;

        // sample indices are drawn sequentially; the per-sample work is
        // order-free and reduced in slot order below
        let picks: Vec<(usize, u64)> = (0..batch)
            .map(|slot| {
                (
                    sampler.gen_range(0..augmented.len()),
                    derive_seed(config.seed, 2, iteration, slot as u64),
                )
            })
            .collect();
        let per_sample: Vec<Result<(f64, Vec<Array>), HarnessError>> = picks
            .par_iter()
            .map(|&(index, dropout_seed)| {
                let (image, label) = augmented.get(index);
                let target = &targets[label];
                let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
                let mut tape = Tape::new();
                let (output, param_ids) =
                    network.forward(&mut tape, image, ForwardMode::Train { rng: &mut rng })?;
                let loss = tape.bce_loss(output, target)?;
                tape.backward(loss)?;
                let grads: Vec<Array> = param_ids.iter().map(|&id| tape.grad(id).clone()).collect();
                Ok((tape.value(loss).item(), grads))
            })
            .collect();

        let mut mean_loss = 0.0;
        let mut grad_acc: Vec<Array> = network
            .params()
            .iter()
            .map(|p| Array::zeros(p.value.shape()))
            .collect();
        for result in per_sample {
            let (loss, grads) = result?;
            mean_loss += loss;
            for (acc, g) in grad_acc.iter_mut().zip(&grads) {
                acc.add_assign(g);
            }
        }
        mean_loss /= batch as f64;
        let scale = 1.0 / batch as f64;
        for acc in &mut grad_acc {
            acc.scale_assign(scale);
        }

        if !mean_loss.is_finite() {
            return Err(HarnessError::DivergedLoss { iteration });
        }

        network.apply_adam(&mut adam, &grad_acc)?;
        writeln!(log, "{iteration},{lr},{mean_loss}")?;
        final_loss = mean_loss;

        if let Some(period) = config.checkpoint_period {
            let done = iteration + 1;
            if period > 0 && done % period == 0 && done != config.total_iterations {
                Checkpoint::from_network(&network, &adam, done)
                    .save(out_dir.join(format!("checkpoint_{done:07}.ckpt")))?;
            }
        }
    }
    log.flush()?;

    Checkpoint::from_network(&network, &adam, config.total_iterations).save(&checkpoint_path)?;
    Ok(TrainOutcome {
        loss_log: log_path,
        checkpoint: checkpoint_path,
        iterations: config.total_iterations,
        final_loss,
    })
}
