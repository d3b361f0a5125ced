use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Checkpoint, Vae, VaeConfig};
use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamConfig, AdamState, Mode, Tensor};
use crate::scalar::Scalar;

/// Training and validation images, each stacked as `(N, C, H, W)`.
#[derive(Debug, Clone)]
pub struct TrainData<T> {
    pub train: Tensor<T>,
    pub val: Tensor<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_recon: f64,
}

/// Copies `src` into `dst`, mirroring rows and/or columns of every channel.
pub fn flip_into<T: Copy>(
    src: &[T],
    dst: &mut [T],
    [c, h, w]: [usize; 3],
    horizontal: bool,
    vertical: bool,
) {
    for ci in 0..c {
        for y in 0..h {
            let sy = if vertical { h - 1 - y } else { y };
            for x in 0..w {
                let sx = if horizontal { w - 1 - x } else { x };
                dst[(ci * h + y) * w + x] = src[(ci * h + sy) * w + sx];
            }
        }
    }
}

/// Splits `0..n` into shuffled-order batches, folding a trailing single item
/// into the previous batch so batchnorm always sees at least two.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().map(|b| b.len()) == Some(1) {
        out.pop();
        let start = order.len() - out.last().map(|b| b.len()).unwrap_or(0) - 1;
        *out.last_mut().expect("at least one batch") = &order[start..];
    }
    out
}

/// Mean negative ELBO over `images` in eval mode, with noise from a fixed
/// seed so epochs are comparable.
pub fn evaluate<T: Scalar>(
    model: &mut Vae<T>,
    images: &Tensor<T>,
    batch_size: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = images.batch();
    let (mut total, mut recon) = (0.0, 0.0);
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let items: Vec<Tensor<T>> = chunk.iter().map(|&i| images.select(i)).collect();
        let refs: Vec<&Tensor<T>> = items.iter().collect();
        let batch = Tensor::stack(&refs)?;
        let terms = model.elbo_loss(&batch, &mut rng, Mode::Eval)?;
        total += terms.total * chunk.len() as f64;
        recon += terms.recon * chunk.len() as f64;
    }
    Ok((total / n as f64, recon / n as f64))
}

/// Fits a VAE by minimizing the negative ELBO with Adam.
///
/// Each epoch reshuffles the training set and flips every sample
/// horizontally and vertically with independent probability 1/2. Training
/// stops after `patience` epochs without a validation improvement, and the
/// returned checkpoint holds the best-validation weights.
pub fn train<T: Scalar>(data: &TrainData<T>, config: &VaeConfig) -> Result<Checkpoint<T>> {
    train_with(data, config, |_| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with<T: Scalar>(
    data: &TrainData<T>,
    config: &VaeConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Checkpoint<T>> {
    config.validate()?;
    if data.train.batch() < 2 {
        return Err(Error::Empty("training set needs at least two images"));
    }
    if data.val.batch() == 0 {
        return Err(Error::Empty("validation set"));
    }
    let mut model = Vae::<T>::new(config.clone())?;
    let item_shape = config.input_shape;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let adam_cfg = AdamConfig {
        lr: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(adam_cfg, &model.params());
    let val_seed = config.seed.wrapping_add(0x7a1d);

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Vec<Vec<T>>)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..data.train.batch()).collect();
    let item_len = data.train.item_len();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for idx in batches(&order, config.batch_size) {
            let mut batch = Tensor::zeros([idx.len(), item_shape[0], item_shape[1], item_shape[2]]);
            for (slot, &i) in idx.iter().enumerate() {
                let (hf, vf) = (rng.random_bool(0.5), rng.random_bool(0.5));
                flip_into(
                    data.train.item(i),
                    &mut batch.data_mut()[slot * item_len..(slot + 1) * item_len],
                    item_shape,
                    hf,
                    vf,
                );
            }
            model.zero_grad();
            let terms = model.forward(&batch, &mut rng, Mode::Train)?;
            model.backward()?;
            adam_step(&mut model.params_mut(), &mut adam)?;
            epoch_loss += terms.total * idx.len() as f64;
        }
        let (val_loss, val_recon) = evaluate(&mut model, &data.val, config.batch_size, val_seed)?;
        let record = EpochRecord {
            epoch,
            train_loss: epoch_loss / order.len() as f64,
            val_loss,
            val_recon,
        };
        log::info!(
            "epoch {epoch}: train {:.4} val {:.4} (recon {:.4})",
            record.train_loss,
            record.val_loss,
            record.val_recon
        );
        on_epoch(&record);
        history.push(record);

        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            let snapshot = model.tensors().iter().map(|p| p.value.clone()).collect();
            best = Some((val_loss, epoch, snapshot));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }

    let (_, best_epoch, snapshot) = best.expect("at least one epoch ran");
    for (p, v) in model.tensors_mut().into_iter().zip(snapshot) {
        p.value = v;
    }
    Ok(Checkpoint::from_model(&model, history, best_epoch))
}
