use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelSpec, Network, TrainedModel, TrainingMeta};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::top1_accuracy;
use crate::tensor::{Sgd, SgdConfig, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub sgd: SgdConfig,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            sgd: SgdConfig::default(),
            epochs: 20,
            batch_size: 32,
        }
    }
}

impl Network {
    /// Records layers `range` on `tape`, with every parameter as a leaf.
    pub fn record(
        &self,
        tape: &mut Tape,
        x: Var,
        range: std::ops::Range<usize>,
    ) -> Result<(Var, Vec<Option<(Var, Var)>>)> {
        let mut a = x;
        let mut leaves = vec![None; self.spec.layers.len()];
        for i in range {
            let pv = self.params[i]
                .as_ref()
                .map(|p| (tape.leaf(p.weight.clone()), tape.leaf(p.bias.clone())));
            leaves[i] = pv;
            a = tape.layer(&self.spec.layers[i], pv, a)?;
        }
        Ok((a, leaves))
    }

    /// Mean cross-entropy on `(x, labels)` and its parameter gradients, in
    /// [`Network::parametric_layers`] order (weight then bias).
    pub fn loss_and_grads(&self, x: &Tensor, labels: &[usize]) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let (logits, leaves) = self.record(&mut tape, xv, 0..self.spec.layers.len())?;
        let loss = tape.softmax_cross_entropy(logits, labels)?;
        let mut grads = tape.backward(loss)?;
        let mut out = Vec::new();
        for (w, b) in leaves.into_iter().flatten() {
            for v in [w, b] {
                let g = grads
                    .take(v)
                    .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()));
                out.push(g);
            }
        }
        Ok((tape.value(loss).data()[0], out))
    }

    pub(crate) fn param_names(&self) -> Vec<String> {
        self.parametric_layers()
            .flat_map(|(i, _)| [format!("layer{i}.weight"), format!("layer{i}.bias")])
            .collect()
    }

    pub(crate) fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.params
            .iter_mut()
            .flatten()
            .flat_map(|p| [&mut p.weight, &mut p.bias])
            .collect()
    }
}

/// Mini-batch SGD on softmax cross-entropy. Deterministic in `config.sgd.seed`
/// (initialization and shuffling). When `test` is given, the final top-1
/// accuracy on it is recorded.
pub fn train_model(
    spec: &ModelSpec,
    train: &Dataset,
    test: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<TrainedModel> {
    if train.num_classes > spec.num_classes {
        return Err(Error::InvalidArgument(format!(
            "dataset has {} classes, model only {}",
            train.num_classes, spec.num_classes
        )));
    }
    if train.image_shape() != spec.input_shape {
        return Err(Error::shape(
            "training images",
            &spec.input_shape,
            &train.image_shape(),
        ));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut network = spec.init(config.sgd.seed)?;
    let mut opt = Sgd::new(config.sgd)?;
    let names = network.param_names();
    let mut rng = ChaCha8Rng::seed_from_u64(config.sgd.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let x = train.images.select_batch(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let (loss, grads) = network.loss_and_grads(&x, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            total += loss * chunk.len() as f64;
            let grad_refs: Vec<&Tensor> = grads.iter().collect();
            let mut params = network.param_tensors_mut();
            opt.step(&mut params, &grad_refs, &names)?;
        }
        epoch_losses.push(total / train.len() as f64);
    }

    let final_accuracy = match test {
        Some(t) => Some(top1_accuracy(&network.forward(&t.images)?, &t.labels)?),
        None => None,
    };
    Ok(TrainedModel {
        network,
        meta: TrainingMeta {
            seed: config.sgd.seed,
            epochs: config.epochs,
            batch_size: config.batch_size,
            learning_rate: config.sgd.learning_rate,
            momentum: config.sgd.momentum,
            epoch_losses,
            final_accuracy,
        },
    })
}
