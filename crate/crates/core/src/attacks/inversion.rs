use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::partition::{partition_subblocks, SubBlock};
use super::{AttackConfig, Optimizer};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::add_uniform_noise;
use crate::model::{EvalPoint, Network};
use crate::tensor::{
    init_params, Adam, AdamConfig, Layer, LayerParams, Sgd, SgdConfig, Tape, Tensor, Var,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InversionMode {
    Eina,
    Dina,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum InvOp {
    Layer {
        layer: Layer,
    },
    /// Remembers the current value for a later [`InvOp::AddSaved`].
    Save,
    AddSaved,
    Reshape {
        shape: Vec<usize>,
    },
}

/// Inverts one sub-block: a residual block at the sub-block's output
/// shape, then (for spatial outputs) an optional nearest upsample and a
/// dilated 3x3 convolution down to the sub-block's input channels. Flat
/// outputs use dense layers instead.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InverseBlock {
    /// Index of the inverted sub-block.
    pub inverts: usize,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    pub ops: Vec<InvOp>,
}

impl InverseBlock {
    fn for_subblock(idx: usize, sb: &SubBlock) -> Result<Self> {
        let (from, to) = (&sb.out_shape, &sb.in_shape);
        let layer = |l: Layer| InvOp::Layer { layer: l };
        let mut ops = vec![InvOp::Save];
        match (from.len(), to.len()) {
            (3, 3) => {
                let c = from[0];
                ops.extend([
                    layer(Layer::conv(c, 3, 1, 1, 1)),
                    layer(Layer::Relu),
                    layer(Layer::conv(c, 3, 1, 1, 1)),
                    InvOp::AddSaved,
                    layer(Layer::Relu),
                ]);
                if from[1..] != to[1..] {
                    let factor = to[1] / from[1].max(1);
                    if factor < 2 || from[1] * factor != to[1] || from[2] * factor != to[2] {
                        return Err(Error::InvalidModel(format!(
                            "sub-block {idx} maps {to:?} to {from:?}; only integer downsampling can be inverted"
                        )));
                    }
                    ops.push(layer(Layer::UpsampleNearest { factor }));
                }
                ops.push(layer(Layer::conv(to[0], 3, 1, 2, 2)));
            }
            (1, _) => {
                let n = from[0];
                ops.extend([
                    layer(Layer::dense(n)),
                    layer(Layer::Relu),
                    layer(Layer::dense(n)),
                    InvOp::AddSaved,
                    layer(Layer::Relu),
                    layer(Layer::dense(to.iter().product())),
                ]);
                if to.len() != 1 {
                    ops.push(InvOp::Reshape { shape: to.clone() });
                }
            }
            _ => {
                return Err(Error::InvalidModel(format!(
                    "sub-block {idx}: cannot invert {to:?} -> {from:?}"
                )));
            }
        }
        Ok(InverseBlock {
            inverts: idx,
            in_shape: from.clone(),
            out_shape: to.clone(),
            ops,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InversionModelSpec {
    pub mode: InversionMode,
    pub point: EvalPoint,
    /// In application order: `blocks[0]` inverts the last sub-block and
    /// the final block produces an image.
    pub blocks: Vec<InverseBlock>,
    pub subblocks: Vec<std::ops::Range<usize>>,
}

impl InversionModelSpec {
    pub fn build(network: &Network, point: EvalPoint, mode: InversionMode) -> Result<Self> {
        let subs = partition_subblocks(&network.spec, point)?;
        let blocks = subs
            .iter()
            .enumerate()
            .rev()
            .map(|(i, sb)| InverseBlock::for_subblock(i, sb))
            .collect::<Result<_>>()?;
        Ok(InversionModelSpec {
            mode,
            point,
            blocks,
            subblocks: subs.into_iter().map(|s| s.layers).collect(),
        })
    }

    /// Number of distillation points (seams between sub-blocks).
    pub fn seams(&self) -> usize {
        self.blocks.len() - 1
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.blocks[0].in_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.blocks.last().unwrap().out_shape
    }

    pub fn init(&self, seed: u64) -> Result<InversionNetwork> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for b in &self.blocks {
            let mut shape = b.in_shape.clone();
            let mut ps = Vec::new();
            for op in &b.ops {
                match op {
                    InvOp::Layer { layer } => {
                        ps.push(init_params(layer, &shape, &mut rng));
                        shape = layer.output_shape(&shape)?;
                    }
                    InvOp::Reshape { shape: s } => {
                        ps.push(None);
                        shape = s.clone();
                    }
                    InvOp::Save | InvOp::AddSaved => ps.push(None),
                }
            }
            if shape != b.out_shape {
                return Err(Error::shape("inverse block output", &b.out_shape, &shape));
            }
            params.push(ps);
        }
        Ok(InversionNetwork {
            spec: self.clone(),
            params,
        })
    }
}

/// An inversion model `M*` with parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InversionNetwork {
    pub spec: InversionModelSpec,
    pub params: Vec<Vec<Option<LayerParams>>>,
}

/// A recorded forward pass: output, the input of every block (in
/// application order) and the parameter leaves.
pub struct Recorded {
    pub output: Var,
    pub block_inputs: Vec<Var>,
    pub leaves: Vec<(Var, Var)>,
}

impl InversionNetwork {
    /// Reconstruction from activations at the attacked point; also returns
    /// each block's input.
    pub fn forward_all(&self, a: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let mut x = a.clone();
        let mut inputs = Vec::new();
        for (b, ps) in self.spec.blocks.iter().zip(&self.params) {
            if x.sample_shape() != b.in_shape.as_slice() {
                return Err(Error::shape(
                    &format!("inverse block for sub-block {}", b.inverts),
                    &b.in_shape,
                    x.sample_shape(),
                ));
            }
            inputs.push(x.clone());
            let mut saved = None;
            for (op, p) in b.ops.iter().zip(ps) {
                x = match op {
                    InvOp::Layer { layer } => layer.forward(p.as_ref(), &x)?,
                    InvOp::Save => {
                        saved = Some(x.clone());
                        x
                    }
                    InvOp::AddSaved => x.add(saved.as_ref().expect("save precedes add"))?,
                    InvOp::Reshape { shape } => {
                        let mut s = vec![x.batch()];
                        s.extend(shape);
                        x.reshape(&s)?
                    }
                };
            }
        }
        Ok((x, inputs))
    }

    pub fn forward(&self, a: &Tensor) -> Result<Tensor> {
        Ok(self.forward_all(a)?.0)
    }

    pub fn record(&self, tape: &mut Tape, a: Var) -> Result<Recorded> {
        let mut x = a;
        let mut block_inputs = Vec::new();
        let mut leaves = Vec::new();
        for (b, ps) in self.spec.blocks.iter().zip(&self.params) {
            block_inputs.push(x);
            let mut saved = None;
            for (op, p) in b.ops.iter().zip(ps) {
                x = match op {
                    InvOp::Layer { layer } => {
                        let pv = p
                            .as_ref()
                            .map(|p| (tape.leaf(p.weight.clone()), tape.leaf(p.bias.clone())));
                        leaves.extend(pv);
                        tape.layer(layer, pv, x)?
                    }
                    InvOp::Save => {
                        saved = Some(x);
                        x
                    }
                    InvOp::AddSaved => tape.add(x, saved.expect("save precedes add"))?,
                    InvOp::Reshape { shape } => tape.reshape(x, shape)?,
                };
            }
        }
        Ok(Recorded {
            output: x,
            block_inputs,
            leaves,
        })
    }

    fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.params
            .iter_mut()
            .flatten()
            .flatten()
            .flat_map(|p| [&mut p.weight, &mut p.bias])
            .collect()
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (bi, ps) in self.params.iter().enumerate() {
            for (oi, p) in ps.iter().enumerate() {
                if p.is_some() {
                    names.push(format!("block{bi}.op{oi}.weight"));
                    names.push(format!("block{bi}.op{oi}.bias"));
                }
            }
        }
        names
    }
}

/// What the attacker's own forward pass yields for one batch: the
/// (possibly noised) activation at the attacked point and the clean
/// activations at the seams, deepest first to match the block order.
pub(crate) struct Targets {
    pub attacked: Tensor,
    pub seams: Vec<Tensor>,
}

pub(crate) fn targets(
    network: &Network,
    spec: &InversionModelSpec,
    x: &Tensor,
    lambda: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Targets> {
    let mut a = x.clone();
    let mut seams = Vec::new();
    for (k, r) in spec.subblocks.iter().enumerate() {
        a = network.forward_layers(&a, r.clone())?;
        if k + 1 < spec.subblocks.len() {
            seams.push(a.clone());
        }
    }
    seams.reverse();
    Ok(Targets {
        attacked: add_uniform_noise(&a, lambda, rng),
        seams,
    })
}

enum Opt {
    Adam(Adam),
    Sgd(Sgd),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedInversion {
    pub network: InversionNetwork,
    pub epoch_losses: Vec<f64>,
}

/// Trains `M*` on the attacker's dataset: inputs are the model's own
/// activations at `point` (noised with `config.lambda`), targets are the
/// images. DINA adds the distillation terms at every seam.
pub fn train_inversion(
    network: &Network,
    point: EvalPoint,
    data: &Dataset,
    config: &AttackConfig,
    mode: InversionMode,
) -> Result<TrainedInversion> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument(
            "inversion training needs a non-empty dataset".into(),
        ));
    }
    let spec = InversionModelSpec::build(network, point, mode)?;
    let mut inv = spec.init(config.seed)?;
    let n_seams = match mode {
        InversionMode::Eina => 0,
        InversionMode::Dina => spec.seams(),
    };
    let alphas = config.coefficients(n_seams)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x696e_7631);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6e6f_6973);
    let mut opt = match config.optimizer {
        Optimizer::Adam => Opt::Adam(Adam::new(AdamConfig {
            learning_rate: config.lr,
            ..AdamConfig::default()
        })?),
        Optimizer::Sgd { momentum } => Opt::Sgd(Sgd::new(SgdConfig {
            learning_rate: config.lr,
            momentum,
            seed: config.seed,
        })?),
    };
    let names = inv.param_names();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for rows in order.chunks(config.batch_size) {
            let x = data.images.select_batch(rows);
            let t = targets(network, &spec, &x, config.lambda, &mut noise_rng)?;
            let mut tape = Tape::new();
            let av = tape.leaf(t.attacked);
            let rec = inv.record(&mut tape, av)?;
            let xv = tape.leaf(x);
            let scale = 1.0 / rows.len() as f64;
            let mut terms = vec![(tape.squared_distance(rec.output, xv)?, alphas[0] * scale)];
            for (j, d) in t.seams.into_iter().enumerate().take(n_seams) {
                // block j + 1 consumes the seam produced by sub-block K - 1 - j
                let dv = tape.leaf(d);
                let alpha = alphas[n_seams - j];
                terms.push((
                    tape.squared_distance(rec.block_inputs[j + 1], dv)?,
                    alpha * scale,
                ));
            }
            let loss = tape.weighted_sum(&terms)?;
            let lv = tape.value(loss).data()[0];
            if !lv.is_finite() {
                return Err(Error::Diverged { epoch, loss: lv });
            }
            total += lv * rows.len() as f64;
            let mut grads = tape.backward(loss)?;
            let gs: Vec<Tensor> = rec
                .leaves
                .iter()
                .flat_map(|&(w, b)| [w, b])
                .map(|v| {
                    grads
                        .take(v)
                        .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
                })
                .collect();
            let grefs: Vec<&Tensor> = gs.iter().collect();
            let params = &mut inv.param_tensors_mut();
            match &mut opt {
                Opt::Adam(a) => a.step(params, &grefs, &names),
                Opt::Sgd(s) => s.step(params, &grefs, &names),
            }
            .map_err(|e| match e {
                Error::NonFiniteGradient(_) => Error::Diverged { epoch, loss: lv },
                e => e,
            })?;
        }
        epoch_losses.push(total / data.len() as f64);
    }
    Ok(TrainedInversion {
        network: inv,
        epoch_losses,
    })
}
