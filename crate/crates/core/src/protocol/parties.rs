use std::num::Wrapping;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::link::Endpoint;
use super::schedule::{schedule, CryptoArchMeta, Step, StepKind};
use super::transcript::{Phase, Role};
use super::wire::{decode_ring, decode_shaped, encode_ring, encode_shaped, MsgType};
use super::{MaskMode, RevealResult, SessionConfig};
use crate::error::{Error, Result};
use crate::fixed::{beaver_combine, ring_conv_dense, Dealer, FixedCfg, Ring, RingTensor};
use crate::model::Network;
use crate::tensor::{ops, Layer, Tensor};

#[derive(Serialize, Deserialize)]
struct Hello {
    protocol: u8,
    batch: usize,
    mask_seed: u64,
}

/// Where the client's one-time pads come from. In pinned mode each pad is
/// chosen so that the value put on the wire is the next element of a fixed
/// stream, independent of the secret.
pub(crate) enum MaskSource {
    Random(ChaCha8Rng),
    Pinned(ChaCha8Rng),
}

impl MaskSource {
    pub fn new(mode: MaskMode, seed: u64) -> Self {
        match mode {
            MaskMode::Random => MaskSource::Random(ChaCha8Rng::seed_from_u64(seed)),
            MaskMode::Pinned { seed } => MaskSource::Pinned(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    fn fresh(&mut self, shape: &[usize]) -> RingTensor {
        match self {
            MaskSource::Random(r) | MaskSource::Pinned(r) => RingTensor::random(shape, r),
        }
    }

    /// A pad `p` for `share`; the wire will carry `share - p`.
    fn pad(&mut self, share: &RingTensor) -> RingTensor {
        match self {
            MaskSource::Random(r) => RingTensor::random(&share.shape, r),
            MaskSource::Pinned(r) => share
                .sub(&RingTensor::random(&share.shape, r))
                .expect("same shape"),
        }
    }
}

fn seq(a: &[Vec<usize>]) -> Vec<&[usize]> {
    a.iter().map(|v| v.as_slice()).collect()
}

fn one(payload: &[u8], shape: &[usize]) -> Result<RingTensor> {
    Ok(decode_ring(payload, &[shape])?.remove(0))
}

fn pool_layout(layer: &Layer, step: &Step) -> (Vec<usize>, usize) {
    match layer {
        Layer::MaxPool(g) | Layer::AvgPool(g) => {
            let d = g.dims(&step.input[1..]);
            (d.window_indices(step.input[0]), d.window())
        }
        _ => unreachable!(),
    }
}

fn window_sums(v: &RingTensor, window: usize, out: &[usize]) -> RingTensor {
    let data = v
        .data
        .chunks(window)
        .map(|w| w.iter().fold(Wrapping(0), |a, &b| a + b))
        .collect();
    RingTensor::new(out.to_vec(), data).expect("pool output shape")
}

fn avg_scale(cfg: &FixedCfg, window: usize) -> Result<Ring> {
    cfg.encode(1.0 / window as f64)
}

pub(crate) struct ClientOut {
    pub share: RingTensor,
    pub logits: Option<Tensor>,
    pub predictions: Vec<usize>,
}

pub(crate) fn client(ep: &mut Endpoint, x: &Tensor, config: &SessionConfig) -> Result<ClientOut> {
    let mask_seed = config.seed ^ 0x6d61_736b;
    let hello = Hello {
        protocol: 1,
        batch: x.batch(),
        mask_seed,
    };
    ep.send(Role::Server, 0, MsgType::Hello, serde_json::to_vec(&hello)?)?;
    let meta: CryptoArchMeta =
        serde_json::from_slice(&ep.recv(Role::Server, MsgType::CryptoArchMeta)?)
            .map_err(|e| Error::protocol("setup", format!("bad crypto architecture: {e}")))?;
    meta.fixed.validate()?;
    let cfg = meta.fixed;
    let steps = schedule(&meta)?;
    if x.shape() != steps[0].input.as_slice() {
        return Err(Error::shape("client input", &steps[0].input, x.shape()));
    }
    let mut masks = MaskSource::new(config.masks, config.seed ^ 0x7061_6473);
    let mut zero = ChaCha8Rng::seed_from_u64(mask_seed);
    let mut xc = RingTensor::zeros(&[0]);

    for (k, step) in steps.iter().enumerate() {
        ep.at(k + 1, Phase::Crypto);
        let layer = step.layer.map(|i| &meta.layers[i]);
        match step.kind {
            StepKind::Input => {
                let r = masks.fresh(&step.input);
                ep.send(Role::Server, 0, MsgType::InputShare, encode_ring(&[&r]))?;
                xc = cfg.encode_tensor(x)?.sub(&r)?;
            }
            StepKind::Linear => {
                let layer = layer.unwrap();
                let (ws, _) = layer.param_shapes(&step.input[1..]).unwrap();
                let a = masks.pad(&xc);
                ep.send(Role::Dealer, 0, MsgType::TripleIssue, encode_ring(&[&a]))?;
                ep.send(
                    Role::Server,
                    2,
                    MsgType::MulExchange,
                    encode_ring(&[&xc.sub(&a)?]),
                )?;
                let cc = one(&ep.recv(Role::Dealer, MsgType::TripleIssue)?, &step.output)?;
                let f = one(&ep.recv(Role::Server, MsgType::MulExchange)?, &ws)?;
                let z = ring_conv_dense(layer, &a, &f)?.add(&cc)?;
                let m = RingTensor::random(&step.output, &mut zero);
                ep.send(
                    Role::Dealer,
                    3,
                    MsgType::MulExchange,
                    encode_ring(&[&z.add(&m)?]),
                )?;
                xc = one(&ep.recv(Role::Dealer, MsgType::MulExchange)?, &step.output)?;
            }
            StepKind::Relu | StepKind::MaxPool => {
                let (g, window) = match step.kind {
                    StepKind::Relu => (xc.clone(), 1),
                    _ => {
                        let (idx, w) = pool_layout(layer.unwrap(), step);
                        (xc.gather(&idx), w)
                    }
                };
                let m = RingTensor::random(&g.shape, &mut zero);
                ep.send(
                    Role::Dealer,
                    0,
                    MsgType::ReluExchange,
                    encode_ring(&[&g.add(&m)?]),
                )?;
                let bit = one(&ep.recv(Role::Dealer, MsgType::ReluExchange)?, &g.shape)?;
                let (a, b) = (masks.pad(&g), masks.pad(&bit));
                ep.send(
                    Role::Dealer,
                    2,
                    MsgType::TripleIssue,
                    encode_ring(&[&a, &b]),
                )?;
                let c = one(&ep.recv(Role::Dealer, MsgType::TripleIssue)?, &g.shape)?;
                let (dc, ec) = (g.sub(&a)?, bit.sub(&b)?);
                ep.send(
                    Role::Server,
                    4,
                    MsgType::ReluExchange,
                    encode_ring(&[&dc, &ec]),
                )?;
                let mut theirs = decode_ring(
                    &ep.recv(Role::Server, MsgType::ReluExchange)?,
                    &[&g.shape, &g.shape],
                )?;
                let es = theirs.pop().unwrap();
                let ds = theirs.pop().unwrap();
                let z = beaver_combine(&c, &a, &b, &dc.add(&ds)?, &ec.add(&es)?, true)?;
                xc = match step.kind {
                    StepKind::Relu => z,
                    _ => window_sums(&z, window, &step.output),
                };
            }
            StepKind::AvgPool => {
                let (idx, window) = pool_layout(layer.unwrap(), step);
                let y = window_sums(&xc.gather(&idx), window, &step.output)
                    .scale(avg_scale(&cfg, window)?);
                let m = RingTensor::random(&step.output, &mut zero);
                ep.send(
                    Role::Dealer,
                    0,
                    MsgType::MulExchange,
                    encode_ring(&[&y.add(&m)?]),
                )?;
                xc = one(&ep.recv(Role::Dealer, MsgType::MulExchange)?, &step.output)?;
            }
            StepKind::Flatten => {
                xc = xc.reshape(step.output.clone())?;
            }
        }
    }

    let reveal_op = steps.len() + 1;
    ep.at(reveal_op, Phase::Reveal);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6e6f_6973);
    let noised = super::add_share_noise(&xc, meta.lambda, &cfg, &mut noise_rng)?;
    ep.send(
        Role::Server,
        0,
        MsgType::NoisedReveal,
        encode_shaped(&noised.shape, &noised.to_u64()),
    )?;

    ep.at(reveal_op + 1, Phase::Clear);
    let (shape, vals) = decode_shaped(&ep.recv(Role::Server, MsgType::Result)?)?;
    let (logits, predictions) = match config.reveal_result {
        RevealResult::Logits => {
            let t = Tensor::new(shape, vals.into_iter().map(f64::from_bits).collect())?;
            let p = crate::metrics::predictions(&t);
            (Some(t), p)
        }
        RevealResult::Argmax => (None, vals.into_iter().map(|v| v as usize).collect()),
    };
    Ok(ClientOut {
        share: xc,
        logits,
        predictions,
    })
}

pub(crate) struct ServerOut {
    pub share: RingTensor,
    pub activation: Tensor,
}

pub(crate) fn server(
    ep: &mut Endpoint,
    network: &Network,
    config: &SessionConfig,
) -> Result<ServerOut> {
    let hello: Hello = serde_json::from_slice(&ep.recv(Role::Client, MsgType::Hello)?)
        .map_err(|e| Error::protocol("setup", format!("bad hello: {e}")))?;
    if hello.protocol != 1 {
        return Err(Error::protocol(
            "setup",
            format!("client speaks protocol {}, expected 1", hello.protocol),
        ));
    }
    let end = network.spec.prefix_len(config.boundary)?;
    let meta = CryptoArchMeta {
        input_shape: network.spec.input_shape,
        layers: network.spec.layers[..end].to_vec(),
        boundary: config.boundary,
        batch: hello.batch,
        fixed: config.fixed,
        lambda: config.lambda,
    };
    let json = serde_json::to_vec(&meta)?;
    ep.send(Role::Client, 1, MsgType::CryptoArchMeta, json.clone())?;
    ep.send(Role::Dealer, 1, MsgType::CryptoArchMeta, json)?;
    let cfg = config.fixed;
    let steps = schedule(&meta)?;
    let mut zero = ChaCha8Rng::seed_from_u64(hello.mask_seed);
    let mut xs = RingTensor::zeros(&[0]);

    for (k, step) in steps.iter().enumerate() {
        ep.at(k + 1, Phase::Crypto);
        let layer = step.layer.map(|i| &meta.layers[i]);
        match step.kind {
            StepKind::Input => {
                xs = one(&ep.recv(Role::Client, MsgType::InputShare)?, &step.input)?;
            }
            StepKind::Linear => {
                let (i, layer) = (step.layer.unwrap(), layer.unwrap());
                let p = layer.expect_params(network.params[i].as_ref(), &step.input[1..])?;
                let w = cfg.encode_tensor(&p.weight)?;
                let bias = p
                    .bias
                    .data()
                    .iter()
                    .map(|&b| cfg.encode_double(b))
                    .collect::<Result<Vec<_>>>()?;
                let mut parts = decode_ring(
                    &ep.recv(Role::Dealer, MsgType::TripleIssue)?,
                    &[w.shape.as_slice(), &step.output],
                )?;
                let cs = parts.pop().unwrap();
                let b = parts.pop().unwrap();
                ep.send(
                    Role::Client,
                    2,
                    MsgType::MulExchange,
                    encode_ring(&[&w.sub(&b)?]),
                )?;
                let d = one(&ep.recv(Role::Client, MsgType::MulExchange)?, &step.input)?;
                let mut z = ring_conv_dense(layer, &xs.add(&d)?, &w)?;
                let plane = z.len() / (z.batch() * bias.len());
                ops::add_channel_bias(&mut z.data, &bias, plane);
                let z = z.add(&cs)?;
                let m = RingTensor::random(&step.output, &mut zero).neg();
                ep.send(
                    Role::Dealer,
                    3,
                    MsgType::MulExchange,
                    encode_ring(&[&z.add(&m)?]),
                )?;
                xs = one(&ep.recv(Role::Dealer, MsgType::MulExchange)?, &step.output)?;
            }
            StepKind::Relu | StepKind::MaxPool => {
                let (g, window) = match step.kind {
                    StepKind::Relu => (xs.clone(), 1),
                    _ => {
                        let (idx, w) = pool_layout(layer.unwrap(), step);
                        (xs.gather(&idx), w)
                    }
                };
                let m = RingTensor::random(&g.shape, &mut zero).neg();
                ep.send(
                    Role::Dealer,
                    0,
                    MsgType::ReluExchange,
                    encode_ring(&[&g.add(&m)?]),
                )?;
                let bit = one(&ep.recv(Role::Dealer, MsgType::ReluExchange)?, &g.shape)?;
                let mut t = decode_ring(
                    &ep.recv(Role::Dealer, MsgType::TripleIssue)?,
                    &seq(&[g.shape.clone(), g.shape.clone(), g.shape.clone()]),
                )?;
                let c = t.pop().unwrap();
                let b = t.pop().unwrap();
                let a = t.pop().unwrap();
                let (ds, es) = (g.sub(&a)?, bit.sub(&b)?);
                ep.send(
                    Role::Client,
                    4,
                    MsgType::ReluExchange,
                    encode_ring(&[&ds, &es]),
                )?;
                let mut theirs = decode_ring(
                    &ep.recv(Role::Client, MsgType::ReluExchange)?,
                    &[&g.shape, &g.shape],
                )?;
                let ec = theirs.pop().unwrap();
                let dc = theirs.pop().unwrap();
                let z = beaver_combine(&c, &a, &b, &dc.add(&ds)?, &ec.add(&es)?, false)?;
                xs = match step.kind {
                    StepKind::Relu => z,
                    _ => window_sums(&z, window, &step.output),
                };
            }
            StepKind::AvgPool => {
                let (idx, window) = pool_layout(layer.unwrap(), step);
                let y = window_sums(&xs.gather(&idx), window, &step.output)
                    .scale(avg_scale(&cfg, window)?);
                let m = RingTensor::random(&step.output, &mut zero).neg();
                ep.send(
                    Role::Dealer,
                    0,
                    MsgType::MulExchange,
                    encode_ring(&[&y.add(&m)?]),
                )?;
                xs = one(&ep.recv(Role::Dealer, MsgType::MulExchange)?, &step.output)?;
            }
            StepKind::Flatten => {
                xs = xs.reshape(step.output.clone())?;
            }
        }
    }

    let reveal_op = steps.len() + 1;
    ep.at(reveal_op, Phase::Reveal);
    let (shape, vals) = decode_shaped(&ep.recv(Role::Client, MsgType::NoisedReveal)?)?;
    if shape != xs.shape {
        return Err(Error::shape("noised reveal", &xs.shape, &shape));
    }
    let noised = RingTensor::from_u64(shape, vals)?;
    let activation = cfg.decode_tensor(&noised.add(&xs)?);

    ep.at(reveal_op + 1, Phase::Clear);
    let logits = super::run_clear_layers(network, &activation, config.boundary)?;
    let payload = match config.reveal_result {
        RevealResult::Logits => encode_shaped(
            logits.shape(),
            &logits
                .data()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>(),
        ),
        RevealResult::Argmax => {
            let p: Vec<u64> = crate::metrics::predictions(&logits)
                .into_iter()
                .map(|v| v as u64)
                .collect();
            encode_shaped(&[p.len()], &p)
        }
    };
    ep.send(Role::Client, 0, MsgType::Result, payload)?;
    Ok(ServerOut {
        share: xs,
        activation,
    })
}

pub(crate) fn dealer(ep: &mut Endpoint, config: &SessionConfig) -> Result<()> {
    let meta: CryptoArchMeta =
        serde_json::from_slice(&ep.recv(Role::Server, MsgType::CryptoArchMeta)?)
            .map_err(|e| Error::protocol("setup", format!("bad crypto architecture: {e}")))?;
    let steps = schedule(&meta)?;
    let mut dealer = Dealer::new(config.seed ^ 0x6465_616c, meta.fixed);
    if let Some(b) = config.dealer_budget {
        dealer = dealer.with_budget(b);
    }
    if let Some(n) = config.dealer_fail_after {
        dealer.fail_after(n);
    }

    for (k, step) in steps.iter().enumerate() {
        ep.at(k + 1, Phase::Crypto);
        let label = step.label(&meta.layers);
        let layer = step.layer.map(|i| &meta.layers[i]);
        match step.kind {
            StepKind::Input | StepKind::Flatten => {}
            StepKind::Linear => {
                let layer = layer.unwrap();
                let (ws, _) = layer.param_shapes(&step.input[1..]).unwrap();
                let a = one(&ep.recv(Role::Client, MsgType::TripleIssue)?, &step.input)?;
                let (cc, b, cs) =
                    dealer.complete_linear(&label, &a, &ws, |a, b| ring_conv_dense(layer, a, b))?;
                ep.send(Role::Client, 1, MsgType::TripleIssue, encode_ring(&[&cc]))?;
                ep.send(
                    Role::Server,
                    1,
                    MsgType::TripleIssue,
                    encode_ring(&[&b, &cs]),
                )?;
                let zc = one(&ep.recv(Role::Client, MsgType::MulExchange)?, &step.output)?;
                let zs = one(&ep.recv(Role::Server, MsgType::MulExchange)?, &step.output)?;
                let (tc, ts) = dealer.truncate(&label, &zc, &zs)?;
                ep.send(Role::Client, 4, MsgType::MulExchange, encode_ring(&[&tc]))?;
                ep.send(Role::Server, 4, MsgType::MulExchange, encode_ring(&[&ts]))?;
            }
            StepKind::Relu | StepKind::MaxPool => {
                let (shape, window) = match step.kind {
                    StepKind::Relu => (step.input.clone(), 1),
                    _ => {
                        let (idx, w) = pool_layout(layer.unwrap(), step);
                        (vec![idx.len()], w)
                    }
                };
                let gc = one(&ep.recv(Role::Client, MsgType::ReluExchange)?, &shape)?;
                let gs = one(&ep.recv(Role::Server, MsgType::ReluExchange)?, &shape)?;
                let (bc, bs) = match step.kind {
                    StepKind::Relu => dealer.sign_bits(&label, &gc, &gs)?,
                    _ => dealer.max_selectors(&label, &gc, &gs, window)?,
                };
                ep.send(Role::Client, 1, MsgType::ReluExchange, encode_ring(&[&bc]))?;
                ep.send(Role::Server, 1, MsgType::ReluExchange, encode_ring(&[&bs]))?;
                let mut pads = decode_ring(
                    &ep.recv(Role::Client, MsgType::TripleIssue)?,
                    &[&shape, &shape],
                )?;
                let b = pads.pop().unwrap();
                let a = pads.pop().unwrap();
                let (cc, half) = dealer.complete_triple(&label, &a, &b)?;
                ep.send(Role::Client, 3, MsgType::TripleIssue, encode_ring(&[&cc]))?;
                ep.send(
                    Role::Server,
                    3,
                    MsgType::TripleIssue,
                    encode_ring(&[&half.a, &half.b, &half.c]),
                )?;
            }
            StepKind::AvgPool => {
                let yc = one(&ep.recv(Role::Client, MsgType::MulExchange)?, &step.output)?;
                let ys = one(&ep.recv(Role::Server, MsgType::MulExchange)?, &step.output)?;
                let (tc, ts) = dealer.truncate(&label, &yc, &ys)?;
                ep.send(Role::Client, 1, MsgType::MulExchange, encode_ring(&[&tc]))?;
                ep.send(Role::Server, 1, MsgType::MulExchange, encode_ring(&[&ts]))?;
            }
        }
    }
    Ok(())
}
