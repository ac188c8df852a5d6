use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::AttackConfig;
use crate::error::{Error, Result};
use crate::model::{EvalPoint, Network};
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct MlaOutcome {
    pub recovered: Tensor,
    /// `||M_l(x_hat) - target||^2` summed over the batch, before each step
    /// and once after the last.
    pub objective: Vec<f64>,
    pub restarts: usize,
}

/// Model-inversion by optimization: projected gradient descent on the
/// input until its activation at `point` matches `target`.
pub fn mla_attack(
    network: &Network,
    point: EvalPoint,
    target: &Tensor,
    config: &AttackConfig,
) -> Result<MlaOutcome> {
    config.validate()?;
    let expected = network.spec.activation_shape(point)?;
    if target.shape().len() < 2 || target.sample_shape() != expected.as_slice() {
        let mut e = vec![target.shape().first().copied().unwrap_or(0)];
        e.extend(expected);
        return Err(Error::shape("MLA target", &e, target.shape()));
    }
    match descend(network, point, target, config, config.seed) {
        Err(Error::Diverged { .. }) => {
            let mut out = descend(network, point, target, config, config.seed ^ 0x7265_7374)?;
            out.restarts = 1;
            Ok(out)
        }
        other => other,
    }
}

fn descend(
    network: &Network,
    point: EvalPoint,
    target: &Tensor,
    config: &AttackConfig,
    seed: u64,
) -> Result<MlaOutcome> {
    let end = network.spec.prefix_len(point)?;
    let mut shape = vec![target.batch()];
    shape.extend(network.spec.input_shape);
    let mut x = Tensor::uniform(&shape, 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
    let mut objective = Vec::with_capacity(config.iterations + 1);
    for it in 0..=config.iterations {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let (out, _) = network.record(&mut tape, xv, 0..end)?;
        let tv = tape.leaf(target.clone());
        let loss = tape.squared_distance(out, tv)?;
        let lv = tape.value(loss).data()[0];
        if !lv.is_finite() {
            return Err(Error::Diverged {
                epoch: it,
                loss: lv,
            });
        }
        objective.push(lv);
        if it == config.iterations {
            break;
        }
        let g = tape.backward(loss)?.take(xv).expect("input gradient");
        if !g.is_finite() {
            return Err(Error::Diverged {
                epoch: it,
                loss: lv,
            });
        }
        for (p, gv) in x.data_mut().iter_mut().zip(g.data()) {
            *p = (*p - config.lr * gv).clamp(0.0, 1.0);
        }
    }
    Ok(MlaOutcome {
        recovered: x,
        objective,
        restarts: 0,
    })
}
