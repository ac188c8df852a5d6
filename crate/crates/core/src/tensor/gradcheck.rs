use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layer::{Layer, LayerParams};
use super::tape::Tape;
use super::Tensor;

/// Central-difference step.
pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// Error floor for the relative comparison, so tiny gradients are compared
/// in absolute terms.
const REL_FLOOR: f64 = 1e-3;

/// Compares `analytic[i]` against central differences of `f` around
/// `inputs[i]`, element by element. True iff every relative error is within
/// `tolerance`.
pub fn check_gradients(
    inputs: &[Tensor],
    f: impl Fn(&[Tensor]) -> f64,
    analytic: &[Tensor],
    tolerance: f64,
) -> bool {
    if inputs.len() != analytic.len() {
        return false;
    }
    let mut probe = inputs.to_vec();
    for (t, grad) in analytic.iter().enumerate() {
        if grad.shape() != inputs[t].shape() {
            return false;
        }
        for e in 0..inputs[t].len() {
            let orig = inputs[t].data()[e];
            probe[t].data_mut()[e] = orig + GRAD_CHECK_STEP;
            let up = f(&probe);
            probe[t].data_mut()[e] = orig - GRAD_CHECK_STEP;
            let down = f(&probe);
            probe[t].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * GRAD_CHECK_STEP);
            let a = grad.data()[e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            if !(rel <= tolerance) {
                return false;
            }
        }
    }
    true
}

fn projection(shape: &[usize]) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC2);
    Tensor::uniform(shape, -1.0, 1.0, &mut rng)
}

/// Gradient check of one layer under the scalar loss `sum(y * R)` with a
/// fixed random projection `R`. Checks the input and, for conv/dense, the
/// weight and bias.
pub fn grad_check(
    layer: &Layer,
    params: Option<&LayerParams>,
    input: &Tensor,
    tolerance: f64,
) -> bool {
    let Ok(y) = layer.forward(params, input) else {
        return false;
    };
    let r = projection(y.shape());

    let mut inputs = vec![input.clone()];
    if let Some(p) = params.filter(|_| layer.is_linear()) {
        inputs.push(p.weight.clone());
        inputs.push(p.bias.clone());
    }

    let mut tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let pv = if vars.len() == 3 {
        Some((vars[1], vars[2]))
    } else {
        None
    };
    let Ok(out) = tape.layer(layer, pv, vars[0]) else {
        return false;
    };
    let Ok(loss) = tape.dot(out, r.clone()) else {
        return false;
    };
    let Ok(mut grads) = tape.backward(loss) else {
        return false;
    };
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(&inputs)
        .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let f = |xs: &[Tensor]| -> f64 {
        let p = (xs.len() == 3).then(|| LayerParams {
            weight: xs[1].clone(),
            bias: xs[2].clone(),
        });
        let y = layer
            .forward(p.as_ref(), &xs[0])
            .expect("shape fixed by first forward");
        y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    };
    check_gradients(&inputs, f, &analytic, tolerance)
}

/// Gradient check of residual addition `a + b`.
pub fn grad_check_add(a: &Tensor, b: &Tensor, tolerance: f64) -> bool {
    if a.shape() != b.shape() {
        return false;
    }
    let r = projection(a.shape());
    let mut tape = Tape::new();
    let va = tape.leaf(a.clone());
    let vb = tape.leaf(b.clone());
    let Ok(sum) = tape.add(va, vb) else {
        return false;
    };
    let Ok(loss) = tape.dot(sum, r.clone()) else {
        return false;
    };
    let Ok(grads) = tape.backward(loss) else {
        return false;
    };
    let analytic = vec![
        grads.get(va).cloned().unwrap(),
        grads.get(vb).cloned().unwrap(),
    ];
    let f = |xs: &[Tensor]| -> f64 {
        xs[0]
            .add(&xs[1])
            .expect("same shape")
            .data()
            .iter()
            .zip(r.data())
            .map(|(a, b)| a * b)
            .sum()
    };
    check_gradients(&[a.clone(), b.clone()], f, &analytic, tolerance)
}
