//! Accuracy of a trained model when the boundary activation is noised, and
//! the largest noise that keeps accuracy within a drop of the baseline.
//!
//! cargo run --release --example noise_sweep -- model.c2m [point]

use c2pi::boundary::{calibrate_noise, parse_grid, DEFAULT_ACCURACY_DROP};
use c2pi::data::synthetic_split;
use c2pi::metrics::{noised_accuracy, top1_accuracy};
use c2pi::model::{load_model, EvalPoint};

fn main() -> c2pi::Result<()> {
    let mut args = std::env::args().skip(1);
    let model = load_model(
        args.next()
            .unwrap_or_else(|| "tiny_vgg8.c2m".into())
            .as_ref(),
    )?;
    let net = &model.network;
    let points = net.spec.eval_points()?;
    let point: EvalPoint = match args.next() {
        Some(s) => s.parse()?,
        None => points[(points.len() - 1) / 2],
    };
    let (_, test) = synthetic_split(1, net.spec.num_classes, net.spec.input_shape[1], 1, 100)?;
    let baseline = top1_accuracy(&net.forward(&test.images)?, &test.labels)?;
    let delta = baseline - DEFAULT_ACCURACY_DROP;
    let cal = calibrate_noise(&parse_grid("0:4:0.25")?, delta, |l| {
        noised_accuracy(net, point, l, &test, 3, 5)
    })?;
    println!("baseline {baseline:.4}, threshold {delta:.4}, point {point}");
    for (l, acc) in &cal.trace {
        println!("lambda {l:.2}  accuracy {acc:.4}");
    }
    println!("largest admissible lambda: {:.2}", cal.lambda);
    Ok(())
}
