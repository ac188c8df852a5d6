//! Two-phase boundary search on a trained model: find the deepest point an
//! inversion attack still breaks, then the first point after it that keeps
//! accuracy under noise.
//!
//! cargo run --release --example boundary_search -- model.c2m [attack] [lambda]

use c2pi::attacks::{AttackConfig, AttackKind};
use c2pi::boundary::{search_network, SearchConfig, SearchData, DEFAULT_ACCURACY_DROP};
use c2pi::data::synthetic_split;
use c2pi::metrics::top1_accuracy;
use c2pi::model::load_model;

fn main() -> c2pi::Result<()> {
    let mut args = std::env::args().skip(1);
    let model = load_model(
        args.next()
            .unwrap_or_else(|| "tiny_vgg8.c2m".into())
            .as_ref(),
    )?;
    let kind: AttackKind = args.next().map_or(Ok(AttackKind::Dina), |s| s.parse())?;
    let lambda: f64 = args.next().map_or(Ok(0.1), |s| s.parse()).expect("lambda");
    let net = &model.network;
    let shape = net.spec.input_shape;

    let (train, test) = synthetic_split(1, net.spec.num_classes, shape[1], 100, 100)?;
    let victims = test.images.slice_batch(0, 8);
    let baseline = top1_accuracy(&net.forward(&test.images)?, &test.labels)?;
    let attack = AttackConfig {
        epochs: 10,
        iterations: 500,
        lr: 0.001,
        lambda,
        ..AttackConfig::default()
    };
    let config = SearchConfig::new(attack.sigma, baseline - DEFAULT_ACCURACY_DROP, lambda);
    let data = SearchData {
        attacker: &train,
        victims: &victims,
        eval: &test,
        accuracy_trials: 3,
        accuracy_seed: 1,
    };
    let result = search_network(net, kind, &attack, &config, &data, None)?;
    for (p, s) in &result.ssim_trace {
        println!("phase 1  {:<4} ssim {s:.3}", p.to_string());
    }
    for (p, a) in &result.accuracy_trace {
        println!("phase 2  {:<4} accuracy {a:.4}", p.to_string());
    }
    println!(
        "boundary {} (degenerate: {})",
        result.boundary, result.degenerate
    );
    Ok(())
}
