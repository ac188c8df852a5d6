//! Run MLA, EINA and DINA against every evaluation point of a saved model
//! and print the recovery SSIM per point.
//!
//! cargo run --release --example attack_layers -- model.c2m [epochs] [mla-iterations] [attacker-images]

use std::path::PathBuf;
use std::time::Instant;

use c2pi::attacks::{run_attack, AttackConfig, AttackKind};
use c2pi::data::synthetic_split;
use c2pi::model::load_model;

fn main() -> c2pi::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = PathBuf::from(args.next().unwrap_or_else(|| "tiny_vgg8.c2m".into()));
    let epochs = args.next().map_or(Ok(10), |s| s.parse()).expect("epochs");
    let iterations = args
        .next()
        .map_or(Ok(2000), |s| s.parse())
        .expect("iterations");
    let n_attacker: usize = args
        .next()
        .map_or(Ok(300), |s| s.parse())
        .expect("attacker images");
    let lr: f64 = std::env::var("ATTACK_LR")
        .ok()
        .map_or(0.001, |s| s.parse().expect("lr"));
    let mlr: f64 = std::env::var("MLA_LR")
        .ok()
        .map_or(lr, |s| s.parse().expect("lr"));

    let model = load_model(&path)?;
    let net = &model.network;
    let size = net.spec.input_shape[1];
    let (train, test) = synthetic_split(1, 3, size, n_attacker.div_ceil(3), 6)?;
    let attacker = train.take(n_attacker);
    let victims = test.images.slice_batch(0, 16);
    let config = AttackConfig {
        epochs,
        iterations,
        lr,
        seed: 7,
        ..AttackConfig::default()
    };
    println!("point   mla    eina   dina");
    let max_points: usize = std::env::var("MAX_POINTS")
        .ok()
        .map_or(usize::MAX, |s| s.parse().expect("count"));
    let only: Option<Vec<String>> = std::env::var("POINTS")
        .ok()
        .map(|s| s.split(',').map(String::from).collect());
    let kinds: Vec<AttackKind> =
        std::env::var("KINDS")
            .ok()
            .map_or(AttackKind::ALL.to_vec(), |s| {
                s.split(',')
                    .map(|k| k.parse().expect("attack kind"))
                    .collect()
            });
    for p in net.spec.eval_points()?.into_iter().take(max_points) {
        if only.as_ref().is_some_and(|o| !o.contains(&p.to_string())) {
            continue;
        }
        let mut row = format!("{:<6}", p.to_string());
        for &kind in &kinds {
            let t = Instant::now();
            let cfg = AttackConfig {
                lr: if kind == AttackKind::Mla { mlr } else { lr },
                ..config.clone()
            };
            let out = run_attack(kind, net, p, &attacker, &victims, &cfg, None)?;
            row += &format!(
                " {:.3}({:.0}s)",
                out.report.avg_ssim,
                t.elapsed().as_secs_f64()
            );
        }
        println!("{row}");
    }
    Ok(())
}
