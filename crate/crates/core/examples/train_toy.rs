//! Train a toy model on the synthetic dataset and save it as a `.c2m` file.
//!
//! cargo run --release --example train_toy -- [model] [out.c2m]

use std::path::PathBuf;
use std::time::Instant;

use c2pi::data::synthetic_split;
use c2pi::model::{save_model, train_model, zoo, TrainConfig};
use c2pi::tensor::SgdConfig;

fn main() -> c2pi::Result<()> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "tiny_vgg8".into());
    let out = PathBuf::from(args.next().unwrap_or_else(|| format!("{name}.c2m")));

    let (train, test) = synthetic_split(1, 3, 16, 500, 100)?;
    let spec = zoo::by_name(&name, [3, 16, 16], 3, 8)?;
    let config = TrainConfig {
        sgd: SgdConfig {
            learning_rate: 0.03,
            momentum: 0.9,
            seed: 1,
        },
        epochs: 20,
        batch_size: 32,
    };
    let t = Instant::now();
    let model = train_model(&spec, &train, Some(&test), &config)?;
    for (e, loss) in model.meta.epoch_losses.iter().enumerate() {
        println!("epoch {:>2}  loss {loss:.4}", e + 1);
    }
    println!(
        "{name}: test accuracy {:.3} in {:.1}s",
        model.meta.final_accuracy.unwrap_or(f64::NAN),
        t.elapsed().as_secs_f64()
    );
    save_model(&model, &out)?;
    println!("saved {}", out.display());
    Ok(())
}
