//! SSIM between an image and progressively noisier copies of it.
//!
//! cargo run --release --example ssim

use c2pi::data::gen_synthetic;
use c2pi::metrics::{add_uniform_noise, ssim, SsimConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> c2pi::Result<()> {
    let data = gen_synthetic(4, 3, 16, 1)?;
    let img = data.images.slice_batch(0, 1);
    let cfg = SsimConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for lambda in [0.0, 0.05, 0.1, 0.2, 0.4, 0.8] {
        let noisy = add_uniform_noise(&img, lambda, &mut rng).clamp(0.0, 1.0);
        println!("noise {lambda:<4}  ssim {:.4}", ssim(&img, &noisy, &cfg)?);
    }
    let other = data.images.slice_batch(1, 2);
    println!("different class  ssim {:.4}", ssim(&img, &other, &cfg)?);
    Ok(())
}
