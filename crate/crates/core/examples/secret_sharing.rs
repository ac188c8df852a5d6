//! Fixed-point encoding, additive sharing over Z_2^64 and one Beaver
//! multiplication with the dealer.
//!
//! cargo run --release --example secret_sharing

use c2pi::fixed::{beaver_mul, reconstruct, share, Dealer, FixedCfg};
use c2pi::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> c2pi::Result<()> {
    let cfg = FixedCfg::new(16)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = Tensor::new(vec![4], vec![1.5, -2.25, 0.125, 3.0])?;
    let y = Tensor::new(vec![4], vec![-0.5, 4.0, 8.0, 0.75])?;

    let xs = share(&cfg.encode_tensor(&x)?, &mut rng);
    let ys = share(&cfg.encode_tensor(&y)?, &mut rng);
    println!("client share of x: {:?}", xs.0.value.to_u64());
    println!("server share of x: {:?}", xs.1.value.to_u64());
    println!(
        "reconstructed x:   {:?}",
        cfg.decode_tensor(&reconstruct(&xs.0, &xs.1)?).data()
    );

    let mut dealer = Dealer::new(11, cfg);
    let mut triple = dealer.triple("example", &[4])?;
    let z = beaver_mul(&xs, &ys, &mut triple, &mut dealer, &mut rng)?;
    let got = cfg.decode_tensor(&reconstruct(&z.0, &z.1)?);
    let want: Vec<f64> = x.data().iter().zip(y.data()).map(|(a, b)| a * b).collect();
    println!("x * y on shares:   {:?}", got.data());
    println!("x * y in the clear: {want:?}");
    println!("dealer requests:   {}", dealer.requests());
    Ok(())
}
