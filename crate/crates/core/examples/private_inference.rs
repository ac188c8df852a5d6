//! One crypto-clear inference session: layers up to the boundary run on
//! secret shares, the noised activation is revealed to the server, and the
//! rest runs in the clear.
//!
//! cargo run --release --example private_inference -- [model.c2m] [boundary] [lambda]

use c2pi::metrics::argmax_agreement;
use c2pi::model::{load_model, zoo, EvalPoint, Network};
use c2pi::protocol::{run_session, Phase, SessionConfig};
use c2pi::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> c2pi::Result<()> {
    let mut args = std::env::args().skip(1);
    let net: Network = match args.next() {
        Some(path) => load_model(path.as_ref())?.network,
        None => zoo::tiny_vgg8([3, 16, 16], 3, 8)?.init(1)?,
    };
    let points = net.spec.eval_points()?;
    let boundary: EvalPoint = match args.next() {
        Some(s) => s.parse()?,
        None => points[points.len() / 2],
    };
    let lambda: f64 = args.next().map_or(Ok(0.0), |s| s.parse()).expect("lambda");

    let x = Tensor::uniform(&[8, 3, 16, 16], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(3));
    let out = run_session(&net, &x, &SessionConfig::new(boundary, lambda))?;
    let plain = net.forward(&x)?;
    let logits = out.result.logits.expect("logits revealed");

    println!(
        "{} at boundary {boundary} with lambda {lambda}",
        net.spec.name
    );
    println!(
        "max |logit diff| vs plaintext: {:.2e}",
        logits.max_abs_diff(&plain)?
    );
    println!(
        "argmax agreement:              {:.3}",
        argmax_agreement(&logits, &plain)
    );
    println!(
        "predictions:                   {:?}",
        out.result.predictions
    );
    let t = &out.transcript;
    for p in [Phase::Setup, Phase::Crypto, Phase::Reveal, Phase::Clear] {
        println!(
            "{:<7} {:>10} bytes {:>4} messages",
            p.name(),
            t.bytes.get(p),
            t.messages.get(p)
        );
    }
    println!("crypto rounds: {}", t.rounds);
    Ok(())
}
