//! The same session over loopback TCP, with client, server and dealer on
//! separate sockets. The results match the in-process transport.
//!
//! cargo run --release --example tcp_session

use c2pi::model::zoo;
use c2pi::protocol::{run_session, SessionConfig, Transport};
use c2pi::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> c2pi::Result<()> {
    let net = zoo::simple_cnn([3, 16, 16], 3, 8)?.init(2)?;
    let x = Tensor::uniform(&[4, 3, 16, 16], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(5));
    let boundary = net.spec.eval_points()?[1];
    let mut cfg = SessionConfig::new(boundary, 0.1);
    cfg.seed = 9;

    let local = run_session(&net, &x, &cfg)?;
    cfg.transport = Transport::Tcp {
        host: "127.0.0.1".into(),
        port: 0,
    };
    let tcp = run_session(&net, &x, &cfg)?;

    println!("in-proc predictions: {:?}", local.result.predictions);
    println!("tcp predictions:     {:?}", tcp.result.predictions);
    println!(
        "identical logits:    {}",
        local.result.logits == tcp.result.logits
    );
    println!(
        "identical bytes:     {} ({} total)",
        local.transcript.total_bytes == tcp.transcript.total_bytes,
        tcp.transcript.total_bytes
    );
    Ok(())
}
