//! Communication cost of every possible boundary: moving the boundary
//! deeper puts more layers under cryptography.
//!
//! cargo run --release --example transcript_costs -- [model] [batch]

use c2pi::model::zoo;
use c2pi::protocol::wire::HEADER_LEN;
use c2pi::protocol::{run_session, Phase, Role, SessionConfig};
use c2pi::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> c2pi::Result<()> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "tiny_vgg8".into());
    let batch: usize = args.next().map_or(Ok(1), |s| s.parse()).expect("batch");
    let net = zoo::by_name(&name, [3, 16, 16], 3, 8)?.init(1)?;
    let x = Tensor::uniform(
        &[batch, 3, 16, 16],
        0.0,
        1.0,
        &mut ChaCha8Rng::seed_from_u64(1),
    );

    println!(
        "{:<6} {:>12} {:>9} {:>7} {:>12} {:>12}",
        "point", "crypto B", "messages", "rounds", "c->s B", "dealer B"
    );
    for p in net.spec.eval_points()? {
        let t = run_session(&net, &x, &SessionConfig::new(p, 0.0))?.transcript;
        let msgs = t.messages.get(Phase::Crypto);
        let dealer: usize = t
            .entries
            .iter()
            .filter(|e| {
                e.phase == Phase::Crypto && (e.from == Role::Dealer || e.to == Role::Dealer)
            })
            .map(|e| e.wire_bytes)
            .sum();
        println!(
            "{:<6} {:>12} {:>9} {:>7} {:>12} {:>12}",
            p.to_string(),
            t.phase_bytes(Phase::Crypto),
            msgs,
            t.rounds,
            t.flow_bytes(Role::Client, Role::Server, Phase::Crypto),
            dealer
        );
    }
    println!(
        "each message carries a {HEADER_LEN}-byte header; payloads are 8 bytes per ring element"
    );
    Ok(())
}
