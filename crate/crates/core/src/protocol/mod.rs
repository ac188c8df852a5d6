//! The two-party session: the client's input goes through the crypto layers
//! under additive shares (with a dealer for correlations), the client adds
//! noise to its boundary share and reveals it, and the server finishes the
//! clear layers on its own.
//!
//! All three endpoints run as threads of the calling process, talking over
//! in-memory channels or loopback TCP. Every message is framed and metered;
//! the merged [`Transcript`] is the same for both transports.

mod link;
mod parties;
mod schedule;
mod transcript;
pub mod wire;

pub use schedule::CryptoArchMeta;
pub use transcript::{Phase, PhaseTotals, Role, Transcript, TranscriptEntry};

use std::net::{TcpListener, TcpStream};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixed::{FixedCfg, Party, RingTensor, ShareTensor};
use crate::model::{EvalPoint, Network};
use crate::tensor::Tensor;
use link::{Endpoint, Failure, Link};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transport {
    InProc,
    /// The server listens on `host:port` (0 picks a free port); the dealer
    /// listens on two further free ports of the same host.
    Tcp {
        host: String,
        port: u16,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevealResult {
    #[default]
    Logits,
    Argmax,
}

/// How the client picks its one-time pads. `Pinned` makes every value the
/// client puts on the wire come from a fixed stream, so the server's view
/// can be compared byte for byte across different secret inputs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaskMode {
    #[default]
    Random,
    Pinned {
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub boundary: EvalPoint,
    pub lambda: f64,
    pub fixed: FixedCfg,
    pub transport: Transport,
    pub reveal_result: RevealResult,
    /// Derives the client's pads and noise, the zero-sharing masks and the
    /// dealer's stream.
    pub seed: u64,
    pub masks: MaskMode,
    /// Number of requests the dealer will serve; `None` is unlimited.
    pub dealer_budget: Option<usize>,
    /// Fault injection: the dealer drops its connections after this many
    /// requests.
    pub dealer_fail_after: Option<usize>,
    /// Keep message payloads in the transcript entries.
    pub capture_payloads: bool,
}

impl SessionConfig {
    pub fn new(boundary: EvalPoint, lambda: f64) -> Self {
        SessionConfig {
            boundary,
            lambda,
            fixed: FixedCfg::default(),
            transport: Transport::InProc,
            reveal_result: RevealResult::Logits,
            seed: 0,
            masks: MaskMode::Random,
            dealer_budget: None,
            dealer_fail_after: None,
            capture_payloads: false,
        }
    }

    pub fn validate(&self, network: &Network) -> Result<()> {
        self.fixed.validate()?;
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        network.spec.prefix_len(self.boundary)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClientResult {
    /// Present in [`RevealResult::Logits`] mode.
    pub logits: Option<Tensor>,
    pub predictions: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct SessionOutput {
    pub result: ClientResult,
    pub transcript: Transcript,
    /// Both parties' shares of the boundary activation, before the reveal.
    pub boundary_shares: (ShareTensor, ShareTensor),
    /// The noised boundary activation as the server decoded it.
    pub server_activation: Tensor,
}

/// Adds fixed-point encoded `U[-lambda, lambda]` noise to a share.
pub fn add_share_noise<R: Rng + ?Sized>(
    share: &RingTensor,
    lambda: f64,
    cfg: &FixedCfg,
    rng: &mut R,
) -> Result<RingTensor> {
    if lambda == 0.0 {
        return Ok(share.clone());
    }
    let noise = Tensor::uniform(&share.shape, -lambda, lambda, rng);
    share.add(&cfg.encode_tensor(&noise)?)
}

/// The reveal step outside a session: the client noises its share, the
/// server adds its own share and decodes.
pub fn reveal_with_noise<R: Rng + ?Sized>(
    client: &ShareTensor,
    server: &ShareTensor,
    lambda: f64,
    rng: &mut R,
    cfg: &FixedCfg,
) -> Result<Tensor> {
    let noised = ShareTensor::new(
        Party::Client,
        add_share_noise(&client.value, lambda, cfg, rng)?,
    );
    Ok(cfg.decode_tensor(&crate::fixed::reconstruct(&noised, server)?))
}

/// The server's clear phase: the suffix of the network after `boundary`.
pub fn run_clear_layers(
    network: &Network,
    activation: &Tensor,
    boundary: EvalPoint,
) -> Result<Tensor> {
    network.forward_suffix(activation, boundary)
}

/// Runs a full session and returns only the boundary shares and transcript.
pub fn run_crypto_layers(
    network: &Network,
    x: &Tensor,
    config: &SessionConfig,
) -> Result<(ShareTensor, ShareTensor, Transcript)> {
    let out = run_session(network, x, config)?;
    Ok((out.boundary_shares.0, out.boundary_shares.1, out.transcript))
}

fn endpoints(capture: bool) -> [Endpoint; 3] {
    [Role::Client, Role::Server, Role::Dealer].map(|r| Endpoint::new(r, capture))
}

fn connect_all(eps: &mut [Endpoint; 3], links: [(Link, Link); 3]) {
    let [c, s, d] = eps;
    let [(cs, sc), (cd, dc), (sd, ds)] = links;
    c.connect(Role::Server, cs);
    s.connect(Role::Client, sc);
    c.connect(Role::Dealer, cd);
    d.connect(Role::Client, dc);
    s.connect(Role::Dealer, sd);
    d.connect(Role::Server, ds);
}

fn tcp_pair(listener: &TcpListener) -> Result<(Link, Link)> {
    let addr = listener.local_addr()?;
    let out = TcpStream::connect(addr)?;
    let (inc, _) = listener.accept()?;
    Ok((Link::tcp(out)?, Link::tcp(inc)?))
}

fn tcp_links(host: &str, port: u16) -> Result<[(Link, Link); 3]> {
    let server = TcpListener::bind((host, port))?;
    let dealer_c = TcpListener::bind((host, 0))?;
    let dealer_s = TcpListener::bind((host, 0))?;
    Ok([
        tcp_pair(&server)?,
        tcp_pair(&dealer_c)?,
        tcp_pair(&dealer_s)?,
    ])
}

fn pick_failure(failures: Vec<Failure>) -> Error {
    let root = failures.iter().position(|f| !f.relayed).unwrap_or(0);
    let f = failures
        .into_iter()
        .nth(root)
        .expect("at least one failure");
    match f.error {
        e @ Error::Protocol { .. } => e,
        e => Error::protocol(f.phase.name(), e.to_string()),
    }
}

/// One private inference of the batch `x`. Errors from any endpoint abort
/// the session and come back tagged with the phase they occurred in.
pub fn run_session(network: &Network, x: &Tensor, config: &SessionConfig) -> Result<SessionOutput> {
    config.validate(network)?;
    let in_shape = network.spec.input_shape;
    if x.shape().len() != 4 || x.sample_shape() != in_shape {
        let mut e = vec![x.shape().first().copied().unwrap_or(0)];
        e.extend(in_shape);
        return Err(Error::shape("session input", &e, x.shape()));
    }
    let links = match &config.transport {
        Transport::InProc => [Link::mem_pair(), Link::mem_pair(), Link::mem_pair()],
        Transport::Tcp { host, port } => tcp_links(host, *port)?,
    };
    let mut eps = endpoints(config.capture_payloads);
    connect_all(&mut eps, links);
    let [mut c, mut s, mut d] = eps;

    let (cr, sr, dr) = std::thread::scope(|scope| {
        let ch = scope.spawn(|| {
            let r = parties::client(&mut c, x, config).map_err(|e| c.fail(e));
            (r, std::mem::take(&mut c.log))
        });
        let sh = scope.spawn(|| {
            let r = parties::server(&mut s, network, config).map_err(|e| s.fail(e));
            (r, std::mem::take(&mut s.log))
        });
        let dh = scope.spawn(|| {
            let r = match parties::dealer(&mut d, config) {
                Ok(()) => Ok(()),
                Err(Error::DealerUnavailable { .. }) => {
                    d.vanish();
                    Ok(())
                }
                Err(e) => Err(d.fail(e)),
            };
            (r, std::mem::take(&mut d.log))
        });
        let cr = ch.join().expect("client thread");
        let sr = sh.join().expect("server thread");
        let dr = dh.join().expect("dealer thread");
        (cr, sr, dr)
    });

    let mut failures = Vec::new();
    let (client, mut log) = cr;
    let (server, slog) = sr;
    let (dealer, dlog) = dr;
    log.extend(slog);
    log.extend(dlog);
    let client = client.map_err(|f| failures.push(f)).ok();
    let server = server.map_err(|f| failures.push(f)).ok();
    let _ = dealer.map_err(|f| failures.push(f));
    if !failures.is_empty() {
        return Err(pick_failure(failures));
    }
    let (client, server) = (client.unwrap(), server.unwrap());
    Ok(SessionOutput {
        result: ClientResult {
            logits: client.logits,
            predictions: client.predictions,
        },
        transcript: Transcript::merge(log),
        boundary_shares: (
            ShareTensor::new(Party::Client, client.share),
            ShareTensor::new(Party::Server, server.share),
        ),
        server_activation: server.activation,
    })
}
