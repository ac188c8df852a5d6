mod common;

use c2pi::fixed::{fixed_forward, reconstruct, FixedCfg};
use c2pi::protocol::wire::HEADER_LEN;
use c2pi::protocol::{run_session, MaskMode, Phase, RevealResult, Role, SessionConfig, Transport};
use c2pi::tensor::{Layer, Tensor};
use c2pi::Error;
use common::*;

fn cfg_at(net: &c2pi::model::Network, k: usize) -> SessionConfig {
    SessionConfig::new(points(net)[k], 0.0)
}

#[test]
fn boundary_shares_equal_fixed_point_oracle_at_every_point() {
    let net = mixed_spec().init(11).unwrap();
    let x = images(3, [2, 8, 8], 12);
    let fixed = FixedCfg::default();
    let xe = fixed.encode_tensor(&x).unwrap();
    for p in points(&net) {
        let mut cfg = SessionConfig::new(p, 0.0);
        cfg.seed = 5;
        let out = run_session(&net, &x, &cfg).unwrap();
        let (c, s) = &out.boundary_shares;
        let got = reconstruct(c, s).unwrap();
        let end = net.spec.prefix_len(p).unwrap();
        assert_eq!(
            got,
            fixed_forward(&net, &xe, end, &fixed).unwrap(),
            "point {p}"
        );
        let plain = net.forward_prefix(&x, p).unwrap();
        let diff = fixed.decode_tensor(&got).max_abs_diff(&plain).unwrap();
        assert!(diff <= 1e-3, "point {p}: {diff}");
        let logits = out.result.logits.unwrap();
        assert!(
            logits.max_abs_diff(&net.forward(&x).unwrap()).unwrap() <= 1e-3,
            "point {p}"
        );
    }
}

#[test]
fn zero_input_gives_bias_propagation() {
    let net = mixed_spec().init(2).unwrap();
    let x = Tensor::zeros(&[2, 2, 8, 8]);
    let p = points(&net)[0];
    let out = run_session(&net, &x, &SessionConfig::new(p, 0.0)).unwrap();
    let (c, s) = &out.boundary_shares;
    let got = FixedCfg::default().decode_tensor(&reconstruct(c, s).unwrap());
    let bias = net.params[0].as_ref().unwrap().bias.data().to_vec();
    for (i, v) in got.data().iter().enumerate() {
        assert!((v - bias[(i / 64) % 3]).abs() <= 2f64.powi(-15), "{v}");
    }
}

#[test]
fn tcp_and_in_proc_transcripts_match() {
    let net = mixed_spec().init(3).unwrap();
    let x = images(2, [2, 8, 8], 4);
    let mut cfg = cfg_at(&net, 4);
    cfg.seed = 9;
    cfg.lambda = 0.05;
    let a = run_session(&net, &x, &cfg).unwrap();
    cfg.transport = Transport::Tcp {
        host: "127.0.0.1".into(),
        port: 0,
    };
    let b = run_session(&net, &x, &cfg).unwrap();
    assert_eq!(a.transcript, b.transcript);
    assert_eq!(a.result, b.result);
    let again = run_session(&net, &x, &cfg).unwrap();
    assert_eq!(again.transcript.total_bytes, b.transcript.total_bytes);
}

#[test]
fn pinned_masks_hide_the_input_from_the_server() {
    let net = mixed_spec().init(3).unwrap();
    let last = points(&net).len() - 1;
    let mut cfg = cfg_at(&net, last);
    cfg.masks = MaskMode::Pinned { seed: 77 };
    cfg.capture_payloads = true;
    let view = |cfg: &SessionConfig, x: &Tensor| {
        let out = run_session(&net, x, cfg).unwrap();
        let logits = out.result.logits.clone().unwrap();
        assert!(logits.max_abs_diff(&net.forward(x).unwrap()).unwrap() <= 1e-3);
        out.transcript
            .entries
            .into_iter()
            .filter(|e| {
                e.phase == Phase::Crypto && (e.to == Role::Server || e.from == Role::Server)
            })
            .map(|e| (e.op, e.sub, e.from, e.to, e.payload.unwrap()))
            .collect::<Vec<_>>()
    };
    let a = view(&cfg, &images(2, [2, 8, 8], 1));
    let b = view(&cfg, &images(2, [2, 8, 8], 2));
    assert!(!a.is_empty());
    assert_eq!(a, b);

    cfg.masks = MaskMode::Random;
    let c = view(&cfg, &images(2, [2, 8, 8], 1));
    let d = view(&cfg, &images(2, [2, 8, 8], 2));
    assert_ne!(c, d);
}

#[test]
fn argmax_mode_returns_predictions_only() {
    let net = mixed_spec().init(3).unwrap();
    let x = images(4, [2, 8, 8], 5);
    let mut cfg = cfg_at(&net, 2);
    cfg.reveal_result = RevealResult::Argmax;
    let out = run_session(&net, &x, &cfg).unwrap();
    assert!(out.result.logits.is_none());
    assert_eq!(
        out.result.predictions,
        c2pi::metrics::predictions(&net.forward(&x).unwrap())
    );
    assert_eq!(
        out.transcript
            .flow_bytes(Role::Client, Role::Server, Phase::Clear),
        0
    );
    assert_eq!(
        out.transcript.phase_bytes(Phase::Clear),
        HEADER_LEN + 4 + 4 + 8 * 4
    );
}

#[test]
fn transcript_totals_are_conserved() {
    let net = mixed_spec().init(3).unwrap();
    let out = run_session(&net, &images(1, [2, 8, 8], 5), &cfg_at(&net, 6)).unwrap();
    let t = &out.transcript;
    assert_eq!(
        t.entries.iter().map(|e| e.wire_bytes).sum::<usize>(),
        t.total_bytes
    );
    assert_eq!(t.bytes.sum(), t.total_bytes);
    let relus = net.spec.layers[..net.spec.prefix_len(points(&net)[6]).unwrap()]
        .iter()
        .filter(|l| **l == Layer::Relu)
        .count();
    assert!(t.rounds >= relus);
}

#[test]
fn dealer_budget_exhaustion_names_the_layer() {
    let net = mixed_spec().init(3).unwrap();
    let mut cfg = cfg_at(&net, 3);
    cfg.dealer_budget = Some(3);
    let err = run_session(&net, &images(1, [2, 8, 8], 5), &cfg)
        .unwrap_err()
        .to_string();
    assert!(
        err.contains("crypto") && err.contains("layer 1 (relu)"),
        "{err}"
    );
}

#[test]
fn dealer_crash_aborts_with_round() {
    let net = mixed_spec().init(3).unwrap();
    for transport in [
        Transport::InProc,
        Transport::Tcp {
            host: "127.0.0.1".into(),
            port: 0,
        },
    ] {
        let mut cfg = cfg_at(&net, 3);
        cfg.transport = transport;
        cfg.dealer_fail_after = Some(2);
        let err = run_session(&net, &images(1, [2, 8, 8], 5), &cfg).unwrap_err();
        let msg = err.to_string();
        assert!(
            matches!(err, Error::Protocol { ref phase, .. } if phase == "crypto"),
            "{msg}"
        );
        assert!(msg.contains("dealer unavailable at round"), "{msg}");
    }
}

#[test]
fn noise_statistics() {
    let net = vgg8(4, 1);
    let x = images(20, [3, 16, 16], 3);
    let p = points(&net)[5];
    let plain = net.forward_prefix(&x, p).unwrap();
    let mut cfg = SessionConfig::new(p, 0.1);
    cfg.seed = 4;
    let out = run_session(&net, &x, &cfg).unwrap();
    let err = out.server_activation.sub(&plain).unwrap();
    assert!(err.len() >= 10_000, "{}", err.len());
    assert!(err.max_abs() <= 0.1 + 2f64.powi(-15) + 1e-3);
    let mean = err.mean();
    let sd = 0.1 / 3f64.sqrt() / (err.len() as f64).sqrt();
    assert!(mean.abs() <= 3.0 * sd + 1e-4, "{mean}");
    cfg.seed = 5;
    let other = run_session(&net, &x, &cfg).unwrap();
    assert_ne!(other.server_activation, out.server_activation);
}
