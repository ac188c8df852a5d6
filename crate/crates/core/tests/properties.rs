mod common;

use c2pi::boundary::{search_boundary, SearchConfig};
use c2pi::fixed::{reconstruct, share, FixedCfg, RingTensor};
use c2pi::model::EvalPoint;
use c2pi::tensor::Tensor;
use common::{images, mixed_spec, rng};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn prefix_then_suffix_is_forward(seed in 0u64..1000, which in 0usize..64) {
        let net = mixed_spec().init(seed).unwrap();
        let x = images(2, net.spec.input_shape, seed + 1);
        let points = net.spec.eval_points().unwrap();
        let p = points[which % points.len()];
        let a = net.forward_prefix(&x, p).unwrap();
        prop_assert_eq!(a.shape()[1..].to_vec(), net.spec.activation_shape(p).unwrap());
        prop_assert_eq!(net.forward_suffix(&a, p).unwrap(), net.forward(&x).unwrap());
    }

    #[test]
    fn eval_point_text_roundtrip(block in 1usize..200, post_relu: bool) {
        let p = if post_relu { EvalPoint::relu(block) } else { EvalPoint::linear(block) };
        prop_assert_eq!(p.to_string().parse::<EvalPoint>().unwrap(), p);
    }

    #[test]
    fn shares_reconstruct_exactly(words in prop::collection::vec(any::<u64>(), 1..64), seed: u64) {
        let x = RingTensor::from_u64(vec![words.len()], words.clone()).unwrap();
        let (c, s) = share(&x, &mut rng(seed));
        prop_assert_eq!(reconstruct(&c, &s).unwrap().to_u64(), words);
    }

    #[test]
    fn fixed_point_roundtrip_error_is_half_an_ulp(v in -1000.0f64..1000.0, f in 8u32..24) {
        let cfg = FixedCfg::new(f).unwrap();
        let back = cfg.decode(cfg.encode(v).unwrap());
        prop_assert!((back - v).abs() <= 0.5 / cfg.scale() + 1e-12);
    }

    #[test]
    fn boundary_is_after_every_success_and_meets_accuracy(
        ssim in prop::collection::vec(0.0f64..1.0, 2..12),
        acc in prop::collection::vec(0.0f64..1.0, 2..12),
    ) {
        let n = ssim.len().min(acc.len());
        let points: Vec<EvalPoint> = (0..n).map(|i| EvalPoint::linear(i + 1)).collect();
        let idx = |p: EvalPoint| p.block - 1;
        let cfg = SearchConfig::new(0.3, 0.5, 0.1);
        match search_boundary(&points, |p| Ok(ssim[idx(p)]), |p, _| Ok(acc[idx(p)]), &cfg) {
            Ok(r) => {
                let b = idx(r.boundary);
                prop_assert!(acc[b] >= 0.5);
                prop_assert!((b..n - 1).all(|i| ssim[i] < 0.3));
                prop_assert_eq!(r.degenerate, (0..n - 1).all(|i| ssim[i] < 0.3));
            }
            Err(e) => prop_assert!(e.to_string().contains("no boundary"), "{}", e),
        }
    }

    #[test]
    fn clamp_is_idempotent(seed: u64) {
        let x = Tensor::uniform(&[3, 5], -2.0, 2.0, &mut rng(seed));
        let c = x.clamp(0.0, 1.0);
        prop_assert_eq!(c.clamp(0.0, 1.0), c);
    }
}
