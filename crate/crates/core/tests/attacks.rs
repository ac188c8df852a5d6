mod common;

use c2pi::attacks::{
    dump_images, load_images, mla_attack, partition_subblocks, run_attack, AttackCache,
    AttackConfig, AttackKind, InversionMode, InversionModelSpec,
};
use c2pi::data::synthetic_split;
use c2pi::model::{ModelSpec, Network};
use c2pi::tensor::{Layer, LayerParams, Tensor};
use common::{images, mixed_spec, vgg8};

/// A single-channel 1x1 conv with unit weight: the prefix to the first
/// point is the identity on images in [0, 1].
fn identity_prefix() -> Network {
    let spec = ModelSpec::new(
        "ident",
        [1, 8, 8],
        2,
        vec![
            Layer::conv(1, 1, 1, 0, 1),
            Layer::Relu,
            Layer::Flatten,
            Layer::dense(2),
        ],
    )
    .unwrap();
    let mut net = spec.init(0).unwrap();
    net.params[0] = Some(LayerParams {
        weight: Tensor::full(&[1, 1, 1, 1], 1.0),
        bias: Tensor::zeros(&[1]),
    });
    net
}

#[test]
fn mla_recovers_through_an_identity_prefix() {
    let net = identity_prefix();
    let x = images(3, [1, 8, 8], 4);
    let p = net.spec.eval_points().unwrap()[0];
    let target = net.forward_prefix(&x, p).unwrap();
    let cfg = AttackConfig {
        iterations: 300,
        lr: 0.1,
        ..AttackConfig::default()
    };
    let out = mla_attack(&net, p, &target, &cfg).unwrap();
    assert_eq!(out.objective.len(), 301);
    assert!(
        *out.objective.last().unwrap() <= 1e-6,
        "{:?}",
        out.objective.last()
    );
    assert!(out.objective.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    assert!(out.recovered.max_abs_diff(&x).unwrap() < 1e-3);
}

#[test]
fn mla_rejects_a_mis_shaped_target() {
    let net = vgg8(4, 1);
    let p = net.spec.eval_points().unwrap()[2];
    let err = mla_attack(
        &net,
        p,
        &Tensor::zeros(&[1, 3, 3, 3]),
        &AttackConfig::default(),
    )
    .unwrap_err();
    assert!(err.to_string().contains("MLA target"), "{err}");
}

#[test]
fn subblocks_tile_the_prefix() {
    let spec = mixed_spec();
    let shapes = spec.layer_shapes().unwrap();
    for p in spec.eval_points().unwrap() {
        let blocks = partition_subblocks(&spec, p).unwrap();
        assert_eq!(blocks[0].layers.start, 0);
        assert_eq!(
            blocks.last().unwrap().layers.end,
            spec.prefix_len(p).unwrap()
        );
        for w in blocks.windows(2) {
            assert_eq!(w[0].layers.end, w[1].layers.start);
            assert_eq!(w[0].out_shape, w[1].in_shape);
        }
        for b in &blocks {
            assert_eq!(b.in_shape, shapes[b.layers.start]);
            assert_eq!(b.out_shape, shapes[b.layers.end]);
        }
    }
}

#[test]
fn inversion_models_map_activations_back_to_images() {
    let net = mixed_spec().init(3).unwrap();
    for p in net.spec.eval_points().unwrap() {
        for mode in [InversionMode::Eina, InversionMode::Dina] {
            let spec = InversionModelSpec::build(&net, p, mode).unwrap();
            assert_eq!(
                spec.input_shape(),
                net.spec.activation_shape(p).unwrap().as_slice()
            );
            assert_eq!(spec.output_shape(), &net.spec.input_shape[..]);
            let inv = spec.init(1).unwrap();
            let a = net
                .forward_prefix(&images(2, net.spec.input_shape, 5), p)
                .unwrap();
            let (out, inputs) = inv.forward_all(&a).unwrap();
            assert_eq!(out.shape(), &[2, 2, 8, 8]);
            assert_eq!(inputs.len(), spec.seams() + 1);
            assert_eq!(inputs[0], a);
        }
    }
}

#[test]
fn cached_inversion_is_reused_and_identical() {
    let net = vgg8(4, 2);
    let (train, test) = synthetic_split(3, 3, 16, 20, 4).unwrap();
    let victims = test.images.slice_batch(0, 4);
    let p = net.spec.eval_points().unwrap()[1];
    let dir = tempfile::tempdir().unwrap();
    let cache = AttackCache::new(dir.path());
    let cfg = AttackConfig {
        epochs: 2,
        batch_size: 16,
        ..AttackConfig::default()
    };
    let first = run_attack(
        AttackKind::Dina,
        &net,
        p,
        &train,
        &victims,
        &cfg,
        Some(&cache),
    )
    .unwrap();
    let files: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(files.len(), 1);
    let second = run_attack(
        AttackKind::Dina,
        &net,
        p,
        &train,
        &victims,
        &cfg,
        Some(&cache),
    )
    .unwrap();
    assert_eq!(first.report, second.report);
    assert_eq!(first.recovered, second.recovered);
    assert!(first.report.per_image_ssim.iter().all(|s| s.is_finite()));
}

#[test]
fn image_dump_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let x = images(3, [3, 4, 4], 8);
    let stem = dir.path().join("dina-2.5");
    dump_images(&stem, &x).unwrap();
    assert_eq!(load_images(&stem).unwrap(), x);
}
