#![allow(dead_code)]

use c2pi::model::{zoo, EvalPoint, ModelSpec, Network};
use c2pi::tensor::{Layer, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn images(n: usize, shape: [usize; 3], seed: u64) -> Tensor {
    Tensor::uniform(&[n, shape[0], shape[1], shape[2]], 0.0, 1.0, &mut rng(seed))
}

/// Every layer kind the crypto phase supports, on an 8x8 input.
pub fn mixed_spec() -> ModelSpec {
    ModelSpec::new(
        "mixed",
        [2, 8, 8],
        3,
        vec![
            Layer::conv(3, 3, 1, 1, 1),
            Layer::Relu,
            Layer::max_pool(2, 2),
            Layer::conv(4, 3, 1, 2, 2),
            Layer::avg_pool(2, 2),
            Layer::Relu,
            Layer::Flatten,
            Layer::dense(5),
            Layer::Relu,
            Layer::dense(3),
        ],
    )
    .unwrap()
}

pub fn vgg8(width: usize, seed: u64) -> Network {
    zoo::tiny_vgg8([3, 16, 16], 3, width)
        .unwrap()
        .init(seed)
        .unwrap()
}

pub fn points(net: &Network) -> Vec<EvalPoint> {
    net.spec.eval_points().unwrap()
}

pub mod toy {
    use std::sync::OnceLock;

    use c2pi::data::{synthetic_split, Dataset};
    use c2pi::model::{train_model, zoo, TrainConfig, TrainedModel};
    use c2pi::tensor::SgdConfig;

    pub const SEED: u64 = 1;

    pub fn data() -> &'static (Dataset, Dataset) {
        static D: OnceLock<(Dataset, Dataset)> = OnceLock::new();
        D.get_or_init(|| synthetic_split(SEED, 3, 16, 500, 100).unwrap())
    }

    /// TinyVGG-8 (base width 8) trained with the pinned toy recipe.
    pub fn vgg8() -> &'static TrainedModel {
        static M: OnceLock<TrainedModel> = OnceLock::new();
        M.get_or_init(|| {
            let (train, test) = data();
            let spec = zoo::tiny_vgg8([3, 16, 16], 3, 8).unwrap();
            let config = TrainConfig {
                sgd: SgdConfig {
                    learning_rate: 0.03,
                    momentum: 0.9,
                    seed: SEED,
                },
                epochs: 20,
                batch_size: 32,
            };
            train_model(&spec, train, Some(test), &config).unwrap()
        })
    }
}
