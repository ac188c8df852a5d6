//! Built-in toy architectures. `width` is the channel count of the first
//! conv; deeper layers use small multiples of it.

use super::ModelSpec;
use crate::error::{Error, Result};
use crate::tensor::Layer;

pub const MODEL_NAMES: [&str; 4] = ["simple_cnn", "tiny_alex", "tiny_vgg8", "tiny_vgg11"];

fn conv_relu(out: usize) -> [Layer; 2] {
    [Layer::conv(out, 3, 1, 1, 1), Layer::Relu]
}

fn pool() -> Layer {
    Layer::max_pool(2, 2)
}

fn check_width(width: usize) -> Result<()> {
    if width == 0 {
        return Err(Error::InvalidArgument(
            "model width must be positive".into(),
        ));
    }
    Ok(())
}

/// conv-relu-pool, conv-relu-pool, dense.
pub fn simple_cnn(input_shape: [usize; 3], num_classes: usize, width: usize) -> Result<ModelSpec> {
    check_width(width)?;
    let mut layers = Vec::new();
    layers.extend(conv_relu(width));
    layers.push(pool());
    layers.extend(conv_relu(2 * width));
    layers.push(pool());
    layers.push(Layer::Flatten);
    layers.push(Layer::dense(num_classes));
    ModelSpec::new("simple_cnn", input_shape, num_classes, layers)
}

/// Five blocks in the AlexNet pattern: four convs (pooling after the 1st,
/// 2nd and 4th) and a dense classifier.
pub fn tiny_alex(input_shape: [usize; 3], num_classes: usize, width: usize) -> Result<ModelSpec> {
    check_width(width)?;
    let mut layers = vec![Layer::conv(width, 5, 1, 2, 1), Layer::Relu, pool()];
    layers.extend(conv_relu(2 * width));
    layers.push(pool());
    layers.extend(conv_relu(2 * width));
    layers.extend(conv_relu(2 * width));
    layers.push(pool());
    layers.push(Layer::Flatten);
    layers.push(Layer::dense(num_classes));
    ModelSpec::new("tiny_alex", input_shape, num_classes, layers)
}

/// Six convs in pairs (pool after each pair), dense-relu, dense: 15
/// evaluation points.
pub fn tiny_vgg8(input_shape: [usize; 3], num_classes: usize, width: usize) -> Result<ModelSpec> {
    check_width(width)?;
    let mut layers = Vec::new();
    for w in [width, 2 * width, 4 * width] {
        layers.extend(conv_relu(w));
        layers.extend(conv_relu(w));
        layers.push(pool());
    }
    layers.push(Layer::Flatten);
    layers.push(Layer::dense(4 * width));
    layers.push(Layer::Relu);
    layers.push(Layer::dense(num_classes));
    ModelSpec::new("tiny_vgg8", input_shape, num_classes, layers)
}

/// Eight convs (VGG-11 grouping 1-1-2-2-2, pool after each group but the
/// last) and three dense layers. Needs inputs of at least 16x16.
pub fn tiny_vgg11(input_shape: [usize; 3], num_classes: usize, width: usize) -> Result<ModelSpec> {
    check_width(width)?;
    let mut layers = Vec::new();
    let groups: [(usize, usize); 5] = [
        (1, width),
        (1, 2 * width),
        (2, 4 * width),
        (2, 4 * width),
        (2, 4 * width),
    ];
    for (g, (n, w)) in groups.into_iter().enumerate() {
        for _ in 0..n {
            layers.extend(conv_relu(w));
        }
        if g < 4 {
            layers.push(pool());
        }
    }
    layers.push(Layer::Flatten);
    for _ in 0..2 {
        layers.push(Layer::dense(4 * width));
        layers.push(Layer::Relu);
    }
    layers.push(Layer::dense(num_classes));
    ModelSpec::new("tiny_vgg11", input_shape, num_classes, layers)
}

pub fn by_name(
    name: &str,
    input_shape: [usize; 3],
    num_classes: usize,
    width: usize,
) -> Result<ModelSpec> {
    match name {
        "simple_cnn" => simple_cnn(input_shape, num_classes, width),
        "tiny_alex" => tiny_alex(input_shape, num_classes, width),
        "tiny_vgg8" => tiny_vgg8(input_shape, num_classes, width),
        "tiny_vgg11" => tiny_vgg11(input_shape, num_classes, width),
        other => Err(Error::InvalidArgument(format!(
            "unknown model {other:?}; expected one of {}",
            MODEL_NAMES.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count_linear(spec: &ModelSpec) -> usize {
        spec.layers.iter().filter(|l| l.is_linear()).count()
    }

    #[test]
    fn block_counts() {
        let s = [3, 16, 16];
        assert_eq!(count_linear(&simple_cnn(s, 3, 4).unwrap()), 3);
        assert_eq!(count_linear(&tiny_alex(s, 3, 4).unwrap()), 5);
        assert_eq!(count_linear(&tiny_vgg8(s, 3, 4).unwrap()), 8);
        assert_eq!(count_linear(&tiny_vgg11(s, 3, 4).unwrap()), 11);
    }

    #[test]
    fn vgg8_points() {
        let pts: Vec<String> = tiny_vgg8([3, 16, 16], 3, 4)
            .unwrap()
            .eval_points()
            .unwrap()
            .iter()
            .map(|p| p.to_string())
            .collect();
        assert_eq!(pts.len(), 15);
        assert_eq!(pts.first().unwrap(), "1");
        assert_eq!(pts.last().unwrap(), "8");
        assert!(pts.contains(&"7.5".to_string()));
    }

    #[test]
    fn unknown_name() {
        let err = by_name("resnet", [3, 16, 16], 3, 4)
            .unwrap_err()
            .to_string();
        assert!(err.contains("resnet") && err.contains("tiny_vgg8"), "{err}");
    }
}
