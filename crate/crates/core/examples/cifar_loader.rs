//! Load a CIFAR-10 binary batch and print its label histogram. Without a
//! path, parses a two-record buffer built in memory.
//!
//! cargo run --release --example cifar_loader -- [data_batch_1.bin]

use c2pi::data::{load_cifar10, parse_cifar10, Split};

fn main() -> c2pi::Result<()> {
    let data = match std::env::args().nth(1) {
        Some(path) => load_cifar10(path.as_ref(), Split::Train)?,
        None => {
            let mut bytes = Vec::new();
            for label in [3u8, 7] {
                bytes.push(label);
                bytes.extend((0..3072).map(|i| (i % 256) as u8));
            }
            parse_cifar10(&bytes, Split::Train)?
        }
    };
    let mut counts = vec![0usize; data.num_classes];
    for &l in &data.labels {
        counts[l] += 1;
    }
    println!("{} images of shape {:?}", data.len(), data.image_shape());
    println!("label counts {counts:?}");
    println!(
        "pixel range [{:.3}, {:.3}]",
        data.images
            .data()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min),
        data.images
            .data()
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    );
    Ok(())
}
