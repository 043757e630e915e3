//! Shared fixture builders for the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pantext_core::geometry::Quad;
use pantext_core::nms::ScoredBox;
use pantext_core::pipeline::LoadedImage;
use pantext_core::tensor::{ConvParams, Tensor};

pub fn random_tensor(shape: [usize; 4], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
}

pub fn conv_3x3(out_ch: usize, in_ch: usize, dilation: usize, seed: u64) -> ConvParams {
    let weights = random_tensor([out_ch, in_ch, 3, 3], seed);
    ConvParams::new(weights, vec![0.0; out_ch], 1, dilation, dilation).expect("valid conv")
}

/// Clusters of overlapping convex quads, scored, for NMS benchmarks.
pub fn scored_quads(n: usize, seed: u64) -> Vec<ScoredBox<Quad>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let cx = rng.random_range(0.0..80.0);
            let cy = rng.random_range(0.0..80.0);
            let w = rng.random_range(4.0..20.0);
            let h = rng.random_range(3.0..10.0);
            let skew = rng.random_range(-2.0..2.0);
            let quad = Quad::new([
                [cx - w / 2.0 + skew, cy - h / 2.0],
                [cx + w / 2.0 + skew, cy - h / 2.0],
                [cx + w / 2.0 - skew, cy + h / 2.0],
                [cx - w / 2.0 - skew, cy + h / 2.0],
            ])
            .expect("sheared rectangle is convex");
            ScoredBox::new(quad, rng.random_range(0.0..1.0), i)
        })
        .collect()
}

/// Deterministic synthetic input at network resolution.
pub fn bench_image(h: usize, w: usize) -> LoadedImage {
    let tensor = Tensor::from_fn([1, 3, h, w], |_, c, y, x| {
        ((c + 3 * y + 5 * x) % 23) as f64 / 23.0
    });
    LoadedImage::from_network_input(tensor)
}
