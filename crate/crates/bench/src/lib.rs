//! Shared fixtures for the criterion benchmarks.

use carm_core::codec::ImageU8;
use carm_core::data_io::generate_synthetic;
use carm_core::nn::{build_network, train, ArchId, Model, TrainConfig};
use carm_core::rng::Rng;

/// Deterministic random RGB image.
pub fn random_image(w: usize, h: usize, seed: u64) -> ImageU8 {
    let mut rng = Rng::new(seed);
    let data: Vec<u8> = (0..w * h * 3).map(|_| rng.next_below(256) as u8).collect();
    ImageU8::new(w, h, data).unwrap()
}

/// Small trained toy model over 32x32 synthetic shapes.
pub fn toy_model() -> Model {
    let data = generate_synthetic(4, 8, (32, 32), 1).unwrap();
    let init = build_network(ArchId::Toy, (32, 32, 3), 4, 1).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 16,
        seed: 1,
        ..TrainConfig::default()
    };
    train(&init, &data, &cfg).unwrap()
}
