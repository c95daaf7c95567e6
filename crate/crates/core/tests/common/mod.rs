#![allow(dead_code)]

use pwave::nn::ParamStore;
use pwave::Plane;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Overwrite every parameter with uniform values in `[-scale, scale]`.
pub fn randomize(store: &mut ParamStore, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
}

pub fn random_symbols(width: usize, height: usize, amplitude: i32, rng: &mut impl Rng) -> Plane {
    Plane {
        width,
        height,
        data: (0..width * height).map(|_| rng.gen_range(-amplitude..=amplitude) as f64).collect(),
    }
}

pub fn random_image(width: usize, height: usize, rng: &mut impl Rng) -> Plane {
    Plane {
        width,
        height,
        data: (0..width * height).map(|_| rng.gen_range(0..=255) as f64).collect(),
    }
}
