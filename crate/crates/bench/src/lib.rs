//! Shared fixtures for the criterion benchmarks.

use wframe::io::{synth_texture, TextureKind};
use wframe::{FilterBank, GaborSpec, GridSignal};

/// The 16x16 / K=8 Gabor setting used by the stability experiment.
pub fn gabor_bank(theta: f64) -> FilterBank {
    let bank = FilterBank::gabor(&GaborSpec::default(), 1.0).expect("default Gabor spec");
    let k = bank.len();
    bank.with_theta(vec![theta; k]).expect("theta length matches")
}

pub fn textures(count: usize) -> Vec<GridSignal> {
    synth_texture(TextureKind::Stripes, &[16, 16], 7, count)
        .expect("texture generation")
        .items()
        .to_vec()
}
