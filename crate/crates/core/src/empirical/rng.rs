//! Seeded random streams.
//!
//! Every trial seed drives one ChaCha8 generator per pipeline stage, told
//! apart by the ChaCha stream id, so changing how one stage consumes
//! randomness never perturbs another. Normal variates use the Box–Muller
//! transform on 53-bit uniforms.

use rand_chacha::rand_core::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Teachers = 1,
    SourceData = 2,
    TargetData = 3,
    Mask = 4,
    Spectrum = 5,
    Probe = 6,
}

pub struct StageRng {
    inner: ChaCha8Rng,
    spare: Option<f64>,
}

impl StageRng {
    pub fn new(seed: u64, stream: Stream) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream as u64);
        StageRng { inner, spare: None }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let radius = (-2.0 * self.uniform().ln()).sqrt();
        let angle = std::f64::consts::TAU * self.uniform();
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }

    pub fn fill_gaussian(&mut self, out: &mut [f64]) {
        for x in out {
            *x = self.gaussian();
        }
    }

    /// Access for `rand_distr` samplers.
    pub fn raw(&mut self) -> &mut ChaCha8Rng {
        &mut self.inner
    }
}
