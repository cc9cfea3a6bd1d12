//! Counter-based reproducible random streams.
//!
//! A stream is addressed by `(seed, stream_id)`; the k-th draw is a pure
//! function of that address, so paths can be generated in any order, on any
//! number of threads, and replayed exactly. Distinct stream ids start the
//! underlying splitmix sequence at well-separated states.

const GOLDEN: u64 = 0x9E3779B97F4A7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Deterministic Gaussian/uniform stream for one simulation path.
#[derive(Debug, Clone)]
pub struct RngStream {
    state: u64,
    spare_normal: Option<f64>,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let state = mix64(mix64(seed ^ GOLDEN) ^ mix64(stream_id.wrapping_mul(GOLDEN) ^ 0x6A09E667F3BCC909));
        Self {
            state,
            spare_normal: None,
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    /// Uniform draw in `[0, 1)`.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `(0, 1]`, safe under `ln`.
    #[inline]
    fn next_open01(&mut self) -> f64 {
        (((self.next_u64() >> 11) + 1) as f64) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw (Box-Muller; the paired draw is cached).
    #[inline]
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let r = (-2.0 * self.next_open01().ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * self.next_f64()).sin_cos();
        self.spare_normal = Some(r * s);
        r * c
    }
}

/// Mixes a node identifier into a stream id, for per-node path streams.
pub fn stream_id_for_node(node_index: u64, path_index: u64) -> u64 {
    mix64(node_index.wrapping_mul(0xD1342543DE82EF95) ^ path_index)
}
