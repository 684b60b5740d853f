//! Portable integer-only generator shared by weight initialisation and
//! progressive sampling.

/// SplitMix64. Fully specified so that streams are reproducible in any
/// language: `x += 0x9E3779B97F4A7C15`, then the standard two-multiply finaliser.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Top 16 bits of the next output, uniform on `[0, 65536)`.
    pub fn next_u16(&mut self) -> u32 {
        (self.next_u64() >> 48) as u32
    }

    /// Uniform on `(0, 1]` with 53 bits of resolution.
    pub fn next_open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via the cosine branch of Box-Muller (one draw per pair).
    pub fn next_normal(&mut self) -> f64 {
        let u1 = self.next_open01();
        let u2 = self.next_open01();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * std::f64::consts::PI * u2)
    }

    /// Normal with standard deviation `std`, redrawn until it falls inside
    /// `±2·std`.
    pub fn next_trunc_normal(&mut self, std: f64) -> f64 {
        loop {
            let z = self.next_normal();
            if z.abs() <= 2.0 {
                return z * std;
            }
        }
    }
}
