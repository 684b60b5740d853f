//! Discretized Gaussians over bounded integer alphabets and their 16-bit
//! quantized CDF tables.

use crate::model::{SIGMA_MAX, SIGMA_MIN};
use crate::{Error, Result};

/// Probability precision of quantized tables.
pub const PRECISION_BITS: u32 = 16;
/// Total count of every quantized table.
pub const TOTAL: u32 = 1 << PRECISION_BITS;

/// Integers in `[−s_max, s_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SymbolAlphabet {
    s_max: i32,
}

impl SymbolAlphabet {
    pub fn new(s_max: u32) -> Result<Self> {
        if s_max == 0 || s_max as usize * 2 + 1 > TOTAL as usize {
            return Err(Error::AlphabetTooLarge(s_max as usize * 2 + 1));
        }
        Ok(Self { s_max: s_max as i32 })
    }

    pub fn s_max(&self) -> i32 {
        self.s_max
    }

    pub fn size(&self) -> usize {
        2 * self.s_max as usize + 1
    }

    pub fn index(&self, s: i32) -> Result<usize> {
        if s.abs() > self.s_max {
            return Err(Error::SymbolRange {
                symbol: s,
                bound: self.s_max,
            });
        }
        Ok((s + self.s_max) as usize)
    }

    pub fn symbol(&self, index: usize) -> i32 {
        index as i32 - self.s_max
    }

    /// Rounds and clamps a real value onto the alphabet.
    pub fn quantize(&self, v: f32) -> i32 {
        (v.round() as i32).clamp(-self.s_max, self.s_max)
    }
}

/// Standard normal CDF in double precision.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// `pmf(s) = Φ((s+½)/σ) − Φ((s−½)/σ)`, with all mass beyond the edges folded
/// into `±s_max`. Index `i` holds symbol `i − s_max`.
pub fn gaussian_pmf(sigma: f64, alphabet: SymbolAlphabet) -> Result<Vec<f64>> {
    if !(SIGMA_MIN as f64..=SIGMA_MAX as f64).contains(&sigma) {
        return Err(Error::ScaleRange(sigma));
    }
    let n = alphabet.size();
    let s_max = alphabet.s_max() as f64;
    let mut pmf = Vec::with_capacity(n);
    let mut prev = 0.0;
    for i in 0..n - 1 {
        let upper = std_normal_cdf((i as f64 - s_max + 0.5) / sigma);
        pmf.push(upper - prev);
        prev = upper;
    }
    pmf.push(1.0 - prev);
    Ok(pmf)
}

/// Cumulative counts `cum[0] = 0 < … < cum[n] = 65536`; symbol `i` owns
/// `[cum[i], cum[i+1])`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QuantizedCdf {
    cum: Vec<u32>,
}

impl QuantizedCdf {
    /// Checks the table invariants.
    pub fn from_cum(cum: Vec<u32>) -> Result<Self> {
        let ok = cum.len() >= 2
            && cum[0] == 0
            && *cum.last().unwrap() == TOTAL
            && cum.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(Error::Format("cumulative table must rise strictly from 0 to 65536".into()));
        }
        Ok(Self { cum })
    }

    pub fn size(&self) -> usize {
        self.cum.len() - 1
    }

    pub fn cum(&self) -> &[u32] {
        &self.cum
    }

    pub fn freq(&self, i: usize) -> u32 {
        self.cum[i + 1] - self.cum[i]
    }

    /// `−log2(freq / 65536)`.
    pub fn bits(&self, i: usize) -> f64 {
        PRECISION_BITS as f64 - (self.freq(i) as f64).log2()
    }

    /// Smallest index `i` with `cum[i+1] > u`, for `u < 65536`.
    pub fn lookup(&self, u: u32) -> usize {
        self.cum[1..].partition_point(|&c| c <= u)
    }
}

/// Quantizes a pmf to integer counts summing to 65536: each symbol gets one
/// count, the remaining `65536 − n` are split by largest remainder (ties go to
/// the lower index).
pub fn quantize_cdf(pmf: &[f64]) -> Result<QuantizedCdf> {
    let n = pmf.len();
    if n == 0 || n > TOTAL as usize {
        return Err(Error::AlphabetTooLarge(n));
    }
    if pmf.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::NonFinite("pmf"));
    }
    let sum: f64 = pmf.iter().sum();
    if sum <= 0.0 {
        return Err(Error::NonFinite("pmf sum"));
    }
    let spare = (TOTAL as usize - n) as f64;
    let mut counts = Vec::with_capacity(n);
    let mut fracs = Vec::with_capacity(n);
    let mut assigned = 0i64;
    for (i, &p) in pmf.iter().enumerate() {
        let share = p / sum * spare;
        let base = share.floor();
        counts.push(1 + base as u32);
        fracs.push((share - base, i));
        assigned += base as i64;
    }
    let mut left = spare as i64 - assigned;
    fracs.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    // Rounding can leave the floors a few counts off in either direction;
    // walk the remainder order (cyclically) to settle the difference.
    let mut k = 0;
    while left > 0 {
        counts[fracs[k % n].1] += 1;
        left -= 1;
        k += 1;
    }
    k = n;
    while left < 0 {
        k = if k == 0 { n - 1 } else { k - 1 };
        let idx = fracs[k].1;
        if counts[idx] > 1 {
            counts[idx] -= 1;
            left += 1;
        }
    }
    let mut cum = Vec::with_capacity(n + 1);
    let mut acc = 0u32;
    cum.push(0);
    for c in counts {
        acc += c;
        cum.push(acc);
    }
    Ok(QuantizedCdf { cum })
}

/// Quantized table of the discretized `N(0, σ)` over `alphabet`.
pub fn gaussian_cdf(sigma: f64, alphabet: SymbolAlphabet) -> Result<QuantizedCdf> {
    quantize_cdf(&gaussian_pmf(sigma, alphabet)?)
}
