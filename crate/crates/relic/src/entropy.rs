//! Integer range coding driven by quantized model PMFs.
//!
//! The coder is byte-oriented with 32-bit registers and 16-bit frequency
//! totals. Everything on this path is integer arithmetic, so encoder/decoder
//! agreement reduces to agreement on the PMF bit patterns.
//!
//! Chunk payload layout: big-endian renormalization bytes as they are shed
//! from the top of `low`, followed by a single flush byte that pins the final
//! code value (carries are folded back into already-written bytes). The
//! decoder zero-pads reads past the payload; a valid stream needs at most
//! three such virtual bytes, anything deeper reports truncation.

use crate::error::{Error, Result};

/// Fixed frequency total: every table sums to exactly 2^16.
pub const FREQ_TOTAL: u32 = 1 << 16;
const FREQ_BITS: u32 = 16;
/// Renormalization threshold: `range` stays at or above 2^24 between symbols.
const TOP: u32 = 1 << 24;
/// Virtual zero bytes a decoder may read past the payload before it is
/// considered truncated (4-byte code prefetch minus the 1 flush byte).
const TAIL_SLACK: usize = 4;

/// Integer frequency table over the reflectance alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqTable {
    counts: Vec<u32>,
    /// cum[i] = counts[0] + .. + counts[i-1]; cum[A] = 2^16.
    cum: Vec<u32>,
}

impl FreqTable {
    pub fn from_counts(counts: Vec<u32>) -> Result<Self> {
        if counts.len() < 2 {
            return Err(Error::validation("frequency table needs at least 2 symbols"));
        }
        let mut cum = Vec::with_capacity(counts.len() + 1);
        let mut acc: u64 = 0;
        cum.push(0);
        for &c in &counts {
            if c == 0 {
                return Err(Error::validation("frequency table contains a zero count"));
            }
            acc += u64::from(c);
            cum.push(acc as u32);
        }
        if acc != u64::from(FREQ_TOTAL) {
            return Err(Error::validation(format!(
                "frequency table sums to {acc}, expected {FREQ_TOTAL}"
            )));
        }
        Ok(FreqTable { counts, cum })
    }

    pub fn alphabet(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    #[inline]
    fn interval(&self, s: usize) -> (u32, u32) {
        (self.cum[s], self.counts[s])
    }

    /// Symbol whose cumulative interval contains `target`.
    #[inline]
    fn lookup(&self, target: u32) -> usize {
        // partition_point returns the first index with cum > target; the
        // symbol owning the interval is one before it.
        self.cum.partition_point(|&c| c <= target) - 1
    }

    /// Ideal code length of `s` under the quantized distribution, in bits.
    pub fn bits(&self, s: usize) -> f64 {
        f64::from(FREQ_BITS) - f64::from(self.counts[s]).log2()
    }
}

/// Deterministic largest-remainder quantization of a PMF to integer counts
/// summing to 2^16, with a floor of one count per symbol so every symbol stays
/// encodable.
pub fn quantize_pmf(pmf: &[f64]) -> Result<FreqTable> {
    let a = pmf.len();
    if a < 2 || a > FREQ_TOTAL as usize {
        return Err(Error::validation(format!(
            "alphabet size {a} outside [2, {FREQ_TOTAL}]"
        )));
    }
    if pmf.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::validation("PMF contains negative or non-finite entries"));
    }

    let mut counts = vec![0u32; a];
    let mut remainders = vec![0.0f64; a];
    let mut total: u64 = 0;
    for i in 0..a {
        let scaled = pmf[i] * f64::from(FREQ_TOTAL);
        let base = scaled.floor().clamp(0.0, f64::from(FREQ_TOTAL));
        remainders[i] = scaled - base;
        let c = (base as u32).max(1);
        counts[i] = c;
        total += u64::from(c);
    }

    if total < u64::from(FREQ_TOTAL) {
        // Hand out the deficit by largest remainder, lowest index first on ties.
        let mut order: Vec<usize> = (0..a).collect();
        order.sort_by(|&i, &j| {
            remainders[j]
                .partial_cmp(&remainders[i])
                .expect("remainders are finite")
                .then(i.cmp(&j))
        });
        let mut deficit = (u64::from(FREQ_TOTAL) - total) as usize;
        while deficit > 0 {
            for &i in &order {
                if deficit == 0 {
                    break;
                }
                counts[i] += 1;
                deficit -= 1;
            }
        }
    } else if total > u64::from(FREQ_TOTAL) {
        // Floors of one count overshot; take the excess from the largest
        // counts, lowest index first on ties.
        let mut excess = total - u64::from(FREQ_TOTAL);
        while excess > 0 {
            let mut best = 0usize;
            for i in 1..a {
                if counts[i] > counts[best] {
                    best = i;
                }
            }
            debug_assert!(counts[best] > 1);
            counts[best] -= 1;
            excess -= 1;
        }
    }

    FreqTable::from_counts(counts)
}

/// Range encoder for one chunk. Owns its output buffer so pending carries can
/// be folded into already-written bytes.
#[derive(Debug)]
pub struct RangeEncoder {
    low: u32,
    range: u32,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder {
            low: 0,
            range: u32::MAX,
            out: Vec::new(),
        }
    }

    fn propagate_carry(&mut self) {
        for b in self.out.iter_mut().rev() {
            if *b == 0xFF {
                *b = 0;
            } else {
                *b += 1;
                return;
            }
        }
        // A carry can only occur after at least one renormalization byte was
        // emitted, so the cascade always terminates inside the buffer.
        unreachable!("carry before any output byte");
    }

    pub fn encode(&mut self, table: &FreqTable, symbol: usize) {
        let (cum, freq) = table.interval(symbol);
        let r = self.range / FREQ_TOTAL;
        let sum = u64::from(self.low) + u64::from(r) * u64::from(cum);
        if sum > u64::from(u32::MAX) {
            self.propagate_carry();
        }
        self.low = sum as u32;
        // The top symbol absorbs the division remainder of the range.
        self.range = if cum + freq == FREQ_TOTAL {
            self.range - r * cum
        } else {
            r * freq
        };
        while self.range < TOP {
            self.out.push((self.low >> 24) as u8);
            self.low <<= 8;
            self.range <<= 8;
        }
    }

    /// Flushes and returns the payload. Emits the single byte that pins a code
    /// value with an all-zero tail inside the final interval.
    pub fn finish(mut self) -> Vec<u8> {
        let mask = (1u64 << 24) - 1;
        let v = (u64::from(self.low) + mask) & !mask;
        if v >> 32 != 0 {
            self.propagate_carry();
        }
        self.out.push(((v >> 24) & 0xFF) as u8);
        self.out
    }
}

/// Range decoder over one chunk payload.
#[derive(Debug)]
pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    /// Offset of the code value within the current interval.
    code: u32,
    range: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self> {
        let mut d = RangeDecoder {
            data,
            pos: 0,
            code: 0,
            range: u32::MAX,
        };
        for _ in 0..4 {
            let b = d.next_byte()?;
            d.code = (d.code << 8) | u32::from(b);
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = if self.pos < self.data.len() {
            self.data[self.pos]
        } else if self.pos < self.data.len() + TAIL_SLACK {
            0
        } else {
            return Err(Error::truncation(format!(
                "range-coded chunk exhausted after {} payload bytes",
                self.data.len()
            )));
        };
        self.pos += 1;
        Ok(b)
    }

    pub fn decode(&mut self, table: &FreqTable) -> Result<usize> {
        let r = self.range / FREQ_TOTAL;
        let target = (self.code / r).min(FREQ_TOTAL - 1);
        let symbol = table.lookup(target);
        let (cum, freq) = table.interval(symbol);
        self.code -= r * cum;
        self.range = if cum + freq == FREQ_TOTAL {
            self.range - r * cum
        } else {
            r * freq
        };
        while self.range < TOP {
            let b = self.next_byte()?;
            self.code = (self.code << 8) | u32::from(b);
            self.range <<= 8;
        }
        Ok(symbol)
    }
}
