//! Self-synchronous scrambler, polynomial 1 + x^14 + x^15.
//!
//! Bits are processed MSB first within each octet. The register holds the
//! last fifteen *scrambled* bits, so a descrambler recovers from any state
//! after fifteen bits of correct input.

/// Register contents both ends use when the data phase starts.
pub const DEFAULT_SEED: u16 = 0x7F80;

const MASK: u16 = 0x7FFF;

#[inline]
fn feedback(reg: u16) -> u8 {
    // bit 13 holds s[n-14], bit 14 holds s[n-15]
    (((reg >> 13) ^ (reg >> 14)) & 1) as u8
}

#[derive(Debug, Clone)]
pub struct Scrambler {
    reg: u16,
}

impl Scrambler {
    pub fn new(seed: u16) -> Self {
        Self { reg: seed & MASK }
    }

    pub fn scramble_octet(&mut self, octet: u8) -> u8 {
        let mut out = 0u8;
        for i in (0..8).rev() {
            let d = (octet >> i) & 1;
            let s = d ^ feedback(self.reg);
            self.reg = ((self.reg << 1) | s as u16) & MASK;
            out |= s << i;
        }
        out
    }
}

impl Default for Scrambler {
    fn default() -> Self {
        Self::new(DEFAULT_SEED)
    }
}

#[derive(Debug, Clone)]
pub struct Descrambler {
    reg: u16,
}

impl Descrambler {
    pub fn new(seed: u16) -> Self {
        Self { reg: seed & MASK }
    }

    pub fn descramble_octet(&mut self, octet: u8) -> u8 {
        let mut out = 0u8;
        for i in (0..8).rev() {
            let s = (octet >> i) & 1;
            let d = s ^ feedback(self.reg);
            self.reg = ((self.reg << 1) | s as u16) & MASK;
            out |= d << i;
        }
        out
    }
}

impl Default for Descrambler {
    fn default() -> Self {
        Self::new(DEFAULT_SEED)
    }
}

/// Scrambles a whole sequence starting from [`DEFAULT_SEED`]. Identity when
/// `enabled` is false.
pub fn scramble(octets: &[u8], enabled: bool) -> Vec<u8> {
    if !enabled {
        return octets.to_vec();
    }
    let mut s = Scrambler::default();
    octets.iter().map(|&o| s.scramble_octet(o)).collect()
}

pub fn descramble(octets: &[u8], enabled: bool) -> Vec<u8> {
    if !enabled {
        return octets.to_vec();
    }
    let mut d = Descrambler::default();
    octets.iter().map(|&o| d.descramble_octet(o)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> Vec<u8> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random()).collect()
    }

    #[test]
    fn disabled_is_identity() {
        let data = random(100, 1);
        assert_eq!(scramble(&data, false), data);
        assert_eq!(descramble(&data, false), data);
    }

    #[test]
    fn roundtrip_4096() {
        let data = random(4096, 2);
        let s = scramble(&data, true);
        assert_ne!(s, data);
        assert_eq!(descramble(&s, true), data);
    }

    #[test]
    fn matches_bitwise_recurrence() {
        // s[n] = d[n] ^ s[n-14] ^ s[n-15] on an explicit bit vector
        let data = random(64, 3);
        let mut bits: Vec<u8> = Vec::new();
        let mut hist: Vec<u8> = (0..15).rev().map(|i| ((DEFAULT_SEED >> i) & 1) as u8).collect();
        for &o in &data {
            for i in (0..8).rev() {
                let d = (o >> i) & 1;
                let n = hist.len();
                let s = d ^ hist[n - 14] ^ hist[n - 15];
                hist.push(s);
                bits.push(s);
            }
        }
        let expected: Vec<u8> = bits.chunks(8).map(|c| c.iter().fold(0, |a, &b| (a << 1) | b)).collect();
        assert_eq!(scramble(&data, true), expected);
    }

    #[test]
    fn error_spreads_over_at_most_two_following_octets() {
        let data = random(512, 4);
        let mut s = scramble(&data, true);
        for pos in [0usize, 17, 200, 509] {
            let orig = s[pos];
            s[pos] ^= 0x5A;
            let d = descramble(&s, true);
            let bad: Vec<usize> = (0..data.len()).filter(|&i| d[i] != data[i]).collect();
            assert!(!bad.is_empty());
            assert!(bad.iter().all(|&i| i >= pos && i <= pos + 2), "{pos}: {bad:?}");
            s[pos] = orig;
        }
    }

    #[test]
    fn descrambler_resyncs_from_wrong_seed() {
        let data = random(64, 5);
        let s = scramble(&data, true);
        let mut d = Descrambler::new(0x1234);
        let out: Vec<u8> = s.iter().map(|&o| d.descramble_octet(o)).collect();
        assert_eq!(&out[2..], &data[2..]);
    }
}
