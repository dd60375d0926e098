//! Pseudo-random binary sequences from Fibonacci LFSRs.

use crate::error::{config, Result};

/// Fibonacci linear-feedback shift register.
///
/// Taps are 1-based polynomial exponents; the register shifts left, feeds
/// the XOR of the tapped bits into bit 0 and emits the old top bit.
#[derive(Clone, Debug)]
pub struct Lfsr {
    state: u64,
    order: u32,
    mask: u64,
    taps: &'static [u32],
}

/// x^32 + x^22 + x^2 + x + 1
pub const PRBS32_TAPS: &[u32] = &[32, 22, 2, 1];
/// x^7 + x^6 + 1
pub const PRBS7_TAPS: &[u32] = &[7, 6];

impl Lfsr {
    /// Register starts from an all-ones fill XOR `seed`.
    pub fn new(order: u32, taps: &'static [u32], seed: u64) -> Result<Self> {
        if !(2..=63).contains(&order) || taps.iter().any(|&t| t == 0 || t > order) {
            return Err(config(format!("bad LFSR order {order} / taps {taps:?}")));
        }
        let mask = (1u64 << order) - 1;
        if seed == 0 {
            return Err(config("PRBS seed must be non-zero"));
        }
        if seed > mask {
            return Err(config(format!("PRBS seed must fit in {order} bits")));
        }
        let state = mask ^ seed;
        if state == 0 {
            return Err(config("PRBS seed yields the all-zero register state"));
        }
        Ok(Lfsr {
            state,
            order,
            mask,
            taps,
        })
    }

    pub fn prbs32(seed: u64) -> Result<Self> {
        Lfsr::new(32, PRBS32_TAPS, seed)
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn next_bit(&mut self) -> u8 {
        let out = (self.state >> (self.order - 1)) & 1;
        let feedback = self
            .taps
            .iter()
            .fold(0u64, |acc, &t| acc ^ ((self.state >> (t - 1)) & 1));
        self.state = ((self.state << 1) | feedback) & self.mask;
        out as u8
    }
}

impl Iterator for Lfsr {
    type Item = u8;

    fn next(&mut self) -> Option<u8> {
        Some(self.next_bit())
    }
}

/// First `n_bits` of the PRBS-32 run for `seed`.
pub fn prbs32(seed: u64, n_bits: usize) -> Result<Vec<u8>> {
    Ok(Lfsr::prbs32(seed)?.take(n_bits).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Straight-line reference: explicit bit array, index 0 = stage 1.
    fn reference(seed: u32, n: usize) -> Vec<u8> {
        let fill = !seed;
        let mut reg: Vec<u8> = (0..32).map(|i| ((fill >> i) & 1) as u8).collect();
        let mut out = Vec::new();
        for _ in 0..n {
            out.push(reg[31]);
            let fb = reg[31] ^ reg[21] ^ reg[1] ^ reg[0];
            for i in (1..32).rev() {
                reg[i] = reg[i - 1];
            }
            reg[0] = fb;
        }
        out
    }

    #[test]
    fn matches_reference_register() {
        assert_eq!(prbs32(1, 64).unwrap(), reference(1, 64));
        assert_eq!(
            prbs32(0xdead_beef, 300).unwrap(),
            reference(0xdead_beef, 300)
        );
    }

    #[test]
    fn prbs7_has_full_period() {
        let mut lfsr = Lfsr::new(7, PRBS7_TAPS, 1).unwrap();
        let start = lfsr.state();
        let mut period = 0;
        loop {
            lfsr.next_bit();
            period += 1;
            if lfsr.state() == start {
                break;
            }
            assert!(period < 200);
        }
        assert_eq!(period, 127);
    }

    #[test]
    fn degenerate_seeds_rejected() {
        assert!(prbs32(0, 8).is_err());
        assert!(prbs32(0xffff_ffff, 8).is_err());
        assert!(prbs32(1 << 32, 8).is_err());
        assert!(prbs32(1, 0).unwrap().is_empty());
    }

    #[test]
    fn deterministic_and_balanced() {
        let a = prbs32(12345, 1 << 16).unwrap();
        assert_eq!(a, prbs32(12345, 1 << 16).unwrap());
        let ones = a.iter().filter(|&&b| b == 1).count() as f64 / a.len() as f64;
        assert!((ones - 0.5).abs() < 0.01, "{ones}");
    }
}
