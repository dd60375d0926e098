//! Gray-coded square 16-QAM with unit average symbol energy.

use crate::error::{config, Result};
use crate::C64;

/// Per-axis scale that brings the {±1, ±3} grid to unit average energy.
pub const SCALE: f64 = 0.316_227_766_016_837_94; // 1/sqrt(10)

/// Gray-coded 2-bit label -> amplitude level: 00 -3, 01 -1, 11 +1, 10 +3.
fn level(bits: u8) -> f64 {
    match bits & 0b11 {
        0b00 => -3.0,
        0b01 => -1.0,
        0b11 => 1.0,
        _ => 3.0,
    }
}

fn label(amplitude: f64) -> u8 {
    let a = amplitude / SCALE;
    if a < -2.0 {
        0b00
    } else if a < 0.0 {
        0b01
    } else if a < 2.0 {
        0b11
    } else {
        0b10
    }
}

/// Constellation point for a 4-bit index `b0 b1 b2 b3` (b0 is the MSB):
/// the first bit pair selects the in-phase level, the second the quadrature.
pub fn point(index: u8) -> C64 {
    C64::new(level(index >> 2) * SCALE, level(index) * SCALE)
}

/// Hard nearest-neighbor decision back to a 4-bit index.
pub fn decide(symbol: C64) -> u8 {
    (label(symbol.re) << 2) | label(symbol.im)
}

pub fn bits_to_indices(bits: &[u8]) -> Result<Vec<u8>> {
    if !bits.len().is_multiple_of(4) {
        return Err(config(format!(
            "16-QAM needs a multiple of 4 bits, got {}",
            bits.len()
        )));
    }
    Ok(bits
        .chunks_exact(4)
        .map(|c| c.iter().fold(0u8, |acc, &b| (acc << 1) | (b & 1)))
        .collect())
}

pub fn indices_to_bits(indices: &[u8]) -> Vec<u8> {
    indices
        .iter()
        .flat_map(|&i| (0..4).rev().map(move |k| (i >> k) & 1))
        .collect()
}

pub fn qam16_map(bits: &[u8]) -> Result<Vec<C64>> {
    Ok(bits_to_indices(bits)?.into_iter().map(point).collect())
}

pub fn qam16_demap_hard(symbols: &[C64]) -> Vec<u8> {
    let indices: Vec<u8> = symbols.iter().map(|&s| decide(s)).collect();
    indices_to_bits(&indices)
}
