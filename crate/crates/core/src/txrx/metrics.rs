//! Bit-error counting, Q-factor and stream cross-correlation.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use statrs::function::erf::erfc_inv;

use super::qam;
use super::spectral::Fourier;
use crate::error::{config, Result};
use crate::C64;

/// A Q value in dB with explicit sentinels for error-free and undefined cases.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum QValue {
    Finite(f64),
    /// BER = 0
    Infinite,
    /// BER >= 0.5, or a difference involving an undefined value.
    Undefined,
}

impl QValue {
    pub fn finite(self) -> Option<f64> {
        match self {
            QValue::Finite(v) => Some(v),
            _ => None,
        }
    }

    /// Ordering key for "bigger is better" comparisons.
    pub fn rank(self) -> f64 {
        match self {
            QValue::Finite(v) => v,
            QValue::Infinite => f64::INFINITY,
            QValue::Undefined => f64::NEG_INFINITY,
        }
    }

    /// `self - baseline` with sentinel propagation.
    pub fn gain_over(self, baseline: QValue) -> QValue {
        match (self, baseline) {
            (QValue::Finite(a), QValue::Finite(b)) => QValue::Finite(a - b),
            (QValue::Infinite, QValue::Finite(_)) => QValue::Infinite,
            _ => QValue::Undefined,
        }
    }
}

impl std::fmt::Display for QValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            QValue::Finite(v) => write!(f, "{v:.4}"),
            QValue::Infinite => f.write_str("inf"),
            QValue::Undefined => f.write_str("undefined"),
        }
    }
}

impl Serialize for QValue {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            QValue::Finite(v) => s.serialize_f64(*v),
            QValue::Infinite => s.serialize_str("inf"),
            QValue::Undefined => s.serialize_none(),
        }
    }
}

impl<'de> Deserialize<'de> for QValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::Number(n) => Ok(QValue::Finite(n.as_f64().unwrap_or(f64::NAN))),
            serde_json::Value::String(s) if s == "inf" => Ok(QValue::Infinite),
            serde_json::Value::Null => Ok(QValue::Undefined),
            other => Err(serde::de::Error::custom(format!("bad Q value {other}"))),
        }
    }
}

/// `Q = 20 log10(sqrt(2) erfc^-1(2 BER))`.
pub fn q_factor(ber: f64) -> QValue {
    if ber == 0.0 {
        QValue::Infinite
    } else if ber > 0.0 && ber < 0.5 {
        QValue::Finite(20.0 * (2f64.sqrt() * erfc_inv(2.0 * ber)).log10())
    } else {
        QValue::Undefined
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BerCount {
    pub errors: u64,
    pub bits: u64,
}

impl BerCount {
    pub fn ber(&self) -> f64 {
        if self.bits == 0 {
            0.0
        } else {
            self.errors as f64 / self.bits as f64
        }
    }

    pub fn merge(self, other: BerCount) -> BerCount {
        BerCount {
            errors: self.errors + other.errors,
            bits: self.bits + other.bits,
        }
    }
}

pub fn ber_count(decided: &[u8], truth: &[u8]) -> Result<BerCount> {
    if decided.len() != truth.len() {
        return Err(config(format!(
            "bit streams differ in length: {} vs {}",
            decided.len(),
            truth.len()
        )));
    }
    let errors = decided
        .iter()
        .zip(truth)
        .filter(|(a, b)| (*a ^ *b) & 1 == 1)
        .count();
    Ok(BerCount {
        errors: errors as u64,
        bits: decided.len() as u64,
    })
}

/// Hard-decides symbols and counts bit errors against 4-bit truth indices.
pub fn symbol_errors(symbols: &[C64], truth: &[u8]) -> Result<BerCount> {
    if symbols.len() != truth.len() {
        return Err(config(format!(
            "symbol streams differ in length: {} vs {}",
            symbols.len(),
            truth.len()
        )));
    }
    let errors: u32 = symbols
        .iter()
        .zip(truth)
        .map(|(&s, &t)| (qam::decide(s) ^ t).count_ones())
        .sum();
    Ok(BerCount {
        errors: errors as u64,
        bits: 4 * symbols.len() as u64,
    })
}

/// Scored equalization outcome.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub bit_errors: u64,
    pub bits: u64,
    pub ber: f64,
    pub q_db: QValue,
    pub q_gain_db: QValue,
}

impl EvalResult {
    pub fn new(count: BerCount, baseline: Option<QValue>) -> Self {
        let q = q_factor(count.ber());
        EvalResult {
            bit_errors: count.errors,
            bits: count.bits,
            ber: count.ber(),
            q_db: q,
            q_gain_db: match baseline {
                Some(b) => q.gain_over(b),
                None => QValue::Finite(0.0),
            },
        }
    }

    pub fn count(&self) -> BerCount {
        BerCount {
            errors: self.bit_errors,
            bits: self.bits,
        }
    }
}

/// One-sided two-proportion z statistic for "`better` has a lower BER than
/// `baseline`". Large positive values mean a significant improvement.
pub fn improvement_z(baseline: BerCount, better: BerCount) -> f64 {
    let (p0, p1) = (baseline.ber(), better.ber());
    let var =
        p0 * (1.0 - p0) / baseline.bits.max(1) as f64 + p1 * (1.0 - p1) / better.bits.max(1) as f64;
    if var == 0.0 {
        return if p0 > p1 { f64::INFINITY } else { 0.0 };
    }
    (p0 - p1) / var.sqrt()
}

/// Largest normalized circular cross-correlation magnitude between two
/// zero-meaned streams over every lag, computed on their common prefix.
pub fn max_normalized_xcorr(a: &[C64], b: &[C64]) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    let center = |s: &[C64]| -> Vec<C64> {
        let mean = s[..n].iter().sum::<C64>() / n as f64;
        s[..n].iter().map(|v| v - mean).collect()
    };
    let mut fa = center(a);
    let mut fb = center(b);
    let ea: f64 = fa.iter().map(|v| v.norm_sqr()).sum();
    let eb: f64 = fb.iter().map(|v| v.norm_sqr()).sum();
    if ea == 0.0 || eb == 0.0 {
        return 0.0;
    }
    let mut fourier = Fourier::new(n);
    fourier.forward(&mut fa);
    fourier.forward(&mut fb);
    let mut prod: Vec<C64> = fa.iter().zip(&fb).map(|(x, y)| x.conj() * y).collect();
    fourier.inverse(&mut prod);
    prod.iter().map(|v| v.norm()).fold(0.0, f64::max) / (ea * eb).sqrt()
}
