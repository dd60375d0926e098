//! Multi-span fiber link: symmetric split-step Manakov propagation, lumped
//! EDFAs with ASE, and the inverse operators used by the receiver (CDC, DBP).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::spectral::{omega_grid, Fourier};
use super::SignalFrame;
use crate::error::{config, Error, Result};
use crate::format::json_hash;
use crate::C64;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Manakov averaging factor for the Kerr term.
pub const MANAKOV: f64 = 8.0 / 9.0;
/// Mean launch power above which propagation is treated as diverged (+30 dBm).
pub const MAX_MEAN_POWER_W: f64 = 1.0;

/// Fiber constants in the units datasheets use.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiberParams {
    /// dB/km
    pub alpha_db_km: f64,
    /// ps/(nm km)
    pub dispersion_ps_nm_km: f64,
    /// 1/(W km)
    pub gamma_per_w_km: f64,
    pub span_length_km: f64,
    /// 0 means back-to-back.
    pub span_count: usize,
}

impl FiberParams {
    /// Standard single-mode fiber, 5 x 50 km.
    pub fn ssmf() -> Self {
        FiberParams {
            alpha_db_km: 0.2,
            dispersion_ps_nm_km: 17.0,
            gamma_per_w_km: 1.2,
            span_length_km: 50.0,
            span_count: 5,
        }
    }

    /// TrueWave Classic, 9 x 50 km.
    pub fn twc() -> Self {
        FiberParams {
            alpha_db_km: 0.23,
            dispersion_ps_nm_km: 2.8,
            gamma_per_w_km: 2.5,
            span_length_km: 50.0,
            span_count: 9,
        }
    }

    /// Power attenuation in 1/m.
    pub fn alpha_per_m(&self) -> f64 {
        self.alpha_db_km / (10.0 * std::f64::consts::LOG10_E) / 1e3
    }

    /// Group-velocity dispersion in s^2/m at `wavelength_nm`.
    pub fn beta2(&self, wavelength_nm: f64) -> f64 {
        let lambda = wavelength_nm * 1e-9;
        let d = self.dispersion_ps_nm_km * 1e-6; // s/m^2
        -d * lambda * lambda / (2.0 * PI * SPEED_OF_LIGHT)
    }

    pub fn gamma_per_w_m(&self) -> f64 {
        self.gamma_per_w_km / 1e3
    }

    pub fn span_length_m(&self) -> f64 {
        self.span_length_km * 1e3
    }

    /// Linear power gain that exactly restores one span.
    pub fn span_gain(&self) -> f64 {
        (self.alpha_per_m() * self.span_length_m()).exp()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_db_km > 0.0) {
            return Err(config("fiber attenuation must be > 0"));
        }
        if !(self.span_length_km > 0.0) {
            return Err(config("span length must be > 0"));
        }
        if !(self.gamma_per_w_km >= 0.0) {
            return Err(config("fiber nonlinearity must be >= 0"));
        }
        if !self.dispersion_ps_nm_km.is_finite() {
            return Err(config("dispersion must be finite"));
        }
        Ok(())
    }
}

/// Complete physical transmission scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    pub fiber: FiberParams,
    /// Total over both polarizations.
    pub launch_power_dbm: f64,
    pub symbol_rate_gbaud: f64,
    pub rrc_rolloff: f64,
    /// RRC length in symbols; the filter has `span * sps + 1` taps.
    pub rrc_span_symbols: usize,
    /// `None` turns amplifier noise off.
    pub edfa_noise_figure_db: Option<f64>,
    pub center_wavelength_nm: f64,
    pub samples_per_symbol_sim: usize,
    pub steps_per_span_sim: usize,
    pub rng_seed: u64,
}

impl LinkConfig {
    fn base(fiber: FiberParams, launch_power_dbm: f64) -> Self {
        LinkConfig {
            fiber,
            launch_power_dbm,
            symbol_rate_gbaud: 34.4,
            rrc_rolloff: 0.1,
            rrc_span_symbols: 64,
            edfa_noise_figure_db: Some(4.5),
            center_wavelength_nm: 1550.0,
            samples_per_symbol_sim: 8,
            steps_per_span_sim: 50,
            rng_seed: 1,
        }
    }

    /// 5 x 50 km SSMF at 7 dBm.
    pub fn ssmf() -> Self {
        Self::base(FiberParams::ssmf(), 7.0)
    }

    /// 9 x 50 km TWC at 2 dBm.
    pub fn twc() -> Self {
        Self::base(FiberParams::twc(), 2.0)
    }

    pub fn with_noise_off(mut self) -> Self {
        self.edfa_noise_figure_db = None;
        self
    }

    pub fn with_linear_fiber(mut self) -> Self {
        self.fiber.gamma_per_w_km = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.fiber.validate()?;
        if !(self.symbol_rate_gbaud > 0.0) {
            return Err(config("symbol rate must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.rrc_rolloff) {
            return Err(config("RRC roll-off must be in [0, 1]"));
        }
        if self.samples_per_symbol_sim < 4 || !self.samples_per_symbol_sim.is_multiple_of(2) {
            return Err(config("simulation needs an even samples-per-symbol >= 4"));
        }
        if self.steps_per_span_sim == 0 {
            return Err(config("steps per span must be >= 1"));
        }
        if self.rrc_span_symbols == 0 {
            return Err(config("RRC span must be >= 1 symbol"));
        }
        if !self.launch_power_dbm.is_finite() || !self.center_wavelength_nm.is_finite() {
            return Err(config("launch power and wavelength must be finite"));
        }
        if let Some(nf) = self.edfa_noise_figure_db {
            if !nf.is_finite() {
                return Err(config(
                    "noise figure must be finite (use null for noise off)",
                ));
            }
        }
        Ok(())
    }

    pub fn symbol_rate_hz(&self) -> f64 {
        self.symbol_rate_gbaud * 1e9
    }

    pub fn launch_power_w(&self) -> f64 {
        1e-3 * 10f64.powf(self.launch_power_dbm / 10.0)
    }

    pub fn beta2(&self) -> f64 {
        self.fiber.beta2(self.center_wavelength_nm)
    }

    pub fn carrier_frequency_hz(&self) -> f64 {
        SPEED_OF_LIGHT / (self.center_wavelength_nm * 1e-9)
    }

    /// Accumulated beta2 * L over the whole link (s^2).
    pub fn accumulated_dispersion(&self) -> f64 {
        self.beta2() * self.fiber.span_length_m() * self.fiber.span_count as f64
    }

    /// One-sided ASE power spectral density per polarization (W/Hz) added by
    /// each amplifier: `(G-1) h nu n_sp` with `n_sp = NF G / (2 (G-1))`.
    pub fn ase_psd(&self) -> f64 {
        match self.edfa_noise_figure_db {
            None => 0.0,
            Some(nf_db) => {
                let g = self.fiber.span_gain();
                let nf = 10f64.powf(nf_db / 10.0);
                if g <= 1.0 {
                    return 0.0;
                }
                let n_sp = nf * g / (2.0 * (g - 1.0));
                (g - 1.0) * PLANCK * self.carrier_frequency_hz() * n_sp
            }
        }
    }

    pub fn hash(&self) -> String {
        json_hash(self)
    }
}

/// Reusable split-step propagator for one frame length and sample rate.
pub struct SplitStep {
    fourier: Fourier,
    omega2: Vec<f64>,
}

/// Medium constants for one propagation direction. Digital back-propagation
/// uses the same machinery with every sign flipped.
#[derive(Clone, Copy, Debug)]
pub struct Medium {
    pub alpha: f64,
    pub beta2: f64,
    pub gamma: f64,
}

impl Medium {
    pub fn of(link: &LinkConfig) -> Self {
        Medium {
            alpha: link.fiber.alpha_per_m(),
            beta2: link.beta2(),
            gamma: link.fiber.gamma_per_w_m(),
        }
    }

    pub fn reversed(self) -> Self {
        Medium {
            alpha: -self.alpha,
            beta2: -self.beta2,
            gamma: -self.gamma,
        }
    }
}

impl SplitStep {
    pub fn new(n: usize, sample_rate: f64) -> Self {
        SplitStep {
            fourier: Fourier::new(n),
            omega2: omega_grid(n, sample_rate)
                .into_iter()
                .map(|w| w * w)
                .collect(),
        }
    }

    fn linear_response(&self, medium: Medium, dz: f64) -> Vec<C64> {
        self.omega2
            .iter()
            .map(|&w2| C64::new(-0.5 * medium.alpha * dz, 0.5 * medium.beta2 * w2 * dz).exp())
            .collect()
    }

    /// Dispersion and attenuation over `dz`, applied in the frequency domain.
    pub fn linear_step(&mut self, fields: [&mut [C64]; 2], medium: Medium, dz: f64) {
        let response = self.linear_response(medium, dz);
        for field in fields {
            self.fourier.filter(field, &response);
        }
    }

    /// Manakov Kerr phase rotation over `dz`.
    pub fn nonlinear_step(x: &mut [C64], y: &mut [C64], gamma: f64, dz: f64) {
        let k = MANAKOV * gamma * dz;
        for (a, b) in x.iter_mut().zip(y.iter_mut()) {
            let rot = C64::from_polar(1.0, k * (a.norm_sqr() + b.norm_sqr()));
            *a *= rot;
            *b *= rot;
        }
    }

    /// Symmetric split-step over `length` in `steps` uniform steps, with the
    /// adjacent half linear steps merged.
    pub fn propagate(
        &mut self,
        x: &mut [C64],
        y: &mut [C64],
        medium: Medium,
        length: f64,
        steps: usize,
    ) {
        let dz = length / steps as f64;
        let half = self.linear_response(medium, dz / 2.0);
        let full = self.linear_response(medium, dz);
        self.fourier.filter(x, &half);
        self.fourier.filter(y, &half);
        for step in 0..steps {
            if medium.gamma != 0.0 {
                Self::nonlinear_step(x, y, medium.gamma, dz);
            }
            let r = if step + 1 == steps { &half } else { &full };
            self.fourier.filter(x, r);
            self.fourier.filter(y, r);
        }
    }
}

pub fn mean_power(x: &[C64], y: &[C64]) -> f64 {
    let total: f64 = x.iter().chain(y).map(|v| v.norm_sqr()).sum();
    total / x.len().max(1) as f64
}

/// Propagates a transmitted frame through every span of the link. Each span
/// is followed by an amplifier that restores the span loss exactly and adds
/// circular Gaussian ASE to each polarization.
pub fn propagate(frame: &SignalFrame, link: &LinkConfig) -> Result<SignalFrame> {
    link.validate()?;
    let mut out = frame.clone();
    let n = out.x.len();
    if n == 0 || link.fiber.span_count == 0 {
        return Ok(out);
    }
    let medium = Medium::of(link);
    let mut ss = SplitStep::new(n, frame.sample_rate_hz);
    let gain_amp = link.fiber.span_gain().sqrt();
    let sigma = (link.ase_psd() * frame.sample_rate_hz / 2.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(link.rng_seed, frame.seed));
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    for span in 0..link.fiber.span_count {
        ss.propagate(
            &mut out.x,
            &mut out.y,
            medium,
            link.fiber.span_length_m(),
            link.steps_per_span_sim,
        );
        for v in out.x.iter_mut().chain(out.y.iter_mut()) {
            *v *= gain_amp;
        }
        if sigma > 0.0 {
            for v in out.x.iter_mut().chain(out.y.iter_mut()) {
                *v += C64::new(
                    sigma * normal.sample(&mut rng),
                    sigma * normal.sample(&mut rng),
                );
            }
        }
        let p = mean_power(&out.x, &out.y);
        if !(p <= MAX_MEAN_POWER_W) {
            return Err(Error::Numerical(format!(
                "mean power {p:.3e} W after span {} exceeds +30 dBm",
                span + 1
            )));
        }
    }
    Ok(out)
}

/// Frequency-domain all-pass that undoes `accumulated` beta2*L of dispersion.
pub fn cd_compensate(waveform: &mut [C64], sample_rate: f64, accumulated: f64) {
    if waveform.is_empty() || accumulated == 0.0 {
        return;
    }
    let n = waveform.len();
    let response: Vec<C64> = omega_grid(n, sample_rate)
        .into_iter()
        .map(|w| C64::from_polar(1.0, -0.5 * accumulated * w * w))
        .collect();
    Fourier::new(n).filter(waveform, &response);
}

/// Digital back-propagation of a received dual-polarization waveform through
/// the whole link: spans in reverse order, amplifier gain removed first, then
/// the fiber run with negated attenuation, dispersion and nonlinearity.
pub fn dbp(
    x: &mut [C64],
    y: &mut [C64],
    sample_rate: f64,
    link: &LinkConfig,
    steps_per_span: usize,
) -> Result<()> {
    if steps_per_span == 0 {
        return Err(config("DBP needs at least one step per span"));
    }
    if x.is_empty() || link.fiber.span_count == 0 {
        return Ok(());
    }
    let medium = Medium::of(link).reversed();
    let mut ss = SplitStep::new(x.len(), sample_rate);
    let inv_gain = 1.0 / link.fiber.span_gain().sqrt();
    for _ in 0..link.fiber.span_count {
        for v in x.iter_mut().chain(y.iter_mut()) {
            *v *= inv_gain;
        }
        ss.propagate(x, y, medium, link.fiber.span_length_m(), steps_per_span);
    }
    Ok(())
}
