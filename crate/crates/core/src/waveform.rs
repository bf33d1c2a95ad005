//! QPSK symbol generation, RRC pulse shaping and genie-aided symbol recovery.

use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{fir_apply, fractional_delay, integer_ratio, rrc_taps, ComplexEnvelope};
use crate::error::{Error, Result};

/// Fewest symbols [`demod_symbols`] will fit a gain against.
pub const MIN_DEMOD_SYMBOLS: usize = 64;

/// Gray-mapped QPSK alphabet with unit average power, indexed by two bits.
pub const QPSK: [Complex64; 4] = [
    Complex64::new(FRAC_1_SQRT_2, FRAC_1_SQRT_2),
    Complex64::new(FRAC_1_SQRT_2, -FRAC_1_SQRT_2),
    Complex64::new(-FRAC_1_SQRT_2, FRAC_1_SQRT_2),
    Complex64::new(-FRAC_1_SQRT_2, -FRAC_1_SQRT_2),
];

#[derive(Debug, Clone, PartialEq)]
pub struct SymbolStream {
    pub symbols: Vec<Complex64>,
    pub baud: f64,
    pub seed: u64,
}

/// Root-raised-cosine pulse parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseShape {
    pub beta: f64,
    /// Filter span in symbols.
    pub span: usize,
}

impl Default for PulseShape {
    fn default() -> Self {
        Self {
            beta: 0.35,
            span: 16,
        }
    }
}

/// Symbol estimates for the contiguous range of reference symbols starting
/// at `first_symbol`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolEstimates {
    pub first_symbol: usize,
    pub estimates: Vec<Complex64>,
    /// Complex gain removed by the least-squares fit.
    pub gain: Complex64,
}

impl SymbolEstimates {
    /// The reference symbols aligned with `estimates`.
    pub fn reference<'a>(&self, stream: &'a SymbolStream) -> &'a [Complex64] {
        &stream.symbols[self.first_symbol..self.first_symbol + self.estimates.len()]
    }
}

/// i.i.d. uniform QPSK symbols, deterministic in `seed`.
pub fn generate_qpsk(num_symbols: usize, baud: f64, seed: u64) -> Result<SymbolStream> {
    if num_symbols == 0 {
        return Err(Error::invalid("num_symbols must be >= 1"));
    }
    if !(baud > 0.0) {
        return Err(Error::invalid(format!("baud must be > 0, got {baud}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let symbols = (0..num_symbols)
        .map(|_| QPSK[rng.gen_range(0..4)])
        .collect();
    Ok(SymbolStream {
        symbols,
        baud,
        seed,
    })
}

fn samples_per_symbol(fs: f64, baud: f64) -> Result<usize> {
    integer_ratio(fs, baud).ok_or_else(|| {
        Error::invalid(format!(
            "sample rate {fs} Hz is not an integer multiple of baud {baud}"
        ))
    })
}

/// RRC-shape a symbol stream at `fs`. Symbol `k` peaks at sample `k * sps`;
/// the output is scaled to unit mean-square power.
pub fn shape(symbols: &SymbolStream, fs: f64, pulse: PulseShape) -> Result<ComplexEnvelope> {
    let sps = samples_per_symbol(fs, symbols.baud)?;
    let taps = rrc_taps(pulse.beta, sps, pulse.span)?;
    let n = symbols.symbols.len() * sps;
    let mut impulses = vec![Complex64::new(0.0, 0.0); n];
    for (k, s) in symbols.symbols.iter().enumerate() {
        impulses[k * sps] = *s;
    }
    let env = ComplexEnvelope::new(impulses, fs, 0.0)?;
    let gain = (sps as f64).sqrt();
    Ok(fir_apply(&env, &taps, true).scaled(Complex64::new(gain, 0.0)))
}

/// Recover one estimate per reference symbol with matched filtering, genie
/// timing at `known_delay` and a single least-squares complex gain.
/// Symbols within one filter span of either record edge are skipped.
pub fn demod_symbols(
    env: &ComplexEnvelope,
    reference: &SymbolStream,
    known_delay: f64,
    pulse: PulseShape,
) -> Result<SymbolEstimates> {
    let sps = samples_per_symbol(env.sample_rate, reference.baud)?;
    let aligned = if known_delay != 0.0 {
        fractional_delay(env, -known_delay)?
    } else {
        env.clone()
    };
    let taps = rrc_taps(pulse.beta, sps, pulse.span)?;
    let filtered = fir_apply(&aligned, &taps, true);

    let available = filtered.len().div_ceil(sps).min(reference.symbols.len());
    let first = pulse.span;
    let last = available.saturating_sub(pulse.span);
    if last <= first || last - first < MIN_DEMOD_SYMBOLS {
        return Err(Error::invalid(format!(
            "only {} symbols overlap the envelope, need {MIN_DEMOD_SYMBOLS}",
            last.saturating_sub(first)
        )));
    }
    let raw: Vec<Complex64> = (first..last).map(|k| filtered.samples[k * sps]).collect();
    let refs = &reference.symbols[first..last];
    let num: Complex64 = raw.iter().zip(refs).map(|(z, r)| z * r.conj()).sum();
    let den: f64 = refs.iter().map(|r| r.norm_sqr()).sum();
    let gain = num / den;
    if gain.norm() == 0.0 || !gain.norm().is_finite() {
        return Err(Error::invalid(
            "envelope carries no energy at the reference symbols",
        ));
    }
    Ok(SymbolEstimates {
        first_symbol: first,
        estimates: raw.iter().map(|z| z / gain).collect(),
        gain,
    })
}
