//! Exponentially weighted recursive least squares.
//!
//! The filter output is `y(n) = Ŵᴴ(n-1) x(n)` with the a-priori error
//! `e(n) = d(n) - y(n)`. Each step forms the gain
//! `k(n) = P(n-1) x(n) / (λ + xᴴ(n) P(n-1) x(n))`, updates the weights as
//! `Ŵ(n) = Ŵ(n-1) + k(n) e*(n)` and the inverse correlation matrix as
//! `P(n) = λ⁻¹ (P(n-1) - k(n) xᴴ(n) P(n-1))`. With `λ = 1` and
//! `P(0) = δ I` the weights after `n` steps equal the ridge-regularized
//! least-squares solution with penalty `δ⁻¹`.

use std::fmt::Write as _;
use std::ops::Range;

use num_complex::Complex64;

use crate::dsp::ComplexEnvelope;
use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone)]
pub struct RlsState {
    order: usize,
    lambda: f64,
    init_delta: f64,
    weights: Vec<Complex64>,
    /// Row-major `order x order`, kept Hermitian.
    p: Vec<Complex64>,
    iterations: usize,
    // Scratch for P x and the gain vector.
    px: Vec<Complex64>,
    gain: Vec<Complex64>,
}

impl PartialEq for RlsState {
    fn eq(&self, other: &Self) -> bool {
        self.order == other.order
            && self.lambda == other.lambda
            && self.init_delta == other.init_delta
            && self.iterations == other.iterations
            && self.weights == other.weights
            && self.p == other.p
    }
}

/// Outputs of one [`RlsState::step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    /// A-priori error `d - y`.
    pub error: Complex64,
    /// Filter output before the update.
    pub output: Complex64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingTrace {
    /// A-priori error per iteration.
    pub errors: Vec<Complex64>,
    /// `ε(n) = Σ λ^(n-k) |e(k)|²`.
    pub cumulative: Vec<f64>,
}

impl TrainingTrace {
    /// Mean `|e|²` over the last `fraction` of the trace.
    pub fn tail_mse(&self, fraction: f64) -> f64 {
        let n = self.errors.len();
        let take = ((n as f64 * fraction).ceil() as usize).clamp(1, n.max(1));
        if n == 0 {
            return 0.0;
        }
        self.errors[n - take..]
            .iter()
            .map(|e| e.norm_sqr())
            .sum::<f64>()
            / take as f64
    }
}

impl RlsState {
    /// `Ŵ = 0`, `P = init_delta · I`.
    pub fn new(order: usize, lambda: f64, init_delta: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::invalid("RLS order must be >= 1"));
        }
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::invalid(format!(
                "forgetting factor {lambda} outside (0, 1]"
            )));
        }
        if !(init_delta > 0.0 && init_delta.is_finite()) {
            return Err(Error::invalid(format!(
                "init_delta must be > 0, got {init_delta}"
            )));
        }
        let mut p = vec![ZERO; order * order];
        for i in 0..order {
            p[i * order + i] = Complex64::new(init_delta, 0.0);
        }
        Ok(Self {
            order,
            lambda,
            init_delta,
            weights: vec![ZERO; order],
            p,
            iterations: 0,
            px: vec![ZERO; order],
            gain: vec![ZERO; order],
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn init_delta(&self) -> f64 {
        self.init_delta
    }

    pub fn weights(&self) -> &[Complex64] {
        &self.weights
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Entry `(row, col)` of the inverse correlation matrix.
    pub fn p(&self, row: usize, col: usize) -> Complex64 {
        self.p[row * self.order + col]
    }

    /// Replace the weights, e.g. to apply a fixed filter.
    pub fn set_weights(&mut self, weights: Vec<Complex64>) -> Result<()> {
        if weights.len() != self.order {
            return Err(Error::invalid(format!(
                "expected {} weights, got {}",
                self.order,
                weights.len()
            )));
        }
        self.weights = weights;
        Ok(())
    }

    /// `max |P - Pᴴ| / max |P|`.
    pub fn hermitian_asymmetry(&self) -> f64 {
        let l = self.order;
        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..l {
            for j in 0..l {
                let a = self.p[i * l + j];
                scale = scale.max(a.norm());
                worst = worst.max((a - self.p[j * l + i].conj()).norm());
            }
        }
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }

    /// `Ŵᴴ x` for a regressor of length `order`.
    pub fn output(&self, regressor: &[Complex64]) -> Complex64 {
        self.weights
            .iter()
            .zip(regressor)
            .map(|(w, x)| w.conj() * x)
            .sum()
    }

    /// One RLS iteration. On a non-finite gain or error the state is left
    /// as it was before the call.
    pub fn step(&mut self, regressor: &[Complex64], desired: Complex64) -> Result<StepOutput> {
        let l = self.order;
        if regressor.len() != l {
            return Err(Error::invalid(format!(
                "regressor length {} does not match order {l}",
                regressor.len()
            )));
        }
        let output = self.output(regressor);
        let error = desired - output;

        for i in 0..l {
            let row = &self.p[i * l..(i + 1) * l];
            self.px[i] = row.iter().zip(regressor).map(|(p, x)| p * x).sum();
        }
        let quad: Complex64 = regressor
            .iter()
            .zip(&self.px)
            .map(|(x, px)| x.conj() * px)
            .sum();
        let denom = self.lambda + quad.re;
        let finite = |c: &Complex64| c.re.is_finite() && c.im.is_finite();
        if !(denom.is_finite() && denom > 0.0) || !finite(&error) {
            return Err(Error::Numerical {
                iteration: self.iterations,
                message: format!("gain denominator {denom}, a-priori error {error}"),
            });
        }
        for i in 0..l {
            self.gain[i] = self.px[i] / denom;
        }
        if !self.gain.iter().all(finite) {
            return Err(Error::Numerical {
                iteration: self.iterations,
                message: "non-finite gain vector".into(),
            });
        }

        let ec = error.conj();
        for (w, k) in self.weights.iter_mut().zip(&self.gain) {
            *w += k * ec;
        }

        // P <- (P - k (P x)ᴴ) / λ, averaged with its conjugate transpose.
        let inv_lambda = 1.0 / self.lambda;
        for i in 0..l {
            let diag = (self.p[i * l + i] - self.gain[i] * self.px[i].conj()) * inv_lambda;
            self.p[i * l + i] = Complex64::new(diag.re, 0.0);
            for j in i + 1..l {
                let upper = (self.p[i * l + j] - self.gain[i] * self.px[j].conj()) * inv_lambda;
                let lower = (self.p[j * l + i] - self.gain[j] * self.px[i].conj()) * inv_lambda;
                let avg = 0.5 * (upper + lower.conj());
                self.p[i * l + j] = avg;
                self.p[j * l + i] = avg.conj();
            }
        }
        self.iterations += 1;
        Ok(StepOutput { error, output })
    }

    /// CSV of the weights: `lag,re,im`.
    pub fn weights_csv(&self) -> String {
        let mut out = String::from("lag,re,im\n");
        for (lag, w) in self.weights.iter().enumerate() {
            let _ = writeln!(out, "{lag},{:e},{:e}", w.re, w.im);
        }
        out
    }
}

pub fn rls_init(order: usize, lambda: f64, init_delta: f64) -> Result<RlsState> {
    RlsState::new(order, lambda, init_delta)
}

/// Fill `reg` with `[x(n), x(n-1), …, x(n-L+1)]`, zero before the start.
fn fill_regressor(reg: &mut [Complex64], x: &[Complex64], n: usize) {
    for (i, r) in reg.iter_mut().enumerate() {
        *r = if i <= n {
            x.get(n - i).copied().unwrap_or(ZERO)
        } else {
            ZERO
        };
    }
}

/// Iterate the filter over `window` of the paired input and desired
/// records.
pub fn rls_train(
    state: &mut RlsState,
    x: &ComplexEnvelope,
    d: &ComplexEnvelope,
    window: Range<usize>,
) -> Result<TrainingTrace> {
    if x.sample_rate != d.sample_rate {
        return Err(Error::Mismatch(format!(
            "input rate {} Hz vs desired rate {} Hz",
            x.sample_rate, d.sample_rate
        )));
    }
    if window.end > x.len() || window.end > d.len() || window.start >= window.end {
        return Err(Error::invalid(format!(
            "training window {window:?} outside records of {} and {} samples",
            x.len(),
            d.len()
        )));
    }
    let needed = 10 * state.order;
    if window.len() < needed {
        return Err(Error::invalid(format!(
            "training window of {} samples is shorter than 10 x order = {needed}",
            window.len()
        )));
    }
    let mut reg = vec![ZERO; state.order];
    let mut trace = TrainingTrace {
        errors: Vec::with_capacity(window.len()),
        cumulative: Vec::with_capacity(window.len()),
    };
    let mut eps = 0.0;
    for n in window {
        fill_regressor(&mut reg, &x.samples, n);
        let out = state.step(&reg, d.samples[n])?;
        eps = state.lambda * eps + out.error.norm_sqr();
        trace.errors.push(out.error);
        trace.cumulative.push(eps);
    }
    Ok(trace)
}

/// `y(n) = Ŵᴴ [x(n), …, x(n-L+1)]` at the rate and center of `x`.
pub fn rls_apply(state: &RlsState, x: &ComplexEnvelope) -> ComplexEnvelope {
    let w: Vec<Complex64> = state.weights.iter().map(|w| w.conj()).collect();
    let xs = &x.samples;
    let samples = (0..xs.len())
        .map(|n| {
            let taps = w.len().min(n + 1);
            (0..taps).map(|i| w[i] * xs[n - i]).sum()
        })
        .collect();
    ComplexEnvelope {
        samples,
        sample_rate: x.sample_rate,
        center_freq: x.center_freq,
    }
}
