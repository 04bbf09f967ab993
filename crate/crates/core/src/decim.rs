//! Cascaded integrator-comb (sinc^K) decimation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loopsim::BitStream;
use crate::sigproc::SampleStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecimConfig {
    pub osr: usize,
    /// Filter order; use at least modulator order + 1.
    pub stages: usize,
}

impl Default for DecimConfig {
    fn default() -> Self {
        Self { osr: 500, stages: 3 }
    }
}

impl DecimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.osr < 2 {
            return Err(Error::InvalidParameter(format!("osr must be >= 2, got {}", self.osr)));
        }
        if self.stages == 0 {
            return Err(Error::InvalidParameter("stages must be >= 1".into()));
        }
        let growth = self.stages as f64 * (self.osr as f64).log2() + 2.0;
        if growth > 63.0 {
            return Err(Error::InvalidParameter(format!("register growth of {growth:.0} bits exceeds 64-bit accumulators")));
        }
        Ok(())
    }

    /// `osr^stages`, the DC gain of the unscaled filter.
    pub fn dc_gain(&self) -> f64 {
        (self.osr as f64).powi(self.stages as i32)
    }

    /// `|sin(π f R/f_s) / (R·sin(π f/f_s))|^K`.
    pub fn magnitude(&self, f_over_fs: f64) -> f64 {
        let x = std::f64::consts::PI * f_over_fs;
        if x.sin().abs() < 1e-300 {
            return 1.0;
        }
        ((self.osr as f64 * x).sin() / (self.osr as f64 * x.sin())).abs().powi(self.stages as i32)
    }
}

/// Integer CIC on arbitrary integer input. Integrators and combs use
/// wrapping two's-complement arithmetic, which is exact as long as the
/// true output fits the register.
pub fn cic_integer(x: &[i64], cfg: DecimConfig) -> Result<Vec<i64>> {
    cfg.validate()?;
    let k = cfg.stages;
    if x.len() < cfg.osr * k {
        return Err(Error::TooShort { n_fft: cfg.osr * k, len: x.len() });
    }
    let mut integ = vec![0i64; k];
    let mut comb = vec![0i64; k];
    let mut out = Vec::with_capacity(x.len() / cfg.osr);
    for (i, v) in x.iter().enumerate() {
        let mut acc = *v;
        for s in integ.iter_mut() {
            *s = s.wrapping_add(acc);
            acc = *s;
        }
        if (i + 1) % cfg.osr == 0 {
            for d in comb.iter_mut() {
                let y = acc.wrapping_sub(*d);
                *d = acc;
                acc = y;
            }
            out.push(acc);
        }
    }
    Ok(out)
}

/// Decimate a bitstream to `rate/osr`, scaled so a constant ±1 maps to ±1.0.
/// The first `stages − 1` outputs carry the start-up transient.
pub fn cic_decimate(q: &BitStream, cfg: DecimConfig) -> Result<SampleStream> {
    let x: Vec<i64> = q.bits().iter().map(|b| *b as i64).collect();
    let y = cic_integer(&x, cfg)?;
    let g = cfg.dc_gain();
    SampleStream::new(q.rate_hz() / cfg.osr as f64, y.iter().map(|v| *v as f64 / g).collect(), "decimated")
}

/// Full-rate impulse response of the unscaled filter (length `K(R−1)+1`).
pub fn impulse_response(cfg: DecimConfig) -> Result<Vec<i64>> {
    cfg.validate()?;
    let mut h = vec![1i64];
    for _ in 0..cfg.stages {
        let mut next = vec![0i64; h.len() + cfg.osr - 1];
        for (i, v) in h.iter().enumerate() {
            for t in &mut next[i..i + cfg.osr] {
                *t += v;
            }
        }
        h = next;
    }
    Ok(h)
}

/// Decimated output CSV, `index,value`.
pub fn write_csv<W: Write>(mut w: W, s: &SampleStream) -> std::io::Result<()> {
    writeln!(w, "index,value")?;
    for (i, v) in s.samples().iter().enumerate() {
        writeln!(w, "{i},{v:.10e}")?;
    }
    Ok(())
}
