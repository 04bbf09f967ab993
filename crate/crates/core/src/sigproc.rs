//! Waveform generation and spectral metrology.
//!
//! All spectra are one-sided power spectral densities in V²/Hz. Bins
//! `1..n_fft/2` carry the factor of two for the folded negative
//! frequencies; the DC and Nyquist bins do not. Window power is
//! normalised out, so a coherent tone of amplitude `A` integrates to
//! `A²/2` over its leakage bins for every window.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniformly sampled real waveform (volts, differential).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleStream {
    rate_hz: f64,
    samples: Vec<f64>,
    pub label: String,
}

impl SampleStream {
    pub fn new(rate_hz: f64, samples: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if !(rate_hz.is_finite() && rate_hz > 0.0) {
            return Err(Error::InvalidParameter(format!("rate_hz must be > 0, got {rate_hz}")));
        }
        if samples.is_empty() {
            return Err(Error::InvalidParameter("stream must hold at least one sample".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite sample at index {i}")));
        }
        Ok(Self { rate_hz, samples, label: label.into() })
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn mean_square(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum::<f64>() / self.samples.len() as f64
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// Multiply every sample by `k`.
    pub fn scaled(&self, k: f64) -> Result<Self> {
        Self::new(self.rate_hz, self.samples.iter().map(|v| v * k).collect(), self.label.clone())
    }

    /// Samples `[start, start + len)` as a new stream.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        let end = start
            .checked_add(len)
            .filter(|&e| e <= self.samples.len())
            .ok_or_else(|| Error::InvalidParameter(format!("slice {start}+{len} out of range")))?;
        Self::new(self.rate_hz, self.samples[start..end].to_vec(), self.label.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Rectangular,
    #[default]
    Hann,
}

impl Window {
    /// Periodic window coefficients of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }

    /// Equivalent noise bandwidth in bins.
    pub fn enbw_bins(self) -> f64 {
        match self {
            Window::Rectangular => 1.0,
            Window::Hann => 1.5,
        }
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Window::Rectangular => "rectangular",
            Window::Hann => "hann",
        })
    }
}

impl FromStr for Window {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rectangular" | "rect" => Ok(Window::Rectangular),
            "hann" | "hanning" => Ok(Window::Hann),
            other => Err(Error::Parse(format!("unknown window '{other}'"))),
        }
    }
}

/// One-sided PSD estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub df_hz: f64,
    pub psd: Vec<f64>,
    pub n_fft: usize,
    pub window: Window,
    pub enbw_bins: f64,
    /// Number of segments averaged.
    pub segments: usize,
}

impl Spectrum {
    pub fn freq(&self, bin: usize) -> f64 {
        bin as f64 * self.df_hz
    }

    pub fn rate_hz(&self) -> f64 {
        self.df_hz * self.n_fft as f64
    }

    /// Total power, Σ psd·df.
    pub fn total_power(&self) -> f64 {
        self.psd.iter().sum::<f64>() * self.df_hz
    }

    pub fn nearest_bin(&self, f_hz: f64) -> usize {
        ((f_hz / self.df_hz).round() as usize).min(self.psd.len() - 1)
    }

    /// CSV with header `freq_hz,psd_v2_per_hz,psd_dbv2_per_hz`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "freq_hz,psd_v2_per_hz,psd_dbv2_per_hz")?;
        for (k, p) in self.psd.iter().enumerate() {
            writeln!(w, "{:.10e},{:.10e},{:.10e}", self.freq(k), p, db10(*p))?;
        }
        Ok(())
    }
}

/// `10·log10(p)`, floored so that zero power stays finite in text output.
pub fn db10(p: f64) -> f64 {
    10.0 * p.max(1e-300).log10()
}

/// `amp_v · sin(2π·freq_hz·k/rate_hz + phase_rad)` for `k = 0..n`.
pub fn gen_sine(amp_v: f64, freq_hz: f64, rate_hz: f64, n: usize, phase_rad: f64) -> Result<SampleStream> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be >= 1".into()));
    }
    if !(rate_hz > 0.0) {
        return Err(Error::InvalidParameter(format!("rate_hz must be > 0, got {rate_hz}")));
    }
    if !(freq_hz >= 0.0) {
        return Err(Error::InvalidParameter(format!("freq_hz must be >= 0, got {freq_hz}")));
    }
    if freq_hz >= rate_hz / 2.0 {
        return Err(Error::AliasedStimulus { freq_hz, nyquist_hz: rate_hz / 2.0 });
    }
    let w = 2.0 * PI * freq_hz / rate_hz;
    let samples = (0..n).map(|k| amp_v * (w * k as f64 + phase_rad).sin()).collect();
    SampleStream::new(rate_hz, samples, format!("sine {amp_v} V @ {freq_hz} Hz"))
}

/// Averaged, windowed periodogram over non-overlapping `n_fft` segments.
///
/// Trailing samples that do not fill a whole segment are ignored.
pub fn periodogram(x: &SampleStream, n_fft: usize, window: Window) -> Result<Spectrum> {
    periodogram_slice(x.samples(), x.rate_hz(), n_fft, window)
}

pub(crate) fn periodogram_slice(x: &[f64], rate_hz: f64, n_fft: usize, window: Window) -> Result<Spectrum> {
    if n_fft == 0 || !n_fft.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(n_fft));
    }
    if n_fft > x.len() {
        return Err(Error::TooShort { n_fft, len: x.len() });
    }
    let w = window.coefficients(n_fft);
    let s2: f64 = w.iter().map(|v| v * v).sum();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let segments = x.len() / n_fft;
    let half = n_fft / 2;
    let mut acc = vec![0.0; half + 1];
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for seg in x.chunks_exact(n_fft) {
        for ((b, s), wk) in buf.iter_mut().zip(seg).zip(&w) {
            *b = Complex64::new(s * wk, 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
    }
    let scale = 1.0 / (rate_hz * s2 * segments as f64);
    let psd = acc
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let fold = if k == 0 || k == half { 1.0 } else { 2.0 };
            a * scale * fold
        })
        .collect();
    Ok(Spectrum {
        df_hz: rate_hz / n_fft as f64,
        psd,
        n_fft,
        window,
        enbw_bins: window.enbw_bins(),
        segments,
    })
}

/// Σ psd·df over bins whose centre lies in `[f_lo, f_hi]`, skipping `excluded`.
pub fn band_power(s: &Spectrum, f_lo: f64, f_hi: f64, excluded: &[usize]) -> Result<f64> {
    let nyq = s.rate_hz() / 2.0;
    if !(f_lo >= 0.0 && f_lo < f_hi && f_hi <= nyq * (1.0 + 1e-12)) {
        return Err(Error::InvalidParameter(format!(
            "band [{f_lo}, {f_hi}] must satisfy 0 <= f_lo < f_hi <= {nyq}"
        )));
    }
    let (lo, hi) = band_bins(s, f_lo, f_hi).ok_or(Error::EmptyBand { f_lo, f_hi })?;
    let mut p = 0.0;
    let mut used = 0usize;
    for k in lo..=hi {
        if !excluded.contains(&k) {
            p += s.psd[k];
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::EmptyBand { f_lo, f_hi });
    }
    Ok(p * s.df_hz)
}

fn band_bins(s: &Spectrum, f_lo: f64, f_hi: f64) -> Option<(usize, usize)> {
    let eps = 1e-9;
    let lo = (f_lo / s.df_hz - eps).ceil().max(0.0) as usize;
    let hi = ((f_hi / s.df_hz + eps).floor() as usize).min(s.psd.len() - 1);
    (lo <= hi).then_some((lo, hi))
}

/// Bin bookkeeping for SNR measurements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrSettings {
    /// Signal occupies `bin ± signal_half_width`.
    pub signal_half_width: usize,
    /// Bins `0..dc_bins` are excluded from the noise sum.
    pub dc_bins: usize,
}

impl Default for SnrSettings {
    fn default() -> Self {
        Self { signal_half_width: 3, dc_bins: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SnrReport {
    pub snr_db: f64,
    /// `(snr_db − 1.76)/6.02` rounded to 0.1 bit.
    pub enob_bits: f64,
    pub signal_power: f64,
    pub noise_power: f64,
    pub signal_bin: usize,
    pub signal_bins: (usize, usize),
    pub noise_bins: usize,
    pub settings: SnrSettings,
}

/// Unrounded ENOB.
pub fn enob_from_snr(snr_db: f64) -> f64 {
    (snr_db - 1.76) / 6.02
}

pub fn round_tenth(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

pub fn snr_enob(s: &Spectrum, sig_freq_hz: f64, bw_hz: f64) -> Result<SnrReport> {
    snr_enob_with(s, sig_freq_hz, bw_hz, SnrSettings::default())
}

pub fn snr_enob_with(s: &Spectrum, sig_freq_hz: f64, bw_hz: f64, settings: SnrSettings) -> Result<SnrReport> {
    let nyq = s.rate_hz() / 2.0;
    if !(sig_freq_hz >= 0.0 && sig_freq_hz < bw_hz && bw_hz <= nyq * (1.0 + 1e-12)) {
        return Err(Error::InvalidParameter(format!(
            "need 0 <= sig_freq ({sig_freq_hz}) < bw ({bw_hz}) <= {nyq}"
        )));
    }
    let k0 = s.nearest_bin(sig_freq_hz);
    let lo = k0.saturating_sub(settings.signal_half_width);
    let hi = (k0 + settings.signal_half_width).min(s.psd.len() - 1);
    let signal_power: f64 = s.psd[lo..=hi].iter().sum::<f64>() * s.df_hz;

    let (_, band_hi) = band_bins(s, 0.0, bw_hz).ok_or(Error::EmptyBand { f_lo: 0.0, f_hi: bw_hz })?;
    let noise_bins: Vec<usize> = (settings.dc_bins..=band_hi).filter(|k| *k < lo || *k > hi).collect();
    if noise_bins.is_empty() {
        return Err(Error::EmptyBand { f_lo: 0.0, f_hi: bw_hz });
    }
    let noise_power: f64 = noise_bins.iter().map(|&k| s.psd[k]).sum::<f64>() * s.df_hz;

    let per_bin_noise = noise_power / noise_bins.len() as f64;
    let sig_bins = (hi - lo + 1) as f64;
    if !(signal_power > per_bin_noise * sig_bins) || noise_power <= 0.0 {
        return Err(Error::SignalNotResolved { freq_hz: sig_freq_hz });
    }
    let snr_db = 10.0 * (signal_power / noise_power).log10();
    Ok(SnrReport {
        snr_db,
        enob_bits: round_tenth(enob_from_snr(snr_db)),
        signal_power,
        noise_power,
        signal_bin: k0,
        signal_bins: (lo, hi),
        noise_bins: noise_bins.len(),
        settings,
    })
}

/// Tone amplitude recovered from the power in `bin ± half_width`.
pub fn tone_amplitude(s: &Spectrum, freq_hz: f64, half_width: usize) -> f64 {
    let k0 = s.nearest_bin(freq_hz);
    let lo = k0.saturating_sub(half_width);
    let hi = (k0 + half_width).min(s.psd.len() - 1);
    let p: f64 = s.psd[lo..=hi].iter().sum::<f64>() * s.df_hz;
    (2.0 * p).sqrt()
}

/// Least-squares slope of `10·log10(psd)` against `log10(f)` over `[f_lo, f_hi]`, in dB/decade.
pub fn fit_slope_db_per_decade(s: &Spectrum, f_lo: f64, f_hi: f64) -> Result<f64> {
    let (lo, hi) = band_bins(s, f_lo, f_hi).ok_or(Error::EmptyBand { f_lo, f_hi })?;
    let lo = lo.max(1);
    let pts: Vec<(f64, f64)> = (lo..=hi)
        .filter(|&k| s.psd[k] > 0.0)
        .map(|k| (s.freq(k).log10(), db10(s.psd[k])))
        .collect();
    if pts.len() < 2 {
        return Err(Error::EmptyBand { f_lo, f_hi });
    }
    Ok(linear_fit(&pts).0)
}

/// Ordinary least squares `y = a·x + b`, returns `(a, b)`.
pub fn linear_fit(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let a = sxy / sxx;
    (a, my - a * mx)
}
